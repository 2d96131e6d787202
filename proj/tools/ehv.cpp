#include <iostream>

#include "ehv_cli.hpp"

int main(int argc, char** argv) { return ehv::cli::dispatch(argc, argv, std::cout, std::cerr); }
