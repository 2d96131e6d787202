#pragma once

#include "ehv/bench.hpp"
#include "ehv/compiled_policy.hpp"
#include "ehv/crypto.hpp"
#include "ehv/dfa.hpp"
#include "ehv/epoch.hpp"
#include "ehv/explorer.hpp"
#include "ehv/gbom.hpp"
#include "ehv/grammar.hpp"
#include "ehv/identity.hpp"
#include "ehv/pep.hpp"
#include "ehv/policy_store.hpp"
#include "ehv/simulator.hpp"
#include "ehv/vector_clock.hpp"
#include "ehv/workload.hpp"
