#pragma once

// Mask-application micro-benchmark. Only mask_into is timed; logit generation
// and sampling happen outside the clock. About 1% of iterations are re-checked
// against the per-state bitmask, a path independent of the allowed-token list
// that mask_into consumes.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "ehv/dfa.hpp"
#include "ehv/pep.hpp"

namespace ehv {

struct BenchConfig {
  std::size_t vocab_size = 50'000;
  std::size_t iterations = 10'000;
  std::size_t states = 8;
  double density = 0.125;  // fraction of the vocabulary each state allows
  std::uint64_t seed = 42;
  double recheck_rate = 0.01;
};

struct BenchReport {
  BenchConfig config;
  std::size_t dfa_states = 0;
  double mean_ms = 0;
  double p50_ms = 0;
  double p99_ms = 0;
  double max_ms = 0;
  std::size_t rechecks = 0;
  std::size_t recheck_failures = 0;
  std::string hardware;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["seed"] = config.seed;
    j["vocab_size"] = config.vocab_size;
    j["iterations"] = config.iterations;
    j["dfa_states"] = dfa_states;
    j["density"] = config.density;
    j["mean_ms"] = mean_ms;
    j["p50_ms"] = p50_ms;
    j["p99_ms"] = p99_ms;
    j["max_ms"] = max_ms;
    j["rechecks"] = rechecks;
    j["recheck_failures"] = recheck_failures;
    j["hardware"] = hardware;
    return j;
  }
};

inline std::string hardware_description() {
  std::string cpu = "unknown cpu";
  std::ifstream in("/proc/cpuinfo");
  for (std::string line; std::getline(in, line);)
    if (line.rfind("model name", 0) == 0) {
      auto colon = line.find(':');
      if (colon != std::string::npos) cpu = line.substr(line.find_first_not_of(' ', colon + 1));
      break;
    }
  std::string s = cpu + "; " + std::to_string(std::thread::hardware_concurrency()) + " hardware threads";
#ifdef __VERSION__
  s += "; compiler " + std::string(__VERSION__);
#endif
#ifdef NDEBUG
  s += "; optimised build";
#else
  s += "; assertions enabled";
#endif
  return s;
}

/// Random strongly connected automaton: every state accepting, `density` of the vocabulary allowed per state.
inline Dfa bench_automaton(const BenchConfig& cfg) {
  std::mt19937_64 rng(cfg.seed);
  DfaGraph g;
  g.vocab_size = cfg.vocab_size;
  const std::size_t n = std::max<std::size_t>(cfg.states, 1);
  g.rows.resize(n);
  g.accepting.assign(n, true);
  g.escalating.assign(n, false);
  std::uniform_int_distribution<StateId> target(0, static_cast<StateId>(n - 1));
  std::bernoulli_distribution keep(std::clamp(cfg.density, 0.0, 1.0));
  for (std::size_t q = 0; q < n; ++q) {
    for (TokenId t = 0; t < cfg.vocab_size; ++t)
      if (keep(rng)) g.rows[q].push_back({t, target(rng)});
    // Guarantee progress: one edge to the next state in a ring.
    TokenId ring = static_cast<TokenId>(q % std::max<std::size_t>(cfg.vocab_size, 1));
    if (cfg.vocab_size > 0 && std::none_of(g.rows[q].begin(), g.rows[q].end(), [&](const DfaEdge& e) { return e.token == ring; })) {
      g.rows[q].push_back({ring, static_cast<StateId>((q + 1) % n)});
      std::sort(g.rows[q].begin(), g.rows[q].end(), [](const DfaEdge& a, const DfaEdge& b) { return a.token < b.token; });
    }
  }
  return Dfa::from_graph(g, sha256("bench-automaton"), "bench", 0);
}

inline BenchReport bench_mask(const BenchConfig& cfg) {
  if (cfg.vocab_size == 0) throw std::invalid_argument("bench-mask: vocabulary size must be positive");
  BenchReport rep;
  rep.config = cfg;
  rep.hardware = hardware_description();
  Dfa dfa = bench_automaton(cfg);
  rep.dfa_states = dfa.state_count();

  std::mt19937_64 rng(cfg.seed ^ 0x5bd1e995ULL);
  std::normal_distribution<float> noise(0.0f, 1.0f);
  std::bernoulli_distribution recheck(cfg.recheck_rate);
  std::vector<float> in(cfg.vocab_size), out(cfg.vocab_size);
  std::vector<double> ms;
  ms.reserve(cfg.iterations);
  GreedySampler sampler;
  StateId q = dfa.start();

  for (std::size_t i = 0; i < cfg.iterations; ++i) {
    for (auto& x : in) x = noise(rng);
    auto allowed = dfa.allowed(q);
    auto t0 = std::chrono::steady_clock::now();
    mask_into(in, allowed, out);
    auto t1 = std::chrono::steady_clock::now();
    ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());

    if (recheck(rng)) {
      ++rep.rechecks;
      bool ok = true;
      for (TokenId k = 0; k < cfg.vocab_size && ok; ++k)
        ok = dfa.allows(q, k) ? out[k] == in[k] : out[k] == kMaskedLogit;
      if (!ok) ++rep.recheck_failures;
    }
    q = dfa.transition(q, sampler.sample(out)).value_or(dfa.start());
  }

  std::vector<double> sorted = ms;
  std::sort(sorted.begin(), sorted.end());
  double sum = 0;
  for (double x : ms) sum += x;
  rep.mean_ms = sum / static_cast<double>(std::max<std::size_t>(ms.size(), 1));
  if (!sorted.empty()) {
    auto pct = [&](double p) {
      auto idx = static_cast<std::size_t>(p * static_cast<double>(sorted.size() - 1));
      return sorted[idx];
    };
    rep.p50_ms = pct(0.50);
    rep.p99_ms = pct(0.99);
    rep.max_ms = sorted.back();
  }
  return rep;
}

}  // namespace ehv
