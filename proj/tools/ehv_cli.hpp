#pragma once

// Command-line front end. dispatch() is kept separate from main() so tests can
// drive it with captured streams.
//
// Exit codes: 0 success, 1 a checked invariant or verification failed,
// 2 usage or input error.

#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ehv/ehv.hpp"

namespace ehv::cli {

inline constexpr int kOk = 0;
inline constexpr int kViolation = 1;
inline constexpr int kUsage = 2;

namespace detail {

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

inline PublicKey public_key_from_hex(const std::string& hex) {
  Bytes raw = from_hex(hex);
  PublicKey k;
  if (raw.size() != k.bytes.size()) throw std::invalid_argument("public key must be 32 bytes of hex");
  std::copy(raw.begin(), raw.end(), k.bytes.begin());
  return k;
}

inline const char* status(bool ok) { return ok ? "PASS" : "FAIL"; }

struct CompileArgs {
  std::string grammar, vocab, json;
  std::size_t budget = kDefaultStateBudget;
};

inline int run_compile(const CompileArgs& a, std::ostream& out) {
  std::string text = read_text(a.grammar);
  PolicyGrammar g = parse_grammar(text);
  Vocabulary v = parse_vocabulary(read_text(a.vocab));
  // A standalone grammar binds to the Merkle root of a one-leaf policy set.
  Digest leaf = sha256(text);
  Digest root = merkle_root_of(std::span<const Digest>(&leaf, 1));
  CompileOptions opts{a.budget, root};
  Dfa dfa = compile(g, v, opts);
  std::size_t accepting = 0, escalating = 0;
  for (StateId q = 0; q < dfa.state_count(); ++q) {
    accepting += dfa.is_accepting(q);
    escalating += dfa.is_escalating(q);
  }
  out << "grammar      " << g.name << " v" << g.version << '\n'
      << "vocabulary   " << v.size << " tokens\n"
      << "states       " << dfa.state_count() << '\n'
      << "transitions  " << dfa.transition_count() << '\n'
      << "accepting    " << accepting << '\n'
      << "escalating   " << escalating << '\n'
      << "root         sha256:" << dfa.source_root().hex() << '\n';
  if (!a.json.empty()) {
    nlohmann::ordered_json j{{"grammar", g.name},         {"version", g.version},
                             {"vocab_size", v.size},      {"states", dfa.state_count()},
                             {"transitions", dfa.transition_count()}, {"accepting", accepting},
                             {"escalating", escalating},  {"root", "sha256:" + dfa.source_root().hex()}};
    write_text(a.json, j.dump(2) + "\n");
  }
  return kOk;
}

struct SimulateArgs {
  std::string scenario, events, metrics, gbom_dir;
};

inline int run_simulate(const SimulateArgs& a, std::ostream& out) {
  Scenario sc = Scenario::load(a.scenario);
  RunResult r = run(sc);
  const RunMetrics& m = r.metrics;
  out << "scenario     " << a.scenario << " (" << to_string(sc.workload) << ", seed " << sc.seed << ", "
      << sc.nodes << " nodes)\n";
  out << m.table();

  struct Check {
    std::string name;
    bool ok;
  };
  std::vector<Check> checks{
      {"safety: no PERMIT outside the bound grammar", m.grammar_violations == 0},
      {"fail-closed: no PERMIT while halted", m.permits_while_halted == 0},
      {"audit: one decision record per action", m.gbom_decision_records == m.actions},
      {"staleness: N_stale <= ESW bound", sc.lambda_per_hour == 0 || m.n_stale <= m.esw_bound},
  };
  bool chains = true;
  for (const auto& log : r.gbom) chains = chains && verify_chain(log.records()).valid;
  checks.push_back({"audit: every GBOM chain verifies", chains});
  if (r.partitions_healed) checks.push_back({"convergence: replica roots equal", converge_check(r).converged});

  bool ok = true;
  for (const auto& c : checks) {
    out << "check " << status(c.ok) << "  " << c.name << '\n';
    ok = ok && c.ok;
  }

  if (!a.events.empty()) write_text(a.events, r.event_log());
  if (!a.metrics.empty()) write_text(a.metrics, m.to_json().dump(2) + "\n");
  if (!a.gbom_dir.empty()) {
    std::filesystem::create_directories(a.gbom_dir);
    for (std::size_t i = 0; i < r.gbom.size(); ++i) {
      std::ofstream f(std::filesystem::path(a.gbom_dir) / ("node-" + std::to_string(i) + ".jsonl"), std::ios::binary);
      if (!f) throw std::runtime_error("cannot write into " + a.gbom_dir);
      r.gbom[i].write(f);
    }
  }
  return ok ? kOk : kViolation;
}

struct ExploreArgs {
  int versions = 5;
  int actions = 3;
  std::size_t depth = 64;
  std::size_t max_states = 2'000'000;
  bool no_partitions = false;
  bool no_adversarial = false;
  std::string fault, json;
};

inline int run_explore(const ExploreArgs& a, std::ostream& out) {
  ModelConfig cfg;
  cfg.versions = a.versions;
  cfg.actions.assign(kAllActions.begin(), kAllActions.begin() + a.actions);
  cfg.max_depth = a.depth;
  cfg.max_states = a.max_states;
  cfg.partitions = !a.no_partitions;
  cfg.adversarial = !a.no_adversarial;
  if (a.fault == "disable-mask") cfg.faults.disable_mask = true;
  if (a.fault == "ignore-boundary") cfg.faults.ignore_boundary = true;

  ExploreReport rep = explore(cfg);
  out << "model        " << cfg.versions << " policy versions, " << cfg.actions.size() << " actions, "
      << (cfg.partitions ? "CONNECTED/PARTITIONED" : "CONNECTED") << (a.fault.empty() ? "" : ", fault " + a.fault)
      << '\n'
      << "generated    " << rep.generated << '\n'
      << "distinct     " << rep.distinct << '\n'
      << "depth        " << rep.depth << '\n'
      << "complete     " << (rep.complete ? "yes" : "no (bound reached)") << '\n'
      << "deadlocks    " << rep.deadlocks << '\n'
      << "violations   " << rep.violation_count << '\n';
  for (const auto& [inv, n] : rep.violations_by_invariant) out << "  " << inv << ": " << n << '\n';
  if (!rep.violations.empty()) {
    const auto& v = rep.violations.front();
    out << "first violation [" << v.invariant << "] " << v.detail << '\n';
    for (const auto& step : v.trace) out << "  " << step << '\n';
  }
  if (!a.json.empty()) write_text(a.json, rep.to_json().dump(2) + "\n");
  return rep.ok() ? kOk : kViolation;
}

struct GbomArgs {
  std::string log, out_path, key;
  std::int64_t origin_ms = kDefaultOriginUnixMs;
};

inline int run_gbom_export(const GbomArgs& a, std::ostream& out) {
  std::ifstream in(a.log, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + a.log);
  auto records = read_log(in);
  OscalOptions opt;
  opt.origin_unix_ms = a.origin_ms;
  std::string doc = export_oscal(records, opt).dump(2) + "\n";
  if (a.out_path.empty())
    out << doc;
  else
    write_text(a.out_path, doc);
  return kOk;
}

inline int run_gbom_verify(const GbomArgs& a, std::ostream& out) {
  std::ifstream in(a.log, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + a.log);
  std::optional<PublicKey> key;
  if (!a.key.empty()) key = public_key_from_hex(a.key);
  ChainReport rep = verify_chain_lines(in, key);
  if (rep.valid) {
    out << "valid: " << rep.records << " records\n";
    return kOk;
  }
  out << "broken at index " << *rep.first_broken << ": " << rep.reason << '\n';
  return kViolation;
}

struct BenchArgs {
  BenchConfig cfg;
  std::string json;
  double max_mean_ms = 0;  // 0 = report only
};

inline int run_bench(const BenchArgs& a, std::ostream& out) {
  BenchReport rep = bench_mask(a.cfg);
  out << std::fixed << std::setprecision(4);
  out << "vocab        " << a.cfg.vocab_size << '\n'
      << "dfa states   " << rep.dfa_states << '\n'
      << "iterations   " << a.cfg.iterations << " (seed " << a.cfg.seed << ")\n"
      << "mean ms      " << rep.mean_ms << '\n'
      << "p50 ms       " << rep.p50_ms << '\n'
      << "p99 ms       " << rep.p99_ms << '\n'
      << "max ms       " << rep.max_ms << '\n'
      << "rechecks     " << rep.rechecks << " (" << rep.recheck_failures << " failed)\n"
      << "hardware     " << rep.hardware << '\n';
  if (!a.json.empty()) write_text(a.json, rep.to_json().dump(2) + "\n");
  bool ok = rep.recheck_failures == 0 && (a.max_mean_ms <= 0 || rep.mean_ms < a.max_mean_ms);
  return ok ? kOk : kViolation;
}

}  // namespace detail

inline int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"ehv: grammar-constrained policy enforcement toolkit", "ehv"};
  app.require_subcommand(1);

  detail::CompileArgs ca;
  auto* compile = app.add_subcommand("compile", "Compile a policy grammar to a DFA and print a summary");
  compile->add_option("grammar", ca.grammar, "Grammar file")->required();
  compile->add_option("vocab", ca.vocab, "Vocabulary file")->required();
  compile->add_option("--budget", ca.budget, "DFA state budget")->capture_default_str();
  compile->add_option("--json", ca.json, "Also write the summary as JSON");

  detail::SimulateArgs sa;
  auto* simulate = app.add_subcommand("simulate", "Run a scenario and check its invariants");
  simulate->add_option("scenario", sa.scenario, "Scenario JSON file")->required();
  simulate->add_option("--events", sa.events, "Write the canonical event log here");
  simulate->add_option("--metrics", sa.metrics, "Write metrics JSON here");
  simulate->add_option("--gbom-dir", sa.gbom_dir, "Write one GBOM log per node into this directory");

  detail::ExploreArgs ea;
  auto* explore_cmd = app.add_subcommand("explore", "Exhaustively explore the enforcement model");
  explore_cmd->add_option("--versions", ea.versions, "Policy versions")->check(CLI::Range(1, 250))->capture_default_str();
  explore_cmd->add_option("--actions", ea.actions, "Actions: 1 safe, 2 +unsafe, 3 +escalate")
      ->check(CLI::Range(1, 3))
      ->capture_default_str();
  explore_cmd->add_option("--depth", ea.depth, "Depth bound")->capture_default_str();
  explore_cmd->add_option("--max-states", ea.max_states, "Distinct-state bound")->capture_default_str();
  explore_cmd->add_flag("--no-partitions", ea.no_partitions, "Keep the network CONNECTED");
  explore_cmd->add_flag("--no-adversarial", ea.no_adversarial, "Drop adversarial token steps");
  explore_cmd->add_option("--fault", ea.fault, "Inject a PEP defect")
      ->check(CLI::IsMember({"disable-mask", "ignore-boundary"}));
  explore_cmd->add_option("--json", ea.json, "Write the report as JSON");

  detail::GbomArgs ga;
  auto* gbom = app.add_subcommand("gbom", "GBOM audit log tools");
  gbom->require_subcommand(1);
  auto* gexport = gbom->add_subcommand("export", "Export a GBOM log as OSCAL assessment results");
  gexport->add_option("log", ga.log, "GBOM log (JSON lines)")->required();
  gexport->add_option("--out", ga.out_path, "Output file (default stdout)");
  gexport->add_option("--origin-ms", ga.origin_ms, "Unix ms corresponding to simulated time 0")->capture_default_str();
  auto* gverify = gbom->add_subcommand("verify", "Verify a GBOM log's hash chain");
  gverify->add_option("log", ga.log, "GBOM log (JSON lines)")->required();
  gverify->add_option("--key", ga.key, "Hex Ed25519 public key the records must be signed with");

  detail::BenchArgs ba;
  auto* bench = app.add_subcommand("bench-mask", "Measure per-step mask application latency");
  bench->add_option("--vocab", ba.cfg.vocab_size, "Vocabulary size")->check(CLI::PositiveNumber)->capture_default_str();
  bench->add_option("--iterations", ba.cfg.iterations, "Steps to time")->capture_default_str();
  bench->add_option("--states", ba.cfg.states, "Automaton states")->check(CLI::PositiveNumber)->capture_default_str();
  bench->add_option("--density", ba.cfg.density, "Allowed fraction per state")->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  bench->add_option("--seed", ba.cfg.seed, "RNG seed")->capture_default_str();
  bench->add_option("--json", ba.json, "Write the report as JSON");
  bench->add_option("--max-mean-ms", ba.max_mean_ms, "Fail unless the mean is below this many ms");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e, out, err);
    return code == static_cast<int>(CLI::ExitCodes::Success) ? kOk : kUsage;
  }

  try {
    if (*compile) return detail::run_compile(ca, out);
    if (*simulate) return detail::run_simulate(sa, out);
    if (*explore_cmd) return detail::run_explore(ea, out);
    if (*gexport) return detail::run_gbom_export(ga, out);
    if (*gverify) return detail::run_gbom_verify(ga, out);
    if (*bench) return detail::run_bench(ba, out);
  } catch (const BudgetExceeded& e) {
    err << "error: " << e.what() << '\n';
    return kViolation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  }
  return kUsage;
}

}  // namespace ehv::cli
