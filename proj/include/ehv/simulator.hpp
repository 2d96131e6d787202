#pragma once

// Deterministic discrete-event harness. A PAP and an attestation authority sit
// on the control plane; each node holds a policy replica, an epoch manager, a
// PEP and its own GBOM log. Events are ordered by (time, sequence number) and
// every random draw comes from seeded generators, so a scenario always yields
// the same event log bytes.
//
// Node lifecycle:
//   boot          attestation of the provisioned policy; actions queue until it lands
//   refresh       re-attest at last_attest + ttl - latency - 1000 ms
//   mismatch      (attest_mode on_mismatch) a replica root change triggers
//                 attestation; new actions queue until the new root is committed
//   expiry        at last_attest + ttl + 1 the epoch is stale: HALTED, every
//                 action is denied until an attestation succeeds
//   unreachable   failed attestations retry every 1000 ms

#include <algorithm>
#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ehv/epoch.hpp"
#include "ehv/gbom.hpp"
#include "ehv/identity.hpp"
#include "ehv/pep.hpp"
#include "ehv/policy_store.hpp"
#include "ehv/workload.hpp"

namespace ehv {

// ---------------------------------------------------------------------------
// Closed-form exposure figures

/// Recommendations issued by a fleet over a governance latency of `gl_days` days.
inline std::uint64_t legacy_exposure(std::uint64_t instances, std::uint64_t recommendations_per_hour,
                                     std::uint64_t gl_days) {
  return instances * recommendations_per_hour * 24 * gl_days;
}

/// floor(count * numerator / denominator); e.g. 0.03% is (3, 10000).
inline std::uint64_t scaled_count(std::uint64_t count, std::uint64_t numerator, std::uint64_t denominator) {
  if (denominator == 0) throw std::invalid_argument("scaled_count: zero denominator");
  return count * numerator / denominator;
}

/// Largest number of actions that can run under a stale root inside one epoch:
/// floor(lambda / 3600 * (ttl_s - 1)), computed exactly in integers.
inline std::uint64_t esw_bound(std::uint64_t lambda_per_hour, std::uint64_t ttl_s) {
  if (ttl_s == 0) return 0;
  return lambda_per_hour * (ttl_s - 1) / 3600;
}

// ---------------------------------------------------------------------------
// Scenario

class ScenarioError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Workload { w1, w2, w3, w4, w5, mixed };
enum class Generation { gcd, candidate };
enum class AttestMode { on_mismatch, epoch_boundary };

inline constexpr int kControlPlane = -1;

struct Partition {
  std::int64_t start_ms = 0;
  std::int64_t end_ms = 0;
  std::vector<std::pair<int, int>> links;  // endpoints are node indices or kControlPlane
};

struct Publication {
  std::int64_t at_ms = 0;
  std::string grammar_text;
};

struct ResetInjection {
  std::int64_t at_ms = 0;
  int node = 0;
  bool authenticated = true;
};

struct Scenario {
  std::uint64_t seed = 1;
  int nodes = 3;
  std::uint64_t instances = 5000;
  std::uint64_t recommendations_per_hour = 100;
  double lambda_per_hour = 3600;
  std::int64_t epoch_ttl_ms = 60'000;
  std::int64_t attest_latency_ms = 200;
  AttestMode attest_mode = AttestMode::on_mismatch;
  std::int64_t delay_min_ms = 5;
  std::int64_t delay_max_ms = 50;
  std::int64_t gossip_interval_ms = 500;
  std::vector<Partition> partitions;
  Workload workload = Workload::w1;
  Generation generation = Generation::gcd;
  LogGranularity gbom_granularity = LogGranularity::per_action;
  std::int64_t duration_ms = 120'000;
  std::string vocabulary_text;
  std::string initial_policy;
  std::vector<Publication> script;
  std::vector<ResetInjection> resets;
  std::uint64_t legacy_gl_days = 14;
  PepFaults faults;

  void validate() const;
  static Scenario from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = ".");
  static Scenario load(const std::filesystem::path& file);
};

inline const char* to_string(Workload w) {
  switch (w) {
    case Workload::w1: return "W1";
    case Workload::w2: return "W2";
    case Workload::w3: return "W3";
    case Workload::w4: return "W4";
    case Workload::w5: return "W5";
    case Workload::mixed: return "mixed";
  }
  return "?";
}

namespace detail {

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ScenarioError("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// A policy or vocabulary given either inline ({"text": ...}) or as a path relative to the scenario.
inline std::string text_or_file(const nlohmann::json& v, const std::filesystem::path& base) {
  if (v.is_object() && v.contains("text")) return v.at("text").get<std::string>();
  if (v.is_string()) return slurp(base / v.get<std::string>());
  throw ScenarioError("expected a path or {\"text\": ...}");
}

inline int endpoint(const nlohmann::json& v) {
  if (v.is_string() && v.get<std::string>() == "control") return kControlPlane;
  if (v.is_number_integer()) return v.get<int>();
  throw ScenarioError("link endpoint must be a node index or \"control\"");
}

}  // namespace detail

inline Scenario Scenario::from_json(const nlohmann::json& j, const std::filesystem::path& base) {
  Scenario s;
  try {
    s.seed = j.value("seed", s.seed);
    s.nodes = j.value("nodes", s.nodes);
    if (j.contains("fleet")) {
      const auto& f = j.at("fleet");
      s.instances = f.value("instances", s.instances);
      s.recommendations_per_hour = f.value("recommendations_per_hour", s.recommendations_per_hour);
      s.lambda_per_hour = f.value("lambda_per_hour", s.lambda_per_hour);
    }
    if (j.contains("epoch")) {
      const auto& e = j.at("epoch");
      s.epoch_ttl_ms = e.value("ttl_ms", s.epoch_ttl_ms);
      s.attest_latency_ms = e.value("attest_latency_ms", s.attest_latency_ms);
      std::string mode = e.value("attest_mode", std::string("on_mismatch"));
      if (mode == "on_mismatch")
        s.attest_mode = AttestMode::on_mismatch;
      else if (mode == "epoch_boundary")
        s.attest_mode = AttestMode::epoch_boundary;
      else
        throw ScenarioError("unknown attest_mode '" + mode + "'");
    }
    if (j.contains("network")) {
      const auto& n = j.at("network");
      if (n.contains("delay_ms")) {
        s.delay_min_ms = n.at("delay_ms").at(0).get<std::int64_t>();
        s.delay_max_ms = n.at("delay_ms").at(1).get<std::int64_t>();
      }
      s.gossip_interval_ms = n.value("gossip_interval_ms", s.gossip_interval_ms);
      for (const auto& p : n.value("partitions", nlohmann::json::array())) {
        Partition part{p.at("start_ms").get<std::int64_t>(), p.at("end_ms").get<std::int64_t>(), {}};
        for (const auto& l : p.value("links", nlohmann::json::array()))
          part.links.push_back({detail::endpoint(l.at(0)), detail::endpoint(l.at(1))});
        for (const auto& iso : p.value("isolate", nlohmann::json::array())) {
          int node = detail::endpoint(iso);
          part.links.push_back({node, kControlPlane});
          for (int other = 0; other < s.nodes; ++other)
            if (other != node) part.links.push_back({node, other});
        }
        s.partitions.push_back(std::move(part));
      }
    }
    std::string w = j.value("workload", std::string("W1"));
    if (w == "W1") s.workload = Workload::w1;
    else if (w == "W2") s.workload = Workload::w2;
    else if (w == "W3") s.workload = Workload::w3;
    else if (w == "W4") s.workload = Workload::w4;
    else if (w == "W5") s.workload = Workload::w5;
    else if (w == "mixed") s.workload = Workload::mixed;
    else throw ScenarioError("unknown workload '" + w + "'");
    std::string g = j.value("generation", std::string("gcd"));
    if (g == "gcd") s.generation = Generation::gcd;
    else if (g == "candidate") s.generation = Generation::candidate;
    else throw ScenarioError("unknown generation '" + g + "'");
    std::string gran = j.value("gbom_granularity", std::string("per_action"));
    if (gran == "per_action") s.gbom_granularity = LogGranularity::per_action;
    else if (gran == "per_token") s.gbom_granularity = LogGranularity::per_token;
    else throw ScenarioError("unknown gbom_granularity '" + gran + "'");
    s.duration_ms = j.value("duration_ms", s.duration_ms);

    const auto& pol = j.at("policy");
    s.vocabulary_text = detail::text_or_file(pol.at("vocabulary"), base);
    s.initial_policy = detail::text_or_file(pol.at("initial"), base);
    for (const auto& p : pol.value("script", nlohmann::json::array()))
      s.script.push_back({p.at("at_ms").get<std::int64_t>(), detail::text_or_file(p.at("grammar"), base)});
    for (const auto& r : j.value("resets", nlohmann::json::array()))
      s.resets.push_back({r.at("at_ms").get<std::int64_t>(), r.at("node").get<int>(), r.value("authenticated", true)});
    s.legacy_gl_days = j.value("legacy_gl_days", s.legacy_gl_days);
    if (j.contains("faults")) {
      s.faults.disable_mask = j.at("faults").value("disable_mask", false);
      s.faults.ignore_boundary = j.at("faults").value("ignore_boundary", false);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ScenarioError(std::string("scenario: ") + e.what());
  }
  s.validate();
  return s;
}

inline Scenario Scenario::load(const std::filesystem::path& file) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::slurp(file));
  } catch (const nlohmann::json::parse_error& e) {
    throw ScenarioError(file.string() + ": " + e.what());
  }
  return from_json(j, file.parent_path());
}

inline void Scenario::validate() const {
  auto fail = [](const std::string& why) { throw ScenarioError("invalid scenario: " + why); };
  if (nodes < 1) fail("at least one node required");
  if (!(lambda_per_hour >= 0)) fail("lambda_per_hour must be non-negative");
  if (epoch_ttl_ms <= 0) fail("ttl_ms must be positive");
  if (attest_latency_ms < 0 || attest_latency_ms >= epoch_ttl_ms) fail("attest_latency_ms must lie in [0, ttl_ms)");
  if (delay_min_ms < 0 || delay_max_ms < delay_min_ms) fail("delay_ms must be a non-negative [min, max] range");
  if (gossip_interval_ms <= 0) fail("gossip_interval_ms must be positive");
  if (duration_ms < 0) fail("duration_ms must be non-negative");
  for (const auto& p : partitions) {
    if (p.start_ms < 0 || p.end_ms < p.start_ms || p.end_ms > duration_ms)
      fail("partition interval outside [0, duration_ms]");
    for (auto [a, b] : p.links)
      for (int e : {a, b})
        if (e != kControlPlane && (e < 0 || e >= nodes)) fail("partition endpoint " + std::to_string(e));
  }
  for (const auto& pub : script)
    if (pub.at_ms < 0 || pub.at_ms > duration_ms) fail("publication time outside [0, duration_ms]");
  for (const auto& r : resets) {
    if (r.at_ms < 0 || r.at_ms > duration_ms) fail("reset time outside [0, duration_ms]");
    if (r.node < 0 || r.node >= nodes) fail("reset node " + std::to_string(r.node));
  }
  try {
    Vocabulary v = parse_vocabulary(vocabulary_text);
    parse_grammar(initial_policy);
    for (const auto& pub : script) parse_grammar(pub.grammar_text);
    if (lambda_per_hour > 0)
      for (ActionKind a : kAllActions) action_tokens(a, v);
    if (!v.find(kEndOfActionLexeme)) fail("vocabulary lacks the end-of-action token");
  } catch (const GrammarError& e) {
    fail(e.what());
  } catch (const std::invalid_argument& e) {
    if (dynamic_cast<const ScenarioError*>(&e)) throw;
    fail(e.what());
  }
}

// ---------------------------------------------------------------------------
// Results

struct ActionOutcome {
  std::uint64_t id = 0;
  int node = 0;
  ActionKind kind = ActionKind::safe_dosage;
  std::int64_t arrival_ms = 0;
  std::int64_t decided_ms = 0;
  std::vector<TokenId> emitted;
  Decision decision{Verdict::deny, Reason::halt};
  Digest root;         // policy root the decision record binds
  bool stale = false;  // enforced under a root older than the PAP's latest
};

struct HaltRecord {
  int node = 0;
  std::int64_t staleness_instant_ms = 0;  // last_attest + ttl
  std::int64_t halted_ms = 0;
  std::optional<std::int64_t> recovered_ms;
  std::optional<std::int64_t> partition_start_ms;
};

struct RunMetrics {
  std::uint64_t actions = 0;
  std::uint64_t permits = 0;
  std::uint64_t denies = 0;
  std::uint64_t escalates = 0;
  std::uint64_t n_stale = 0;
  std::int64_t max_staleness_ms = 0;
  std::uint64_t esw_bound = 0;
  std::uint64_t n_unsafe_legacy = 0;
  std::vector<std::int64_t> gl_samples_ms;           // publication to attested enforcement, per node
  std::vector<std::int64_t> propagation_ms;          // publication to replica arrival, per node
  std::vector<std::int64_t> fail_closed_ms;          // partition start to HALTED
  std::optional<std::int64_t> convergence_ms;        // last publication to all replicas equal
  std::uint64_t permits_while_halted = 0;
  std::uint64_t grammar_violations = 0;              // PERMITs the bound automaton does not accept
  std::uint64_t gbom_decision_records = 0;
  std::uint64_t resets_accepted = 0;
  std::uint64_t resets_rejected = 0;
  std::vector<HaltRecord> halts;

  nlohmann::ordered_json to_json() const {
    auto stats = [](const std::vector<std::int64_t>& v) {
      nlohmann::ordered_json j;
      j["count"] = v.size();
      if (!v.empty()) {
        j["min"] = *std::min_element(v.begin(), v.end());
        j["max"] = *std::max_element(v.begin(), v.end());
        double sum = 0;
        for (auto x : v) sum += static_cast<double>(x);
        j["mean"] = sum / static_cast<double>(v.size());
      }
      return j;
    };
    nlohmann::ordered_json j;
    j["actions"] = actions;
    j["permit"] = permits;
    j["deny"] = denies;
    j["escalate"] = escalates;
    j["n_stale"] = n_stale;
    j["esw_bound"] = esw_bound;
    j["max_staleness_ms"] = max_staleness_ms;
    j["n_unsafe_legacy"] = n_unsafe_legacy;
    j["governance_latency_ms"] = stats(gl_samples_ms);
    j["propagation_ms"] = stats(propagation_ms);
    j["fail_closed_transition_ms"] = stats(fail_closed_ms);
    j["convergence_ms"] = convergence_ms ? nlohmann::ordered_json(*convergence_ms) : nlohmann::ordered_json();
    j["permits_while_halted"] = permits_while_halted;
    j["grammar_violations"] = grammar_violations;
    j["gbom_decision_records"] = gbom_decision_records;
    j["resets"] = {{"accepted", resets_accepted}, {"rejected", resets_rejected}};
    j["halts"] = nlohmann::ordered_json::array();
    for (const auto& h : halts) {
      nlohmann::ordered_json r{{"node", h.node}, {"staleness_instant_ms", h.staleness_instant_ms},
                               {"halted_ms", h.halted_ms}};
      r["recovered_ms"] = h.recovered_ms ? nlohmann::ordered_json(*h.recovered_ms) : nlohmann::ordered_json();
      r["partition_start_ms"] =
          h.partition_start_ms ? nlohmann::ordered_json(*h.partition_start_ms) : nlohmann::ordered_json();
      j["halts"].push_back(r);
    }
    return j;
  }

  std::string table() const {
    std::ostringstream o;
    auto row = [&](const std::string& k, const std::string& v) {
      o << k << std::string(k.size() < 28 ? 28 - k.size() : 1, ' ') << v << '\n';
    };
    auto mean = [](const std::vector<std::int64_t>& v) {
      if (v.empty()) return std::string("-");
      double s = 0;
      for (auto x : v) s += static_cast<double>(x);
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.1f", s / static_cast<double>(v.size()));
      return std::string(buf);
    };
    row("actions", std::to_string(actions));
    row("permit / deny / escalate",
        std::to_string(permits) + " / " + std::to_string(denies) + " / " + std::to_string(escalates));
    row("N_stale (bound)", std::to_string(n_stale) + " (" + std::to_string(esw_bound) + ")");
    row("max staleness ms", std::to_string(max_staleness_ms));
    row("N_unsafe legacy", std::to_string(n_unsafe_legacy));
    row("GL mean ms", mean(gl_samples_ms) + " over " + std::to_string(gl_samples_ms.size()));
    row("propagation mean ms", mean(propagation_ms));
    row("fail-closed mean ms", mean(fail_closed_ms));
    row("convergence ms", convergence_ms ? std::to_string(*convergence_ms) : "-");
    row("permits while halted", std::to_string(permits_while_halted));
    row("grammar violations", std::to_string(grammar_violations));
    row("GBOM decision records", std::to_string(gbom_decision_records));
    return o.str();
  }
};

struct RunResult {
  RunMetrics metrics;
  std::vector<std::string> events;
  std::vector<GbomLog> gbom;  // one per node
  std::vector<Digest> replica_roots;
  std::vector<Digest> committed_roots;
  Digest pap_root;
  std::vector<ActionOutcome> actions;
  bool partitions_healed = true;

  std::string event_log() const {
    std::string out;
    for (const auto& e : events) out += e + '\n';
    return out;
  }
};

struct ConvergenceReport {
  bool converged = false;
  bool matches_pap = false;
  std::vector<Digest> roots;
};

/// True iff every replica ends on the same Merkle root.
inline ConvergenceReport converge_check(const RunResult& r) {
  ConvergenceReport c;
  c.roots = r.replica_roots;
  c.converged = std::all_of(c.roots.begin(), c.roots.end(), [&](const Digest& d) { return d == c.roots.front(); });
  c.matches_pap = c.converged && !c.roots.empty() && c.roots.front() == r.pap_root;
  return c;
}

// ---------------------------------------------------------------------------
// Engine

/// Seeded fleet-wide identities and keys shared by every run.
struct SimulationKeys {
  KeyPair pap = KeyPair::from_seed("ehv-sim-pap");
  AttestationAuthority authority{"ehv-sim-attestation-authority"};
  CredentialIssuer issuer{"ehv-sim-credential-issuer"};
  Digest measurement = sha256("ehv-sim-enclave-build-1");
};

class EventQueue {
 public:
  void at(std::int64_t t, std::function<void()> fn) { q_.push(Item{t, seq_++, std::move(fn)}); }
  bool empty() const { return q_.empty(); }
  std::int64_t next_time() const { return q_.top().t; }
  std::int64_t now() const { return now_; }

  void run_next() {
    Item it = q_.top();
    q_.pop();
    now_ = it.t;
    it.fn();
  }

 private:
  struct Item {
    std::int64_t t;
    std::uint64_t seq;
    std::function<void()> fn;
    bool operator>(const Item& o) const { return std::tie(t, seq) > std::tie(o.t, o.seq); }
  };
  std::priority_queue<Item, std::vector<Item>, std::greater<>> q_;
  std::uint64_t seq_ = 0;
  std::int64_t now_ = 0;
};

namespace detail {

inline std::string short_hex(const Digest& d) { return d.hex().substr(0, 16); }

class Simulation {
 public:
  explicit Simulation(const Scenario& sc)
      : sc_(sc),
        vocab_(parse_vocabulary(sc.vocabulary_text)),
        pap_store_("pap", IssuerAllowlist{{"pap", keys_.pap.public_key()}}),
        net_rng_(sc.seed),
        work_rng_(sc.seed ^ 0x9e3779b97f4a7c15ULL) {
    eoa_ = *vocab_.find(kEndOfActionLexeme);
    if (sc.lambda_per_hour > 0)
      for (ActionKind a : kAllActions) intents_[a] = action_tokens(a, vocab_);
  }

  RunResult run() {
    PolicyMutation genesis = pap_store_.author(sc_.initial_policy, "pap", keys_.pap);
    publications_.push_back({0, genesis.id, pap_store_.merkle_root(), true});
    pap_root_since_ = 0;
    result_.metrics.convergence_ms = 0;

    for (int i = 0; i < sc_.nodes; ++i) nodes_.push_back(make_node(i, genesis));
    log(0, "pap", "publish", "m=" + short_hex(genesis.id) + " root=" + short_hex(pap_store_.merkle_root()));
    for (auto& n : nodes_) begin_attestation(*n, "boot");

    for (const auto& pub : sc_.script) ev_.at(pub.at_ms, [this, text = pub.grammar_text] { publish(text); });
    for (const auto& r : sc_.resets) ev_.at(r.at_ms, [this, r] { inject_reset(r); });
    ev_.at(sc_.gossip_interval_ms, [this] { gossip(); });
    schedule_next_arrival(0.0);

    while (!ev_.empty() && ev_.next_time() <= sc_.duration_ms) ev_.run_next();
    finish();
    return std::move(result_);
  }

 private:
  struct PendingAction {
    std::uint64_t id;
    ActionKind kind;
    std::int64_t arrival_ms;
    bool adversarial;
  };

  struct Candidate {
    CompiledPolicy policy;
    std::set<Digest> mutations;
  };

  struct Node {
    int index;
    std::string name;
    std::string uri;
    PolicyStore store;
    EpochManager epoch;
    GbomLog log;
    std::unique_ptr<Pep> pep;
    std::deque<PendingAction> queue;
    std::map<Digest, CompiledPolicy> compiled;
    MockLogitGenerator benign;
    MockLogitGenerator adversarial;
    std::set<Digest> enforced_mutations;
    std::set<Digest> arrived_mutations;
    bool ever_attested = false;
    std::optional<std::size_t> open_halt;  // index into metrics.halts
  };

  struct PublicationRecord {
    std::int64_t at_ms;
    Digest mutation;
    Digest root;
    bool genesis = false;  // provisioned before the run; excluded from latency samples
  };

  // -- logging ---------------------------------------------------------------

  void log(std::int64_t t, const std::string& actor, const std::string& kind, const std::string& detail) {
    char stamp[24];
    std::snprintf(stamp, sizeof stamp, "%010" PRId64, t);
    result_.events.push_back(std::string(stamp) + ' ' + actor + ' ' + kind + (detail.empty() ? "" : " " + detail));
  }
  std::int64_t now() const { return ev_.now(); }

  // -- network ---------------------------------------------------------------

  bool connected(int a, int b, std::int64_t t) const {
    for (const auto& p : sc_.partitions) {
      if (t < p.start_ms || t >= p.end_ms) continue;
      for (auto [x, y] : p.links)
        if ((x == a && y == b) || (x == b && y == a)) return false;
    }
    return true;
  }

  std::optional<std::int64_t> partition_start(int node, std::int64_t t) const {
    std::optional<std::int64_t> best;
    for (const auto& p : sc_.partitions) {
      if (t < p.start_ms || t >= p.end_ms) continue;
      for (auto [x, y] : p.links)
        if ((x == node && y == kControlPlane) || (y == node && x == kControlPlane))
          best = best ? std::min(*best, p.start_ms) : p.start_ms;
    }
    return best;
  }

  std::int64_t delay() {
    return std::uniform_int_distribution<std::int64_t>(sc_.delay_min_ms, sc_.delay_max_ms)(net_rng_);
  }

  void send(int from, int to, const PolicyMutation& m) {
    if (!connected(from, to, now())) return;
    std::int64_t arrive = now() + delay();
    ev_.at(arrive, [this, from, to, m] {
      if (!connected(from, to, now())) return;
      deliver(*nodes_[static_cast<std::size_t>(to)], m, from);
    });
  }

  // -- policy distribution ---------------------------------------------------

  void publish(const std::string& text) {
    PolicyMutation m = pap_store_.author(text, "pap", keys_.pap);
    Digest root = pap_store_.merkle_root();
    publications_.push_back({now(), m.id, root});
    pap_root_since_ = now();
    result_.metrics.convergence_ms.reset();
    log(now(), "pap", "publish", "m=" + short_hex(m.id) + " root=" + short_hex(root));
    for (int i = 0; i < sc_.nodes; ++i) send(kControlPlane, i, m);
  }

  void gossip() {
    // Anti-entropy push: each endpoint offers what a connected peer lacks, in id order.
    auto offer = [&](int from, const PolicyStore& src) {
      for (int to = 0; to < sc_.nodes; ++to) {
        if (to == from) continue;
        const PolicyStore& dst = nodes_[static_cast<std::size_t>(to)]->store;
        for (const auto& [id, m] : src.all())
          if (!dst.contains(id)) send(from, to, m);
      }
    };
    offer(kControlPlane, pap_store_);
    for (auto& n : nodes_) offer(n->index, n->store);
    ev_.at(now() + sc_.gossip_interval_ms, [this] { gossip(); });
  }

  void deliver(Node& n, const PolicyMutation& m, int from) {
    Digest before = n.store.merkle_root();
    IngestResult r = n.store.ingest(m);
    if (r == IngestResult::duplicate) return;
    log(now(), n.name, "ingest",
        "m=" + short_hex(m.id) + " from=" + (from == kControlPlane ? std::string("pap") : nodes_[from]->name) +
            " result=" + to_string(r));
    for (const auto& [id, _] : n.store.all()) {
      if (n.arrived_mutations.count(id)) continue;
      n.arrived_mutations.insert(id);
      for (const auto& p : publications_)
        if (p.mutation == id && !p.genesis) result_.metrics.propagation_ms.push_back(now() - p.at_ms);
    }
    if (n.store.merkle_root() == before) return;
    check_convergence();
    if (sc_.attest_mode == AttestMode::on_mismatch) begin_attestation(n, "root-change");
  }

  void check_convergence() {
    const Digest& target = pap_store_.merkle_root();
    for (const auto& n : nodes_)
      if (n->store.merkle_root() != target) return;
    if (!result_.metrics.convergence_ms) result_.metrics.convergence_ms = now() - pap_root_since_;
  }

  // -- attestation -------------------------------------------------------------

  Candidate candidate_for(Node& n) {
    Digest root = n.store.merkle_root();
    auto it = n.compiled.find(root);
    if (it == n.compiled.end()) it = n.compiled.emplace(root, compile_effective(n.store, vocab_)).first;
    Candidate c{it->second, {}};
    for (const auto* m : n.store.resolved_policy()) c.mutations.insert(m->id);
    return c;
  }

  void begin_attestation(Node& n, const std::string& why) {
    if (n.epoch.attestation_in_flight()) return;
    Candidate c = candidate_for(n);
    const bool reachable = connected(n.index, kControlPlane, now());
    std::int64_t done = n.epoch.begin_attestation(now());
    log(now(), n.name, "attest-begin", "reason=" + why + " root=" + short_hex(c.policy.root()));
    ev_.at(done, [this, &n, c, reachable] { complete_attestation(n, c, reachable); });
  }

  void complete_attestation(Node& n, const Candidate& c, bool reachable_at_start) {
    if (!reachable_at_start || !connected(n.index, kControlPlane, now())) {
      n.epoch.abandon_attestation();
      log(now(), n.name, "attest-fail", "reason=unreachable");
      ev_.at(now() + 1000, [this, &n] { begin_attestation(n, "retry"); });
      return;
    }
    AttestationQuote q = keys_.authority.quote(keys_.measurement, c.policy.root(), ++quote_nonce_);
    if (n.epoch.attest(q, now()) != AttestError::none) throw std::logic_error("simulated quote rejected");
    on_new_epoch(n, c, "attest-ok");
  }

  void on_new_epoch(Node& n, const Candidate& c, const std::string& kind) {
    const EpochState& st = n.epoch.state();
    n.ever_attested = true;
    log(now(), n.name, kind, "epoch=" + st.epoch_id() + " root=" + short_hex(st.committed_root));

    if (n.open_halt) {
      result_.metrics.halts[*n.open_halt].recovered_ms = now();
      n.open_halt.reset();
      log(now(), n.name, "recover", "epoch=" + st.epoch_id());
    }
    if (c.policy.root() != n.pep->active().root()) {
      StageResult r = n.pep->stage(c.policy);
      log(now(), n.name, "stage", std::string("root=") + short_hex(c.policy.root()) + " result=" +
                                      (r == StageResult::staged || r == StageResult::replaced ? "ok" : "rejected"));
    }
    n.pep->set_credential(CredentialBinding{keys_.issuer.public_key(), "dosage",
                                            keys_.issuer.issue(n.uri, "dosage", st, now())});
    for (const auto& p : publications_)
      if (!p.genesis && c.mutations.count(p.mutation) && !n.enforced_mutations.count(p.mutation))
        result_.metrics.gl_samples_ms.push_back(now() - p.at_ms);
    n.enforced_mutations.insert(c.mutations.begin(), c.mutations.end());

    const std::uint64_t epoch = st.epoch_number;
    std::int64_t refresh = std::max(now() + 1, st.last_attest + st.ttl - sc_.attest_latency_ms - 1000);
    ev_.at(refresh, [this, &n, epoch] {
      if (n.epoch.state().epoch_number == epoch) begin_attestation(n, "refresh");
    });
    ev_.at(st.last_attest + st.ttl + 1, [this, &n, epoch] { expire(n, epoch); });

    drain(n);
    if (sc_.attest_mode == AttestMode::on_mismatch && n.store.merkle_root() != st.committed_root)
      begin_attestation(n, "root-change");
  }

  void expire(Node& n, std::uint64_t epoch) {
    if (n.epoch.state().epoch_number != epoch) return;
    if (!n.epoch.observe(now())) return;
    const auto& st = n.epoch.state();
    HaltRecord h{n.index, st.last_attest + st.ttl, now(), std::nullopt, partition_start(n.index, now())};
    if (h.partition_start_ms) result_.metrics.fail_closed_ms.push_back(now() - *h.partition_start_ms);
    n.open_halt = result_.metrics.halts.size();
    result_.metrics.halts.push_back(h);
    log(now(), n.name, "halt", "epoch=" + st.epoch_id() + " staleness_instant=" + std::to_string(h.staleness_instant_ms));
    drain(n);
    if (!n.epoch.attestation_in_flight()) begin_attestation(n, "halted");
  }

  void inject_reset(const ResetInjection& r) {
    Node& n = *nodes_[static_cast<std::size_t>(r.node)];
    ++reset_nonce_;
    ResetSignal sig = r.authenticated
                          ? ResetSignal::sign("pap", now(), reset_nonce_, "policy compromise", keys_.pap)
                          : ResetSignal{"pap", now(), reset_nonce_, "policy compromise", {}};
    Candidate c = candidate_for(n);
    AttestationQuote q = keys_.authority.quote(keys_.measurement, c.policy.root(), ++quote_nonce_);
    ResetDecision d = n.epoch.emergency_reset(sig, q, now(), AuditSink{&n.log, n.uri});
    log(now(), n.name, "reset", std::string("decision=") + to_string(d) + " nonce=" + std::to_string(reset_nonce_));
    if (d == ResetDecision::accepted) {
      ++result_.metrics.resets_accepted;
      on_new_epoch(n, c, "reset-ok");
    } else {
      ++result_.metrics.resets_rejected;
    }
  }

  // -- workload ----------------------------------------------------------------

  void schedule_next_arrival(double t) {
    if (!(sc_.lambda_per_hour > 0)) return;
    std::exponential_distribution<double> gap(sc_.lambda_per_hour / 3'600'000.0);
    t += gap(work_rng_);
    auto at = static_cast<std::int64_t>(t);
    if (at > sc_.duration_ms) return;
    ev_.at(at, [this, t] {
      arrive();
      schedule_next_arrival(t);
    });
  }

  ActionKind draw_kind(bool& adversarial) {
    std::uniform_int_distribution<int> three(0, 2);
    adversarial = false;
    switch (sc_.workload) {
      case Workload::w1:
      case Workload::w5: return ActionKind::safe_dosage;
      case Workload::w2:
        adversarial = true;
        return three(work_rng_) == 0 ? ActionKind::safe_dosage : ActionKind::unsafe_dosage;
      case Workload::w3: return ActionKind::escalate_case;
      case Workload::w4: return three(work_rng_) == 0 ? ActionKind::safe_dosage : ActionKind::unsafe_dosage;
      case Workload::mixed: return kAllActions[static_cast<std::size_t>(three(work_rng_))];
    }
    return ActionKind::safe_dosage;
  }

  void arrive() {
    bool adversarial = false;
    ActionKind kind = draw_kind(adversarial);
    auto node = std::uniform_int_distribution<int>(0, sc_.nodes - 1)(work_rng_);
    PendingAction a{next_action_id_++, kind, now(), adversarial};
    Node& n = *nodes_[static_cast<std::size_t>(node)];
    if (must_wait(n)) {
      n.queue.push_back(a);
      return;
    }
    decide(n, a);
  }

  /// Actions wait while the node's first attestation or a root-change attestation is outstanding.
  bool must_wait(const Node& n) const {
    if (!n.epoch.attestation_in_flight()) return false;
    if (!n.ever_attested) return true;
    if (n.epoch.state().stale_at(now())) return false;  // halted: deny rather than wait
    return sc_.attest_mode == AttestMode::on_mismatch && n.store.merkle_root() != n.epoch.state().committed_root;
  }

  void drain(Node& n) {
    std::deque<PendingAction> waiting;
    waiting.swap(n.queue);
    for (const auto& a : waiting) {
      if (must_wait(n))
        n.queue.push_back(a);
      else
        decide(n, a);
    }
  }

  void decide(Node& n, const PendingAction& a) {
    const auto& intent = intents_.at(a.kind);
    Digest local_root =
        sc_.attest_mode == AttestMode::on_mismatch ? n.store.merkle_root() : n.epoch.state().committed_root;
    ActionOutcome out;
    out.id = a.id;
    out.node = n.index;
    out.kind = a.kind;
    out.arrival_ms = a.arrival_ms;
    out.decided_ms = now();

    Pep& pep = *n.pep;
    if (sc_.generation == Generation::candidate) {
      std::vector<TokenId> words = a.adversarial ? free_generation(n, intent) : intent;
      out.decision = pep.decide(words, now(), local_root);
      out.emitted = std::move(words);
    } else {
      GreedySampler sampler;
      for (std::size_t k = 0;; ++k) {
        if (k > 64) throw std::logic_error("action did not terminate");
        // The adversary aims at whichever automaton the PEP is about to use.
        std::optional<CompiledPolicy> next = pep.at_boundary() ? pep.staged() : std::nullopt;
        const Dfa& d = next ? *next->dfa : *pep.active().dfa;
        auto allowed = d.allowed(pep.at_boundary() ? d.start() : pep.state());
        std::optional<TokenId> want = k < intent.size() ? std::optional(intent[k]) : std::optional<TokenId>(eoa_);
        Logits l = (a.adversarial ? n.adversarial : n.benign).next(want, allowed);
        StepResult r = pep.step(l, sampler, now(), local_root);
        if (r.token) out.emitted.push_back(*r.token);
        if (r.decision) {
          out.decision = *r.decision;
          break;
        }
      }
    }
    out.root = pep.active().root();
    account(n, out);
  }

  /// What an unconstrained model emits: greedy over raw logits, steered by the automaton only as a hint.
  std::vector<TokenId> free_generation(Node& n, const std::vector<TokenId>& intent) {
    const Dfa& d = *n.pep->active().dfa;
    std::vector<TokenId> out;
    StateId q = d.start();
    GreedySampler sampler;
    for (std::size_t k = 0; k < 8; ++k) {
      std::optional<TokenId> want = k < intent.size() ? std::optional(intent[k]) : std::optional<TokenId>(eoa_);
      Logits l = n.adversarial.next(want, d.allowed(q));
      TokenId t = sampler.sample(l.scores);
      out.push_back(t);
      if (t == eoa_) break;
      if (auto next = d.transition(q, t)) q = *next;
    }
    return out;
  }

  void account(Node& n, ActionOutcome& out) {
    auto& m = result_.metrics;
    ++m.actions;
    switch (out.decision.verdict) {
      case Verdict::permit: ++m.permits; break;
      case Verdict::deny: ++m.denies; break;
      case Verdict::escalate: ++m.escalates; break;
    }
    const bool enforced = out.decision.reason != Reason::halt && out.decision.reason != Reason::epoch_stale &&
                          out.decision.reason != Reason::credential;
    if (enforced && out.root != pap_store_.merkle_root()) {
      out.stale = true;
      ++m.n_stale;
      m.max_staleness_ms = std::max(m.max_staleness_ms, now() - pap_root_since_);
    }
    if (out.decision.verdict == Verdict::permit) {
      if (n.epoch.state().stale_at(now())) ++m.permits_while_halted;
      auto it = n.compiled.find(out.root);
      const Dfa& d = it != n.compiled.end() ? *it->second.dfa : *n.pep->active().dfa;
      if (!d.accepts(out.emitted)) ++m.grammar_violations;
    }
    std::string tokens;
    for (TokenId t : out.emitted) tokens += (tokens.empty() ? "" : ",") + std::to_string(t);
    log(now(), n.name, "decide",
        "id=" + std::to_string(out.id) + " action=" + to_string(out.kind) + " verdict=" +
            to_string(out.decision.verdict) + " reason=" + to_string(out.decision.reason) + " root=" +
            short_hex(out.root) + " epoch=" + n.epoch.state().epoch_id() + " tokens=" + tokens +
            (out.stale ? " stale" : ""));
    result_.actions.push_back(std::move(out));
  }

  // -- setup / teardown ------------------------------------------------------------

  std::unique_ptr<Node> make_node(int i, const PolicyMutation& genesis) {
    std::string name = "node-" + std::to_string(i);
    EpochConfig ec{keys_.authority.public_key(), keys_.measurement, sc_.epoch_ttl_ms, sc_.attest_latency_ms,
                   {{"pap", keys_.pap.public_key()}}};
    auto n = std::unique_ptr<Node>(new Node{
        i,
        name,
        "spiffe://ehv.example/agent/twin-" + std::to_string(i),
        PolicyStore(name, IssuerAllowlist{{"pap", keys_.pap.public_key()}}),
        EpochManager(ec),
        GbomLog{},
        nullptr,
        {},
        {},
        MockLogitGenerator(vocab_.size, sc_.seed * 1000 + static_cast<std::uint64_t>(i)),
        MockLogitGenerator(vocab_.size, sc_.seed * 1000 + 500 + static_cast<std::uint64_t>(i),
                           MockLogitGenerator::Mode::adversarial),
        {},
        {},
        false,
        std::nullopt});
    if (n->store.ingest(genesis) != IngestResult::added) throw std::logic_error("genesis mutation rejected");
    n->arrived_mutations.insert(genesis.id);
    n->enforced_mutations.insert(genesis.id);
    Candidate c = candidate_for(*n);
    PepOptions opts;
    opts.end_of_action = eoa_;
    opts.granularity = sc_.gbom_granularity;
    opts.identity = n->uri;
    opts.faults = sc_.faults;
    n->pep = std::make_unique<Pep>(c.policy, opts);
    n->pep->attach_epoch(&n->epoch);
    n->pep->attach_log(&n->log);
    if (!keys_.issuer.knows(n->uri))
      keys_.issuer.register_workload(WorkloadIdentity{"ehv.example", "/agent/twin-" + std::to_string(i),
                                                      KeyPair::from_seed(n->uri).public_key()});
    return n;
  }

  void finish() {
    // Whatever is still waiting is decided at the horizon by the PEP's own gate.
    for (auto& n : nodes_) {
      std::deque<PendingAction> waiting;
      waiting.swap(n->queue);
      for (const auto& a : waiting) decide(*n, a);
    }
    auto& m = result_.metrics;
    m.esw_bound = esw_bound(static_cast<std::uint64_t>(sc_.lambda_per_hour),
                            static_cast<std::uint64_t>(sc_.epoch_ttl_ms / 1000));
    m.n_unsafe_legacy = legacy_exposure(sc_.instances, sc_.recommendations_per_hour, sc_.legacy_gl_days);
    for (auto& n : nodes_) {
      m.gbom_decision_records += n->log.decision_count();
      result_.replica_roots.push_back(n->store.merkle_root());
      result_.committed_roots.push_back(n->epoch.state().committed_root);
    }
    result_.pap_root = pap_store_.merkle_root();
    for (const auto& p : sc_.partitions)
      if (p.end_ms >= sc_.duration_ms) result_.partitions_healed = false;
    for (auto& n : nodes_) result_.gbom.push_back(std::move(n->log));
  }

  const Scenario& sc_;
  Vocabulary vocab_;
  SimulationKeys keys_;
  PolicyStore pap_store_;
  std::vector<PublicationRecord> publications_;
  std::int64_t pap_root_since_ = 0;
  std::vector<std::unique_ptr<Node>> nodes_;
  EventQueue ev_;
  std::mt19937_64 net_rng_;
  std::mt19937_64 work_rng_;
  std::map<ActionKind, std::vector<TokenId>> intents_;
  TokenId eoa_ = 0;
  std::uint64_t next_action_id_ = 0;
  std::uint64_t quote_nonce_ = 0;
  std::uint64_t reset_nonce_ = 0;
  RunResult result_;
};

}  // namespace detail

/// Runs `scenario` to its horizon. Throws ScenarioError before any event if it does not validate.
inline RunResult run(const Scenario& scenario) {
  scenario.validate();
  return detail::Simulation(scenario).run();
}

}  // namespace ehv
