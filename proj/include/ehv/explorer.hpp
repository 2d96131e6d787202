#pragma once

// Breadth-first exhaustive exploration of a small model of one enforcement
// node: PAP policy version, replica version, attested (committed) version,
// active and staged automata, network state, halt flag and the in-flight
// action. Token steps run through the same enforce_token/completion code as
// the PEP, so PepFaults injected here reach the real enforcement logic.
//
// Checked on every transition:
//   safety      PERMIT only for words the active grammar derives without an
//               escalation mark; ESCALATE only for escalation-marked words;
//               nothing but DENY while halted.
//   alignment   while an action is open, the emitted prefix walks to the
//               current state in the active automaton; swaps never happen
//               with an action open.

#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "ehv/dfa.hpp"
#include "ehv/grammar.hpp"
#include "ehv/pep.hpp"
#include "ehv/workload.hpp"

namespace ehv {

struct ModelConfig {
  int versions = 5;
  std::vector<ActionKind> actions{kAllActions.begin(), kAllActions.end()};
  bool partitions = true;  // network states {CONNECTED, PARTITIONED}; false keeps CONNECTED only
  bool adversarial = true;  // also let the model push disallowed tokens at every step
  std::size_t max_action_tokens = 6;
  std::size_t max_depth = 64;
  std::size_t max_states = 2'000'000;
  PepFaults faults;
};

enum class DfaClass { idle, start, interior, accepting, escalating, dead };

inline const char* to_string(DfaClass c) {
  switch (c) {
    case DfaClass::idle: return "idle";
    case DfaClass::start: return "start";
    case DfaClass::interior: return "interior";
    case DfaClass::accepting: return "accepting";
    case DfaClass::escalating: return "escalating";
    case DfaClass::dead: return "dead";
  }
  return "?";
}

struct ModelState {
  std::uint8_t pap = 1;        // latest published version
  std::uint8_t store = 1;      // replica version
  std::uint8_t committed = 1;  // attested version
  std::uint8_t active = 1;     // PEP active automaton
  std::uint8_t staged = 0;     // 0 = empty staging buffer
  bool partitioned = false;
  bool halted = false;
  bool open = false;
  std::uint8_t action = 0;  // index into ModelConfig::actions while open
  StateId q = 0;
  std::vector<TokenId> emitted;

  auto operator<=>(const ModelState&) const = default;
};

struct Violation {
  std::string invariant;
  std::string detail;
  std::vector<std::string> trace;  // transition labels from the initial state
};

struct ExploreReport {
  std::size_t generated = 0;
  std::size_t distinct = 0;
  std::size_t depth = 0;
  std::size_t deadlocks = 0;
  std::size_t permits = 0;
  std::size_t escalations = 0;
  std::size_t denials = 0;
  bool complete = true;
  std::size_t violation_count = 0;
  std::map<std::string, std::size_t> violations_by_invariant;
  std::vector<Violation> violations;  // first of each invariant, then up to kMaxKept, each with a trace

  static constexpr std::size_t kMaxKept = 32;

  bool ok() const { return complete && violation_count == 0 && deadlocks == 0; }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["states_generated"] = generated;
    j["distinct_states"] = distinct;
    j["depth"] = depth;
    j["deadlocks"] = deadlocks;
    j["complete"] = complete;
    j["violation_count"] = violation_count;
    j["violations_by_invariant"] = violations_by_invariant;
    j["verdicts"] = {{"permit", permits}, {"escalate", escalations}, {"deny", denials}};
    j["violations"] = nlohmann::ordered_json::array();
    for (const auto& v : violations)
      j["violations"].push_back({{"invariant", v.invariant}, {"detail", v.detail}, {"trace", v.trace}});
    return j;
  }
};

namespace detail {

class ModelChecker {
 public:
  explicit ModelChecker(const ModelConfig& cfg) : cfg_(cfg), vocab_(parse_vocabulary(dosing_vocabulary_text())) {
    if (cfg.versions < 1 || cfg.versions > 250) throw std::invalid_argument("explore: versions must be in 1..250");
    if (cfg.actions.empty()) throw std::invalid_argument("explore: at least one action required");
    for (int v = 1; v <= cfg.versions; ++v) {
      std::string text = dosing_grammar_text(v);
      grammars_.push_back(parse_grammar(text));
      CompileOptions opts;
      opts.source_root = sha256(text);
      dfas_.push_back(std::make_shared<const Dfa>(compile(grammars_.back(), vocab_, opts)));
    }
    for (ActionKind a : cfg.actions) intents_.push_back(action_tokens(a, vocab_));
    eoa_ = *vocab_.find(kEndOfActionLexeme);
  }

  ExploreReport run() {
    ExploreReport rep;
    std::map<ModelState, Parent> seen;
    std::deque<std::pair<ModelState, std::size_t>> frontier;
    ModelState init;
    init.q = dfa(init.active).start();
    seen.emplace(init, Parent{});
    frontier.push_back({init, 0});
    rep.generated = 1;

    while (!frontier.empty()) {
      auto [s, depth] = frontier.front();
      frontier.pop_front();
      rep.depth = std::max(rep.depth, depth);
      auto succ = successors(s, rep);
      if (succ.empty()) ++rep.deadlocks;
      for (auto& [label, next, violation] : succ) {
        ++rep.generated;
        bool fresh = !seen.count(next);
        if (fresh) seen.emplace(next, Parent{s, label});
        if (violation && keep(rep, *violation)) {
          violation->trace = trace(seen, s);
          violation->trace.push_back(label);
          rep.violations.push_back(std::move(*violation));
        }
        if (!fresh) continue;
        if (depth + 1 > cfg_.max_depth || seen.size() > cfg_.max_states) {
          rep.complete = false;
          continue;
        }
        frontier.push_back({next, depth + 1});
      }
    }
    rep.distinct = seen.size();
    return rep;
  }

  DfaClass classify(const ModelState& s) const {
    if (!s.open) return DfaClass::idle;
    if (s.emitted.empty()) return DfaClass::start;
    const Dfa& d = dfa(s.active);
    if (d.allowed(s.q).empty() && !d.is_accepting(s.q)) return DfaClass::dead;
    if (d.is_accepting(s.q)) return d.is_escalating(s.q) ? DfaClass::escalating : DfaClass::accepting;
    return DfaClass::interior;
  }

 private:
  struct Parent {
    std::optional<ModelState> from;
    std::string label;
  };
  using Edge = std::tuple<std::string, ModelState, std::optional<Violation>>;

  static bool keep(ExploreReport& rep, const Violation& v) {
    ++rep.violation_count;
    bool first_of_kind = ++rep.violations_by_invariant[v.invariant] == 1;
    return first_of_kind || rep.violations.size() < ExploreReport::kMaxKept;
  }

  const Dfa& dfa(std::uint8_t version) const { return *dfas_.at(version - 1); }
  const PolicyGrammar& grammar(std::uint8_t version) const { return grammars_.at(version - 1); }

  std::vector<std::string> trace(const std::map<ModelState, Parent>& seen, ModelState s) const {
    std::vector<std::string> out;
    for (auto it = seen.find(s); it != seen.end() && it->second.from; it = seen.find(*it->second.from))
      out.push_back(it->second.label);
    std::reverse(out.begin(), out.end());
    return out;
  }

  void swap_in(ModelState& s) const {
    s.active = s.staged;
    s.staged = 0;
    if (s.open) {
      // Mirrors Pep's mid-action swap, reachable only with ignore_boundary.
      if (s.q >= dfa(s.active).state_count()) s.q = dfa(s.active).start();
    } else {
      s.q = dfa(s.active).start();
    }
  }

  void close(ModelState& s) const {
    s.open = false;
    s.action = 0;
    s.emitted.clear();
    s.q = dfa(s.active).start();
  }

  std::optional<Violation> check_verdict(const ModelState& before, const std::vector<TokenId>& emitted, Decision d,
                                         ExploreReport& rep) const {
    switch (d.verdict) {
      case Verdict::deny: ++rep.denials; return std::nullopt;
      case Verdict::permit: ++rep.permits; break;
      case Verdict::escalate: ++rep.escalations; break;
    }
    if (before.halted) return Violation{"I_g", std::string(to_string(d.verdict)) + " while halted", {}};
    Derivability ref = derive_word(grammar(before.active), emitted);
    bool ok = d.verdict == Verdict::permit ? ref.derivable && !ref.escalating : ref.derivable && ref.escalating;
    if (ok) return std::nullopt;
    std::string word;
    for (TokenId t : emitted) word += (word.empty() ? "" : " ") + vocab_.lexeme(t);
    return Violation{"I_g",
                     std::string(to_string(d.verdict)) + " of '" + word + "' under policy v" +
                         std::to_string(before.active),
                     {}};
  }

  std::vector<Edge> successors(const ModelState& s, ExploreReport& rep) const {
    std::vector<Edge> out;
    auto add = [&](std::string label, ModelState n, std::optional<Violation> v = std::nullopt) {
      out.emplace_back(std::move(label), std::move(n), std::move(v));
    };

    if (s.pap < cfg_.versions) {
      ModelState n = s;
      ++n.pap;
      add("publish v" + std::to_string(n.pap), n);
    }
    if (!s.partitioned && s.store < s.pap) {
      ModelState n = s;
      n.store = s.pap;
      add("gossip v" + std::to_string(n.store), n);
    }
    if (cfg_.partitions) {
      ModelState n = s;
      n.partitioned = !s.partitioned;
      add(s.partitioned ? "heal" : "partition", n);
    }
    if (!s.partitioned && (s.halted || s.committed != s.store)) {
      ModelState n = s;
      n.committed = s.store;
      n.halted = false;
      n.staged = s.store != s.active ? s.store : 0;
      std::optional<Violation> v;
      if (n.staged && cfg_.faults.ignore_boundary) {
        if (n.open) v = Violation{"PrefixAligned", "automaton swapped with an action open", {}};
        swap_in(n);
      }
      add("attest v" + std::to_string(n.committed), n, v);
    }
    if (s.partitioned && !s.halted) {
      ModelState n = s;
      n.halted = true;
      add("epoch-expiry", n);
    }

    if (!s.open) {
      for (std::size_t a = 0; a < intents_.size(); ++a) {
        std::string label = std::string("begin ") + to_string(cfg_.actions[a]);
        if (s.halted) {
          ++rep.denials;
          add(label + " -> DENY(halt)", s);
          continue;
        }
        if (s.committed != s.store) {
          ++rep.denials;
          add(label + " -> DENY(epoch-stale)", s);
          continue;
        }
        ModelState n = s;
        if (n.staged) swap_in(n);
        n.open = true;
        n.action = static_cast<std::uint8_t>(a);
        n.emitted.clear();
        n.q = dfa(n.active).start();
        add(label, n);
      }
      return out;
    }

    if (s.halted) {
      ModelState n = s;
      close(n);
      ++rep.denials;
      add("step -> DENY(halt)", n);
      return out;
    }
    step(s, /*adversarial=*/false, rep, out);
    if (cfg_.adversarial) step(s, true, rep, out);
    return out;
  }

  void step(const ModelState& s, bool adversarial, ExploreReport& rep, std::vector<Edge>& out) const {
    const Dfa& d = dfa(s.active);
    std::string label = adversarial ? "step(adversarial)" : "step(intent)";
    auto allowed = d.allowed(s.q);
    if (allowed.empty() && !cfg_.faults.disable_mask) {
      ModelState n = s;
      close(n);
      ++rep.denials;
      out.emplace_back(label + " -> DENY(dead-end)", n, std::nullopt);
      return;
    }

    Logits logits{std::vector<float>(d.vocab_size(), 0.0f)};
    const auto& intent = intents_[s.action];
    if (s.emitted.size() < intent.size()) logits.scores[intent[s.emitted.size()]] += 8.0f;
    if (adversarial)
      for (TokenId k = 0; k < d.vocab_size(); ++k)
        if (!d.allows(s.q, k)) logits.scores[k] += 26.0f;

    GreedySampler sampler;
    TokenOutcome t = enforce_token(d, s.q, allowed, logits, sampler, cfg_.faults);
    ModelState n = s;
    n.emitted.push_back(t.token);
    n.q = t.next.value_or(s.q);
    label += " '" + vocab_.lexeme(t.token) + "'";

    if (auto dec = completion(d, n.q, t.token, eoa_, cfg_.faults)) {
      auto v = check_verdict(s, n.emitted, *dec, rep);
      label += std::string(" -> ") + to_string(dec->verdict);
      close(n);
      out.emplace_back(label, n, v);
      return;
    }

    std::optional<Violation> v;
    if (d.walk(n.emitted) != std::optional<StateId>(n.q))
      v = Violation{"PrefixAligned", "emitted prefix does not walk to the current state", {}};
    if (n.emitted.size() >= cfg_.max_action_tokens) {
      close(n);
      ++rep.denials;
      label += " -> DENY(incomplete)";
    }
    out.emplace_back(label, n, v);
  }

  ModelConfig cfg_;
  Vocabulary vocab_;
  std::vector<PolicyGrammar> grammars_;
  std::vector<std::shared_ptr<const Dfa>> dfas_;
  std::vector<std::vector<TokenId>> intents_;
  TokenId eoa_ = 0;
};

}  // namespace detail

inline ExploreReport explore(const ModelConfig& cfg) { return detail::ModelChecker(cfg).run(); }

}  // namespace ehv
