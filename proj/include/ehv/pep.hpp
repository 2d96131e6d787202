#pragma once

// Policy enforcement point: grammar-constrained decoding over the active DFA.
//
// Every generation step masks the raw logits to the allowed set of the current
// state before sampling, so a token without a transition can never be emitted.
// An action ends when the end-of-action token is consumed in an accepting
// state; that instant is an action boundary. Policy updates are staged in a
// second buffer and only become active at a boundary.

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ehv/compiled_policy.hpp"
#include "ehv/dfa.hpp"
#include "ehv/epoch.hpp"
#include "ehv/gbom.hpp"
#include "ehv/identity.hpp"

namespace ehv {

inline constexpr float kMaskedLogit = -std::numeric_limits<float>::infinity();

struct Logits {
  std::vector<float> scores;

  std::size_t size() const { return scores.size(); }
  bool operator==(const Logits&) const = default;
};

/// Writes in[k] for allowed k and -inf elsewhere into `out`.
inline void mask_into(std::span<const float> in, std::span<const TokenId> allowed, std::span<float> out) {
  if (in.size() != out.size()) throw std::invalid_argument("mask: output length differs from input length");
  std::fill(out.begin(), out.end(), kMaskedLogit);
  for (TokenId k : allowed) {
    if (k >= in.size()) throw std::invalid_argument("mask: allowed token " + std::to_string(k) + " outside logits");
    out[k] = in[k];
  }
}

inline Logits mask(const Logits& logits, std::span<const TokenId> allowed) {
  Logits out{std::vector<float>(logits.size())};
  mask_into(logits.scores, allowed, out.scores);
  return out;
}

/// Masks against a DFA state; the logits must span the DFA's vocabulary.
inline Logits mask(const Logits& logits, const Dfa& dfa, StateId q) {
  if (logits.size() != dfa.vocab_size())
    throw std::invalid_argument("mask: logits length " + std::to_string(logits.size()) +
                                " differs from vocabulary size " + std::to_string(dfa.vocab_size()));
  return mask(logits, dfa.allowed(q));
}

inline std::vector<double> softmax(std::span<const float> scores, double temperature = 1.0) {
  double hi = -std::numeric_limits<double>::infinity();
  for (float s : scores) hi = std::max(hi, static_cast<double>(s));
  std::vector<double> p(scores.size(), 0.0);
  if (!std::isfinite(hi)) return p;
  double total = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    p[i] = std::isinf(scores[i]) && scores[i] < 0 ? 0.0 : std::exp((scores[i] - hi) / temperature);
    total += p[i];
  }
  for (auto& v : p) v /= total;
  return p;
}

/// Walks `tokens` from the start state; nullopt means the walk fell off the automaton (DENY).
inline std::optional<StateId> walk_prefix(const Dfa& dfa, std::span<const TokenId> tokens) {
  for (TokenId t : tokens)
    if (t >= dfa.vocab_size()) throw std::invalid_argument("token id " + std::to_string(t) + " outside vocabulary");
  return dfa.walk(tokens);
}

enum class Reason { grammar_accept, escalate_mark, dead_end, incomplete, epoch_stale, halt, credential };

inline const char* to_string(Reason r) {
  switch (r) {
    case Reason::grammar_accept: return "grammar-accept";
    case Reason::escalate_mark: return "escalate-mark";
    case Reason::dead_end: return "dead-end";
    case Reason::incomplete: return "incomplete";
    case Reason::epoch_stale: return "epoch-stale";
    case Reason::halt: return "halt";
    case Reason::credential: return "credential";
  }
  return "?";
}

struct Decision {
  Verdict verdict;
  Reason reason;
  bool operator==(const Decision&) const = default;
};

// ---------------------------------------------------------------------------
// Samplers

class Sampler {
 public:
  virtual ~Sampler() = default;
  virtual TokenId sample(std::span<const float> logits) = 0;
};

/// Highest score wins; ties go to the lowest token id.
class GreedySampler final : public Sampler {
 public:
  TokenId sample(std::span<const float> logits) override {
    std::optional<TokenId> best;
    for (TokenId k = 0; k < logits.size(); ++k) {
      if (logits[k] == kMaskedLogit) continue;
      if (!best || logits[k] > logits[*best]) best = k;
    }
    if (!best) throw std::logic_error("greedy sampler: every token is masked");
    return *best;
  }
};

/// Draws from softmax(logits / temperature) with a seeded 64-bit Mersenne Twister.
class SoftmaxSampler final : public Sampler {
 public:
  explicit SoftmaxSampler(std::uint64_t seed, double temperature = 1.0) : rng_(seed), temperature_(temperature) {}

  TokenId sample(std::span<const float> logits) override {
    std::vector<double> p = softmax(logits, temperature_);
    double u = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
    double cum = 0;
    std::optional<TokenId> last;
    for (TokenId k = 0; k < p.size(); ++k) {
      if (p[k] == 0.0) continue;
      cum += p[k];
      last = k;
      if (u < cum) return k;
    }
    if (!last) throw std::logic_error("softmax sampler: every token is masked");
    return *last;
  }

 private:
  std::mt19937_64 rng_;
  double temperature_;
};

// ---------------------------------------------------------------------------
// Enforcement point

enum class LogGranularity { per_token, per_action };

/// Deliberate defects for mutation testing of the safety checkers.
struct PepFaults {
  bool disable_mask = false;     // sample raw logits and wave through whatever is generated
  bool ignore_boundary = false;  // swap staged automata mid-action
};

struct PepOptions {
  TokenId end_of_action = 0;
  LogGranularity granularity = LogGranularity::per_token;
  std::string identity = "spiffe://ehv.example/agent/twin-001";
  std::string action_description = "Vincristine dosage recommendation";
  PepFaults faults;
};

struct CredentialBinding {
  PublicKey issuer;
  std::string action_class;
  ActionCredential credential;
};

/// Mask, sample and transition for one token. Shared by Pep and the model explorer.
struct TokenOutcome {
  Logits masked;
  TokenId token = 0;
  std::optional<StateId> next;  // empty only when the mask is disabled
};

inline TokenOutcome enforce_token(const Dfa& dfa, StateId q, std::span<const TokenId> allowed, const Logits& logits,
                                  Sampler& sampler, const PepFaults& faults) {
  TokenOutcome t;
  t.masked = faults.disable_mask ? logits : mask(logits, allowed);
  t.token = sampler.sample(t.masked.scores);
  t.next = dfa.transition(q, t.token);
  if (!t.next && !faults.disable_mask) throw std::logic_error("sampled a token outside the allowed set");
  return t;
}

/// Verdict for an action whose last emitted token was `token`, landing in `q`; empty while the action is open.
inline std::optional<Decision> completion(const Dfa& dfa, StateId q, TokenId token, TokenId end_of_action,
                                          const PepFaults& faults) {
  if (token != end_of_action) return std::nullopt;
  if (!dfa.is_accepting(q) && !faults.disable_mask) return std::nullopt;
  if (dfa.is_accepting(q) && dfa.is_escalating(q)) return Decision{Verdict::escalate, Reason::escalate_mark};
  return Decision{Verdict::permit, Reason::grammar_accept};
}

struct StepResult {
  Logits masked;
  std::optional<TokenId> token;
  std::optional<Decision> decision;  // set when the action completed or the step was refused
  Digest active_root;                // root of the automaton that produced both mask and transition
  StateId state = 0;
  bool prefetch_hit = false;
};

enum class StageResult { staged, replaced, rejected_same_root, rejected_older };

struct SwapEvent {
  std::uint64_t step;
  Digest from;
  Digest to;
  bool mid_action;
};

class Pep {
 public:
  Pep(CompiledPolicy active, PepOptions opts) : active_(std::move(active)), opts_(std::move(opts)) {
    if (!active_.dfa) throw std::invalid_argument("Pep needs an active DFA");
  }

  Pep(const Pep&) = delete;
  Pep& operator=(const Pep&) = delete;

  void attach_epoch(const EpochManager* epoch) { epoch_ = epoch; }
  void attach_log(GbomLog* log) { log_ = log; }
  void set_credential(std::optional<CredentialBinding> binding) { credential_ = std::move(binding); }

  /// One masked generation step. `local_root` is the policy store's current root.
  StepResult step(const Logits& logits, Sampler& sampler, std::int64_t now,
                  std::optional<Digest> local_root = std::nullopt) {
    StepResult out;
    if (auto refused = gate(now, local_root, !action_open_)) {
      abort_action();
      out.masked = Logits{std::vector<float>(logits.size(), kMaskedLogit)};
      out.decision = refused;
      out.active_root = active_.root();
      out.state = q_;
      record_decision(*refused, state_label(q_), now);
      return out;
    }
    if (!action_open_) begin_action();

    // One automaton for mask, sample and transition.
    const Dfa& dfa = *active_.dfa;
    out.active_root = dfa.source_root();
    if (logits.size() != dfa.vocab_size())
      throw std::invalid_argument("step: logits length differs from vocabulary size");

    std::span<const TokenId> allowed;
    if (auto it = prefetched_.find(q_); it != prefetched_.end()) {
      allowed = it->second;
      out.prefetch_hit = true;
      ++prefetch_hits_;
    } else {
      allowed = dfa.allowed(q_);
    }

    if (allowed.empty() && !opts_.faults.disable_mask) {
      Decision d{Verdict::deny, Reason::dead_end};
      out.masked = Logits{std::vector<float>(logits.size(), kMaskedLogit)};
      out.decision = d;
      out.state = q_;
      record_decision(d, state_label(q_), now);
      abort_action();
      prefetched_.clear();
      return out;
    }

    TokenOutcome t = enforce_token(dfa, q_, allowed, logits, sampler, opts_.faults);
    const TokenId token = t.token;
    out.masked = std::move(t.masked);
    out.token = token;
    q_ = t.next.value_or(q_);
    prefix_.push_back(token);
    ++step_;
    out.state = q_;

    if (opts_.granularity == LogGranularity::per_token)
      record(RecordKind::token, Verdict::permit, state_label(q_), now,
             "token " + std::to_string(token) + " at step " + std::to_string(step_));

    if (auto d = completion(dfa, q_, token, opts_.end_of_action, opts_.faults)) {
      out.decision = d;
      record_decision(*d, state_label(q_), now);
      action_open_ = false;
    }
    return out;
  }

  /// Evaluates a complete candidate action against the active policy.
  Decision decide(std::span<const TokenId> action, std::int64_t now, std::optional<Digest> local_root = std::nullopt) {
    Decision d{Verdict::deny, Reason::dead_end};
    std::optional<StateId> end;
    if (auto refused = gate(now, local_root, true)) {
      d = *refused;
    } else {
      const Dfa& dfa = *active_.dfa;
      end = dfa.walk(action);
      if (!end)
        d = {Verdict::deny, Reason::dead_end};
      else if (!dfa.is_accepting(*end))
        d = {Verdict::deny, Reason::incomplete};
      else if (dfa.is_escalating(*end))
        d = {Verdict::escalate, Reason::escalate_mark};
      else
        d = {Verdict::permit, Reason::grammar_accept};
    }
    record_decision(d, end ? state_label(end) : std::string(state_label(std::nullopt)), now);
    return d;
  }

  /// Publishes a newer automaton into the staging buffer. Safe to call from another thread.
  StageResult stage(CompiledPolicy next) {
    std::lock_guard lock(staging_mu_);
    if (next.root() == active_.root()) return StageResult::rejected_same_root;
    if (!supersedes(next, active_)) return StageResult::rejected_older;
    StageResult r = StageResult::staged;
    if (staged_) {
      if (next.root() == staged_->root()) return StageResult::rejected_same_root;
      if (!supersedes(next, *staged_)) return StageResult::rejected_older;
      r = StageResult::replaced;
    }
    staged_ = std::move(next);
    return r;
  }

  /// Activates the staged automaton if the generator sits at an aligned action boundary.
  bool try_swap() {
    std::lock_guard lock(staging_mu_);
    if (!staged_) return false;
    if (action_open_) {
      if (!opts_.faults.ignore_boundary) return false;
      swap_locked(/*mid_action=*/true);
      return true;
    }
    if (!prefix_.empty() && !staged_->dfa->walk(prefix_)) return false;  // deferred to boundary completion
    swap_locked(false);
    return true;
  }

  /// Caches allowed sets of every successor of q_t ahead of the next step.
  void prefetch_masks() {
    prefetched_.clear();
    for (StateId s : active_.dfa->successors(q_))
      if (!prefetched_.count(s)) {
        auto allowed = active_.dfa->allowed(s);
        prefetched_.emplace(s, std::vector<TokenId>(allowed.begin(), allowed.end()));
      }
  }

  StateId state() const { return q_; }
  std::uint64_t step_count() const { return step_; }
  bool at_boundary() const { return !action_open_; }
  std::span<const TokenId> prefix() const { return prefix_; }
  const CompiledPolicy& active() const { return active_; }
  std::optional<CompiledPolicy> staged() const {
    std::lock_guard lock(staging_mu_);
    return staged_;
  }
  const std::map<StateId, std::vector<TokenId>>& prefetched() const { return prefetched_; }
  std::uint64_t prefetch_hits() const { return prefetch_hits_; }
  const std::vector<SwapEvent>& swaps() const { return swaps_; }
  const PepOptions& options() const { return opts_; }

 private:
  std::optional<Decision> gate(std::int64_t now, const std::optional<Digest>& local_root, bool new_action) const {
    if (epoch_) {
      switch (epoch_->verify(local_root.value_or(active_.root()), now)) {
        case Freshness::halted: return Decision{Verdict::deny, Reason::halt};
        case Freshness::reattest:
          if (new_action) return Decision{Verdict::deny, Reason::epoch_stale};
          break;
        case Freshness::fresh: break;
      }
    }
    if (new_action && credential_) {
      if (!epoch_) return Decision{Verdict::deny, Reason::credential};
      if (validate_credential(credential_->credential, credential_->issuer, credential_->action_class, epoch_->state(),
                              now) != CredentialStatus::valid)
        return Decision{Verdict::deny, Reason::credential};
    }
    return std::nullopt;
  }

  void begin_action() {
    {
      std::lock_guard lock(staging_mu_);
      if (staged_) {
        prefix_.clear();
        swap_locked(false);
      }
    }
    prefix_.clear();
    q_ = active_.dfa->start();
    action_open_ = true;
  }

  void abort_action() {
    action_open_ = false;
    prefix_.clear();
    q_ = active_.dfa->start();
  }

  void swap_locked(bool mid_action) {
    swaps_.push_back({step_, active_.root(), staged_->root(), mid_action});
    active_ = std::move(*staged_);
    staged_.reset();
    prefetched_.clear();
    if (mid_action) {
      if (q_ >= active_.dfa->state_count()) q_ = active_.dfa->start();
    } else {
      prefix_.clear();
      q_ = active_.dfa->start();
    }
  }

  void record_decision(const Decision& d, const std::string& dfa_state, std::int64_t now) {
    record(RecordKind::decision, d.verdict, dfa_state, now,
           opts_.action_description + " (" + to_string(d.reason) + ")");
  }

  void record(RecordKind kind, Verdict v, const std::string& dfa_state, std::int64_t now, std::string description) {
    if (!log_) return;
    RecordFields f;
    f.timestamp_ms = now;
    f.kind = kind;
    f.policy_merkle_root = active_.root();
    f.tee_measurement = epoch_ ? epoch_->state().measurement : Digest{};
    f.epoch_id = epoch_ ? epoch_->state().epoch_id() : epoch_label(0);
    f.dfa_state = dfa_state;
    f.enforcement = v;
    f.identity = opts_.identity;
    f.description = std::move(description);
    log_->append(f);
  }

  CompiledPolicy active_;
  PepOptions opts_;
  mutable std::mutex staging_mu_;
  std::optional<CompiledPolicy> staged_;
  const EpochManager* epoch_ = nullptr;
  GbomLog* log_ = nullptr;
  std::optional<CredentialBinding> credential_;

  StateId q_ = 0;
  std::uint64_t step_ = 0;
  bool action_open_ = false;
  std::vector<TokenId> prefix_;
  std::map<StateId, std::vector<TokenId>> prefetched_;
  std::uint64_t prefetch_hits_ = 0;
  std::vector<SwapEvent> swaps_;
};

// ---------------------------------------------------------------------------
// Mock model

/// Seeded stand-in for the model's logits. `intent` receives a large bonus;
/// adversarial mode pushes every token outside `allowed` above everything else.
class MockLogitGenerator {
 public:
  enum class Mode { benign, adversarial };

  MockLogitGenerator(std::size_t vocab_size, std::uint64_t seed, Mode mode = Mode::benign, float intent_bias = 8.0f)
      : vocab_(vocab_size), rng_(seed), mode_(mode), bias_(intent_bias) {}

  Logits next(std::optional<TokenId> intent, std::span<const TokenId> allowed = {}) {
    Logits l{std::vector<float>(vocab_)};
    for (auto& s : l.scores) s = static_cast<float>(static_cast<double>(rng_() >> 11) * 0x1.0p-53 * 2.0 - 1.0);
    if (intent && *intent < vocab_) l.scores[*intent] += bias_;
    if (mode_ == Mode::adversarial) {
      std::vector<bool> ok(vocab_, false);
      for (TokenId k : allowed)
        if (k < vocab_) ok[k] = true;
      for (std::size_t k = 0; k < vocab_; ++k)
        if (!ok[k]) l.scores[k] += 2 * bias_ + 10.0f;
    }
    return l;
  }

  Mode mode() const { return mode_; }

 private:
  std::size_t vocab_;
  std::mt19937_64 rng_;
  Mode mode_;
  float bias_;
};

}  // namespace ehv
