#pragma once

// Simulated-TEE attestation cache. The policy root is validated once per
// epoch by a mock attestation authority; inside the epoch verification is a
// single constant-time digest comparison. Staleness past the TTL halts the
// node (fail-closed) until a fresh attestation succeeds.
//
// All times are logical milliseconds supplied by the caller.

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ehv/crypto.hpp"
#include "ehv/gbom.hpp"

namespace ehv {

struct EpochState {
  std::uint64_t epoch_number = 0;
  Digest committed_root;
  Digest measurement;
  std::int64_t last_attest = 0;
  std::int64_t ttl = 60'000;
  bool attested = false;
  bool halted = true;
  std::optional<std::int64_t> last_forced_reset;

  std::string epoch_id() const { return epoch_label(epoch_number); }
  /// Exclusive end of the epoch's validity for credentials.
  std::int64_t epoch_end() const { return last_attest + ttl; }
  bool stale_at(std::int64_t now) const { return !attested || now - last_attest > ttl; }
};

struct AttestationQuote {
  Digest measurement;
  Digest policy_root;
  std::uint64_t nonce = 0;
  Signature signature{};

  Bytes canonical() const {
    ByteWriter w;
    w.tag("EHVQUOTE1").digest(measurement).digest(policy_root).u64(nonce);
    return std::move(w).take();
  }
};

/// Stand-in for the hardware quoting path plus the remote verifier's key.
class AttestationAuthority {
 public:
  explicit AttestationAuthority(std::string_view label = "ehv-attestation-authority")
      : key_(KeyPair::from_seed(label)) {}

  AttestationQuote quote(const Digest& measurement, const Digest& policy_root, std::uint64_t nonce) const {
    AttestationQuote q{measurement, policy_root, nonce, {}};
    q.signature = key_.sign(q.canonical());
    return q;
  }
  const PublicKey& public_key() const { return key_.public_key(); }

 private:
  KeyPair key_;
};

struct ResetSignal {
  std::string issuer;
  std::int64_t issued_at_ms = 0;
  std::uint64_t nonce = 0;
  std::string reason;
  Signature signature{};

  Bytes canonical() const {
    ByteWriter w;
    w.tag("EHVRESET1").str(issuer).i64(issued_at_ms).u64(nonce).str(reason);
    return std::move(w).take();
  }

  static ResetSignal sign(std::string issuer, std::int64_t at, std::uint64_t nonce, std::string reason,
                          const KeyPair& key) {
    ResetSignal s{std::move(issuer), at, nonce, std::move(reason), {}};
    s.signature = key.sign(s.canonical());
    return s;
  }
};

enum class Freshness { fresh, reattest, halted };

inline const char* to_string(Freshness f) {
  switch (f) {
    case Freshness::fresh: return "FRESH";
    case Freshness::reattest: return "REATTEST";
    case Freshness::halted: return "HALTED";
  }
  return "?";
}

enum class AttestError { none, bad_signature, wrong_measurement };

enum class ResetDecision { accepted, unauthenticated, rate_limited, replayed, attestation_failed };

inline const char* to_string(ResetDecision d) {
  switch (d) {
    case ResetDecision::accepted: return "accepted";
    case ResetDecision::unauthenticated: return "unauthenticated";
    case ResetDecision::rate_limited: return "rate-limited";
    case ResetDecision::replayed: return "replayed";
    case ResetDecision::attestation_failed: return "attestation-failed";
  }
  return "?";
}

struct ResetEvent {
  std::int64_t at_ms;
  ResetDecision decision;
};

struct EpochConfig {
  PublicKey authority;
  Digest expected_measurement;
  std::int64_t ttl_ms = 60'000;
  std::int64_t attest_latency_ms = 200;
  /// PAP keys allowed to sign emergency resets.
  std::map<std::string, PublicKey> reset_authorities;
};

/// Context written into security observations.
struct AuditSink {
  GbomLog* log = nullptr;
  std::string identity;
};

class EpochManager {
 public:
  explicit EpochManager(EpochConfig cfg) : cfg_(std::move(cfg)) {
    state_.ttl = cfg_.ttl_ms;
    state_.measurement = cfg_.expected_measurement;
  }

  const EpochState& state() const { return state_; }
  const EpochConfig& config() const { return cfg_; }

  /// Applies a completed attestation at `now`. On failure the state is untouched.
  AttestError attest(const AttestationQuote& quote, std::int64_t now) {
    if (!verify_signature(cfg_.authority, quote.canonical(), quote.signature)) return AttestError::bad_signature;
    if (quote.measurement != cfg_.expected_measurement) return AttestError::wrong_measurement;
    ++state_.epoch_number;
    state_.committed_root = quote.policy_root;
    state_.measurement = quote.measurement;
    state_.last_attest = now;
    state_.attested = true;
    state_.halted = false;
    pending_until_.reset();
    return AttestError::none;
  }

  /// Marks an attestation round trip in flight; returns its completion time.
  std::int64_t begin_attestation(std::int64_t now) {
    pending_until_ = now + cfg_.attest_latency_ms;
    return *pending_until_;
  }
  void abandon_attestation() { pending_until_.reset(); }
  bool attestation_pending(std::int64_t now) const { return pending_until_ && now < *pending_until_; }
  bool attestation_in_flight() const { return pending_until_.has_value(); }

  /// In-epoch check. The FRESH path costs one digest comparison regardless of policy size.
  Freshness verify(const Digest& local_root, std::int64_t now) const {
    if (state_.stale_at(now)) return Freshness::halted;
    ++comparisons_;
    if (sodium_memcmp(local_root.bytes.data(), state_.committed_root.bytes.data(), 32) != 0)
      return Freshness::reattest;
    return Freshness::fresh;
  }

  /// Records the halt flag as of `now`; returns it.
  bool observe(std::int64_t now) {
    state_.halted = state_.stale_at(now);
    return state_.halted;
  }

  ResetDecision emergency_reset(const ResetSignal& signal, const AttestationQuote& quote, std::int64_t now,
                                AuditSink audit = {}) {
    ResetDecision d = evaluate_reset(signal, now);
    if (d == ResetDecision::accepted && attest(quote, now) != AttestError::none) d = ResetDecision::attestation_failed;
    if (d == ResetDecision::accepted) {
      state_.last_forced_reset = now;
      seen_nonces_.insert({signal.issuer, signal.nonce});
    }
    reset_log_.push_back({now, d});
    if (d != ResetDecision::accepted && audit.log) {
      RecordFields f;
      f.timestamp_ms = now;
      f.kind = RecordKind::security;
      f.policy_merkle_root = state_.committed_root;
      f.tee_measurement = state_.measurement;
      f.epoch_id = state_.epoch_id();
      f.dfa_state = "-";
      f.enforcement = Verdict::deny;
      f.identity = audit.identity;
      f.description = std::string("EMERGENCY_EPOCH_RESET rejected: ") + to_string(d) + " (issuer '" + signal.issuer + "')";
      audit.log->append(f);
    }
    return d;
  }

  const std::vector<ResetEvent>& reset_log() const { return reset_log_; }
  std::uint64_t digest_comparisons() const { return comparisons_; }

 private:
  ResetDecision evaluate_reset(const ResetSignal& signal, std::int64_t now) const {
    auto it = cfg_.reset_authorities.find(signal.issuer);
    if (it == cfg_.reset_authorities.end() || !verify_signature(it->second, signal.canonical(), signal.signature))
      return ResetDecision::unauthenticated;
    if (seen_nonces_.count({signal.issuer, signal.nonce})) return ResetDecision::replayed;
    if (state_.last_forced_reset && now - *state_.last_forced_reset < cfg_.ttl_ms / 2)
      return ResetDecision::rate_limited;
    return ResetDecision::accepted;
  }

  EpochConfig cfg_;
  EpochState state_;
  std::optional<std::int64_t> pending_until_;
  std::vector<ResetEvent> reset_log_;
  std::set<std::pair<std::string, std::uint64_t>> seen_nonces_;
  mutable std::uint64_t comparisons_ = 0;
};

}  // namespace ehv
