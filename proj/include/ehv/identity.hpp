#pragma once

// Workload identities and epoch-scoped action credentials. Credentials are
// in-process signed values bound to (subject, action class, epoch, enclave
// measurement) and expire at the end of the epoch they were issued in.

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>

#include "ehv/crypto.hpp"
#include "ehv/epoch.hpp"

namespace ehv {

struct WorkloadIdentity {
  std::string trust_domain;
  std::string path;  // begins with '/'
  PublicKey key;

  std::string uri() const { return "spiffe://" + trust_domain + path; }
};

struct ActionCredential {
  std::string subject;  // workload URI
  std::string action_class;
  std::uint64_t epoch_number = 0;
  std::int64_t expiry_ms = 0;
  Digest measurement;
  Signature signature{};

  std::string epoch_id() const { return epoch_label(epoch_number); }

  Bytes canonical() const {
    ByteWriter w;
    w.tag("EHVCRED1").str(subject).str(action_class).u64(epoch_number).i64(expiry_ms).digest(measurement);
    return std::move(w).take();
  }
};

enum class CredentialStatus { valid, bad_signature, scope_mismatch, expired, epoch_mismatch, measurement_mismatch };

inline const char* to_string(CredentialStatus s) {
  switch (s) {
    case CredentialStatus::valid: return "valid";
    case CredentialStatus::bad_signature: return "bad-signature";
    case CredentialStatus::scope_mismatch: return "scope-mismatch";
    case CredentialStatus::expired: return "expired";
    case CredentialStatus::epoch_mismatch: return "epoch-mismatch";
    case CredentialStatus::measurement_mismatch: return "measurement-mismatch";
  }
  return "?";
}

class CredentialRefused : public std::runtime_error {
 public:
  enum class Reason { epoch_halted, unknown_subject };
  CredentialRefused(Reason r, const std::string& what) : std::runtime_error(what), reason_(r) {}
  Reason reason() const { return reason_; }

 private:
  Reason reason_;
};

/// Side-effect free; safe to call from anywhere.
inline CredentialStatus validate_credential(const ActionCredential& cred, const PublicKey& issuer,
                                            const std::string& action_class, const EpochState& epoch,
                                            std::int64_t now) {
  if (!verify_signature(issuer, cred.canonical(), cred.signature)) return CredentialStatus::bad_signature;
  if (cred.action_class != action_class) return CredentialStatus::scope_mismatch;
  if (now >= cred.expiry_ms) return CredentialStatus::expired;
  if (cred.epoch_number != epoch.epoch_number) return CredentialStatus::epoch_mismatch;
  if (cred.measurement != epoch.measurement) return CredentialStatus::measurement_mismatch;
  return CredentialStatus::valid;
}

/// Single deployment-level credential issuer.
class CredentialIssuer {
 public:
  explicit CredentialIssuer(std::string_view label = "ehv-credential-issuer") : key_(KeyPair::from_seed(label)) {}

  void register_workload(const WorkloadIdentity& id) {
    if (!workloads_.emplace(id.uri(), id).second)
      throw std::invalid_argument("workload " + id.uri() + " already registered");
  }

  bool knows(const std::string& uri) const { return workloads_.count(uri) != 0; }

  ActionCredential issue(const std::string& subject, const std::string& action_class, const EpochState& epoch,
                         std::int64_t now) const {
    if (!knows(subject))
      throw CredentialRefused(CredentialRefused::Reason::unknown_subject, "unknown workload " + subject);
    if (epoch.stale_at(now))
      throw CredentialRefused(CredentialRefused::Reason::epoch_halted, "epoch halted; no credentials issued");
    ActionCredential c{subject, action_class, epoch.epoch_number, epoch.epoch_end(), epoch.measurement, {}};
    c.signature = key_.sign(c.canonical());
    return c;
  }

  const PublicKey& public_key() const { return key_.public_key(); }

 private:
  KeyPair key_;
  std::map<std::string, WorkloadIdentity> workloads_;
};

}  // namespace ehv
