#pragma once

// Governance bill of materials: an append-only, hash-chained audit log with an
// OSCAL 1.1.2 assessment-results export and an independent chain verifier.
//
// Each record is hashed over its canonical encoding, which includes the hash
// of the previous record (SHA-256 of the empty string for the first one).
// The record UUID is derived from the record hash. On disk the log is one
// canonical JSON object per line.

#include <nlohmann/json.hpp>

#include <cstdint>
#include <cstdio>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ehv/crypto.hpp"

namespace ehv {

enum class Verdict { permit, deny, escalate };

inline const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::permit: return "PERMIT";
    case Verdict::deny: return "DENY";
    case Verdict::escalate: return "ESCALATE";
  }
  return "?";
}

inline Verdict parse_verdict(std::string_view s) {
  if (s == "PERMIT") return Verdict::permit;
  if (s == "DENY") return Verdict::deny;
  if (s == "ESCALATE") return Verdict::escalate;
  throw std::invalid_argument("unknown verdict '" + std::string(s) + "'");
}

enum class RecordKind { decision, token, override_approval, security };

inline const char* to_string(RecordKind k) {
  switch (k) {
    case RecordKind::decision: return "decision";
    case RecordKind::token: return "token";
    case RecordKind::override_approval: return "override";
    case RecordKind::security: return "security";
  }
  return "?";
}

inline RecordKind parse_record_kind(std::string_view s) {
  if (s == "decision") return RecordKind::decision;
  if (s == "token") return RecordKind::token;
  if (s == "override") return RecordKind::override_approval;
  if (s == "security") return RecordKind::security;
  throw std::invalid_argument("unknown record kind '" + std::string(s) + "'");
}

inline std::string epoch_label(std::uint64_t epoch_number) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "E-%03llu", static_cast<unsigned long long>(epoch_number));
  return buf;
}

inline std::string state_label(std::optional<std::uint32_t> q) {
  return q ? "q" + std::to_string(*q) : std::string("dead");
}

/// Fields supplied by the appender; chaining fields are filled in by the log.
struct RecordFields {
  std::int64_t timestamp_ms = 0;
  RecordKind kind = RecordKind::decision;
  Digest policy_merkle_root;
  Digest tee_measurement;
  std::string epoch_id;
  std::string dfa_state;
  Verdict enforcement = Verdict::deny;
  std::string identity;
  std::string description;
  std::string reference;
};

struct GbomRecord {
  std::uint64_t index = 0;
  std::string record_uuid;
  std::int64_t timestamp_ms = 0;
  RecordKind kind = RecordKind::decision;
  Digest policy_merkle_root;
  Digest tee_measurement;
  std::string epoch_id;
  std::string dfa_state;
  Verdict enforcement = Verdict::deny;
  std::string identity;
  std::string finding_status;
  std::string description;
  std::string reference;
  Digest prev_hash;
  Digest record_hash;
  std::string signature;  // hex Ed25519 over record_hash, empty when unsigned

  Bytes canonical() const {
    ByteWriter w;
    w.tag("EHVGBOM1")
        .u64(index)
        .i64(timestamp_ms)
        .str(to_string(kind))
        .digest(policy_merkle_root)
        .digest(tee_measurement)
        .str(epoch_id)
        .str(dfa_state)
        .str(to_string(enforcement))
        .str(identity)
        .str(finding_status)
        .str(description)
        .str(reference)
        .digest(prev_hash);
    return std::move(w).take();
  }

  bool operator==(const GbomRecord&) const = default;
};

inline const Digest& genesis_hash() {
  static const Digest g = sha256(std::string_view{});
  return g;
}

inline std::string uuid_from(const Digest& d) {
  auto b = d.bytes;
  b[6] = static_cast<std::uint8_t>((b[6] & 0x0f) | 0x50);
  b[8] = static_cast<std::uint8_t>((b[8] & 0x3f) | 0x80);
  std::string hex = to_hex(std::span(b).first(16));
  return hex.substr(0, 8) + "-" + hex.substr(8, 4) + "-" + hex.substr(12, 4) + "-" + hex.substr(16, 4) + "-" +
         hex.substr(20, 12);
}

inline const char* finding_for(Verdict v) { return v == Verdict::permit ? "satisfied" : "not-satisfied"; }

// ---------------------------------------------------------------------------
// Line serialisation

inline nlohmann::ordered_json to_json(const GbomRecord& r) {
  nlohmann::ordered_json j;
  j["index"] = r.index;
  j["record_uuid"] = r.record_uuid;
  j["timestamp_ms"] = r.timestamp_ms;
  j["kind"] = to_string(r.kind);
  j["policy_merkle_root"] = r.policy_merkle_root.hex();
  j["tee_measurement"] = r.tee_measurement.hex();
  j["epoch_id"] = r.epoch_id;
  j["dfa_state"] = r.dfa_state;
  j["enforcement"] = to_string(r.enforcement);
  j["identity"] = r.identity;
  j["finding_status"] = r.finding_status;
  j["description"] = r.description;
  j["reference"] = r.reference;
  j["prev_hash"] = r.prev_hash.hex();
  j["record_hash"] = r.record_hash.hex();
  j["signature"] = r.signature;
  return j;
}

inline std::string to_line(const GbomRecord& r) { return to_json(r).dump(); }

inline GbomRecord record_from_json(const nlohmann::json& j) {
  GbomRecord r;
  r.index = j.at("index").get<std::uint64_t>();
  r.record_uuid = j.at("record_uuid").get<std::string>();
  r.timestamp_ms = j.at("timestamp_ms").get<std::int64_t>();
  r.kind = parse_record_kind(j.at("kind").get<std::string>());
  r.policy_merkle_root = Digest::from_hex(j.at("policy_merkle_root").get<std::string>());
  r.tee_measurement = Digest::from_hex(j.at("tee_measurement").get<std::string>());
  r.epoch_id = j.at("epoch_id").get<std::string>();
  r.dfa_state = j.at("dfa_state").get<std::string>();
  r.enforcement = parse_verdict(j.at("enforcement").get<std::string>());
  r.identity = j.at("identity").get<std::string>();
  r.finding_status = j.at("finding_status").get<std::string>();
  r.description = j.at("description").get<std::string>();
  r.reference = j.at("reference").get<std::string>();
  r.prev_hash = Digest::from_hex(j.at("prev_hash").get<std::string>());
  r.record_hash = Digest::from_hex(j.at("record_hash").get<std::string>());
  r.signature = j.at("signature").get<std::string>();
  return r;
}

// ---------------------------------------------------------------------------
// Overrides

struct OverrideEnvelope {
  Digest target_record_hash;
  std::string approver;
  bool approve = false;
  std::int64_t issued_at_ms = 0;
  Signature signature{};

  Bytes canonical() const {
    ByteWriter w;
    w.tag("EHVOVR1").digest(target_record_hash).str(approver).u32(approve ? 1 : 0).i64(issued_at_ms);
    return std::move(w).take();
  }

  static OverrideEnvelope sign(const Digest& target, std::string approver, bool approve, std::int64_t at,
                               const KeyPair& key) {
    OverrideEnvelope e{target, std::move(approver), approve, at, {}};
    e.signature = key.sign(e.canonical());
    return e;
  }
};

class OverrideRejected : public std::runtime_error {
 public:
  enum class Reason { unknown_target, not_escalated, approver_not_allowlisted, bad_signature, already_used };
  OverrideRejected(Reason r, const std::string& what) : std::runtime_error(what), reason_(r) {}
  Reason reason() const { return reason_; }

 private:
  Reason reason_;
};

// ---------------------------------------------------------------------------
// Log

struct ChainReport {
  bool valid = true;
  std::optional<std::size_t> first_broken;
  std::string reason;
  std::size_t records = 0;
};

class GbomLog {
 public:
  GbomLog() = default;
  explicit GbomLog(const KeyPair& signer) : signer_(signer) {}

  const GbomRecord& append(const RecordFields& f) {
    GbomRecord r;
    r.index = records_.size();
    r.timestamp_ms = f.timestamp_ms;
    r.kind = f.kind;
    r.policy_merkle_root = f.policy_merkle_root;
    r.tee_measurement = f.tee_measurement;
    r.epoch_id = f.epoch_id;
    r.dfa_state = f.dfa_state;
    r.enforcement = f.enforcement;
    r.identity = f.identity;
    r.finding_status = finding_for(f.enforcement);
    r.description = f.description;
    r.reference = f.reference;
    r.prev_hash = records_.empty() ? genesis_hash() : records_.back().record_hash;
    r.record_hash = sha256(r.canonical());
    r.record_uuid = uuid_from(r.record_hash);
    if (signer_) r.signature = to_hex(signer_->sign(r.record_hash.bytes));
    if (r.kind == RecordKind::decision) ++decisions_;
    records_.push_back(std::move(r));
    return records_.back();
  }

  /// Chains a signed human decision on an ESCALATE record. Throws OverrideRejected.
  const GbomRecord& record_override(const OverrideEnvelope& env, const std::map<std::string, PublicKey>& approvers,
                                    std::int64_t now_ms) {
    const GbomRecord* target = nullptr;
    for (const auto& r : records_)
      if (r.record_hash == env.target_record_hash) target = &r;
    if (!target) throw OverrideRejected(OverrideRejected::Reason::unknown_target, "override target not in log");
    if (target->kind != RecordKind::decision || target->enforcement != Verdict::escalate)
      throw OverrideRejected(OverrideRejected::Reason::not_escalated, "override target is not an ESCALATE decision");
    auto it = approvers.find(env.approver);
    if (it == approvers.end())
      throw OverrideRejected(OverrideRejected::Reason::approver_not_allowlisted,
                             "'" + env.approver + "' is not an allowlisted approver");
    if (!verify_signature(it->second, env.canonical(), env.signature))
      throw OverrideRejected(OverrideRejected::Reason::bad_signature, "override envelope signature invalid");
    if (used_overrides_.count(env.target_record_hash))
      throw OverrideRejected(OverrideRejected::Reason::already_used, "escalation already resolved");
    used_overrides_.insert(env.target_record_hash);

    RecordFields f;
    f.timestamp_ms = now_ms;
    f.kind = RecordKind::override_approval;
    f.policy_merkle_root = target->policy_merkle_root;
    f.tee_measurement = target->tee_measurement;
    f.epoch_id = target->epoch_id;
    f.dfa_state = target->dfa_state;
    f.enforcement = env.approve ? Verdict::permit : Verdict::deny;
    f.identity = target->identity;
    f.description = std::string(env.approve ? "override approved by " : "override rejected by ") + env.approver;
    f.reference = env.target_record_hash.hex();
    return append(f);
  }

  std::span<const GbomRecord> records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  std::size_t decision_count() const { return decisions_; }
  std::optional<PublicKey> signer_key() const {
    return signer_ ? std::optional(signer_->public_key()) : std::nullopt;
  }

  void write(std::ostream& out) const {
    for (const auto& r : records_) out << to_line(r) << '\n';
  }

 private:
  std::optional<KeyPair> signer_;
  std::vector<GbomRecord> records_;
  std::set<Digest> used_overrides_;
  std::size_t decisions_ = 0;
};

/// Recomputes every hash and link; reports the first record that does not check out.
inline ChainReport verify_chain(std::span<const GbomRecord> records, const std::optional<PublicKey>& signer = {}) {
  ChainReport rep;
  rep.records = records.size();
  Digest prev = genesis_hash();
  for (std::size_t i = 0; i < records.size(); ++i) {
    const GbomRecord& r = records[i];
    auto broken = [&](std::string why) {
      rep.valid = false;
      rep.first_broken = i;
      rep.reason = std::move(why);
      return rep;
    };
    if (r.index != i) return broken("index out of sequence");
    if (r.prev_hash != prev) return broken("prev_hash does not link to the previous record");
    if (sha256(r.canonical()) != r.record_hash) return broken("record_hash does not match record contents");
    if (r.record_uuid != uuid_from(r.record_hash)) return broken("record_uuid not derived from record_hash");
    if (r.finding_status != finding_for(r.enforcement)) return broken("finding status inconsistent with enforcement");
    if (signer) {
      try {
        if (!verify_signature(*signer, r.record_hash.bytes, signature_from_hex(r.signature)))
          return broken("record signature invalid");
      } catch (const std::exception&) {
        return broken("record signature missing or malformed");
      }
    }
    prev = r.record_hash;
  }
  return rep;
}

/// Verifies an on-disk log byte-for-byte: every line must parse and be in canonical form.
inline ChainReport verify_chain_lines(std::istream& in, const std::optional<PublicKey>& signer = {}) {
  std::vector<GbomRecord> records;
  std::string line;
  std::size_t i = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      GbomRecord r = record_from_json(nlohmann::json::parse(line));
      if (to_line(r) != line) throw std::runtime_error("non-canonical line");
      records.push_back(std::move(r));
    } catch (const std::exception& e) {
      ChainReport rep = verify_chain(records, signer);
      if (!rep.valid) return rep;
      rep.valid = false;
      rep.first_broken = i;
      rep.reason = std::string("unreadable record: ") + e.what();
      rep.records = i + 1;
      return rep;
    }
    ++i;
  }
  return verify_chain(records, signer);
}

inline std::vector<GbomRecord> read_log(std::istream& in) {
  std::vector<GbomRecord> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(record_from_json(nlohmann::json::parse(line)));
  return out;
}

// ---------------------------------------------------------------------------
// OSCAL export

inline constexpr const char* kOscalSchema =
    "https://pages.nist.gov/OSCAL/schemas/json/1.1.2/oscal_assessment-results_schema.json";
inline constexpr std::int64_t kDefaultOriginUnixMs = 1779840000000;  // 2026-05-27T00:00:00Z

/// ISO-8601 UTC rendering of origin + offset, with milliseconds only when non-zero.
inline std::string iso8601(std::int64_t unix_ms) {
  std::int64_t secs = unix_ms >= 0 ? unix_ms / 1000 : (unix_ms - 999) / 1000;
  int millis = static_cast<int>(unix_ms - secs * 1000);
  std::int64_t days = secs >= 0 ? secs / 86400 : (secs - 86399) / 86400;
  std::int64_t rem = secs - days * 86400;
  // civil_from_days (proleptic Gregorian)
  std::int64_t z = days + 719468;
  std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  std::int64_t doe = z - era * 146097;
  std::int64_t yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  std::int64_t y = yoe + era * 400;
  std::int64_t doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  std::int64_t mp = (5 * doy + 2) / 153;
  std::int64_t d = doy - (153 * mp + 2) / 5 + 1;
  std::int64_t m = mp < 10 ? mp + 3 : mp - 9;
  if (m <= 2) ++y;
  char buf[96];
  if (millis == 0)
    std::snprintf(buf, sizeof buf, "%04lld-%02lld-%02lldT%02lld:%02lld:%02lldZ", static_cast<long long>(y),
                  static_cast<long long>(m), static_cast<long long>(d), static_cast<long long>(rem / 3600),
                  static_cast<long long>(rem / 60 % 60), static_cast<long long>(rem % 60));
  else
    std::snprintf(buf, sizeof buf, "%04lld-%02lld-%02lldT%02lld:%02lld:%02lld.%03dZ", static_cast<long long>(y),
                  static_cast<long long>(m), static_cast<long long>(d), static_cast<long long>(rem / 3600),
                  static_cast<long long>(rem / 60 % 60), static_cast<long long>(rem % 60), millis);
  return buf;
}

struct OscalOptions {
  std::int64_t origin_unix_ms = kDefaultOriginUnixMs;
  std::string title = "EHV Runtime Governance Bill of Materials";
  std::string action_title = "Dosage Recommendation Action";
};

inline const char* finding_title(const GbomRecord& r) {
  switch (r.enforcement) {
    case Verdict::permit: return "Action compliant with epoch policy";
    case Verdict::deny: return "Action denied by epoch policy";
    case Verdict::escalate: return "Action escalated for human review";
  }
  return "";
}

inline nlohmann::ordered_json export_oscal(std::span<const GbomRecord> records, const OscalOptions& opt = {}) {
  using oj = nlohmann::ordered_json;
  Digest doc_id = records.empty() ? genesis_hash() : sha256_pair(genesis_hash(), records.back().record_hash);
  std::int64_t last = records.empty() ? 0 : records.back().timestamp_ms;

  oj results = oj::array();
  for (const auto& r : records) {
    std::string title;
    switch (r.kind) {
      case RecordKind::decision: title = opt.action_title; break;
      case RecordKind::token: title = "Token Step"; break;
      case RecordKind::override_approval: title = "Human Override"; break;
      case RecordKind::security: title = "Security Event"; break;
    }
    title += " - Epoch " + r.epoch_id;

    oj props = oj::array();
    props.push_back({{"name", "policy_merkle_root"}, {"value", "sha256:" + r.policy_merkle_root.hex()}});
    props.push_back({{"name", "tee_measurement"}, {"value", "sevsnp:mrenclave:" + r.tee_measurement.hex()}});
    props.push_back({{"name", "epoch_id"}, {"value", r.epoch_id}});
    props.push_back({{"name", "dfa_state"}, {"value", r.dfa_state}});
    props.push_back({{"name", "enforcement"}, {"value", to_string(r.enforcement)}});
    props.push_back({{"name", "spiffe_svid"}, {"value", r.identity}});

    oj chain = oj::array();
    chain.push_back({{"name", "record_index"}, {"value", std::to_string(r.index)}});
    chain.push_back({{"name", "record_kind"}, {"value", to_string(r.kind)}});
    chain.push_back({{"name", "timestamp_ms"}, {"value", std::to_string(r.timestamp_ms)}});
    chain.push_back({{"name", "prev_hash"}, {"value", r.prev_hash.hex()}});
    chain.push_back({{"name", "record_hash"}, {"value", r.record_hash.hex()}});
    chain.push_back({{"name", "reference"}, {"value", r.reference}});
    chain.push_back({{"name", "record_signature"}, {"value", r.signature}});

    oj result;
    result["uuid"] = r.record_uuid;
    result["title"] = title;
    result["description"] = r.description;
    result["start"] = iso8601(opt.origin_unix_ms + r.timestamp_ms);
    result["end"] = iso8601(opt.origin_unix_ms + r.timestamp_ms + 1);
    result["props"] = chain;
    result["reviewed-controls"] = {
        {"control-selections", oj::array({{{"include-controls", oj::array({{{"control-id", "si-17"}}})}}})}};
    result["observations"] = oj::array({{{"uuid", uuid_from(sha256_pair(r.record_hash, sha256("observation")))},
                                         {"description", "GCD enforcement outcome"},
                                         {"props", props}}});
    oj finding;
    finding["uuid"] = uuid_from(sha256_pair(r.record_hash, sha256("finding")));
    finding["title"] = finding_title(r);
    finding["description"] = r.description;
    finding["target"] = {{"type", "objective-id"}, {"target-id", "ehv-si-17"}, {"status", {{"state", r.finding_status}}}};
    result["findings"] = oj::array({finding});
    results.push_back(std::move(result));
  }

  oj doc;
  doc["$schema"] = kOscalSchema;
  doc["assessment-results"] = {
      {"uuid", uuid_from(doc_id)},
      {"metadata",
       {{"title", opt.title}, {"last-modified", iso8601(opt.origin_unix_ms + last)}, {"version", "2.0.0"}, {"oscal-version", "1.1.2"}}},
      {"results", results}};
  return doc;
}

/// Reads records back out of an exported document.
inline std::vector<GbomRecord> parse_oscal(const nlohmann::json& doc) {
  auto prop = [](const nlohmann::json& props, const std::string& name) -> std::string {
    for (const auto& p : props)
      if (p.at("name") == name) return p.at("value").get<std::string>();
    throw std::runtime_error("missing prop '" + name + "'");
  };
  auto strip = [](const std::string& v, const std::string& prefix) {
    if (v.rfind(prefix, 0) != 0) throw std::runtime_error("value '" + v + "' lacks prefix " + prefix);
    return v.substr(prefix.size());
  };
  std::vector<GbomRecord> out;
  for (const auto& res : doc.at("assessment-results").at("results")) {
    const auto& chain = res.at("props");
    const auto& obs = res.at("observations").at(0).at("props");
    GbomRecord r;
    r.index = std::stoull(prop(chain, "record_index"));
    r.record_uuid = res.at("uuid").get<std::string>();
    r.timestamp_ms = std::stoll(prop(chain, "timestamp_ms"));
    r.kind = parse_record_kind(prop(chain, "record_kind"));
    r.policy_merkle_root = Digest::from_hex(strip(prop(obs, "policy_merkle_root"), "sha256:"));
    r.tee_measurement = Digest::from_hex(strip(prop(obs, "tee_measurement"), "sevsnp:mrenclave:"));
    r.epoch_id = prop(obs, "epoch_id");
    r.dfa_state = prop(obs, "dfa_state");
    r.enforcement = parse_verdict(prop(obs, "enforcement"));
    r.identity = prop(obs, "spiffe_svid");
    r.finding_status = res.at("findings").at(0).at("target").at("status").at("state").get<std::string>();
    r.description = res.at("description").get<std::string>();
    r.reference = prop(chain, "reference");
    r.prev_hash = Digest::from_hex(prop(chain, "prev_hash"));
    r.record_hash = Digest::from_hex(prop(chain, "record_hash"));
    r.signature = prop(chain, "record_signature");
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace ehv
