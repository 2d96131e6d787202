#pragma once

// Replicated policy state: a DAG of signed mutations stamped with vector
// clocks. Replicas that have ingested the same mutations derive the same
// effective order and Merkle root, whatever the delivery order was.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "ehv/compiled_policy.hpp"
#include "ehv/crypto.hpp"
#include "ehv/dfa.hpp"
#include "ehv/grammar.hpp"
#include "ehv/vector_clock.hpp"

namespace ehv {

struct PolicyMutation {
  Digest id;
  std::string issuer;
  VectorClock clock;
  std::vector<Digest> parents;  // sorted ascending
  std::string payload;          // grammar source
  Signature signature{};

  Bytes canonical() const {
    ByteWriter w;
    w.tag("EHVMUT1").str(issuer);
    clock.write(w);
    w.u32(static_cast<std::uint32_t>(parents.size()));
    for (const auto& p : parents) w.digest(p);
    w.str(payload);
    return std::move(w).take();
  }

  Digest content_id() const { return sha256(canonical()); }

  /// Canonical bytes followed by the 64-byte detached signature.
  Bytes wire() const {
    Bytes out = canonical();
    out.insert(out.end(), signature.begin(), signature.end());
    return out;
  }

  static PolicyMutation from_wire(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    PolicyMutation m;
    r.expect_tag("EHVMUT1");
    m.issuer = r.str();
    m.clock = VectorClock::read(r);
    std::uint32_t n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) m.parents.push_back(r.digest());
    m.payload = r.str();
    std::size_t body = r.position();
    if (bytes.size() - body != m.signature.size()) throw std::runtime_error("mutation: bad signature length");
    std::copy(bytes.begin() + static_cast<std::ptrdiff_t>(body), bytes.end(), m.signature.begin());
    m.id = m.content_id();
    return m;
  }
};

enum class IngestResult { added, buffered, duplicate, bad_signature, unknown_issuer, malformed };

inline const char* to_string(IngestResult r) {
  switch (r) {
    case IngestResult::added: return "added";
    case IngestResult::buffered: return "buffered";
    case IngestResult::duplicate: return "duplicate";
    case IngestResult::bad_signature: return "bad-signature";
    case IngestResult::unknown_issuer: return "unknown-issuer";
    case IngestResult::malformed: return "malformed";
  }
  return "?";
}

class IncompleteState : public std::runtime_error {
 public:
  explicit IncompleteState(std::size_t pending)
      : std::runtime_error(std::to_string(pending) + " mutation(s) wait for unresolved parents"), pending_(pending) {}
  std::size_t pending() const { return pending_; }

 private:
  std::size_t pending_;
};

class UnknownIssuer : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using IssuerAllowlist = std::map<std::string, PublicKey>;

/// Binary Merkle tree over `leaves`; odd layers repeat their last node.
inline Digest merkle_root_of(std::span<const Digest> leaves) {
  if (leaves.empty()) return sha256(std::string_view{});
  std::vector<Digest> layer(leaves.begin(), leaves.end());
  while (layer.size() > 1) {
    if (layer.size() % 2) layer.push_back(layer.back());
    std::vector<Digest> up;
    up.reserve(layer.size() / 2);
    for (std::size_t i = 0; i < layer.size(); i += 2) up.push_back(sha256_pair(layer[i], layer[i + 1]));
    layer = std::move(up);
  }
  return layer[0];
}

struct RejectedMutation {
  Digest id;
  std::string issuer;
  IngestResult reason;
};

class PolicyStore {
 public:
  PolicyStore(std::string replica_id, IssuerAllowlist allowlist)
      : replica_(std::move(replica_id)), allowlist_(std::move(allowlist)) {}

  /// Creates, signs and applies a mutation on top of the current heads.
  PolicyMutation author(std::string payload, const std::string& issuer, const KeyPair& key) {
    auto it = allowlist_.find(issuer);
    if (it == allowlist_.end()) throw UnknownIssuer("issuer '" + issuer + "' is not allowlisted");
    if (it->second != key.public_key()) throw UnknownIssuer("signing key does not belong to issuer '" + issuer + "'");
    parse_grammar(payload);  // payloads must be well-formed grammars

    PolicyMutation m;
    m.issuer = issuer;
    m.clock = clock_;
    m.clock.increment(issuer);
    m.parents.assign(heads_.begin(), heads_.end());
    m.payload = std::move(payload);
    m.id = m.content_id();
    m.signature = key.sign(m.canonical());
    if (ingest(m) != IngestResult::added) throw std::logic_error("authored mutation did not apply");
    return m;
  }

  IngestResult ingest(const PolicyMutation& m) {
    if (m.id != m.content_id()) return reject(m, IngestResult::malformed);
    if (dag_.count(m.id) || pending_.count(m.id)) return IngestResult::duplicate;
    auto key = allowlist_.find(m.issuer);
    if (key == allowlist_.end()) return reject(m, IngestResult::unknown_issuer);
    if (!verify_signature(key->second, m.canonical(), m.signature)) return reject(m, IngestResult::bad_signature);
    if (!std::is_sorted(m.parents.begin(), m.parents.end()) ||
        std::adjacent_find(m.parents.begin(), m.parents.end()) != m.parents.end())
      return reject(m, IngestResult::malformed);

    if (!resolved(m)) {
      pending_.emplace(m.id, m);
      return IngestResult::buffered;
    }
    if (!clock_consistent(m)) return reject(m, IngestResult::malformed);
    apply(m);
    release_pending();
    return IngestResult::added;
  }

  /// Mutations in deterministic causal order; ties broken by ascending id.
  std::vector<const PolicyMutation*> effective_policy() const {
    if (!pending_.empty()) throw IncompleteState(pending_.size());
    return resolved_order();
  }

  /// Same order restricted to mutations whose ancestry is complete; never throws.
  std::vector<const PolicyMutation*> resolved_policy() const { return resolved_order(); }

  /// Commitment over the resolved part of the DAG.
  Digest merkle_root() const {
    std::vector<Digest> leaves;
    for (const auto* m : resolved_order()) leaves.push_back(m->id);
    return merkle_root_of(leaves);
  }

  const std::set<Digest>& heads() const { return heads_; }
  const VectorClock& clock() const { return clock_; }
  const std::string& replica_id() const { return replica_; }
  std::size_t size() const { return dag_.size(); }
  std::size_t pending_count() const { return pending_.size(); }
  bool contains(const Digest& id) const { return dag_.count(id) != 0; }
  const std::map<Digest, PolicyMutation>& all() const { return dag_; }
  const std::vector<RejectedMutation>& rejections() const { return rejections_; }

 private:
  IngestResult reject(const PolicyMutation& m, IngestResult why) {
    rejections_.push_back({m.id, m.issuer, why});
    return why;
  }

  bool resolved(const PolicyMutation& m) const {
    return std::all_of(m.parents.begin(), m.parents.end(), [&](const Digest& p) { return dag_.count(p) != 0; });
  }

  bool clock_consistent(const PolicyMutation& m) const {
    VectorClock join;
    for (const auto& p : m.parents) join.merge(dag_.at(p).clock);
    auto order = vc_compare(m.clock, join);
    return order == ClockOrder::dominates && m.clock.get(m.issuer) > join.get(m.issuer);
  }

  void apply(const PolicyMutation& m) {
    dag_.emplace(m.id, m);
    for (const auto& p : m.parents) {
      heads_.erase(p);
      has_child_.insert(p);
    }
    if (!has_child_.count(m.id)) heads_.insert(m.id);
    clock_.merge(m.clock);
  }

  void release_pending() {
    bool progress = true;
    while (progress) {
      progress = false;
      for (auto it = pending_.begin(); it != pending_.end();) {
        if (resolved(it->second)) {
          PolicyMutation m = std::move(it->second);
          it = pending_.erase(it);
          if (clock_consistent(m))
            apply(m);
          else
            reject(m, IngestResult::malformed);
          progress = true;
        } else {
          ++it;
        }
      }
    }
  }

  std::vector<const PolicyMutation*> resolved_order() const {
    std::map<Digest, std::size_t> indegree;
    std::map<Digest, std::vector<Digest>> children;
    for (const auto& [id, m] : dag_) {
      indegree[id] += m.parents.size();
      for (const auto& p : m.parents) children[p].push_back(id);
    }
    std::priority_queue<Digest, std::vector<Digest>, std::greater<>> ready;
    for (const auto& [id, deg] : indegree)
      if (deg == 0) ready.push(id);
    std::vector<const PolicyMutation*> out;
    out.reserve(dag_.size());
    while (!ready.empty()) {
      Digest id = ready.top();
      ready.pop();
      out.push_back(&dag_.at(id));
      for (const auto& c : children[id])
        if (--indegree[c] == 0) ready.push(c);
    }
    return out;
  }

  std::string replica_;
  IssuerAllowlist allowlist_;
  std::map<Digest, PolicyMutation> dag_;
  std::map<Digest, PolicyMutation> pending_;
  std::set<Digest> heads_;
  std::set<Digest> has_child_;
  VectorClock clock_;
  std::vector<RejectedMutation> rejections_;
};

/// One grammar per name, the last occurrence in effective order winning.
inline std::vector<PolicyGrammar> effective_grammars(std::span<const PolicyMutation* const> order) {
  std::vector<PolicyGrammar> out;
  std::map<std::string, std::size_t> slot;
  for (const auto* m : order) {
    PolicyGrammar g = parse_grammar(m->payload);
    auto it = slot.find(g.name);
    if (it == slot.end()) {
      slot.emplace(g.name, out.size());
      out.push_back(std::move(g));
    } else {
      out[it->second] = std::move(g);
    }
  }
  return out;
}

/// Compiles the resolved effective policy into a single automaton tagged with the store's root.
/// Throws BudgetExceeded when the grammars' product does not fit, since a PEP runs one DFA.
inline CompiledPolicy compile_effective(const PolicyStore& store, const Vocabulary& vocab,
                                        std::size_t budget = kDefaultStateBudget) {
  Digest root = store.merkle_root();
  std::vector<const PolicyMutation*> order = store.resolved_policy();

  std::vector<Dfa> parts;
  CompileOptions opts{budget, root};
  for (const auto& g : effective_grammars(order)) parts.push_back(compile(g, vocab, opts));

  std::shared_ptr<const Dfa> dfa;
  if (parts.empty()) {
    DfaGraph empty;
    empty.vocab_size = vocab.size;
    empty.rows.resize(1);
    empty.accepting = {false};
    empty.escalating = {false};
    dfa = std::make_shared<const Dfa>(Dfa::from_graph(empty, root, "empty", 0));
  } else {
    auto product = intersect(parts, budget);
    if (auto* d = std::get_if<Dfa>(&product))
      dfa = std::make_shared<const Dfa>(std::move(*d));
    else
      throw BudgetExceeded(budget, budget + 1);
  }
  return CompiledPolicy{dfa, store.clock()};
}

}  // namespace ehv
