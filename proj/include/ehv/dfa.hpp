#pragma once

// Right-linear grammar -> DFA compilation (subset construction), product
// intersection under a state budget, and the compressed-sparse-row automaton
// the enforcement point walks.
//
// State numbering is canonical: breadth-first from the start state, edges
// visited in ascending token order. States that cannot reach acceptance are
// pruned (the start state is always kept), so a missing transition is the
// only representation of the dead state.

#include <algorithm>
#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "ehv/crypto.hpp"
#include "ehv/grammar.hpp"

namespace ehv {

using StateId = std::uint32_t;

inline constexpr std::size_t kDefaultStateBudget = 10'000;

class BudgetExceeded : public std::runtime_error {
 public:
  BudgetExceeded(std::size_t budget, std::size_t reached)
      : std::runtime_error("DFA state budget of " + std::to_string(budget) + " exceeded (" +
                           std::to_string(reached) +
                           " states); split the policy into independent grammars and apply them "
                           "as a hierarchical decomposition"),
        budget_(budget) {}
  std::size_t budget() const { return budget_; }

 private:
  std::size_t budget_;
};

class VocabularyMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct DfaEdge {
  TokenId token;
  StateId target;
};

/// Uncanonicalised automaton used while building.
struct DfaGraph {
  std::size_t vocab_size = 0;
  StateId start = 0;
  std::vector<std::vector<DfaEdge>> rows;  // each row sorted by token
  std::vector<bool> accepting;
  std::vector<bool> escalating;
};

class Dfa {
 public:
  /// Trims, renumbers canonically and packs `graph`.
  static Dfa from_graph(const DfaGraph& graph, Digest source_root = {}, std::string name = {},
                        std::uint64_t version = 0);

  std::size_t state_count() const { return accepting_.size(); }
  std::size_t vocab_size() const { return vocab_size_; }
  StateId start() const { return 0; }
  std::size_t transition_count() const { return cols_.size(); }

  bool is_accepting(StateId q) const { return accepting_[check(q)] != 0; }
  bool is_escalating(StateId q) const { return escalating_[check(q)] != 0; }

  std::optional<StateId> transition(StateId q, TokenId token) const {
    check(q);
    auto begin = cols_.begin() + row_ptr_[q];
    auto end = cols_.begin() + row_ptr_[q + 1];
    auto it = std::lower_bound(begin, end, token);
    if (it == end || *it != token) return std::nullopt;
    return targets_[static_cast<std::size_t>(it - cols_.begin())];
  }

  /// Sorted token ids with a defined transition from q.
  std::span<const TokenId> allowed(StateId q) const {
    check(q);
    return std::span(cols_).subspan(row_ptr_[q], row_ptr_[q + 1] - row_ptr_[q]);
  }

  /// Bitmask over the vocabulary, bit k set iff k is allowed from q.
  std::span<const std::uint64_t> allowed_mask(StateId q) const {
    check(q);
    return std::span(masks_).subspan(static_cast<std::size_t>(q) * words_, words_);
  }

  bool allows(StateId q, TokenId token) const {
    if (token >= vocab_size_) return false;
    return (allowed_mask(q)[token / 64] >> (token % 64)) & 1u;
  }

  /// Successor states of q, one per allowed token, in token order.
  std::span<const StateId> successors(StateId q) const {
    check(q);
    return std::span(targets_).subspan(row_ptr_[q], row_ptr_[q + 1] - row_ptr_[q]);
  }

  std::optional<StateId> walk(std::span<const TokenId> tokens, StateId from = 0) const {
    StateId q = from;
    for (TokenId t : tokens) {
      auto next = transition(q, t);
      if (!next) return std::nullopt;
      q = *next;
    }
    return q;
  }

  bool accepts(std::span<const TokenId> tokens) const {
    auto q = walk(tokens);
    return q && is_accepting(*q);
  }

  const Digest& source_root() const { return source_root_; }
  const std::string& name() const { return name_; }
  std::uint64_t version() const { return version_; }

  Dfa with_source_root(const Digest& root) const {
    Dfa copy = *this;
    copy.source_root_ = root;
    return copy;
  }

  bool operator==(const Dfa&) const = default;

 private:
  StateId check(StateId q) const {
    if (q >= accepting_.size()) throw std::out_of_range("unknown DFA state q" + std::to_string(q));
    return q;
  }

  std::size_t vocab_size_ = 0;
  std::size_t words_ = 0;
  std::vector<std::uint32_t> row_ptr_;
  std::vector<TokenId> cols_;
  std::vector<StateId> targets_;
  std::vector<std::uint8_t> accepting_;
  std::vector<std::uint8_t> escalating_;
  std::vector<std::uint64_t> masks_;
  Digest source_root_;
  std::string name_;
  std::uint64_t version_ = 0;
};

inline Dfa Dfa::from_graph(const DfaGraph& graph, Digest source_root, std::string name,
                           std::uint64_t version) {
  const std::size_t n = graph.rows.size();
  if (graph.start >= n) throw std::invalid_argument("start state out of range");

  // Co-reachability: which states can still reach an accepting state.
  std::vector<std::vector<StateId>> reverse(n);
  for (StateId q = 0; q < n; ++q)
    for (const auto& e : graph.rows[q]) reverse[e.target].push_back(q);
  std::vector<bool> live(n, false);
  std::deque<StateId> work;
  for (StateId q = 0; q < n; ++q)
    if (graph.accepting[q]) {
      live[q] = true;
      work.push_back(q);
    }
  while (!work.empty()) {
    StateId q = work.front();
    work.pop_front();
    for (StateId p : reverse[q])
      if (!live[p]) {
        live[p] = true;
        work.push_back(p);
      }
  }

  // Canonical breadth-first numbering over live states.
  constexpr StateId kUnset = static_cast<StateId>(-1);
  std::vector<StateId> renumber(n, kUnset);
  std::vector<StateId> order;
  renumber[graph.start] = 0;
  order.push_back(graph.start);
  for (std::size_t i = 0; i < order.size(); ++i) {
    for (const auto& e : graph.rows[order[i]]) {
      if (!live[e.target] || renumber[e.target] != kUnset) continue;
      renumber[e.target] = static_cast<StateId>(order.size());
      order.push_back(e.target);
    }
  }

  Dfa dfa;
  dfa.vocab_size_ = graph.vocab_size;
  dfa.words_ = (graph.vocab_size + 63) / 64;
  dfa.source_root_ = source_root;
  dfa.name_ = std::move(name);
  dfa.version_ = version;
  dfa.row_ptr_.reserve(order.size() + 1);
  dfa.row_ptr_.push_back(0);
  dfa.masks_.assign(order.size() * dfa.words_, 0);
  for (std::size_t i = 0; i < order.size(); ++i) {
    StateId old = order[i];
    for (const auto& e : graph.rows[old]) {
      if (!live[e.target]) continue;
      if (e.token >= graph.vocab_size) throw std::invalid_argument("edge token outside vocabulary");
      dfa.cols_.push_back(e.token);
      dfa.targets_.push_back(renumber[e.target]);
      dfa.masks_[i * dfa.words_ + e.token / 64] |= std::uint64_t{1} << (e.token % 64);
    }
    dfa.row_ptr_.push_back(static_cast<std::uint32_t>(dfa.cols_.size()));
    dfa.accepting_.push_back(graph.accepting[old] ? 1 : 0);
    dfa.escalating_.push_back(graph.escalating[old] ? 1 : 0);
  }
  return dfa;
}

struct CompileOptions {
  std::size_t state_budget = kDefaultStateBudget;
  Digest source_root{};
};

namespace detail {

struct Nfa {
  struct Node {
    std::vector<int> eps;
    std::vector<std::pair<TokenId, int>> edges;
    int accept = -1;  // -1 none, 0 plain accept, 1 escalating accept
  };
  std::vector<Node> nodes;

  int add() {
    nodes.emplace_back();
    return static_cast<int>(nodes.size()) - 1;
  }

  std::vector<int> closure(std::vector<int> seed) const {
    std::vector<bool> seen(nodes.size(), false);
    std::vector<int> stack = seed;
    std::vector<int> out;
    for (int s : seed) seen[s] = true;
    while (!stack.empty()) {
      int v = stack.back();
      stack.pop_back();
      out.push_back(v);
      for (int w : nodes[v].eps)
        if (!seen[w]) {
          seen[w] = true;
          stack.push_back(w);
        }
    }
    std::sort(out.begin(), out.end());
    return out;
  }
};

// Nonterminals are expanded per escalation flag, so a derivation that passed
// through an escalate-marked nonterminal ends in the escalating accept node.
inline Nfa build_nfa(const PolicyGrammar& g, int& start) {
  Nfa nfa;
  const int accept_plain = nfa.add();
  const int accept_escalate = nfa.add();
  nfa.nodes[accept_plain].accept = 0;
  nfa.nodes[accept_escalate].accept = 1;

  std::map<std::pair<std::string, bool>, int> memo;
  std::deque<std::pair<std::string, bool>> pending;
  auto nt_node = [&](const std::string& nt, bool flag) {
    auto key = std::make_pair(nt, flag);
    auto it = memo.find(key);
    if (it != memo.end()) return it->second;
    int id = nfa.add();
    memo.emplace(key, id);
    pending.push_back(key);
    return id;
  };

  start = nt_node(g.start, false);
  while (!pending.empty()) {
    auto [nt, flag] = pending.front();
    pending.pop_front();
    const int head = memo.at({nt, flag});
    const bool inner = flag || g.escalates(nt);
    for (const Production* p : g.productions_of(nt)) {
      int cur = nfa.add();
      nfa.nodes[head].eps.push_back(cur);
      for (TokenId t : p->terminals()) {
        int next = nfa.add();
        nfa.nodes[cur].edges.emplace_back(t, next);
        cur = next;
      }
      int target = p->tail() ? nt_node(*p->tail(), inner) : (inner ? accept_escalate : accept_plain);
      nfa.nodes[cur].eps.push_back(target);
    }
  }
  return nfa;
}

}  // namespace detail

/// Compiles a validated grammar. Throws BudgetExceeded or VocabularyMismatch.
inline Dfa compile(const PolicyGrammar& grammar, const Vocabulary& vocab, const CompileOptions& opts = {}) {
  for (const auto& [lexeme, id] : grammar.terminal_map) {
    if (id >= vocab.size)
      throw VocabularyMismatch("token \"" + lexeme + "\" = " + std::to_string(id) +
                               " is outside the vocabulary of size " + std::to_string(vocab.size));
    auto it = vocab.lexemes.find(id);
    if (it != vocab.lexemes.end() && it->second != lexeme)
      throw VocabularyMismatch("token id " + std::to_string(id) + " is \"" + it->second +
                               "\" in the vocabulary but \"" + lexeme + "\" in the grammar");
  }

  int nfa_start = 0;
  detail::Nfa nfa = detail::build_nfa(grammar, nfa_start);

  DfaGraph graph;
  graph.vocab_size = vocab.size;
  std::map<std::vector<int>, StateId> index;
  std::vector<std::vector<int>> subsets;
  auto intern = [&](std::vector<int> subset) {
    auto it = index.find(subset);
    if (it != index.end()) return it->second;
    if (subsets.size() >= opts.state_budget) throw BudgetExceeded(opts.state_budget, subsets.size() + 1);
    StateId id = static_cast<StateId>(subsets.size());
    index.emplace(subset, id);
    bool acc = false, esc = false;
    for (int v : subset) {
      acc = acc || nfa.nodes[v].accept >= 0;
      esc = esc || nfa.nodes[v].accept == 1;
    }
    graph.accepting.push_back(acc);
    graph.escalating.push_back(esc);
    graph.rows.emplace_back();
    subsets.push_back(std::move(subset));
    return id;
  };

  graph.start = intern(nfa.closure({nfa_start}));
  for (std::size_t i = 0; i < subsets.size(); ++i) {
    std::map<TokenId, std::vector<int>> moves;
    for (int v : subsets[i])
      for (const auto& [tok, w] : nfa.nodes[v].edges) moves[tok].push_back(w);
    std::vector<DfaEdge> row;
    for (auto& [tok, targets] : moves) row.push_back({tok, intern(nfa.closure(std::move(targets)))});
    graph.rows[i] = std::move(row);
  }
  return Dfa::from_graph(graph, opts.source_root, grammar.name, grammar.version);
}

/// Ordered DFAs applied as per-step mask intersections when the product is too large.
struct DecompositionPlan {
  std::vector<Dfa> stages;
};

/// Walks every stage of a plan in lockstep.
class PlanCursor {
 public:
  explicit PlanCursor(const DecompositionPlan& plan) : plan_(&plan), states_(plan.stages.size(), 0) {}

  std::vector<TokenId> allowed() const {
    if (dead_ || plan_->stages.empty()) return {};
    auto first = plan_->stages[0].allowed(states_[0]);
    std::vector<TokenId> out;
    for (TokenId t : first) {
      bool ok = true;
      for (std::size_t i = 1; i < states_.size() && ok; ++i) ok = plan_->stages[i].allows(states_[i], t);
      if (ok) out.push_back(t);
    }
    return out;
  }

  bool advance(TokenId token) {
    if (dead_) return false;
    for (std::size_t i = 0; i < states_.size(); ++i) {
      auto next = plan_->stages[i].transition(states_[i], token);
      if (!next) {
        dead_ = true;
        return false;
      }
      states_[i] = *next;
    }
    return true;
  }

  bool dead() const { return dead_; }
  bool accepting() const {
    if (dead_) return false;
    for (std::size_t i = 0; i < states_.size(); ++i)
      if (!plan_->stages[i].is_accepting(states_[i])) return false;
    return true;
  }
  const std::vector<StateId>& states() const { return states_; }

 private:
  const DecompositionPlan* plan_;
  std::vector<StateId> states_;
  bool dead_ = false;
};

/// Product of `dfas` if its reachable state count fits `budget`, else a plan.
inline std::variant<Dfa, DecompositionPlan> intersect(std::span<const Dfa> dfas,
                                                      std::size_t budget = kDefaultStateBudget) {
  if (dfas.empty()) throw std::invalid_argument("intersect needs at least one DFA");
  for (const auto& d : dfas)
    if (d.vocab_size() != dfas[0].vocab_size())
      throw VocabularyMismatch("cannot intersect DFAs over vocabularies of size " +
                               std::to_string(dfas[0].vocab_size()) + " and " + std::to_string(d.vocab_size()));
  if (dfas.size() == 1) return dfas[0];

  DfaGraph graph;
  graph.vocab_size = dfas[0].vocab_size();
  std::map<std::vector<StateId>, StateId> index;
  std::vector<std::vector<StateId>> tuples;
  bool over_budget = false;
  auto intern = [&](std::vector<StateId> tuple) -> StateId {
    auto it = index.find(tuple);
    if (it != index.end()) return it->second;
    if (tuples.size() >= budget) {
      over_budget = true;
      return 0;
    }
    StateId id = static_cast<StateId>(tuples.size());
    bool acc = true, esc = false;
    for (std::size_t i = 0; i < tuple.size(); ++i) {
      acc = acc && dfas[i].is_accepting(tuple[i]);
      esc = esc || dfas[i].is_escalating(tuple[i]);
    }
    graph.accepting.push_back(acc);
    graph.escalating.push_back(acc && esc);
    graph.rows.emplace_back();
    index.emplace(tuple, id);
    tuples.push_back(std::move(tuple));
    return id;
  };

  graph.start = intern(std::vector<StateId>(dfas.size(), 0));
  for (std::size_t i = 0; i < tuples.size() && !over_budget; ++i) {
    std::vector<DfaEdge> row;
    for (TokenId t : dfas[0].allowed(tuples[i][0])) {
      std::vector<StateId> next(dfas.size());
      bool ok = true;
      for (std::size_t k = 0; k < dfas.size() && ok; ++k) {
        auto q = dfas[k].transition(tuples[i][k], t);
        ok = q.has_value();
        if (ok) next[k] = *q;
      }
      if (!ok) continue;
      StateId target = intern(std::move(next));
      if (over_budget) break;
      row.push_back({t, target});
    }
    graph.rows[i] = std::move(row);
  }
  if (over_budget) return DecompositionPlan{std::vector<Dfa>(dfas.begin(), dfas.end())};

  Digest root = dfas[0].source_root();
  std::string name = dfas[0].name();
  bool same_root = true;
  for (std::size_t i = 1; i < dfas.size(); ++i) {
    same_root = same_root && dfas[i].source_root() == root;
    name += "&" + dfas[i].name();
  }
  if (!same_root) {
    ByteWriter w;
    w.tag("EHVPROD1");
    for (const auto& d : dfas) w.digest(d.source_root());
    root = sha256(w.data());
  }
  return Dfa::from_graph(graph, root, name, 0);
}

}  // namespace ehv
