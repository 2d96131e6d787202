#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "ehv/pep.hpp"
#include "ehv/policy_store.hpp"
#include "support.hpp"

using namespace ehv;

namespace {

const KeyPair& key_a() {
  static const KeyPair k = KeyPair::from_seed("pap-a");
  return k;
}
const KeyPair& key_b() {
  static const KeyPair k = KeyPair::from_seed("pap-b");
  return k;
}

IssuerAllowlist allowlist() { return {{"pap-a", key_a().public_key()}, {"pap-b", key_b().public_key()}}; }

std::string grammar_named(const std::string& name, int version) {
  return "grammar " + name + " " + std::to_string(version) + "\ntoken \"x\" = 0\nrule S -> \"x\"\n";
}

VectorClock random_clock(std::mt19937_64& rng) {
  VectorClock c;
  for (const char* node : {"n1", "n2", "n3", "n4"}) c.set(node, rng() % 4);
  return c;
}

oracle::Hash raw(const Digest& d) { return d.bytes; }

}  // namespace

TEST(VectorClock, MergeOfFigureClocks) {
  VectorClock v1{{"n1", 1}, {"n2", 1}, {"n3", 0}};
  VectorClock v2{{"n1", 1}, {"n2", 0}, {"n3", 1}};
  EXPECT_EQ(vc_merge(v1, v2), (VectorClock{{"n1", 1}, {"n2", 1}, {"n3", 1}}));
  EXPECT_EQ(vc_compare(v1, v2), ClockOrder::concurrent);
}

TEST(VectorClock, MergeIdempotent) {
  VectorClock a{{"x", 3}, {"y", 1}};
  EXPECT_EQ(vc_merge(a, a), a);
}

TEST(VectorClock, MergeCommutativeAssociative) {
  std::mt19937_64 rng(1000);
  for (int i = 0; i < 1000; ++i) {
    auto a = random_clock(rng), b = random_clock(rng), c = random_clock(rng);
    ASSERT_EQ(vc_merge(a, b), vc_merge(b, a));
    ASSERT_EQ(vc_merge(vc_merge(a, b), c), vc_merge(a, vc_merge(b, c)));
  }
}

TEST(VectorClock, Compare) {
  EXPECT_EQ(vc_compare(VectorClock{{"a", 2}, {"b", 1}}, VectorClock{{"a", 1}, {"b", 1}}), ClockOrder::dominates);
  EXPECT_EQ(vc_compare(VectorClock{{"a", 1}}, VectorClock{{"b", 1}}), ClockOrder::concurrent);
  EXPECT_EQ(vc_compare(VectorClock{{"a", 1}}, VectorClock{{"a", 2}}), ClockOrder::dominated);
  EXPECT_EQ(vc_compare(VectorClock{{"a", 0}}, VectorClock{}), ClockOrder::equal);
}

TEST(VectorClock, DominanceAgreesWithMerge) {
  std::mt19937_64 rng(77);
  int dominated_pairs = 0;
  for (int i = 0; i < 2000; ++i) {
    auto a = random_clock(rng), b = random_clock(rng);
    // Componentwise definition, computed independently.
    bool ge = true, gt = false;
    for (const char* n : {"n1", "n2", "n3", "n4"}) {
      ge = ge && a.get(n) >= b.get(n);
      gt = gt || a.get(n) > b.get(n);
    }
    ASSERT_EQ(vc_compare(a, b) == ClockOrder::dominates, ge && gt);
    if (vc_compare(a, b) == ClockOrder::dominates) {
      ++dominated_pairs;
      ASSERT_EQ(vc_merge(a, b), a);
    }
  }
  EXPECT_GT(dominated_pairs, 0);
}

TEST(Author, FirstMutation) {
  PolicyStore s("A", allowlist());
  auto m = s.author(grammar_named("g", 1), "pap-a", key_a());
  EXPECT_EQ(m.clock, (VectorClock{{"pap-a", 1}}));
  EXPECT_TRUE(m.parents.empty());
  EXPECT_EQ(s.heads(), std::set<Digest>{m.id});
}

TEST(Author, AfterRemoteUpdateJoinsClocks) {
  PolicyStore a("A", allowlist()), b("B", allowlist());
  auto m1 = a.author(grammar_named("g", 1), "pap-a", key_a());
  auto m2 = b.author(grammar_named("h", 1), "pap-b", key_b());
  ASSERT_EQ(a.ingest(m2), IngestResult::added);
  auto m3 = a.author(grammar_named("g", 2), "pap-a", key_a());

  VectorClock expected = vc_merge(m1.clock, m2.clock);
  expected.set("pap-a", expected.get("pap-a") + 1);
  EXPECT_EQ(m3.clock, expected);
  std::vector<Digest> parents{m1.id, m2.id};
  std::sort(parents.begin(), parents.end());
  EXPECT_EQ(m3.parents, parents);
}

TEST(Author, UnregisteredIssuer) {
  PolicyStore s("A", allowlist());
  EXPECT_THROW(s.author(grammar_named("g", 1), "mallory", KeyPair::from_seed("mallory")), UnknownIssuer);
  EXPECT_THROW(s.author(grammar_named("g", 1), "pap-a", key_b()), UnknownIssuer);
  EXPECT_EQ(s.size(), 0u);
}

TEST(Author, CeilingReductionBecomesNewHead) {
  PolicyStore s("A", allowlist());
  s.author(support::grammar_text(1), "pap-a", key_a());
  auto m2 = s.author(support::grammar_text(2), "pap-a", key_a());
  EXPECT_EQ(s.heads(), std::set<Digest>{m2.id});
  auto order = s.effective_policy();
  auto grammars = effective_grammars(order);
  ASSERT_EQ(grammars.size(), 1u);
  EXPECT_EQ(grammars[0].version, 2u);

  auto policy = compile_effective(s, support::vocab());
  EXPECT_EQ(policy.root(), s.merkle_root());
  EXPECT_FALSE(policy.dfa->accepts(support::kUnsafeDosage));
  EXPECT_TRUE(policy.dfa->accepts(support::kSafeDosage));
}

TEST(Ingest, DuplicateIsIdempotent) {
  PolicyStore a("A", allowlist()), b("B", allowlist());
  auto m = a.author(grammar_named("g", 1), "pap-a", key_a());
  EXPECT_EQ(b.ingest(m), IngestResult::added);
  Digest root = b.merkle_root();
  EXPECT_EQ(b.ingest(m), IngestResult::duplicate);
  EXPECT_EQ(b.merkle_root(), root);
  EXPECT_EQ(b.size(), 1u);
  EXPECT_EQ(b.clock(), a.clock());
}

TEST(Ingest, AllDeliveryOrdersConverge) {
  // Four mutations: a chain with a concurrent sibling and a merge.
  PolicyStore a("A", allowlist()), b("B", allowlist());
  auto p1 = a.author(grammar_named("g", 1), "pap-a", key_a());
  b.ingest(p1);
  auto p2a = a.author(grammar_named("g", 2), "pap-a", key_a());
  auto p2b = b.author(grammar_named("h", 1), "pap-b", key_b());
  a.ingest(p2b);
  auto p3 = a.author(grammar_named("g", 3), "pap-a", key_a());
  std::vector<PolicyMutation> muts{p1, p2a, p2b, p3};

  std::vector<int> perm{0, 1, 2, 3};
  std::optional<Digest> root;
  std::optional<std::set<Digest>> heads;
  int orders = 0;
  do {
    PolicyStore r("R", allowlist());
    for (int i : perm) r.ingest(muts[i]);
    ASSERT_EQ(r.pending_count(), 0u);
    ASSERT_EQ(r.size(), 4u);
    if (!root) {
      root = r.merkle_root();
      heads = r.heads();
    }
    ASSERT_EQ(r.merkle_root(), *root);
    ASSERT_EQ(r.heads(), *heads);
    ++orders;
  } while (std::next_permutation(perm.begin(), perm.end()));
  EXPECT_EQ(orders, 24);
  EXPECT_EQ(*root, a.merkle_root());
  EXPECT_EQ(*heads, std::set<Digest>{p3.id});
}

TEST(Ingest, RandomSetsFormSemilattice) {
  std::mt19937_64 rng(2718);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<PolicyStore> authors;
    authors.emplace_back("A", allowlist());
    authors.emplace_back("B", allowlist());
    std::vector<PolicyMutation> all;
    for (int i = 0; i < 6; ++i) {
      std::size_t who = rng() % 2;
      if (!all.empty() && rng() % 2)
        for (const auto& m : all) authors[who].ingest(m);
      all.push_back(authors[who].author(grammar_named("g" + std::to_string(rng() % 3), i + 1),
                                        who ? "pap-b" : "pap-a", who ? key_b() : key_a()));
    }
    std::optional<Digest> root;
    for (int shuffle = 0; shuffle < 10; ++shuffle) {
      auto order = all;
      std::shuffle(order.begin(), order.end(), rng);
      PolicyStore r("R", allowlist());
      for (const auto& m : order) r.ingest(m);
      for (const auto& m : order) r.ingest(m);  // redelivery
      ASSERT_EQ(r.pending_count(), 0u);
      if (!root) root = r.merkle_root();
      ASSERT_EQ(r.merkle_root(), *root);
    }
  }
}

TEST(Ingest, ForgedSignatureRejected) {
  PolicyStore a("A", allowlist()), b("B", allowlist());
  auto m = a.author(grammar_named("g", 1), "pap-a", key_a());
  auto forged = m;
  forged.signature = KeyPair::from_seed("mallory").sign(forged.canonical());
  EXPECT_EQ(b.ingest(forged), IngestResult::bad_signature);
  EXPECT_EQ(b.size(), 0u);
  EXPECT_EQ(b.merkle_root(), sha256(std::string_view{}));

  auto tampered = m;
  tampered.payload = grammar_named("g", 9);
  EXPECT_EQ(b.ingest(tampered), IngestResult::malformed);
  tampered.id = tampered.content_id();
  EXPECT_EQ(b.ingest(tampered), IngestResult::bad_signature);
  EXPECT_EQ(b.size(), 0u);
  EXPECT_EQ(b.rejections().size(), 3u);
}

TEST(Ingest, UnknownIssuerRejected) {
  IssuerAllowlist wide = allowlist();
  wide["mallory"] = KeyPair::from_seed("mallory").public_key();
  PolicyStore m("M", wide), b("B", allowlist());
  auto evil = m.author(grammar_named("g", 1), "mallory", KeyPair::from_seed("mallory"));
  EXPECT_EQ(b.ingest(evil), IngestResult::unknown_issuer);
  EXPECT_EQ(b.size(), 0u);
}

TEST(Ingest, OrphansBufferedUntilParentsArrive) {
  PolicyStore a("A", allowlist()), b("B", allowlist());
  auto p1 = a.author(grammar_named("g", 1), "pap-a", key_a());
  auto p2 = a.author(grammar_named("g", 2), "pap-a", key_a());
  EXPECT_EQ(b.ingest(p2), IngestResult::buffered);
  EXPECT_EQ(b.pending_count(), 1u);
  EXPECT_THROW(b.effective_policy(), IncompleteState);
  EXPECT_EQ(b.merkle_root(), sha256(std::string_view{}));
  EXPECT_EQ(b.ingest(p2), IngestResult::duplicate);
  EXPECT_EQ(b.ingest(p1), IngestResult::added);
  EXPECT_EQ(b.pending_count(), 0u);
  EXPECT_EQ(b.merkle_root(), a.merkle_root());
}

TEST(Ingest, ClockMustAdvanceIssuerComponent) {
  PolicyStore a("A", allowlist()), b("B", allowlist());
  auto p1 = a.author(grammar_named("g", 1), "pap-a", key_a());
  b.ingest(p1);
  PolicyMutation bad;
  bad.issuer = "pap-a";
  bad.clock = p1.clock;  // no advance
  bad.parents = {p1.id};
  bad.payload = grammar_named("g", 2);
  bad.id = bad.content_id();
  bad.signature = key_a().sign(bad.canonical());
  EXPECT_EQ(b.ingest(bad), IngestResult::malformed);
  EXPECT_EQ(b.size(), 1u);
}

TEST(Ingest, MonotoneGrowth) {
  PolicyStore a("A", allowlist()), b("B", allowlist());
  std::size_t last = 0;
  for (int i = 1; i <= 8; ++i) {
    b.ingest(a.author(grammar_named("g", i), "pap-a", key_a()));
    auto n = b.effective_policy().size();
    EXPECT_GE(n, last);
    last = n;
  }
  EXPECT_EQ(last, 8u);
}

TEST(Wire, RoundTrip) {
  PolicyStore a("A", allowlist());
  a.author(grammar_named("g", 1), "pap-a", key_a());
  auto m = a.author(grammar_named("g", 2), "pap-a", key_a());
  auto back = PolicyMutation::from_wire(m.wire());
  EXPECT_EQ(back.id, m.id);
  EXPECT_EQ(back.clock, m.clock);
  EXPECT_EQ(back.parents, m.parents);
  EXPECT_EQ(back.payload, m.payload);
  EXPECT_EQ(back.signature, m.signature);
  auto truncated = m.wire();
  truncated.pop_back();
  EXPECT_THROW(PolicyMutation::from_wire(truncated), std::runtime_error);
}

TEST(EffectivePolicy, LinearChain) {
  PolicyStore s("A", allowlist());
  auto p1 = s.author(grammar_named("g", 1), "pap-a", key_a());
  auto p2 = s.author(grammar_named("g", 2), "pap-a", key_a());
  auto order = s.effective_policy();
  ASSERT_EQ(order.size(), 2u);
  EXPECT_EQ(order[0]->id, p1.id);
  EXPECT_EQ(order[1]->id, p2.id);
}

TEST(EffectivePolicy, ConcurrentSiblingsOrderedByHash) {
  PolicyStore a("A", allowlist()), b("B", allowlist());
  auto p1 = a.author(grammar_named("g", 1), "pap-a", key_a());
  b.ingest(p1);
  auto p2a = a.author(grammar_named("g", 2), "pap-a", key_a());
  auto p2b = b.author(grammar_named("g", 3), "pap-b", key_b());
  ASSERT_EQ(vc_compare(p2a.clock, p2b.clock), ClockOrder::concurrent);

  std::vector<std::vector<PolicyMutation>> deliveries{{p1, p2a, p2b}, {p1, p2b, p2a}, {p2b, p2a, p1}, {p2a, p1, p2b}};
  std::vector<Digest> expected{p1.id, std::min(p2a.id, p2b.id), std::max(p2a.id, p2b.id)};
  for (const auto& d : deliveries) {
    PolicyStore r("R", allowlist());
    for (const auto& m : d) r.ingest(m);
    std::vector<Digest> got;
    for (const auto* m : r.effective_policy()) got.push_back(m->id);
    EXPECT_EQ(got, expected);
  }
}

TEST(EffectivePolicy, DominantMutationOverrides) {
  PolicyStore a("A", allowlist()), b("B", allowlist());
  auto old = a.author(grammar_named("g", 1), "pap-a", key_a());
  b.ingest(old);
  auto newer = b.author(grammar_named("g", 2), "pap-b", key_b());
  ASSERT_EQ(vc_compare(newer.clock, old.clock), ClockOrder::dominates);
  a.ingest(newer);
  auto order = a.effective_policy();
  auto pos = [&](const Digest& id) {
    return std::find_if(order.begin(), order.end(), [&](auto* m) { return m->id == id; }) - order.begin();
  };
  EXPECT_LT(pos(old.id), pos(newer.id));
  auto g = effective_grammars(order);
  ASSERT_EQ(g.size(), 1u);
  EXPECT_EQ(g[0].version, 2u);
}

TEST(MerkleRoot, EmptyAndSingle) {
  PolicyStore s("A", allowlist());
  EXPECT_EQ(s.merkle_root(), sha256(std::string_view{}));
  auto m = s.author(grammar_named("g", 1), "pap-a", key_a());
  EXPECT_EQ(s.merkle_root(), m.id);
}

TEST(MerkleRoot, MatchesHandBuiltTree) {
  for (std::size_t n = 0; n <= 5; ++n) {
    std::vector<Digest> leaves;
    std::vector<oracle::Hash> raw_leaves;
    for (std::size_t i = 0; i < n; ++i) {
      leaves.push_back(sha256("leaf" + std::to_string(i)));
      raw_leaves.push_back(raw(leaves.back()));
    }
    EXPECT_EQ(merkle_root_of(leaves).bytes, oracle::merkle(raw_leaves)) << n;
  }
  // Three leaves by hand: H(H(a|b) | H(c|c)).
  Digest a = sha256("a"), b = sha256("b"), c = sha256("c");
  std::vector<Digest> three{a, b, c};
  EXPECT_EQ(merkle_root_of(three), sha256_pair(sha256_pair(a, b), sha256_pair(c, c)));
}

TEST(MerkleRoot, StoreMatchesOracleOverEffectiveOrder) {
  PolicyStore s("A", allowlist());
  for (int i = 1; i <= 5; ++i) {
    s.author(grammar_named("g", i), "pap-a", key_a());
    std::vector<oracle::Hash> leaves;
    for (const auto* m : s.effective_policy()) leaves.push_back(raw(m->id));
    EXPECT_EQ(s.merkle_root().bytes, oracle::merkle(leaves));
  }
}

TEST(MerkleRoot, AnyByteDivergenceChangesRoot) {
  PolicyStore a("A", allowlist()), b("B", allowlist());
  a.author(grammar_named("g", 1), "pap-a", key_a());
  b.author(grammar_named("g", 1) + " ", "pap-a", key_a());
  EXPECT_NE(a.merkle_root(), b.merkle_root());
}

TEST(CompileEffective, EmptyStoreDeniesEverything) {
  PolicyStore s("A", allowlist());
  auto p = compile_effective(s, support::vocab());
  EXPECT_EQ(p.dfa->state_count(), 1u);
  EXPECT_FALSE(p.dfa->is_accepting(0));
  EXPECT_TRUE(p.dfa->allowed(0).empty());
}

TEST(CompileEffective, IndependentGrammarsIntersect) {
  PolicyStore s("A", allowlist());
  s.author(support::grammar_text(1), "pap-a", key_a());
  // A second named grammar that forbids the escalation path.
  s.author(R"(grammar no_review 1
token "administer" = 0
token "vincristine" = 1
token "0.0" = 2
token "0.25" = 3
token "0.5" = 4
token "0.75" = 5
token "1.0" = 6
token "1.25" = 7
token "1.5" = 8
token "mg/m2" = 9
token "<eoa>" = 12
rule S -> "administer" "vincristine" D
rule D -> "0.0" U
rule D -> "0.25" U
rule D -> "0.5" U
rule D -> "0.75" U
rule D -> "1.0" U
rule D -> "1.25" U
rule D -> "1.5" U
rule U -> "mg/m2" "<eoa>"
)",
           "pap-a", key_a());
  auto p = compile_effective(s, support::vocab());
  EXPECT_TRUE(p.dfa->accepts(support::kUnsafeDosage));
  EXPECT_FALSE(p.dfa->accepts(support::kEscalateCase));
  EXPECT_EQ(p.root(), s.merkle_root());
  EXPECT_THROW(compile_effective(s, support::vocab(), 3), BudgetExceeded);
}
