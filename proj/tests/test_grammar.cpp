#include <gtest/gtest.h>

#include <random>

#include "ehv/dfa.hpp"
#include "ehv/grammar.hpp"
#include "oracles.hpp"

using namespace ehv;

namespace {

const char* kSmall = R"(grammar tiny 1
token "a" = 0
token "b" = 1
rule S -> "a" T
rule T -> "b"
rule T -> "a" T
)";

Vocabulary fixture_vocab() { return parse_vocabulary(oracle::fixture("vincristine.vocab")); }
PolicyGrammar fixture_grammar(int version) {
  return parse_grammar(oracle::fixture("vincristine_v" + std::to_string(version) + ".grammar"));
}

/// Complete automaton counting token `counted` modulo `mod`; accepting at zero.
Dfa counter(std::size_t vocab, TokenId counted, StateId mod) {
  DfaGraph g;
  g.vocab_size = vocab;
  g.rows.resize(mod);
  g.accepting.assign(mod, false);
  g.escalating.assign(mod, false);
  g.accepting[0] = true;
  for (StateId q = 0; q < mod; ++q)
    for (TokenId t = 0; t < vocab; ++t) g.rows[q].push_back({t, t == counted ? (q + 1) % mod : q});
  return Dfa::from_graph(g);
}

}  // namespace

TEST(ParseGrammar, VincristineFixture) {
  auto g = fixture_grammar(2);
  EXPECT_EQ(g.name, "vincristine");
  EXPECT_EQ(g.version, 2u);
  EXPECT_EQ(g.start, "ACTION");
  EXPECT_EQ(g.productions_of("DOSE").size(), 4u);
  EXPECT_EQ(g.terminal_map.at("0.75"), 5u);
  EXPECT_TRUE(g.escalates("REVIEW"));
  EXPECT_FALSE(g.escalates("DOSE"));
}

TEST(ParseGrammar, EmptyProductionAcceptsOnlyEmptyAction) {
  auto g = parse_grammar("grammar eps 1\nrule S ->\n");
  Dfa d = compile(g, Vocabulary{4, {}});
  EXPECT_EQ(d.state_count(), 1u);
  EXPECT_TRUE(d.is_accepting(d.start()));
  EXPECT_TRUE(d.allowed(d.start()).empty());
}

TEST(ParseGrammar, NoRulesIsEmptyLanguage) {
  auto g = parse_grammar("grammar none 1\nstart S\n");
  Dfa d = compile(g, Vocabulary{4, {}});
  EXPECT_EQ(d.state_count(), 1u);
  EXPECT_FALSE(d.is_accepting(d.start()));
  EXPECT_TRUE(d.allowed(d.start()).empty());
}

TEST(ParseGrammar, SelfEmbeddingRejected) {
  try {
    parse_grammar("grammar bad 1\ntoken \"a\" = 0\nrule A -> A A\nrule A -> \"a\"\n");
    FAIL() << "expected rejection";
  } catch (const GrammarError& e) {
    EXPECT_EQ(e.kind(), GrammarError::Kind::non_regular);
    EXPECT_NE(std::string(e.what()).find("A -> A A"), std::string::npos);
    EXPECT_EQ(e.line(), 3);
  }
}

TEST(ParseGrammar, LeftRecursionRejected) {
  try {
    parse_grammar("grammar bad 1\ntoken \"a\" = 0\nrule A -> A \"a\"\n");
    FAIL();
  } catch (const GrammarError& e) {
    EXPECT_EQ(e.kind(), GrammarError::Kind::non_regular);
    EXPECT_NE(std::string(e.what()).find("left recursion"), std::string::npos);
  }
}

TEST(ParseGrammar, UnresolvedTerminal) {
  try {
    parse_grammar("grammar bad 1\ntoken \"a\" = 0\nrule A -> \"a\" \"zz\"\n");
    FAIL();
  } catch (const GrammarError& e) {
    EXPECT_EQ(e.kind(), GrammarError::Kind::unresolved_terminal);
    EXPECT_EQ(e.line(), 3);
    EXPECT_EQ(e.column(), 15);
  }
}

TEST(ParseGrammar, SyntaxErrorsCarryPosition) {
  try {
    parse_grammar("grammar g 1\nrule A => \"a\"\n");
    FAIL();
  } catch (const GrammarError& e) {
    EXPECT_EQ(e.kind(), GrammarError::Kind::syntax);
    EXPECT_EQ(e.line(), 2);
    EXPECT_GT(e.column(), 1);
  }
  EXPECT_THROW(parse_grammar("rule A -> \"a\"\n"), GrammarError);
  EXPECT_THROW(parse_grammar("grammar g 1\nfrobnicate\n"), GrammarError);
  EXPECT_THROW(parse_grammar("grammar g 1\ntoken \"a\" = 0\ntoken \"b\" = 0\n"), GrammarError);
}

TEST(ParseGrammar, UndefinedNonterminal) {
  try {
    parse_grammar("grammar g 1\ntoken \"a\" = 0\nrule A -> \"a\" B\n");
    FAIL();
  } catch (const GrammarError& e) {
    EXPECT_EQ(e.kind(), GrammarError::Kind::undefined_nonterminal);
  }
}

TEST(ParseVocabulary, SizeAndLexemes) {
  auto v = fixture_vocab();
  EXPECT_EQ(v.size, 16u);
  EXPECT_EQ(v.find("1.5"), std::optional<TokenId>(8));
  EXPECT_EQ(v.lexeme(12), "<eoa>");
  EXPECT_THROW(parse_vocabulary("size 2\ntoken \"x\" = 5\n"), GrammarError);
}

TEST(Compile, CeilingTokenAbsentFromEveryAllowedSet) {
  auto vocab = fixture_vocab();
  Dfa v2 = compile(fixture_grammar(2), vocab);
  for (StateId q = 0; q < v2.state_count(); ++q)
    for (TokenId t : v2.allowed(q)) EXPECT_NE(t, 8u) << "state " << q;

  Dfa v1 = compile(fixture_grammar(1), vocab);
  bool present = false;
  for (StateId q = 0; q < v1.state_count(); ++q)
    for (TokenId t : v1.allowed(q)) present = present || t == 8;
  EXPECT_TRUE(present);
}

TEST(Compile, StartStateAllowsActionVerbs) {
  Dfa d = compile(fixture_grammar(2), fixture_vocab());
  auto allowed = d.allowed(d.start());
  EXPECT_EQ(std::vector<TokenId>(allowed.begin(), allowed.end()), (std::vector<TokenId>{0, 10}));
}

TEST(Compile, TerminalAcceptingStateHasNoEdges) {
  Dfa d = compile(fixture_grammar(2), fixture_vocab());
  std::vector<TokenId> action{0, 1, 4, 9, 12};
  auto end = d.walk(action);
  ASSERT_TRUE(end);
  EXPECT_TRUE(d.is_accepting(*end));
  EXPECT_TRUE(d.allowed(*end).empty());
}

TEST(Compile, MatchesBruteForceDerivation) {
  std::mt19937_64 rng(20240917);
  const auto words = oracle::all_words(3, 6);
  for (int trial = 0; trial < 150; ++trial) {
    std::string src = oracle::random_grammar(rng);
    auto g = parse_grammar(src);
    Dfa d = compile(g, Vocabulary{3, {}});
    for (const auto& w : words) {
      auto expect = oracle::derive(g, w);
      auto q = d.walk(w);
      bool accepted = q && d.is_accepting(*q);
      ASSERT_EQ(accepted, expect.derivable) << src;
      if (accepted) {
        ASSERT_EQ(d.is_escalating(*q), expect.escalating) << src;
      }
    }
  }
}

TEST(Compile, FixturesMatchBruteForce) {
  auto vocab = fixture_vocab();
  for (int version : {1, 2}) {
    auto g = fixture_grammar(version);
    Dfa d = compile(g, vocab);
    // Words over the 13 grammar tokens are too many at length 6; check all
    // length-5 dosage shapes plus every word up to length 3.
    for (const auto& w : oracle::all_words(13, 3)) ASSERT_EQ(d.accepts(w), oracle::derive(g, w).derivable);
    for (TokenId dose = 0; dose < 16; ++dose) {
      std::vector<TokenId> w{0, 1, dose, 9, 12};
      ASSERT_EQ(d.accepts(w), oracle::derive(g, w).derivable) << dose;
    }
  }
}

TEST(Compile, Deterministic) {
  auto g = fixture_grammar(1);
  auto vocab = fixture_vocab();
  EXPECT_EQ(compile(g, vocab), compile(g, vocab));
  std::mt19937_64 rng(7);
  for (int i = 0; i < 20; ++i) {
    auto rg = parse_grammar(oracle::random_grammar(rng));
    EXPECT_EQ(compile(rg, Vocabulary{3, {}}), compile(rg, Vocabulary{3, {}}));
  }
}

TEST(Compile, AllowedSetEqualsTransitionProbe) {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    Dfa d = compile(parse_grammar(oracle::random_grammar(rng, 4, 4)), Vocabulary{70, {}});
    for (StateId q = 0; q < d.state_count(); ++q) {
      std::vector<TokenId> probed;
      for (TokenId k = 0; k < d.vocab_size(); ++k) {
        ASSERT_EQ(d.transition(q, k).has_value(), d.allows(q, k));
        if (d.transition(q, k)) probed.push_back(k);
      }
      auto allowed = d.allowed(q);
      ASSERT_EQ(std::vector<TokenId>(allowed.begin(), allowed.end()), probed);
      ASSERT_EQ(d.successors(q).size(), probed.size());
    }
  }
}

TEST(Compile, EveryStateReachableAndLive) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    Dfa d = compile(parse_grammar(oracle::random_grammar(rng)), Vocabulary{3, {}});
    std::vector<bool> seen(d.state_count(), false);
    std::vector<StateId> stack{d.start()};
    seen[d.start()] = true;
    while (!stack.empty()) {
      StateId q = stack.back();
      stack.pop_back();
      for (StateId s : d.successors(q)) {
        if (seen[s]) continue;
        seen[s] = true;
        stack.push_back(s);
      }
    }
    for (bool s : seen) EXPECT_TRUE(s);
    // Live: every non-start state reaches acceptance.
    for (StateId q = 1; q < d.state_count(); ++q) {
      std::vector<bool> vis(d.state_count(), false);
      std::vector<StateId> st{q};
      bool found = false;
      while (!st.empty() && !found) {
        StateId p = st.back();
        st.pop_back();
        if (vis[p]) continue;
        vis[p] = true;
        found = d.is_accepting(p);
        for (StateId s : d.successors(p)) st.push_back(s);
      }
      EXPECT_TRUE(found);
    }
  }
}

TEST(Compile, UnknownStateThrows) {
  Dfa d = compile(parse_grammar(kSmall), Vocabulary{2, {}});
  EXPECT_THROW(d.allowed(static_cast<StateId>(d.state_count())), std::out_of_range);
}

TEST(Compile, BudgetExceededAdvisesDecomposition) {
  std::string src = "grammar long 1\ntoken \"a\" = 0\nrule S ->";
  for (int i = 0; i < 40; ++i) src += " \"a\"";
  src += "\n";
  try {
    compile(parse_grammar(src), Vocabulary{1, {}}, CompileOptions{10, {}});
    FAIL();
  } catch (const BudgetExceeded& e) {
    EXPECT_EQ(e.budget(), 10u);
    EXPECT_NE(std::string(e.what()).find("hierarchical decomposition"), std::string::npos);
  }
}

TEST(Compile, VocabularyMismatch) {
  EXPECT_THROW(compile(parse_grammar(kSmall), Vocabulary{1, {}}), VocabularyMismatch);
  EXPECT_THROW(compile(parse_grammar(kSmall), Vocabulary{2, {{0, "b"}}}), VocabularyMismatch);
}

TEST(Intersect, ProductOfFourAndFiveStates) {
  Dfa a = counter(3, 0, 4);
  Dfa b = counter(3, 1, 5);
  ASSERT_EQ(a.state_count(), 4u);
  ASSERT_EQ(b.state_count(), 5u);
  std::vector<Dfa> in{a, b};
  auto out = intersect(in, 100);
  ASSERT_TRUE(std::holds_alternative<Dfa>(out));
  const Dfa& p = std::get<Dfa>(out);
  EXPECT_LE(p.state_count(), 20u);
  for (const auto& w : oracle::all_words(3, 6)) ASSERT_EQ(p.accepts(w), a.accepts(w) && b.accepts(w));
}

TEST(Intersect, SingleInputUnchanged) {
  Dfa d = compile(fixture_grammar(2), fixture_vocab());
  std::vector<Dfa> in{d};
  auto out = intersect(in, 5);
  ASSERT_TRUE(std::holds_alternative<Dfa>(out));
  EXPECT_EQ(std::get<Dfa>(out), d);
}

TEST(Intersect, RandomGrammarsMatchIntersectionLanguage) {
  std::mt19937_64 rng(31337);
  const auto words = oracle::all_words(3, 6);
  for (int trial = 0; trial < 60; ++trial) {
    auto g1 = parse_grammar(oracle::random_grammar(rng));
    auto g2 = parse_grammar(oracle::random_grammar(rng));
    std::vector<Dfa> in{compile(g1, Vocabulary{3, {}}), compile(g2, Vocabulary{3, {}})};
    auto out = intersect(in, kDefaultStateBudget);
    ASSERT_TRUE(std::holds_alternative<Dfa>(out));
    const Dfa& p = std::get<Dfa>(out);
    for (const auto& w : words)
      ASSERT_EQ(p.accepts(w), oracle::derive(g1, w).derivable && oracle::derive(g2, w).derivable);
  }
}

TEST(Intersect, OverBudgetYieldsPlanWithSameLanguage) {
  Dfa a = counter(3, 0, 4);
  Dfa b = counter(3, 1, 5);
  std::vector<Dfa> in{a, b};
  auto out = intersect(in, 6);
  ASSERT_TRUE(std::holds_alternative<DecompositionPlan>(out));
  const auto& plan = std::get<DecompositionPlan>(out);
  ASSERT_EQ(plan.stages.size(), 2u);
  for (const auto& w : oracle::all_words(3, 5)) {
    PlanCursor c(plan);
    for (TokenId t : w) {
      auto allowed = c.allowed();
      bool listed = std::find(allowed.begin(), allowed.end(), t) != allowed.end();
      ASSERT_EQ(listed, a.allows(c.states()[0], t) && b.allows(c.states()[1], t));
      c.advance(t);
    }
    ASSERT_EQ(c.accepting(), a.accepts(w) && b.accepts(w));
  }
}

TEST(Intersect, VocabularyMismatch) {
  std::vector<Dfa> in{counter(3, 0, 2), counter(4, 0, 2)};
  EXPECT_THROW(intersect(in, 100), VocabularyMismatch);
}
