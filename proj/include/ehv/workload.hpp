#pragma once

// The three agent actions used by the simulator and the model explorer, and a
// family of Vincristine dosing policies whose dose ceiling drops per version.

#include <array>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ehv/grammar.hpp"

namespace ehv {

enum class ActionKind { safe_dosage, unsafe_dosage, escalate_case };

inline constexpr std::array<ActionKind, 3> kAllActions{ActionKind::safe_dosage, ActionKind::unsafe_dosage,
                                                       ActionKind::escalate_case};

inline const char* to_string(ActionKind a) {
  switch (a) {
    case ActionKind::safe_dosage: return "safe_dosage";
    case ActionKind::unsafe_dosage: return "unsafe_dosage";
    case ActionKind::escalate_case: return "escalate_case";
  }
  return "?";
}

inline ActionKind parse_action_kind(std::string_view s) {
  for (ActionKind a : kAllActions)
    if (s == to_string(a)) return a;
  throw std::invalid_argument("unknown action '" + std::string(s) + "'");
}

inline constexpr std::string_view kEndOfActionLexeme = "<eoa>";

inline std::vector<std::string> action_lexemes(ActionKind a) {
  switch (a) {
    case ActionKind::safe_dosage: return {"administer", "vincristine", "0.5", "mg/m2", "<eoa>"};
    case ActionKind::unsafe_dosage: return {"administer", "vincristine", "1.5", "mg/m2", "<eoa>"};
    case ActionKind::escalate_case: return {"escalate", "case", "<eoa>"};
  }
  return {};
}

/// Resolves an action's lexemes through `vocab`; throws if one is missing.
inline std::vector<TokenId> action_tokens(ActionKind a, const Vocabulary& vocab) {
  std::vector<TokenId> out;
  for (const auto& lex : action_lexemes(a)) {
    auto id = vocab.find(lex);
    if (!id) throw std::invalid_argument(std::string("vocabulary lacks '") + lex + "' needed by " + to_string(a));
    out.push_back(*id);
  }
  return out;
}

inline constexpr std::array<std::string_view, 7> kDoses{"0.0", "0.25", "0.5", "0.75", "1.0", "1.25", "1.5"};

inline std::string dosing_vocabulary_text() {
  std::string s = "size 16\n";
  const std::array<std::string_view, 16> lex{"administer", "vincristine", "0.0",  "0.25",  "0.5",      "0.75",
                                             "1.0",        "1.25",        "1.5",  "mg/m2", "escalate", "case",
                                             "<eoa>",      "hold",        "prednisone", "methotrexate"};
  for (std::size_t i = 0; i < lex.size(); ++i) s += "token \"" + std::string(lex[i]) + "\" = " + std::to_string(i) + "\n";
  return s;
}

/// Number of permitted doses under policy `version`: 1.5, 0.75, 0.5, 0.25, then 0.0 only.
inline std::size_t dose_ceiling_count(int version) {
  switch (version) {
    case 1: return 7;
    case 2: return 4;
    case 3: return 3;
    case 4: return 2;
    default: return 1;
  }
}

inline std::string dosing_grammar_text(int version) {
  if (version < 1) throw std::invalid_argument("policy versions start at 1");
  std::string s = "grammar vincristine " + std::to_string(version) + "\nstart ACTION\n";
  auto vocab = parse_vocabulary(dosing_vocabulary_text());
  for (TokenId id = 0; id <= 12; ++id) s += "token \"" + vocab.lexeme(id) + "\" = " + std::to_string(id) + "\n";
  s += "rule ACTION -> \"administer\" \"vincristine\" DOSE\n";
  s += "rule ACTION -> REVIEW\n";
  for (std::size_t i = 0; i < dose_ceiling_count(version); ++i)
    s += "rule DOSE -> \"" + std::string(kDoses[i]) + "\" UNIT\n";
  s += "rule UNIT -> \"mg/m2\" \"<eoa>\"\n";
  s += "rule REVIEW -> \"escalate\" \"case\" \"<eoa>\"\n";
  s += "escalate REVIEW\n";
  return s;
}

/// Membership decided straight from the productions by forward simulation over
/// (production, offset, escalation flag) items. Independent of DFA compilation.
struct Derivability {
  bool derivable = false;
  bool escalating = false;
};

inline Derivability derive_word(const PolicyGrammar& g, std::span<const TokenId> word) {
  struct Item {
    std::size_t rule;
    std::size_t offset;
    bool flag;
    auto operator<=>(const Item&) const = default;
  };
  std::set<Item> items;
  // Expands nonterminal entries, following unit and empty productions.
  auto enter = [&](std::set<Item>& into, const std::string& nt, bool flag) {
    std::vector<std::pair<std::string, bool>> work{{nt, flag}};
    std::set<std::pair<std::string, bool>> seen;
    while (!work.empty()) {
      auto [n, f] = work.back();
      work.pop_back();
      f = f || g.escalates(n);
      if (!seen.insert({n, f}).second) continue;
      for (std::size_t r = 0; r < g.rules.size(); ++r) {
        if (g.rules[r].lhs != n) continue;
        const auto& rhs = g.rules[r].rhs;
        if (!rhs.empty() && !rhs.front().is_terminal())
          work.push_back({rhs.front().text, f});
        else
          into.insert({r, 0, f});
      }
    }
  };
  enter(items, g.start, false);
  for (TokenId t : word) {
    std::set<Item> next;
    for (const auto& it : items) {
      const auto& rhs = g.rules[it.rule].rhs;
      if (it.offset >= rhs.size() || !rhs[it.offset].is_terminal() || rhs[it.offset].token != t) continue;
      std::size_t off = it.offset + 1;
      if (off < rhs.size() && !rhs[off].is_terminal())
        enter(next, rhs[off].text, it.flag);
      else
        next.insert({it.rule, off, it.flag});
    }
    items = std::move(next);
  }
  Derivability d;
  for (const auto& it : items)
    if (it.offset == g.rules[it.rule].rhs.size()) {
      d.derivable = true;
      d.escalating = d.escalating || it.flag;
    }
  return d;
}

}  // namespace ehv
