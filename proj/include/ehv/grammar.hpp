#pragma once

// Policy grammar model and the line-oriented grammar/vocabulary file parser.
//
//   # comment
//   grammar <name> <version>
//   start <NT>                      (optional; defaults to the first rule's LHS)
//   token "<lexeme>" = <id>
//   rule <NT> -> <sym> <sym> ...    (terminals quoted; an empty RHS derives the empty string)
//   escalate <NT>
//
// Only right-linear rules are accepted: a right-hand side is a run of
// terminals optionally followed by a single nonterminal.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ehv {

using TokenId = std::uint32_t;

class GrammarError : public std::runtime_error {
 public:
  enum class Kind { syntax, unresolved_terminal, non_regular, undefined_nonterminal, duplicate };

  GrammarError(Kind kind, int line, int column, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ", column " +
                           std::to_string(column) + ": " + what),
        kind_(kind),
        line_(line),
        column_(column) {}

  Kind kind() const { return kind_; }
  int line() const { return line_; }
  int column() const { return column_; }

 private:
  Kind kind_;
  int line_;
  int column_;
};

struct Symbol {
  enum class Kind { terminal, nonterminal };
  Kind kind;
  std::string text;
  TokenId token = 0;  // meaningful for terminals only

  bool is_terminal() const { return kind == Kind::terminal; }
  bool operator==(const Symbol&) const = default;
};

struct Production {
  std::string lhs;
  std::vector<Symbol> rhs;
  int line = 0;

  /// Terminals of the right-hand side, in order.
  std::vector<TokenId> terminals() const {
    std::vector<TokenId> out;
    for (const auto& s : rhs)
      if (s.is_terminal()) out.push_back(s.token);
    return out;
  }
  /// Trailing nonterminal, if any.
  std::optional<std::string> tail() const {
    if (!rhs.empty() && !rhs.back().is_terminal()) return rhs.back().text;
    return std::nullopt;
  }
  std::string to_string() const {
    std::string s = lhs + " ->";
    for (const auto& sym : rhs) s += sym.is_terminal() ? " \"" + sym.text + "\"" : " " + sym.text;
    return s;
  }
};

struct PolicyGrammar {
  std::string name;
  std::uint64_t version = 0;
  std::string start;
  std::vector<Production> rules;
  std::map<std::string, TokenId> terminal_map;
  std::set<std::string> escalate_marks;

  bool escalates(const std::string& nonterminal) const {
    return escalate_marks.count(nonterminal) != 0;
  }
  std::vector<const Production*> productions_of(const std::string& nonterminal) const {
    std::vector<const Production*> out;
    for (const auto& r : rules)
      if (r.lhs == nonterminal) out.push_back(&r);
    return out;
  }
};

/// Token-id space of the model. Lexemes are optional diagnostics.
struct Vocabulary {
  std::size_t size = 0;
  std::map<TokenId, std::string> lexemes;

  std::optional<TokenId> find(std::string_view lexeme) const {
    for (const auto& [id, lex] : lexemes)
      if (lex == lexeme) return id;
    return std::nullopt;
  }
  std::string lexeme(TokenId id) const {
    auto it = lexemes.find(id);
    return it == lexemes.end() ? "#" + std::to_string(id) : it->second;
  }
};

namespace detail {

class LineLexer {
 public:
  LineLexer(std::string_view line, int line_no) : line_(line), line_no_(line_no) {}

  void skip_space() {
    while (pos_ < line_.size() && (line_[pos_] == ' ' || line_[pos_] == '\t' || line_[pos_] == '\r'))
      ++pos_;
    if (pos_ < line_.size() && line_[pos_] == '#') pos_ = line_.size();
  }
  bool at_end() {
    skip_space();
    return pos_ >= line_.size();
  }
  int column() const { return static_cast<int>(pos_) + 1; }
  bool peek_quote() {
    skip_space();
    return pos_ < line_.size() && line_[pos_] == '"';
  }

  std::string word() {
    skip_space();
    std::size_t begin = pos_;
    while (pos_ < line_.size() && !std::isspace(static_cast<unsigned char>(line_[pos_])) &&
           line_[pos_] != '"' && line_[pos_] != '#')
      ++pos_;
    if (begin == pos_) fail("expected a word");
    return std::string(line_.substr(begin, pos_ - begin));
  }

  std::string identifier() {
    skip_space();
    int col = column();
    std::string w = word();
    bool ok = std::isalpha(static_cast<unsigned char>(w[0])) || w[0] == '_';
    for (char c : w) ok = ok && (std::isalnum(static_cast<unsigned char>(c)) || c == '_');
    if (!ok) throw GrammarError(GrammarError::Kind::syntax, line_no_, col, "invalid identifier '" + w + "'");
    return w;
  }

  std::string quoted() {
    skip_space();
    if (pos_ >= line_.size() || line_[pos_] != '"') fail("expected a quoted lexeme");
    ++pos_;
    std::string out;
    while (pos_ < line_.size() && line_[pos_] != '"') {
      if (line_[pos_] == '\\' && pos_ + 1 < line_.size()) ++pos_;
      out.push_back(line_[pos_++]);
    }
    if (pos_ >= line_.size()) fail("unterminated quoted lexeme");
    ++pos_;
    return out;
  }

  std::uint64_t number() {
    skip_space();
    int col = column();
    std::string w = word();
    for (char c : w)
      if (!std::isdigit(static_cast<unsigned char>(c)))
        throw GrammarError(GrammarError::Kind::syntax, line_no_, col, "expected a non-negative integer, got '" + w + "'");
    try {
      return std::stoull(w);
    } catch (const std::out_of_range&) {
      throw GrammarError(GrammarError::Kind::syntax, line_no_, col, "integer out of range");
    }
  }

  void expect(std::string_view literal) {
    skip_space();
    if (line_.substr(pos_, literal.size()) != literal) fail("expected '" + std::string(literal) + "'");
    pos_ += literal.size();
  }

  void expect_end() {
    if (!at_end()) fail("unexpected trailing input");
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw GrammarError(GrammarError::Kind::syntax, line_no_, column(), what);
  }

 private:
  std::string_view line_;
  int line_no_;
  std::size_t pos_ = 0;
};

template <typename Fn>
void for_each_line(std::string_view text, Fn&& fn) {
  int line_no = 0;
  std::size_t begin = 0;
  while (begin <= text.size()) {
    std::size_t end = text.find('\n', begin);
    if (end == std::string_view::npos) end = text.size();
    ++line_no;
    fn(text.substr(begin, end - begin), line_no);
    begin = end + 1;
  }
}

struct TokenDecl {
  std::string lexeme;
  TokenId id;
};

inline TokenDecl parse_token_decl(LineLexer& lx, int line_no) {
  std::string lexeme = lx.quoted();
  lx.expect("=");
  int col = lx.column();
  std::uint64_t id = lx.number();
  if (id > 0xffffffffULL) throw GrammarError(GrammarError::Kind::syntax, line_no, col, "token id out of range");
  lx.expect_end();
  return {std::move(lexeme), static_cast<TokenId>(id)};
}

}  // namespace detail

/// Parses and validates a grammar document. Throws GrammarError.
inline PolicyGrammar parse_grammar(std::string_view text) {
  using detail::LineLexer;
  PolicyGrammar g;
  bool have_header = false;
  std::map<TokenId, std::string> by_id;
  struct PendingTerminal {
    std::size_t rule;
    std::size_t symbol;
    int line;
    int column;
  };
  std::vector<PendingTerminal> pending;
  std::vector<std::pair<std::string, int>> escalate_lines;

  detail::for_each_line(text, [&](std::string_view line, int line_no) {
    LineLexer lx(line, line_no);
    if (lx.at_end()) return;
    int col = lx.column();
    std::string keyword = lx.word();
    if (keyword == "grammar") {
      if (have_header) throw GrammarError(GrammarError::Kind::duplicate, line_no, col, "duplicate grammar header");
      g.name = lx.identifier();
      g.version = lx.number();
      lx.expect_end();
      have_header = true;
    } else if (keyword == "start") {
      g.start = lx.identifier();
      lx.expect_end();
    } else if (keyword == "token") {
      auto decl = detail::parse_token_decl(lx, line_no);
      if (g.terminal_map.count(decl.lexeme))
        throw GrammarError(GrammarError::Kind::duplicate, line_no, col, "token \"" + decl.lexeme + "\" declared twice");
      if (by_id.count(decl.id))
        throw GrammarError(GrammarError::Kind::duplicate, line_no, col,
                           "token id " + std::to_string(decl.id) + " already bound to \"" + by_id[decl.id] + "\"");
      g.terminal_map[decl.lexeme] = decl.id;
      by_id[decl.id] = decl.lexeme;
    } else if (keyword == "rule") {
      Production p;
      p.line = line_no;
      p.lhs = lx.identifier();
      lx.expect("->");
      while (!lx.at_end()) {
        int sym_col = lx.column();
        if (lx.peek_quote()) {
          pending.push_back({g.rules.size(), p.rhs.size(), line_no, sym_col});
          p.rhs.push_back({Symbol::Kind::terminal, lx.quoted(), 0});
        } else {
          p.rhs.push_back({Symbol::Kind::nonterminal, lx.identifier(), 0});
        }
      }
      g.rules.push_back(std::move(p));
    } else if (keyword == "escalate") {
      std::string nt = lx.identifier();
      lx.expect_end();
      g.escalate_marks.insert(nt);
      escalate_lines.emplace_back(nt, line_no);
    } else {
      throw GrammarError(GrammarError::Kind::syntax, line_no, col, "unknown directive '" + keyword + "'");
    }
  });

  if (!have_header) throw GrammarError(GrammarError::Kind::syntax, 1, 1, "missing 'grammar <name> <version>' header");

  for (const auto& pt : pending) {
    Symbol& sym = g.rules[pt.rule].rhs[pt.symbol];
    auto it = g.terminal_map.find(sym.text);
    if (it == g.terminal_map.end())
      throw GrammarError(GrammarError::Kind::unresolved_terminal, pt.line, pt.column,
                         "terminal \"" + sym.text + "\" has no token declaration");
    sym.token = it->second;
  }

  std::set<std::string> defined;
  for (const auto& r : g.rules) defined.insert(r.lhs);
  if (g.start.empty()) {
    if (g.rules.empty()) throw GrammarError(GrammarError::Kind::syntax, 1, 1, "grammar has no rules and no start symbol");
    g.start = g.rules.front().lhs;
  }

  for (const auto& r : g.rules) {
    for (std::size_t i = 0; i < r.rhs.size(); ++i) {
      const Symbol& sym = r.rhs[i];
      if (sym.is_terminal()) continue;
      if (i + 1 != r.rhs.size()) {
        std::string why = (i == 0 && sym.text == r.lhs) ? "left recursion" : "nonterminal in non-final position";
        throw GrammarError(GrammarError::Kind::non_regular, r.line, 1,
                           "rule '" + r.to_string() + "' is not right-linear (" + why + ")");
      }
      if (!defined.count(sym.text))
        throw GrammarError(GrammarError::Kind::undefined_nonterminal, r.line, 1,
                           "rule '" + r.to_string() + "' references undefined nonterminal " + sym.text);
    }
  }
  for (const auto& [nt, line] : escalate_lines)
    if (!defined.count(nt))
      throw GrammarError(GrammarError::Kind::undefined_nonterminal, line, 1, "escalate mark on undefined nonterminal " + nt);
  return g;
}

/// Parses a vocabulary file: optional `size <n>` plus `token "<lexeme>" = <id>` lines.
inline Vocabulary parse_vocabulary(std::string_view text) {
  Vocabulary v;
  std::optional<std::size_t> declared;
  detail::for_each_line(text, [&](std::string_view line, int line_no) {
    detail::LineLexer lx(line, line_no);
    if (lx.at_end()) return;
    int col = lx.column();
    std::string keyword = lx.word();
    if (keyword == "size") {
      declared = lx.number();
      lx.expect_end();
    } else if (keyword == "token") {
      auto decl = detail::parse_token_decl(lx, line_no);
      if (v.lexemes.count(decl.id))
        throw GrammarError(GrammarError::Kind::duplicate, line_no, col, "token id " + std::to_string(decl.id) + " declared twice");
      v.lexemes[decl.id] = decl.lexeme;
    } else {
      throw GrammarError(GrammarError::Kind::syntax, line_no, col, "unknown directive '" + keyword + "'");
    }
  });
  std::size_t needed = v.lexemes.empty() ? 0 : v.lexemes.rbegin()->first + 1;
  if (declared && *declared < needed)
    throw GrammarError(GrammarError::Kind::syntax, 1, 1, "declared size smaller than largest token id");
  v.size = declared.value_or(needed);
  return v;
}

/// Vocabulary whose lexemes are exactly the grammar's terminals.
inline Vocabulary vocabulary_from(const PolicyGrammar& g, std::size_t min_size = 0) {
  Vocabulary v;
  for (const auto& [lex, id] : g.terminal_map) v.lexemes[id] = lex;
  std::size_t needed = v.lexemes.empty() ? 0 : v.lexemes.rbegin()->first + 1;
  v.size = std::max(needed, min_size);
  return v;
}

}  // namespace ehv
