#pragma once

#include <memory>
#include <string>
#include <vector>

#include "ehv/compiled_policy.hpp"
#include "ehv/dfa.hpp"
#include "ehv/grammar.hpp"
#include "oracles.hpp"

namespace support {

// Token ids from fixtures/vincristine.vocab.
enum Tok : ehv::TokenId {
  kAdminister = 0,
  kVincristine = 1,
  kDose0 = 2,
  kDose025 = 3,
  kDose05 = 4,
  kDose075 = 5,
  kDose10 = 6,
  kDose125 = 7,
  kDose15 = 8,
  kUnit = 9,
  kEscalate = 10,
  kCase = 11,
  kEoa = 12,
};

inline const std::vector<ehv::TokenId> kSafeDosage{kAdminister, kVincristine, kDose05, kUnit, kEoa};
inline const std::vector<ehv::TokenId> kUnsafeDosage{kAdminister, kVincristine, kDose15, kUnit, kEoa};
inline const std::vector<ehv::TokenId> kEscalateCase{kEscalate, kCase, kEoa};

inline ehv::Vocabulary vocab() { return ehv::parse_vocabulary(oracle::fixture("vincristine.vocab")); }

inline std::string grammar_text(int version) {
  return oracle::fixture("vincristine_v" + std::to_string(version) + ".grammar");
}

inline ehv::PolicyGrammar grammar(int version) { return ehv::parse_grammar(grammar_text(version)); }

/// Compiled fixture grammar with a synthetic root and clock {pap: version}.
inline ehv::CompiledPolicy policy(int version) {
  ehv::CompileOptions opts;
  opts.source_root = ehv::sha256("fixture-root-v" + std::to_string(version));
  auto dfa = std::make_shared<const ehv::Dfa>(ehv::compile(grammar(version), vocab(), opts));
  return ehv::CompiledPolicy{dfa, ehv::VectorClock{{"pap", static_cast<std::uint64_t>(version)}}};
}

}  // namespace support
