#pragma once

#include <memory>

#include "ehv/dfa.hpp"
#include "ehv/vector_clock.hpp"

namespace ehv {

/// A DFA together with the causal stamp of the policy state it was compiled from.
struct CompiledPolicy {
  std::shared_ptr<const Dfa> dfa;
  VectorClock clock;

  const Digest& root() const { return dfa->source_root(); }
};

/// True when `candidate` comes from a strictly newer policy state than `current`:
/// its clock dominates, or the clocks are concurrent and its root sorts later.
inline bool supersedes(const CompiledPolicy& candidate, const CompiledPolicy& current) {
  if (candidate.root() == current.root()) return false;
  switch (vc_compare(candidate.clock, current.clock)) {
    case ClockOrder::dominates: return true;
    case ClockOrder::concurrent: return current.root() < candidate.root();
    default: return false;
  }
}

}  // namespace ehv
