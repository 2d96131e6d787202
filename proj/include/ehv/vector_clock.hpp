#pragma once

#include <algorithm>
#include <cstdint>
#include <initializer_list>
#include <map>
#include <string>

#include "ehv/crypto.hpp"

namespace ehv {

enum class ClockOrder { dominates, dominated, equal, concurrent };

inline const char* to_string(ClockOrder o) {
  switch (o) {
    case ClockOrder::dominates: return "DOMINATES";
    case ClockOrder::dominated: return "DOMINATED";
    case ClockOrder::equal: return "EQUAL";
    case ClockOrder::concurrent: return "CONCURRENT";
  }
  return "?";
}

/// Node id -> counter. Absent entries read as zero and zero entries are never stored.
class VectorClock {
 public:
  VectorClock() = default;
  VectorClock(std::initializer_list<std::pair<const std::string, std::uint64_t>> init) {
    for (const auto& [node, count] : init) set(node, count);
  }

  std::uint64_t get(const std::string& node) const {
    auto it = entries_.find(node);
    return it == entries_.end() ? 0 : it->second;
  }

  void set(const std::string& node, std::uint64_t count) {
    if (count == 0)
      entries_.erase(node);
    else
      entries_[node] = count;
  }

  void increment(const std::string& node) { entries_[node] = get(node) + 1; }

  void merge(const VectorClock& other) {
    for (const auto& [node, count] : other.entries_) {
      auto& mine = entries_[node];
      mine = std::max(mine, count);
    }
  }

  const std::map<std::string, std::uint64_t>& entries() const { return entries_; }

  void write(ByteWriter& w) const {
    w.u32(static_cast<std::uint32_t>(entries_.size()));
    for (const auto& [node, count] : entries_) {
      w.str(node);
      w.u64(count);
    }
  }

  static VectorClock read(ByteReader& r) {
    VectorClock vc;
    std::uint32_t n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
      std::string node = r.str();
      vc.set(node, r.u64());
    }
    return vc;
  }

  std::string to_string() const {
    std::string s = "[";
    for (const auto& [node, count] : entries_) {
      if (s.size() > 1) s += ",";
      s += node + ":" + std::to_string(count);
    }
    return s + "]";
  }

  bool operator==(const VectorClock&) const = default;

 private:
  std::map<std::string, std::uint64_t> entries_;
};

inline VectorClock vc_merge(const VectorClock& a, const VectorClock& b) {
  VectorClock out = a;
  out.merge(b);
  return out;
}

inline ClockOrder vc_compare(const VectorClock& a, const VectorClock& b) {
  bool a_ahead = false, b_ahead = false;
  for (const auto& [node, count] : a.entries())
    if (count > b.get(node)) a_ahead = true;
  for (const auto& [node, count] : b.entries())
    if (count > a.get(node)) b_ahead = true;
  if (a_ahead && b_ahead) return ClockOrder::concurrent;
  if (a_ahead) return ClockOrder::dominates;
  if (b_ahead) return ClockOrder::dominated;
  return ClockOrder::equal;
}

}  // namespace ehv
