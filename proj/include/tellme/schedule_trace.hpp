#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace tellme {

// A data block is one token's q, k or v vector (for all heads at once).
// A kKeyValue event loads the k and v blocks of one token together and is
// counted once; this is the unit the reverse-schedule load formula counts.
enum class LoadKind : std::uint8_t { kQuery, kKeyValue, kEvict };

struct LoadEvent {
  LoadKind kind;
  std::uint32_t token;  // 0-based
  std::uint32_t batch;

  bool operator==(const LoadEvent&) const = default;
};

struct LoadTrace {
  std::vector<LoadEvent> events;
  std::size_t iterations = 0;
  std::size_t computed_cells = 0;  // (query, key) score cells evaluated
  std::size_t masked_cells = 0;    // evaluated cells with key > query

  std::size_t count(LoadKind kind) const {
    std::size_t n = 0;
    for (const auto& e : events) n += e.kind == kind ? 1 : 0;
    return n;
  }
  std::vector<std::uint32_t> kv_sequence() const {
    std::vector<std::uint32_t> seq;
    for (const auto& e : events)
      if (e.kind == LoadKind::kKeyValue) seq.push_back(e.token);
    return seq;
  }
};

}  // namespace tellme
