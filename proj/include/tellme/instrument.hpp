#pragma once

#include <cstdint>

namespace tellme::instrument {

// Per-thread event counters. Kernels bump them unconditionally; tests and
// the CLI reset and read them around the region of interest.
struct Counters {
  std::uint64_t element_reads = 0;        // input elements touched by norm/quant passes
  std::uint64_t quant_saturations = 0;    // values clamped to +-127
  std::uint64_t matvec_int8_calls = 0;    // shared engine, int8-row operand
  std::uint64_t matvec_ternary_calls = 0; // shared engine, packed ternary operand
  std::uint64_t matvec_bytes = 0;         // operand bytes streamed by the engine
  std::uint64_t kv_bytes_read = 0;        // int8 key/value cache bytes scanned by decode
};

Counters& counters();
inline void reset() { counters() = Counters{}; }

}  // namespace tellme::instrument
