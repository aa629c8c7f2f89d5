#pragma once

// Table-lookup ternary matmul. For every block of T*G activations the kernel
// builds T tables holding all 3^G signed sums of each G-activation group,
// then walks the packed weight index vectors for every output column and
// accumulates table hits. No multiplications happen in the inner loop.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "tellme/quant_tensor.hpp"
#include "tellme/ternary_pack.hpp"

namespace tellme {

using TableEntry = std::int16_t;
using Accum = std::int32_t;

// 127 * 2^24 < 2^31, so int32 accumulators cannot overflow below this depth.
inline constexpr std::size_t kMaxReductionDepth = std::size_t{1} << 24;

struct TlTable {
  std::uint32_t group_size = 0;
  std::uint32_t tables = 0;
  std::vector<TableEntry> entries;  // tables * 3^G, table-major

  std::uint32_t size_per_table() const { return pow3(group_size); }
  TableEntry at(std::uint32_t table, std::uint32_t index) const {
    return entries[std::size_t{table} * size_per_table() + index];
  }
};

// Streamed output: called once per activation row with its K accumulators.
using RowSink = std::function<void(std::size_t row, std::span<const Accum> acc)>;

// Row-major M x K accumulator matrix, the collected form of a row stream.
struct AccumMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<Accum> data;

  std::span<const Accum> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
  bool operator==(const AccumMatrix&) const = default;
};

TlTable table_setup(std::span<const std::int8_t> block, std::uint32_t group_size, std::uint32_t tables);
void table_setup_into(std::span<const std::int8_t> block, TlTable& table);

// Reusable per-call scratch: one activation block, its tables and one
// accumulator row. Its size is O(T*3^G + K) independent of M.
class TlWorkspace {
 public:
  TlWorkspace(const PackedTernaryMatrix& w);

  // out[k] = sum_n x[n] * W[n][k] for one activation row.
  void matvec(std::span<const std::int8_t> x, const PackedTernaryMatrix& w, std::uint32_t q_block,
              std::span<Accum> out);

  std::size_t scratch_bytes() const;

 private:
  std::vector<std::int8_t> block_;
  TlTable table_;
};

void tl_matmul(const QuantTensor& a, const PackedTernaryMatrix& w, std::uint32_t q_block, const RowSink& sink);
AccumMatrix tl_matmul(const QuantTensor& a, const PackedTernaryMatrix& w, std::uint32_t q_block = 16);

// Select-add baseline: per weight, add, subtract or skip the activation.
AccumMatrix naive_ternary_matmul(const QuantTensor& a, const TernaryMatrix& w);

// Half-table variant: stores the zero entry plus the (3^G-1)/2 combinations
// whose most significant trit is +1, and recovers the mirrored half by
// negation (index i and 3^G-1-i are trit-wise negations of each other).
AccumMatrix partial_table_matmul(const QuantTensor& a, const PackedTernaryMatrix& w);

struct HalfTableLookup {
  std::uint32_t slot;
  bool negate;
};
HalfTableLookup half_table_slot(std::uint32_t index, std::uint32_t group_size);

// Epilogue applied while dequantizing a linear layer's accumulators.
enum class Epilogue { kNone, kSilu };

// out[k] = acc[k] * a_scale * w_scale (then the epilogue). Writes straight
// into `out`; nothing is allocated.
void dequantize_into(std::span<const Accum> acc, float a_scale, float w_scale, std::span<float> out,
                     Epilogue epilogue = Epilogue::kNone);
std::vector<float> dequantize_output(std::span<const Accum> acc, float a_scale, float w_scale);

}  // namespace tellme
