#include "tellme/tl_matmul.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "tellme/error.hpp"
#include "tellme/special_fn.hpp"

namespace tellme {

namespace {

void check_operands(const QuantTensor& a, std::size_t inner_rows) {
  a.validate();
  require(a.cols == inner_rows, ErrorCode::kShape,
          "activation cols " + std::to_string(a.cols) + " != weight rows " + std::to_string(inner_rows));
  require(inner_rows <= kMaxReductionDepth, ErrorCode::kShape, "reduction depth exceeds accumulator bound");
}

// Copies activations [s*T*G, (s+1)*T*G) into `block`, zero-filling past n.
void load_block(std::span<const std::int8_t> x, std::size_t super_row, std::span<std::int8_t> block) {
  const std::size_t begin = super_row * block.size();
  const std::size_t avail = begin < x.size() ? std::min(block.size(), x.size() - begin) : 0;
  std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(begin), avail, block.begin());
  std::fill(block.begin() + static_cast<std::ptrdiff_t>(avail), block.end(), std::int8_t{0});
}

}  // namespace

void QuantTensor::validate() const {
  require(data.size() == rows * cols, ErrorCode::kShape, "quant tensor data != rows*cols");
  require(scales.size() == 1 || scales.size() == rows, ErrorCode::kShape,
          "quant tensor needs one scale or one per row");
  for (std::int8_t v : data) require(v >= -kQuantMax, ErrorCode::kRange, "int8 value -128 is excluded");
  for (float s : scales) require(std::isfinite(s) && s > 0.0f, ErrorCode::kNumeric, "scale must be finite and > 0");
}

void table_setup_into(std::span<const std::int8_t> block, TlTable& table) {
  const std::uint32_t g = table.group_size;
  const std::uint32_t entries = pow3(g);
  require(block.size() == std::size_t{table.tables} * g, ErrorCode::kShape, "activation block != T*G");
  table.entries.resize(std::size_t{table.tables} * entries);
  for (std::uint32_t t = 0; t < table.tables; ++t) {
    TableEntry* e = table.entries.data() + std::size_t{t} * entries;
    const std::int8_t* val = block.data() + std::size_t{t} * g;
    // Grow the table one trit at a time: digit i selects -a, 0 or +a on top
    // of every combination of the lower digits.
    e[0] = 0;
    std::uint32_t size = 1;
    for (std::uint32_t i = 0; i < g; ++i) {
      const auto a = static_cast<TableEntry>(val[i]);
      for (std::uint32_t j = 0; j < size; ++j) {
        const TableEntry base = e[j];
        e[j] = static_cast<TableEntry>(base - a);
        e[size + j] = base;
        e[2 * size + j] = static_cast<TableEntry>(base + a);
      }
      size *= 3;
    }
  }
}

TlTable table_setup(std::span<const std::int8_t> block, std::uint32_t group_size, std::uint32_t tables) {
  require(group_size >= 1 && group_size <= kMaxGroupSize, ErrorCode::kConfig, "group size out of range");
  require(tables >= 1, ErrorCode::kConfig, "table count must be >= 1");
  TlTable table{group_size, tables, {}};
  table_setup_into(block, table);
  return table;
}

TlWorkspace::TlWorkspace(const PackedTernaryMatrix& w)
    : block_(w.block_rows()), table_{w.group_size, w.tables, {}} {
  table_.entries.resize(std::size_t{w.tables} * pow3(w.group_size));
}

void TlWorkspace::matvec(std::span<const std::int8_t> x, const PackedTernaryMatrix& w, std::uint32_t q_block,
                         std::span<Accum> out) {
  require(q_block >= 1, ErrorCode::kConfig, "Q must be >= 1");
  require(out.size() == w.cols, ErrorCode::kShape, "output length != K");
  require(x.size() == w.rows, ErrorCode::kShape, "activation length != weight rows");
  std::fill(out.begin(), out.end(), Accum{0});
  const std::uint32_t per_table = pow3(w.group_size);
  const std::size_t cols = w.cols;
  for (std::size_t s = 0; s < w.super_rows; ++s) {
    load_block(x, s, block_);
    table_setup_into(block_, table_);
    const TableEntry* tab = table_.entries.data();
    // Q index vectors per step over the K output columns.
    for (std::size_t k0 = 0; k0 < cols; k0 += q_block) {
      const std::size_t k_end = std::min<std::size_t>(cols, k0 + q_block);
      for (std::size_t k = k0; k < k_end; ++k) {
        const std::uint8_t* idx_vec = w.indices.data() + (s * cols + k) * w.tables;
        Accum acc = 0;
        for (std::uint32_t t = 0; t < w.tables; ++t) acc += tab[std::size_t{t} * per_table + idx_vec[t]];
        out[k] += acc;
      }
    }
  }
}

std::size_t TlWorkspace::scratch_bytes() const {
  return block_.size() * sizeof(std::int8_t) + table_.entries.size() * sizeof(TableEntry);
}

void tl_matmul(const QuantTensor& a, const PackedTernaryMatrix& w, std::uint32_t q_block, const RowSink& sink) {
  check_operands(a, w.rows);
  require(w.indices.size() == w.super_rows * w.cols * w.tables, ErrorCode::kShape, "packed index count");
  TlWorkspace ws(w);
  std::vector<Accum> acc(w.cols);
  for (std::size_t m = 0; m < a.rows; ++m) {
    ws.matvec(a.row(m), w, q_block, acc);
    sink(m, acc);
  }
}

AccumMatrix tl_matmul(const QuantTensor& a, const PackedTernaryMatrix& w, std::uint32_t q_block) {
  AccumMatrix out{a.rows, w.cols, std::vector<Accum>(a.rows * w.cols)};
  tl_matmul(a, w, q_block, [&](std::size_t m, std::span<const Accum> row) {
    std::copy(row.begin(), row.end(), out.data.begin() + static_cast<std::ptrdiff_t>(m * out.cols));
  });
  return out;
}

AccumMatrix naive_ternary_matmul(const QuantTensor& a, const TernaryMatrix& w) {
  w.validate();
  check_operands(a, w.rows);
  AccumMatrix out{a.rows, w.cols, std::vector<Accum>(a.rows * w.cols, 0)};
  for (std::size_t m = 0; m < a.rows; ++m) {
    const auto x = a.row(m);
    for (std::size_t k = 0; k < w.cols; ++k) {
      Accum acc = 0;
      for (std::size_t n = 0; n < w.rows; ++n) {
        const Trit t = w.at(n, k);
        if (t > 0)
          acc += x[n];
        else if (t < 0)
          acc -= x[n];
      }
      out.data[m * w.cols + k] = acc;
    }
  }
  return out;
}

HalfTableLookup half_table_slot(std::uint32_t index, std::uint32_t group_size) {
  const std::uint32_t mid = (pow3(group_size) - 1) / 2;  // all-zero group
  if (index >= mid) return {index - mid, false};
  return {(pow3(group_size) - 1 - index) - mid, true};
}

AccumMatrix partial_table_matmul(const QuantTensor& a, const PackedTernaryMatrix& w) {
  check_operands(a, w.rows);
  require(w.indices.size() == w.super_rows * w.cols * w.tables, ErrorCode::kShape, "packed index count");
  const std::uint32_t g = w.group_size;
  const std::uint32_t full = pow3(g);
  const std::uint32_t mid = (full - 1) / 2;
  const std::uint32_t stored = full - mid;  // zero entry + (3^G-1)/2 combinations

  std::vector<std::int8_t> block(w.block_rows());
  std::vector<TableEntry> half(std::size_t{w.tables} * stored);
  std::vector<HalfTableLookup> lookup(full);
  for (std::uint32_t i = 0; i < full; ++i) lookup[i] = half_table_slot(i, g);
  std::vector<Trit> trits(g);

  AccumMatrix out{a.rows, w.cols, std::vector<Accum>(a.rows * w.cols, 0)};
  for (std::size_t m = 0; m < a.rows; ++m) {
    Accum* o = out.data.data() + m * w.cols;
    for (std::size_t s = 0; s < w.super_rows; ++s) {
      load_block(a.row(m), s, block);
      for (std::uint32_t t = 0; t < w.tables; ++t) {
        for (std::uint32_t slot = 0; slot < stored; ++slot) {
          decode_group_into(mid + slot, trits);
          int sum = 0;
          for (std::uint32_t i = 0; i < g; ++i) sum += trits[i] * block[std::size_t{t} * g + i];
          half[std::size_t{t} * stored + slot] = static_cast<TableEntry>(sum);
        }
      }
      for (std::size_t k = 0; k < w.cols; ++k) {
        const auto idx_vec = w.index_vector(s, k);
        for (std::uint32_t t = 0; t < w.tables; ++t) {
          const HalfTableLookup l = lookup[idx_vec[t]];
          const TableEntry v = half[std::size_t{t} * stored + l.slot];
          o[k] += l.negate ? -v : v;
        }
      }
    }
  }
  return out;
}

void dequantize_into(std::span<const Accum> acc, float a_scale, float w_scale, std::span<float> out,
                     Epilogue epilogue) {
  require(std::isfinite(a_scale) && std::isfinite(w_scale), ErrorCode::kNumeric, "non-finite dequant scale");
  require(a_scale > 0.0f && w_scale > 0.0f, ErrorCode::kNumeric, "dequant scales must be > 0");
  require(out.size() == acc.size(), ErrorCode::kShape, "dequant output length");
  const float scale = a_scale * w_scale;
  for (std::size_t k = 0; k < acc.size(); ++k) {
    const float v = static_cast<float>(acc[k]) * scale;
    out[k] = epilogue == Epilogue::kSilu ? silu(v) : v;
  }
}

std::vector<float> dequantize_output(std::span<const Accum> acc, float a_scale, float w_scale) {
  std::vector<float> out(acc.size());
  dequantize_into(acc, a_scale, w_scale, out);
  return out;
}

}  // namespace tellme
