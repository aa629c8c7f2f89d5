#pragma once

// Offline weight preprocessing: ternary matrices are cut into groups of G
// consecutive input rows, each group encoded as one base-3 lookup index, and
// T group indices per column are stored back to back as one index vector.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace tellme {

using Trit = std::int8_t;

// Largest supported group: 3^5 = 243 still fits the one-byte index storage.
inline constexpr std::uint32_t kMaxGroupSize = 5;

constexpr std::uint32_t pow3(std::uint32_t e) {
  std::uint32_t r = 1;
  while (e-- > 0) r *= 3;
  return r;
}

// Bits needed to address 3^G table entries (5 for G = 3).
constexpr std::uint32_t index_bits(std::uint32_t group_size) {
  std::uint32_t bits = 0;
  while ((1u << bits) < pow3(group_size)) ++bits;
  return bits;
}

// W in {-1,0,+1}^{rows x cols}, row-major. rows is the inner (reduction)
// dimension, cols the output dimension.
struct TernaryMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<Trit> values;

  TernaryMatrix() = default;
  TernaryMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), values(r * c, 0) {}

  Trit at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  Trit& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }

  // Throws kShape / kInvalidTrit.
  void validate() const;

  bool operator==(const TernaryMatrix&) const = default;
};

struct PackedTernaryMatrix {
  std::uint32_t group_size = 3;
  std::uint32_t tables = 32;
  std::size_t rows = 0;  // unpadded inner dimension
  std::size_t super_rows = 0;
  std::size_t cols = 0;
  // indices[(s * cols + k) * tables + t] encodes input rows
  // [s*T*G + t*G, s*T*G + (t+1)*G) of column k.
  std::vector<std::uint8_t> indices;
  float scale = 1.0f;

  std::size_t block_rows() const { return std::size_t{tables} * group_size; }
  std::size_t padded_rows() const { return super_rows * block_rows(); }

  std::span<const std::uint8_t> index_vector(std::size_t super_row, std::size_t col) const {
    return {indices.data() + (super_row * cols + col) * tables, tables};
  }

  // Throws kConfig / kShape / kRange.
  void validate() const;

  bool operator==(const PackedTernaryMatrix&) const = default;
};

// index = sum_i (trit_i + 1) * 3^i, trit 0 is the least significant digit.
std::uint32_t encode_group(std::span<const Trit> trits);
std::vector<Trit> decode_group(std::uint32_t index, std::uint32_t group_size);
void decode_group_into(std::uint32_t index, std::span<Trit> out);

PackedTernaryMatrix pack_matrix(const TernaryMatrix& w, std::uint32_t group_size,
                                std::uint32_t tables, float scale = 1.0f);
TernaryMatrix unpack_matrix(const PackedTernaryMatrix& p, std::size_t original_rows);
inline TernaryMatrix unpack_matrix(const PackedTernaryMatrix& p) { return unpack_matrix(p, p.rows); }

// Absmean ternarization of a real matrix: scale = mean|w|,
// trit = clamp(round(w / scale), -1, 1). Used by the packer CLI.
struct TernarizedMatrix {
  TernaryMatrix trits;
  float scale = 1.0f;
};
TernarizedMatrix ternarize_absmean(std::span<const float> w, std::size_t rows, std::size_t cols);

}  // namespace tellme
