#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace tellme {

inline constexpr int kQuantMax = 127;

// Symmetric int8 activations, real ~= int * scale. A single entry in
// `scales` is a per-tensor scale; otherwise there is one scale per row
// (per token).
struct QuantTensor {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::int8_t> data;
  std::vector<float> scales{1.0f};

  QuantTensor() = default;
  QuantTensor(std::size_t r, std::size_t c, float scale = 1.0f)
      : rows(r), cols(c), data(r * c, 0), scales{scale} {}

  float scale(std::size_t row) const { return scales.size() == 1 ? scales[0] : scales[row]; }
  std::span<const std::int8_t> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
  std::span<std::int8_t> row(std::size_t r) { return {data.data() + r * cols, cols}; }

  // Throws kShape / kRange (-128 present) / kNumeric (bad scale).
  void validate() const;

  bool operator==(const QuantTensor&) const = default;
};

}  // namespace tellme
