#pragma once

// Normalization, quantization and activation units. Vector traffic is
// processed in 32-element packets (256 bits of int8).

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "tellme/quant_tensor.hpp"
#include "tellme/tl_matmul.hpp"

namespace tellme {

inline constexpr std::size_t kPacketElems = 32;

struct NormParams {
  std::vector<float> gamma;
  float epsilon = 1e-5f;

  void validate(std::size_t hidden) const;
};

inline float sigmoid(float x) { return 1.0f / (1.0f + std::exp(-x)); }
inline float silu(float x) { return x * sigmoid(x); }

// round-half-even(x * 127 / amax), clamped to [-127, 127].
std::int8_t quantize_value(float x, float amax);

// Per-tensor absmax quantization of one vector (returned as a 1-row tensor).
// amax == 0 yields zeros with scale 1.
QuantTensor absmax_quantize(std::span<const float> x);
// Per-row absmax quantization of a row-major rows x cols matrix.
QuantTensor absmax_quantize_rows(std::span<const float> x, std::size_t rows, std::size_t cols);
std::vector<float> dequantize(const QuantTensor& q);

// Unfused RMSNorm: x * gamma / sqrt(mean(x^2) + eps).
std::vector<float> rmsnorm(std::span<const float> x, const NormParams& params);

// RMSNorm followed by absmax quantization in two traversals of x:
//   pass 1: sum of squares and max|x*gamma| together,
//   pass 2: normalize and quantize each element.
// Bit-identical to absmax_quantize(rmsnorm(x)).
QuantTensor rmsnorm_quant_fused(std::span<const float> x, const NormParams& params);
QuantTensor rmsnorm_quant_rows(std::span<const float> x, std::size_t rows, std::size_t cols,
                               const NormParams& params);

std::vector<float> silu_vector(std::span<const float> x);

// Linear output path with SiLU folded into dequantization; writes into the
// caller's buffer without allocating.
inline void silu_fused(std::span<const Accum> acc, float a_scale, float w_scale, std::span<float> out) {
  dequantize_into(acc, a_scale, w_scale, out, Epilogue::kSilu);
}

class RopeTable {
 public:
  RopeTable(std::size_t head_dim, double theta, std::size_t capacity);

  std::size_t head_dim() const { return head_dim_; }
  std::size_t capacity() const { return capacity_; }
  double theta() const { return theta_; }
  double cos_at(std::size_t pos, std::size_t pair) const { return cos_[pos * (head_dim_ / 2) + pair]; }
  double sin_at(std::size_t pos, std::size_t pair) const { return sin_[pos * (head_dim_ / 2) + pair]; }

 private:
  std::size_t head_dim_;
  double theta_;
  std::size_t capacity_;
  std::vector<double> cos_;
  std::vector<double> sin_;
};

// x is [tokens x heads x head_dim]; token t sits at positions[t]. Rotates each
// (2i, 2i+1) pair by pos * theta^(-2i/d) in place.
void rope_apply(std::span<float> x, std::size_t heads, std::span<const std::size_t> positions,
                const RopeTable& table);

}  // namespace tellme
