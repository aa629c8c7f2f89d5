#pragma once

// Decode-phase attention as three decoupled steps over the KV cache:
// scores = q K^T, p = softmax(scores), o = p V. Step one and the LM head
// both run on quantized_matvec, the single int8 matrix-vector engine.

#include <cstddef>
#include <cstdint>
#include <span>
#include <variant>
#include <vector>

#include "tellme/quant_tensor.hpp"
#include "tellme/special_fn.hpp"
#include "tellme/ternary_pack.hpp"
#include "tellme/tl_matmul.hpp"

namespace tellme {

// Strided view of int8 rows with one scale per row.
struct Int8RowsView {
  const std::int8_t* data = nullptr;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t stride = 0;
  const float* row_scales = nullptr;

  std::span<const std::int8_t> row(std::size_t r) const { return {data + r * stride, cols}; }
};

struct PackedOperand {
  const PackedTernaryMatrix* weights = nullptr;
  std::uint32_t q_block = 16;
};

using MatVecOperand = std::variant<Int8RowsView, PackedOperand>;

// out = x * operand. For an int8 row operand out[r] = x . row_r; for a
// packed ternary operand out[k] = sum_n x[n] W[n][k] via table lookup.
void quantized_matvec(std::span<const std::int8_t> x, const MatVecOperand& operand, std::span<Accum> out);

// Append-only int8 key/value history, one store per layer. Each cached
// token row carries its own key and value scale, fixed when appended.
class KvCache {
 public:
  KvCache(std::size_t layers, std::size_t heads, std::size_t head_dim, std::size_t capacity);

  // Throws kContextOverflow when the layer already holds `capacity` tokens.
  void append(std::size_t layer, std::span<const std::int8_t> k_row, float k_scale,
              std::span<const std::int8_t> v_row, float v_scale);

  std::size_t layers() const { return layers_.size(); }
  std::size_t heads() const { return heads_; }
  std::size_t head_dim() const { return head_dim_; }
  std::size_t capacity() const { return capacity_; }
  std::size_t length(std::size_t layer) const { return layers_.at(layer).key_scales.size(); }

  Int8RowsView keys(std::size_t layer, std::size_t head) const;
  Int8RowsView values(std::size_t layer, std::size_t head) const;
  std::span<const std::int8_t> key_row(std::size_t layer, std::size_t token) const;
  std::span<const std::int8_t> value_row(std::size_t layer, std::size_t token) const;
  float key_scale(std::size_t layer, std::size_t token) const { return layers_.at(layer).key_scales.at(token); }
  float value_scale(std::size_t layer, std::size_t token) const {
    return layers_.at(layer).value_scales.at(token);
  }

 private:
  struct LayerStore {
    std::vector<std::int8_t> keys;
    std::vector<std::int8_t> values;
    std::vector<float> key_scales;
    std::vector<float> value_scales;
  };
  std::size_t heads_;
  std::size_t head_dim_;
  std::size_t capacity_;
  std::vector<LayerStore> layers_;
};

// q: 1 x heads*head_dim. Returns heads x M scores, row-major.
std::vector<double> decode_scores(const QuantTensor& q, const KvCache& cache, std::size_t layer,
                                  double softmax_scale);
std::vector<double> softmax_vector(std::span<const double> scores);
// probs: heads x M. Returns heads x head_dim.
std::vector<double> decode_aggregate(std::span<const double> probs, const KvCache& cache, std::size_t layer);
// All three steps for one new token.
std::vector<float> decode_attention(const QuantTensor& q, const KvCache& cache, std::size_t layer,
                                    double softmax_scale);

struct LogitVector {
  std::vector<float> logits;
  std::size_t argmax() const;
};

LogitVector lm_head_quantized(const QuantTensor& hidden, const PackedTernaryMatrix& head_weights,
                              std::uint32_t q_block = 16);
// Absmax-quantizes `hidden` first.
LogitVector lm_head(std::span<const float> hidden, const PackedTernaryMatrix& head_weights,
                    std::uint32_t q_block = 16);

}  // namespace tellme
