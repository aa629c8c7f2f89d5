#include "tellme/attention_decode.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "tellme/error.hpp"
#include "tellme/instrument.hpp"

namespace tellme {

void quantized_matvec(std::span<const std::int8_t> x, const MatVecOperand& operand, std::span<Accum> out) {
  auto& c = instrument::counters();
  if (const auto* rows = std::get_if<Int8RowsView>(&operand)) {
    require(x.size() == rows->cols, ErrorCode::kShape, "matvec input length != operand cols");
    require(out.size() == rows->rows, ErrorCode::kShape, "matvec output length != operand rows");
    ++c.matvec_int8_calls;
    c.matvec_bytes += rows->rows * rows->cols;
    for (std::size_t r = 0; r < rows->rows; ++r) {
      const std::int8_t* w = rows->data + r * rows->stride;
      Accum acc = 0;
      for (std::size_t i = 0; i < x.size(); ++i) acc += Accum{x[i]} * w[i];
      out[r] = acc;
    }
    return;
  }
  const auto& packed = std::get<PackedOperand>(operand);
  require(packed.weights != nullptr, ErrorCode::kShape, "null packed operand");
  ++c.matvec_ternary_calls;
  c.matvec_bytes += packed.weights->indices.size();
  TlWorkspace ws(*packed.weights);
  ws.matvec(x, *packed.weights, packed.q_block, out);
}

KvCache::KvCache(std::size_t layers, std::size_t heads, std::size_t head_dim, std::size_t capacity)
    : heads_(heads), head_dim_(head_dim), capacity_(capacity), layers_(layers) {
  require(heads >= 1 && head_dim >= 1, ErrorCode::kConfig, "cache heads and head_dim must be >= 1");
  require(capacity >= 1, ErrorCode::kConfig, "cache capacity must be >= 1");
}

void KvCache::append(std::size_t layer, std::span<const std::int8_t> k_row, float k_scale,
                     std::span<const std::int8_t> v_row, float v_scale) {
  require(layer < layers_.size(), ErrorCode::kShape, "layer index out of range");
  const std::size_t width = heads_ * head_dim_;
  require(k_row.size() == width && v_row.size() == width, ErrorCode::kShape, "kv row != heads*head_dim");
  require(std::isfinite(k_scale) && k_scale > 0.0f && std::isfinite(v_scale) && v_scale > 0.0f,
          ErrorCode::kNumeric, "kv scales must be finite and > 0");
  auto& store = layers_[layer];
  require(store.key_scales.size() < capacity_, ErrorCode::kContextOverflow,
          "kv cache full at " + std::to_string(capacity_) + " tokens");
  store.keys.insert(store.keys.end(), k_row.begin(), k_row.end());
  store.values.insert(store.values.end(), v_row.begin(), v_row.end());
  store.key_scales.push_back(k_scale);
  store.value_scales.push_back(v_scale);
}

Int8RowsView KvCache::keys(std::size_t layer, std::size_t head) const {
  const auto& s = layers_.at(layer);
  return {s.keys.data() + head * head_dim_, s.key_scales.size(), head_dim_, heads_ * head_dim_, s.key_scales.data()};
}

Int8RowsView KvCache::values(std::size_t layer, std::size_t head) const {
  const auto& s = layers_.at(layer);
  return {s.values.data() + head * head_dim_, s.value_scales.size(), head_dim_, heads_ * head_dim_,
          s.value_scales.data()};
}

std::span<const std::int8_t> KvCache::key_row(std::size_t layer, std::size_t token) const {
  const std::size_t width = heads_ * head_dim_;
  require(token < length(layer), ErrorCode::kRange, "token beyond cache length");
  return {layers_[layer].keys.data() + token * width, width};
}

std::span<const std::int8_t> KvCache::value_row(std::size_t layer, std::size_t token) const {
  const std::size_t width = heads_ * head_dim_;
  require(token < length(layer), ErrorCode::kRange, "token beyond cache length");
  return {layers_[layer].values.data() + token * width, width};
}

std::vector<double> decode_scores(const QuantTensor& q, const KvCache& cache, std::size_t layer,
                                  double softmax_scale) {
  const std::size_t h = cache.heads();
  const std::size_t d = cache.head_dim();
  require(q.rows == 1 && q.cols == h * d, ErrorCode::kShape, "decode query must be 1 x heads*head_dim");
  const std::size_t m = cache.length(layer);
  require(m >= 1, ErrorCode::kEmptyStream, "decode over an empty cache");
  std::vector<double> scores(h * m);
  std::vector<Accum> dots(m);
  const double q_scale = q.scale(0);
  for (std::size_t hd = 0; hd < h; ++hd) {
    const Int8RowsView keys = cache.keys(layer, hd);
    quantized_matvec(q.row(0).subspan(hd * d, d), keys, dots);
    instrument::counters().kv_bytes_read += m * d;
    for (std::size_t j = 0; j < m; ++j)
      scores[hd * m + j] = static_cast<double>(dots[j]) * q_scale * keys.row_scales[j] * softmax_scale;
  }
  return scores;
}

std::vector<double> softmax_vector(std::span<const double> scores) {
  require(!scores.empty(), ErrorCode::kEmptyStream, "softmax of an empty vector");
  for (double s : scores) require(std::isfinite(s), ErrorCode::kNumeric, "non-finite score");
  const double mx = *std::max_element(scores.begin(), scores.end());
  std::vector<double> p(scores.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp(scores[i] - mx);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

std::vector<double> decode_aggregate(std::span<const double> probs, const KvCache& cache, std::size_t layer) {
  const std::size_t h = cache.heads();
  const std::size_t d = cache.head_dim();
  const std::size_t m = cache.length(layer);
  require(probs.size() == h * m, ErrorCode::kShape, "probability length != heads * cached tokens");
  std::vector<double> out(h * d, 0.0);
  for (std::size_t hd = 0; hd < h; ++hd) {
    const Int8RowsView vals = cache.values(layer, hd);
    instrument::counters().kv_bytes_read += m * d;
    double* o = out.data() + hd * d;
    for (std::size_t j = 0; j < m; ++j) {
      const double w = probs[hd * m + j] * vals.row_scales[j];
      const auto v = vals.row(j);
      for (std::size_t e = 0; e < d; ++e) o[e] += w * v[e];
    }
  }
  return out;
}

std::vector<float> decode_attention(const QuantTensor& q, const KvCache& cache, std::size_t layer,
                                    double softmax_scale) {
  const std::size_t h = cache.heads();
  const std::size_t m = cache.length(layer);
  const auto scores = decode_scores(q, cache, layer, softmax_scale);
  std::vector<double> probs(scores.size());
  for (std::size_t hd = 0; hd < h; ++hd) {
    const auto p = softmax_vector(std::span<const double>(scores.data() + hd * m, m));
    std::copy(p.begin(), p.end(), probs.begin() + static_cast<std::ptrdiff_t>(hd * m));
  }
  const auto o = decode_aggregate(probs, cache, layer);
  return {o.begin(), o.end()};
}

std::size_t LogitVector::argmax() const {
  require(!logits.empty(), ErrorCode::kEmptyStream, "argmax of empty logits");
  return static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

LogitVector lm_head_quantized(const QuantTensor& hidden, const PackedTernaryMatrix& head_weights,
                              std::uint32_t q_block) {
  require(hidden.rows == 1 && hidden.cols == head_weights.rows, ErrorCode::kShape,
          "lm head input must be 1 x hidden");
  hidden.validate();
  std::vector<Accum> acc(head_weights.cols);
  quantized_matvec(hidden.row(0), PackedOperand{&head_weights, q_block}, acc);
  LogitVector out{std::vector<float>(acc.size())};
  dequantize_into(acc, hidden.scale(0), head_weights.scale, out.logits);
  return out;
}

LogitVector lm_head(std::span<const float> hidden, const PackedTernaryMatrix& head_weights, std::uint32_t q_block) {
  require(hidden.size() == head_weights.rows, ErrorCode::kShape, "lm head input length != hidden");
  return lm_head_quantized(absmax_quantize(hidden), head_weights, q_block);
}

}  // namespace tellme
