#include "tellme/special_fn.hpp"

#include <algorithm>
#include <string>

#include "tellme/error.hpp"
#include "tellme/instrument.hpp"

namespace tellme {

namespace {

// Visits x in 32-element packets, counting every element read.
template <typename Fn>
void for_each_packet(std::span<const float> x, Fn&& fn) {
  auto& reads = instrument::counters().element_reads;
  for (std::size_t base = 0; base < x.size(); base += kPacketElems) {
    const std::size_t len = std::min(kPacketElems, x.size() - base);
    reads += len;
    fn(base, x.subspan(base, len));
  }
}

void check_finite(std::span<const float> x) {
  for (float v : x) require(std::isfinite(v), ErrorCode::kNumeric, "non-finite input");
}

float rms_from_sum(double sum_sq, std::size_t n, float eps) {
  return static_cast<float>(std::sqrt(sum_sq / static_cast<double>(n) + static_cast<double>(eps)));
}

double sum_of_squares(std::span<const float> x) {
  double s = 0.0;
  for (float v : x) s += static_cast<double>(v) * v;
  return s;
}

void quantize_into(std::span<const float> x, std::span<std::int8_t> out, float& scale) {
  float amax = 0.0f;
  for_each_packet(x, [&](std::size_t, std::span<const float> p) {
    for (float v : p) {
      require(std::isfinite(v), ErrorCode::kNumeric, "non-finite input");
      amax = std::max(amax, std::fabs(v));
    }
  });
  if (amax == 0.0f) {
    std::fill(out.begin(), out.end(), std::int8_t{0});
    scale = 1.0f;
    return;
  }
  for_each_packet(x, [&](std::size_t base, std::span<const float> p) {
    for (std::size_t i = 0; i < p.size(); ++i) out[base + i] = quantize_value(p[i], amax);
  });
  scale = amax / static_cast<float>(kQuantMax);
}

void fused_row(std::span<const float> x, const NormParams& params, std::span<std::int8_t> out, float& scale) {
  const float* gamma = params.gamma.data();
  double sum_sq = 0.0;
  float max_scaled = 0.0f;
  for_each_packet(x, [&](std::size_t base, std::span<const float> p) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      require(std::isfinite(p[i]), ErrorCode::kNumeric, "non-finite input");
      sum_sq += static_cast<double>(p[i]) * p[i];
      max_scaled = std::max(max_scaled, std::fabs(p[i] * gamma[base + i]));
    }
  });
  const float rms = rms_from_sum(sum_sq, x.size(), params.epsilon);
  // Division by a positive scalar is monotone, so max|x*g|/rms equals
  // max|x*g/rms| exactly.
  const float amax = max_scaled / rms;
  if (amax == 0.0f) {
    std::fill(out.begin(), out.end(), std::int8_t{0});
    scale = 1.0f;
    return;
  }
  for_each_packet(x, [&](std::size_t base, std::span<const float> p) {
    for (std::size_t i = 0; i < p.size(); ++i) out[base + i] = quantize_value((p[i] * gamma[base + i]) / rms, amax);
  });
  scale = amax / static_cast<float>(kQuantMax);
}

}  // namespace

void NormParams::validate(std::size_t hidden) const {
  require(gamma.size() == hidden, ErrorCode::kShape,
          "gamma length " + std::to_string(gamma.size()) + " != hidden " + std::to_string(hidden));
  require(std::isfinite(epsilon) && epsilon > 0.0f, ErrorCode::kConfig, "epsilon must be > 0");
}

std::int8_t quantize_value(float x, float amax) {
  const double q = std::nearbyint(static_cast<double>(x) * kQuantMax / static_cast<double>(amax));
  if (q > kQuantMax || q < -kQuantMax) {
    ++instrument::counters().quant_saturations;
    return static_cast<std::int8_t>(q > 0 ? kQuantMax : -kQuantMax);
  }
  return static_cast<std::int8_t>(q);
}

QuantTensor absmax_quantize(std::span<const float> x) {
  QuantTensor q(1, x.size());
  quantize_into(x, q.data, q.scales[0]);
  return q;
}

QuantTensor absmax_quantize_rows(std::span<const float> x, std::size_t rows, std::size_t cols) {
  require(x.size() == rows * cols, ErrorCode::kShape, "matrix data != rows*cols");
  QuantTensor q(rows, cols);
  q.scales.assign(rows, 1.0f);
  for (std::size_t r = 0; r < rows; ++r) quantize_into(x.subspan(r * cols, cols), q.row(r), q.scales[r]);
  return q;
}

std::vector<float> dequantize(const QuantTensor& q) {
  std::vector<float> out(q.data.size());
  for (std::size_t r = 0; r < q.rows; ++r)
    for (std::size_t c = 0; c < q.cols; ++c) out[r * q.cols + c] = q.data[r * q.cols + c] * q.scale(r);
  return out;
}

std::vector<float> rmsnorm(std::span<const float> x, const NormParams& params) {
  require(!x.empty(), ErrorCode::kShape, "rmsnorm of an empty vector");
  params.validate(x.size());
  check_finite(x);
  const float rms = rms_from_sum(sum_of_squares(x), x.size(), params.epsilon);
  std::vector<float> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = (x[i] * params.gamma[i]) / rms;
  return y;
}

QuantTensor rmsnorm_quant_fused(std::span<const float> x, const NormParams& params) {
  require(!x.empty(), ErrorCode::kShape, "rmsnorm of an empty vector");
  params.validate(x.size());
  QuantTensor q(1, x.size());
  fused_row(x, params, q.data, q.scales[0]);
  return q;
}

QuantTensor rmsnorm_quant_rows(std::span<const float> x, std::size_t rows, std::size_t cols,
                               const NormParams& params) {
  require(cols >= 1 && x.size() == rows * cols, ErrorCode::kShape, "matrix data != rows*cols");
  params.validate(cols);
  QuantTensor q(rows, cols);
  q.scales.assign(rows, 1.0f);
  for (std::size_t r = 0; r < rows; ++r) fused_row(x.subspan(r * cols, cols), params, q.row(r), q.scales[r]);
  return q;
}

std::vector<float> silu_vector(std::span<const float> x) {
  std::vector<float> y(x.size());
  std::transform(x.begin(), x.end(), y.begin(), silu);
  return y;
}

RopeTable::RopeTable(std::size_t head_dim, double theta, std::size_t capacity)
    : head_dim_(head_dim), theta_(theta), capacity_(capacity) {
  require(head_dim >= 2 && head_dim % 2 == 0, ErrorCode::kConfig, "rotary head dim must be even");
  require(std::isfinite(theta) && theta > 0.0, ErrorCode::kConfig, "rotary base must be > 0");
  const std::size_t pairs = head_dim / 2;
  cos_.resize(capacity * pairs);
  sin_.resize(capacity * pairs);
  for (std::size_t i = 0; i < pairs; ++i) {
    const double freq = std::pow(theta, -2.0 * static_cast<double>(i) / static_cast<double>(head_dim));
    for (std::size_t pos = 0; pos < capacity; ++pos) {
      const double angle = static_cast<double>(pos) * freq;
      cos_[pos * pairs + i] = std::cos(angle);
      sin_[pos * pairs + i] = std::sin(angle);
    }
  }
}

void rope_apply(std::span<float> x, std::size_t heads, std::span<const std::size_t> positions,
                const RopeTable& table) {
  const std::size_t d = table.head_dim();
  const std::size_t row = heads * d;
  require(x.size() == positions.size() * row, ErrorCode::kShape, "rotary input != tokens*heads*head_dim");
  for (std::size_t t = 0; t < positions.size(); ++t) {
    const std::size_t pos = positions[t];
    require(pos < table.capacity(), ErrorCode::kContextOverflow, "position beyond rotary table");
    for (std::size_t h = 0; h < heads; ++h) {
      float* v = x.data() + t * row + h * d;
      for (std::size_t i = 0; i < d / 2; ++i) {
        const double c = table.cos_at(pos, i);
        const double s = table.sin_at(pos, i);
        const double a = v[2 * i];
        const double b = v[2 * i + 1];
        v[2 * i] = static_cast<float>(a * c - b * s);
        v[2 * i + 1] = static_cast<float>(a * s + b * c);
      }
    }
  }
}

}  // namespace tellme
