#include "tellme/ternary_pack.hpp"

#include <cmath>
#include <string>

#include "tellme/error.hpp"

namespace tellme {

namespace {

bool is_trit(int v) { return v >= -1 && v <= 1; }

void check_group_size(std::uint32_t g) {
  require(g >= 1 && g <= kMaxGroupSize, ErrorCode::kConfig,
          "group size must be in [1, " + std::to_string(kMaxGroupSize) + "], got " + std::to_string(g));
}

}  // namespace

void TernaryMatrix::validate() const {
  require(values.size() == rows * cols, ErrorCode::kShape, "ternary matrix value count != rows*cols");
  for (Trit v : values) require(is_trit(v), ErrorCode::kInvalidTrit, "value " + std::to_string(int{v}));
}

void PackedTernaryMatrix::validate() const {
  check_group_size(group_size);
  require(tables >= 1, ErrorCode::kConfig, "table count must be >= 1");
  const std::size_t per_block = block_rows();
  require(super_rows == (rows + per_block - 1) / per_block, ErrorCode::kShape,
          "super row count does not cover the inner dimension");
  require(indices.size() == super_rows * cols * tables, ErrorCode::kShape,
          "index count != super_rows*cols*tables");
  const std::uint32_t limit = pow3(group_size);
  for (std::uint8_t idx : indices)
    require(idx < limit, ErrorCode::kRange, "group index " + std::to_string(idx) + " >= 3^G");
  require(std::isfinite(scale) && scale > 0.0f, ErrorCode::kNumeric, "weight scale must be finite and > 0");
}

std::uint32_t encode_group(std::span<const Trit> trits) {
  std::uint32_t index = 0;
  std::uint32_t place = 1;
  for (Trit t : trits) {
    require(is_trit(t), ErrorCode::kInvalidTrit, "value " + std::to_string(int{t}));
    index += static_cast<std::uint32_t>(t + 1) * place;
    place *= 3;
  }
  return index;
}

void decode_group_into(std::uint32_t index, std::span<Trit> out) {
  const auto g = static_cast<std::uint32_t>(out.size());
  require(index < pow3(g), ErrorCode::kRange,
          "index " + std::to_string(index) + " >= 3^" + std::to_string(g));
  for (auto& t : out) {
    t = static_cast<Trit>(static_cast<int>(index % 3) - 1);
    index /= 3;
  }
}

std::vector<Trit> decode_group(std::uint32_t index, std::uint32_t group_size) {
  std::vector<Trit> out(group_size);
  decode_group_into(index, out);
  return out;
}

PackedTernaryMatrix pack_matrix(const TernaryMatrix& w, std::uint32_t group_size,
                                std::uint32_t tables, float scale) {
  check_group_size(group_size);
  require(tables >= 1, ErrorCode::kConfig, "table count must be >= 1");
  w.validate();

  PackedTernaryMatrix p;
  p.group_size = group_size;
  p.tables = tables;
  p.rows = w.rows;
  p.cols = w.cols;
  p.scale = scale;
  const std::size_t per_block = p.block_rows();
  p.super_rows = (w.rows + per_block - 1) / per_block;
  p.indices.resize(p.super_rows * p.cols * tables);

  std::vector<Trit> group(group_size);
  for (std::size_t s = 0; s < p.super_rows; ++s) {
    for (std::size_t k = 0; k < p.cols; ++k) {
      std::uint8_t* idx_vec = p.indices.data() + (s * p.cols + k) * tables;
      for (std::uint32_t t = 0; t < tables; ++t) {
        const std::size_t base = s * per_block + std::size_t{t} * group_size;
        for (std::uint32_t i = 0; i < group_size; ++i) {
          const std::size_t r = base + i;
          group[i] = r < w.rows ? w.at(r, k) : Trit{0};  // zero padding
        }
        idx_vec[t] = static_cast<std::uint8_t>(encode_group(group));
      }
    }
  }
  return p;
}

TernaryMatrix unpack_matrix(const PackedTernaryMatrix& p, std::size_t original_rows) {
  require(original_rows <= p.padded_rows(), ErrorCode::kShape,
          "original rows " + std::to_string(original_rows) + " exceed padded capacity " +
              std::to_string(p.padded_rows()));
  require(p.indices.size() == p.super_rows * p.cols * p.tables, ErrorCode::kShape,
          "index count != super_rows*cols*tables");
  TernaryMatrix w(original_rows, p.cols);
  std::vector<Trit> group(p.group_size);
  const std::size_t per_block = p.block_rows();
  for (std::size_t s = 0; s < p.super_rows; ++s) {
    for (std::size_t k = 0; k < p.cols; ++k) {
      auto idx_vec = p.index_vector(s, k);
      for (std::uint32_t t = 0; t < p.tables; ++t) {
        decode_group_into(idx_vec[t], group);
        const std::size_t base = s * per_block + std::size_t{t} * p.group_size;
        for (std::uint32_t i = 0; i < p.group_size; ++i) {
          if (base + i < original_rows) w.at(base + i, k) = group[i];
        }
      }
    }
  }
  return w;
}

TernarizedMatrix ternarize_absmean(std::span<const float> w, std::size_t rows, std::size_t cols) {
  require(w.size() == rows * cols, ErrorCode::kShape, "weight count != rows*cols");
  double sum = 0.0;
  for (float v : w) {
    require(std::isfinite(v), ErrorCode::kNumeric, "non-finite weight");
    sum += std::fabs(v);
  }
  TernarizedMatrix out{TernaryMatrix(rows, cols), 1.0f};
  if (w.empty() || sum == 0.0) return out;
  const double scale = sum / static_cast<double>(w.size());
  out.scale = static_cast<float>(scale);
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double q = std::nearbyint(w[i] / scale);
    out.trits.values[i] = static_cast<Trit>(q > 1.0 ? 1 : (q < -1.0 ? -1 : q));
  }
  return out;
}

}  // namespace tellme
