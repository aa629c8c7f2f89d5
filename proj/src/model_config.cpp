#include "tellme/model_config.hpp"

#include <cmath>

#include "tellme/error.hpp"
#include "tellme/ternary_pack.hpp"

namespace tellme {

void ModelConfig::validate() const {
  auto positive = [](std::uint32_t v, const char* name) {
    require(v >= 1, ErrorCode::kConfig, std::string(name) + " must be >= 1");
  };
  positive(hidden, "hidden");
  positive(layers, "layers");
  positive(heads, "heads");
  positive(head_dim, "head_dim");
  positive(ffn, "ffn");
  positive(vocab, "vocab");
  positive(capacity, "capacity");
  positive(tables, "tables");
  positive(q_block, "q_block");
  positive(parallelism, "parallelism");
  require(group_size >= 1 && group_size <= kMaxGroupSize, ErrorCode::kConfig, "group_size out of range");
  require(hidden == heads * head_dim, ErrorCode::kConfig, "hidden != heads * head_dim");
  require(head_dim % 2 == 0, ErrorCode::kConfig, "head_dim must be even for rotary embedding");
  require(std::isfinite(rope_theta) && rope_theta > 0.0f, ErrorCode::kConfig, "rope_theta must be > 0");
  require(std::isfinite(norm_eps) && norm_eps > 0.0f, ErrorCode::kConfig, "norm_eps must be > 0");
}

}  // namespace tellme
