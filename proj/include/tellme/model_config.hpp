#pragma once

#include <cstdint>

namespace tellme {

struct ModelConfig {
  std::uint32_t hidden = 1536;  // N == heads * head_dim
  std::uint32_t layers = 1;
  std::uint32_t heads = 1;
  std::uint32_t head_dim = 1536;
  std::uint32_t ffn = 1;
  std::uint32_t vocab = 32000;
  std::uint32_t capacity = 1024;
  std::uint32_t group_size = 3;
  std::uint32_t tables = 32;
  std::uint32_t q_block = 16;
  std::uint32_t parallelism = 4;
  float rope_theta = 10000.0f;
  float norm_eps = 1e-5f;
  bool tied_embeddings = false;

  // Throws Error(kConfig) naming the first violated invariant.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

}  // namespace tellme
