#pragma once

#include <cstdint>

#include "tellme/model.hpp"

namespace tellme {

// Small deterministic stand-in checkpoint.
ModelConfig toy_config();

// Random ternary projections (about one third zeros), fp32 embedding and
// norm gains near 1, weight scales of 1/sqrt(2/3 * fan_in) so activations
// stay O(1). The same seed always yields the same bytes.
ModelWeights make_toy_model(std::uint64_t seed, const ModelConfig& config = toy_config());

}  // namespace tellme
