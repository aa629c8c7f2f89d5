#pragma once

// Fused causal attention for the prefill phase. Scores are folded one key at
// a time into a running (max, denominator, weighted sum) state, so no score
// matrix is ever materialized.

#include <cstddef>
#include <span>
#include <vector>

#include "tellme/quant_tensor.hpp"
#include "tellme/schedule_trace.hpp"

namespace tellme {

// Online-softmax state for one (head, query) slot.
struct FusionState {
  double running_max = 0.0;
  double denom = 0.0;
  std::vector<double> acc;
  std::size_t steps = 0;

  explicit FusionState(std::size_t dim = 0) : acc(dim, 0.0) {}
};

// Slot-level recurrence shared by every attention path. The first step
// seeds m = s, l = 1, o = v; later steps rescale by exp(m_old - m_new).
void fold_score(double& running_max, double& denom, std::span<double> acc, std::size_t steps, double score,
                std::span<const double> value);

void online_step(FusionState& state, double score, std::span<const double> value);
// o / l. Throws kEmptyStream if no step was taken.
std::vector<double> finalize(const FusionState& state);

// q, k, v: tokens x (heads*head_dim) int8 with per-token (or per-tensor)
// scales; softmax_scale is usually 1/sqrt(head_dim).
struct PrefillBatch {
  std::size_t tokens = 0;
  std::size_t heads = 0;
  std::size_t head_dim = 0;
  std::size_t parallelism = 4;
  double softmax_scale = 1.0;
  QuantTensor q;
  QuantTensor k;
  QuantTensor v;

  void validate() const;
};

// Buffer inventory of the reverse engine, recorded for the resident-state
// bound: p query slots, one k and one v block, h*p scalars of s, m and l.
struct ResidencyStats {
  std::size_t query_slots = 0;
  std::size_t peak_live_queries = 0;
  std::size_t key_blocks = 0;
  std::size_t value_blocks = 0;
  std::size_t score_scalars = 0;
  std::size_t max_scalars = 0;
  std::size_t denom_scalars = 0;
};

struct AttentionResult {
  std::vector<float> out;  // tokens x (heads*head_dim)
  LoadTrace trace;
  ResidencyStats residency;
};

// Scores s_ij = (q_i . k_j) * q_scale_i * k_scale_j * softmax_scale.
double attention_score(const PrefillBatch& b, std::size_t head, std::size_t qi, std::size_t kj);

// Query batches of size p from the top token downward; each batch streams
// keys/values 0..max query of the batch and then evicts its own p kv tokens.
// Masked (key > query) cells are never evaluated.
AttentionResult reverse_prefill_attention(const PrefillBatch& batch);

// Materialized scores, causal mask, row softmax, times V (fp64).
std::vector<double> naive_causal_attention(const PrefillBatch& batch);

// Diagonal q-reuse schedule over the full N x N grid (no mask skipping);
// masked cells are computed and discarded.
AttentionResult dense_schedule_attention(const PrefillBatch& batch);

}  // namespace tellme
