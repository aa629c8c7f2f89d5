#pragma once

// End-to-end ternary transformer: embedding lookup, L blocks of
// (RMSNorm -> q/k/v -> RoPE -> attention -> o) and
// (RMSNorm -> gate/up -> SiLU(gate) * up -> down), final norm, LM head.
// Prefill runs the reverse-scheduled fused attention; decode runs the
// decoupled cache attention. Sampling is greedy.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "tellme/attention_decode.hpp"
#include "tellme/model_config.hpp"
#include "tellme/sched_analyzer.hpp"
#include "tellme/special_fn.hpp"
#include "tellme/ternary_pack.hpp"
#include "tellme/weight_file.hpp"

namespace tellme {

using TokenId = std::uint32_t;

struct LayerWeights {
  PackedTernaryMatrix wq, wk, wv, wo;
  PackedTernaryMatrix w_gate, w_up, w_down;
  NormParams attn_norm;
  NormParams ffn_norm;
};

struct ModelWeights {
  ModelConfig config;
  std::vector<float> embedding;  // vocab x hidden, fp32
  std::vector<LayerWeights> layers;
  NormParams final_norm;
  PackedTernaryMatrix lm_head;  // hidden x vocab

  // Throws kConfig / kShape.
  void validate() const;

  WeightRecord to_record() const;
  // Tied checkpoints carry no lm_head tensor; it is derived from the
  // embedding by absmean ternarization.
  static ModelWeights from_record(const WeightRecord& record);
};

// Absmean-ternarized transpose of the vocab x hidden embedding.
PackedTernaryMatrix derive_tied_head(const ModelConfig& config, const std::vector<float>& embedding);

// Per-request mutable state: the KV cache plus diagnostics.
struct Session {
  KvCache cache;
  std::vector<std::uint64_t> kv_loads;  // reverse-schedule kv loads per layer

  std::size_t position() const { return cache.length(0); }
};

struct GenerationRequest {
  std::vector<TokenId> prompt;
  std::size_t max_new_tokens = 0;
};

struct GenerationResult {
  std::vector<TokenId> tokens;
  double prefill_seconds = 0;
  std::vector<double> decode_seconds;
  std::vector<std::uint64_t> kv_loads;
  std::uint64_t quant_saturations = 0;

  double decode_tokens_per_second() const;
};

class Model {
 public:
  explicit Model(ModelWeights weights);

  const ModelConfig& config() const { return weights_.config; }
  const ModelWeights& weights() const { return weights_; }

  Session new_session() const;

  // x: tokens x hidden. Prefill requires an empty cache for this layer and
  // appends every token's k/v; decode requires exactly one token.
  std::vector<float> forward_block(std::span<const float> x, std::size_t tokens, std::size_t layer, Phase phase,
                                   Session& session) const;

  std::vector<float> embed(std::span<const TokenId> tokens) const;
  // Hidden states after the last block (before the final norm).
  std::vector<float> prefill_hidden(std::span<const TokenId> prompt, Session& session) const;
  std::vector<float> decode_hidden(TokenId token, Session& session) const;
  LogitVector logits(std::span<const float> hidden_row) const;

  // Throws kContextOverflow when the prompt exceeds the capacity.
  TokenId prefill(std::span<const TokenId> prompt, Session& session) const;
  TokenId decode_step(TokenId token, Session& session) const;
  GenerationResult generate(const GenerationRequest& request) const;

 private:
  std::vector<float> linear(const QuantTensor& a, const PackedTernaryMatrix& w,
                            Epilogue epilogue = Epilogue::kNone) const;

  ModelWeights weights_;
  RopeTable rope_;
  double softmax_scale_;
};

}  // namespace tellme
