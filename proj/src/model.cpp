#include "tellme/model.hpp"

#include <chrono>
#include <cmath>
#include <string>

#include "tellme/attention_prefill.hpp"
#include "tellme/error.hpp"
#include "tellme/instrument.hpp"

namespace tellme {

namespace {

void check_packed(const PackedTernaryMatrix& w, std::size_t rows, std::size_t cols, const std::string& name) {
  w.validate();
  require(w.rows == rows && w.cols == cols, ErrorCode::kShape,
          name + " is " + std::to_string(w.rows) + "x" + std::to_string(w.cols) + ", expected " +
              std::to_string(rows) + "x" + std::to_string(cols));
}

std::string layer_name(std::size_t l, const char* leaf) { return "layers." + std::to_string(l) + "." + leaf; }

const NamedTensor& need(const WeightRecord& r, const std::string& name) {
  const NamedTensor* t = r.find(name);
  require(t != nullptr, ErrorCode::kShape, "missing tensor '" + name + "'");
  return *t;
}

PackedTernaryMatrix need_packed(const WeightRecord& r, const std::string& name) {
  const auto* p = std::get_if<PackedTernaryMatrix>(&need(r, name).payload);
  require(p != nullptr, ErrorCode::kShape, "tensor '" + name + "' is not ternary-packed");
  return *p;
}

std::vector<float> need_fp32(const WeightRecord& r, const std::string& name) {
  const auto* p = std::get_if<Fp32Tensor>(&need(r, name).payload);
  require(p != nullptr, ErrorCode::kShape, "tensor '" + name + "' is not fp32");
  return p->data;
}

NormParams need_norm(const WeightRecord& r, const std::string& name, float eps) {
  return NormParams{need_fp32(r, name), eps};
}

Fp32Tensor fp32(std::vector<float> data, std::vector<std::uint64_t> shape) { return {std::move(shape), std::move(data)}; }

}  // namespace

PackedTernaryMatrix derive_tied_head(const ModelConfig& c, const std::vector<float>& embedding) {
  // lm_head[n][v] = embedding[v][n]
  std::vector<float> transposed(embedding.size());
  for (std::size_t v = 0; v < c.vocab; ++v)
    for (std::size_t n = 0; n < c.hidden; ++n) transposed[n * c.vocab + v] = embedding[v * c.hidden + n];
  auto t = ternarize_absmean(transposed, c.hidden, c.vocab);
  return pack_matrix(t.trits, c.group_size, c.tables, t.scale);
}

void ModelWeights::validate() const {
  config.validate();
  const std::size_t n = config.hidden;
  const std::size_t f = config.ffn;
  require(embedding.size() == std::size_t{config.vocab} * n, ErrorCode::kShape, "embedding != vocab x hidden");
  require(layers.size() == config.layers, ErrorCode::kShape, "layer count != config.layers");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& L = layers[l];
    check_packed(L.wq, n, n, layer_name(l, "wq"));
    check_packed(L.wk, n, n, layer_name(l, "wk"));
    check_packed(L.wv, n, n, layer_name(l, "wv"));
    check_packed(L.wo, n, n, layer_name(l, "wo"));
    check_packed(L.w_gate, n, f, layer_name(l, "w_gate"));
    check_packed(L.w_up, n, f, layer_name(l, "w_up"));
    check_packed(L.w_down, f, n, layer_name(l, "w_down"));
    L.attn_norm.validate(n);
    L.ffn_norm.validate(n);
  }
  final_norm.validate(n);
  check_packed(lm_head, n, config.vocab, "lm_head");
}

WeightRecord ModelWeights::to_record() const {
  validate();
  WeightRecord r{config, {}};
  const std::uint64_t n = config.hidden;
  r.tensors.push_back({"embedding", fp32(embedding, {config.vocab, n})});
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& L = layers[l];
    r.tensors.push_back({layer_name(l, "attn_norm"), fp32(L.attn_norm.gamma, {n})});
    r.tensors.push_back({layer_name(l, "wq"), L.wq});
    r.tensors.push_back({layer_name(l, "wk"), L.wk});
    r.tensors.push_back({layer_name(l, "wv"), L.wv});
    r.tensors.push_back({layer_name(l, "wo"), L.wo});
    r.tensors.push_back({layer_name(l, "ffn_norm"), fp32(L.ffn_norm.gamma, {n})});
    r.tensors.push_back({layer_name(l, "w_gate"), L.w_gate});
    r.tensors.push_back({layer_name(l, "w_up"), L.w_up});
    r.tensors.push_back({layer_name(l, "w_down"), L.w_down});
  }
  r.tensors.push_back({"final_norm", fp32(final_norm.gamma, {n})});
  if (!config.tied_embeddings) r.tensors.push_back({"lm_head", lm_head});
  return r;
}

ModelWeights ModelWeights::from_record(const WeightRecord& r) {
  r.config.validate();
  ModelWeights w;
  w.config = r.config;
  const float eps = r.config.norm_eps;
  w.embedding = need_fp32(r, "embedding");
  for (std::size_t l = 0; l < r.config.layers; ++l) {
    LayerWeights L;
    L.attn_norm = need_norm(r, layer_name(l, "attn_norm"), eps);
    L.wq = need_packed(r, layer_name(l, "wq"));
    L.wk = need_packed(r, layer_name(l, "wk"));
    L.wv = need_packed(r, layer_name(l, "wv"));
    L.wo = need_packed(r, layer_name(l, "wo"));
    L.ffn_norm = need_norm(r, layer_name(l, "ffn_norm"), eps);
    L.w_gate = need_packed(r, layer_name(l, "w_gate"));
    L.w_up = need_packed(r, layer_name(l, "w_up"));
    L.w_down = need_packed(r, layer_name(l, "w_down"));
    w.layers.push_back(std::move(L));
  }
  w.final_norm = need_norm(r, "final_norm", eps);
  if (r.config.tied_embeddings) {
    require(w.embedding.size() == std::size_t{r.config.vocab} * r.config.hidden, ErrorCode::kShape,
            "embedding != vocab x hidden");
    w.lm_head = derive_tied_head(r.config, w.embedding);
  } else {
    w.lm_head = need_packed(r, "lm_head");
  }
  w.validate();
  return w;
}

double GenerationResult::decode_tokens_per_second() const {
  double total = 0;
  for (double s : decode_seconds) total += s;
  return total > 0 ? static_cast<double>(decode_seconds.size()) / total : 0.0;
}

Model::Model(ModelWeights weights)
    : weights_((weights.validate(), std::move(weights))),
      rope_(weights_.config.head_dim, weights_.config.rope_theta, weights_.config.capacity),
      softmax_scale_(1.0 / std::sqrt(static_cast<double>(weights_.config.head_dim))) {}

Session Model::new_session() const {
  const auto& c = config();
  return Session{KvCache(c.layers, c.heads, c.head_dim, c.capacity), std::vector<std::uint64_t>(c.layers, 0)};
}

std::vector<float> Model::linear(const QuantTensor& a, const PackedTernaryMatrix& w, Epilogue epilogue) const {
  std::vector<float> out(a.rows * w.cols);
  tl_matmul(a, w, config().q_block, [&](std::size_t m, std::span<const Accum> acc) {
    dequantize_into(acc, a.scale(m), w.scale, std::span<float>(out.data() + m * w.cols, w.cols), epilogue);
  });
  return out;
}

std::vector<float> Model::forward_block(std::span<const float> x, std::size_t tokens, std::size_t layer,
                                        Phase phase, Session& session) const {
  const auto& c = config();
  const std::size_t n = c.hidden;
  require(layer < weights_.layers.size(), ErrorCode::kShape, "layer index out of range");
  require(tokens >= 1 && x.size() == tokens * n, ErrorCode::kShape, "block input must be tokens x hidden");
  require(phase == Phase::kPrefill || tokens == 1, ErrorCode::kShape, "decode processes exactly one token");
  const auto& L = weights_.layers[layer];
  KvCache& cache = session.cache;
  const std::size_t start = cache.length(layer);
  require(phase == Phase::kDecode || start == 0, ErrorCode::kShape, "prefill needs an empty cache");
  require(start + tokens <= c.capacity, ErrorCode::kContextOverflow,
          "sequence of " + std::to_string(start + tokens) + " tokens exceeds capacity " + std::to_string(c.capacity));

  // Attention sub-block.
  const QuantTensor xq = rmsnorm_quant_rows(x, tokens, n, L.attn_norm);
  std::vector<float> q = linear(xq, L.wq);
  std::vector<float> k = linear(xq, L.wk);
  const std::vector<float> v = linear(xq, L.wv);
  std::vector<std::size_t> positions(tokens);
  for (std::size_t t = 0; t < tokens; ++t) positions[t] = start + t;
  rope_apply(q, c.heads, positions, rope_);
  rope_apply(k, c.heads, positions, rope_);
  QuantTensor qq = absmax_quantize_rows(q, tokens, n);
  QuantTensor kq = absmax_quantize_rows(k, tokens, n);
  QuantTensor vq = absmax_quantize_rows(v, tokens, n);

  std::vector<float> attn;
  if (phase == Phase::kPrefill) {
    PrefillBatch batch{tokens, c.heads, c.head_dim, c.parallelism, softmax_scale_, std::move(qq), kq, vq};
    AttentionResult res = reverse_prefill_attention(batch);
    session.kv_loads[layer] += res.trace.count(LoadKind::kKeyValue);
    attn = std::move(res.out);
    for (std::size_t t = 0; t < tokens; ++t) cache.append(layer, kq.row(t), kq.scale(t), vq.row(t), vq.scale(t));
  } else {
    cache.append(layer, kq.row(0), kq.scale(0), vq.row(0), vq.scale(0));
    attn = decode_attention(qq, cache, layer, softmax_scale_);
  }
  const std::vector<float> o = linear(absmax_quantize_rows(attn, tokens, n), L.wo);
  std::vector<float> y(x.begin(), x.end());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += o[i];

  // Feed-forward sub-block; SiLU rides on the gate projection's dequant.
  const QuantTensor yq = rmsnorm_quant_rows(y, tokens, n, L.ffn_norm);
  std::vector<float> gate = linear(yq, L.w_gate, Epilogue::kSilu);
  const std::vector<float> up = linear(yq, L.w_up);
  for (std::size_t i = 0; i < gate.size(); ++i) gate[i] *= up[i];
  const std::vector<float> down = linear(absmax_quantize_rows(gate, tokens, c.ffn), L.w_down);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += down[i];
  return y;
}

std::vector<float> Model::embed(std::span<const TokenId> tokens) const {
  const std::size_t n = config().hidden;
  std::vector<float> x(tokens.size() * n);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    require(tokens[t] < config().vocab, ErrorCode::kRange,
            "token id " + std::to_string(tokens[t]) + " >= vocab " + std::to_string(config().vocab));
    std::copy_n(weights_.embedding.begin() + static_cast<std::ptrdiff_t>(std::size_t{tokens[t]} * n), n,
                x.begin() + static_cast<std::ptrdiff_t>(t * n));
  }
  return x;
}

std::vector<float> Model::prefill_hidden(std::span<const TokenId> prompt, Session& session) const {
  require(!prompt.empty(), ErrorCode::kShape, "empty prompt");
  require(prompt.size() <= config().capacity, ErrorCode::kContextOverflow,
          "prompt of " + std::to_string(prompt.size()) + " tokens exceeds capacity " +
              std::to_string(config().capacity));
  std::vector<float> x = embed(prompt);
  for (std::size_t l = 0; l < weights_.layers.size(); ++l)
    x = forward_block(x, prompt.size(), l, Phase::kPrefill, session);
  return x;
}

std::vector<float> Model::decode_hidden(TokenId token, Session& session) const {
  std::vector<float> x = embed(std::span<const TokenId>(&token, 1));
  for (std::size_t l = 0; l < weights_.layers.size(); ++l) x = forward_block(x, 1, l, Phase::kDecode, session);
  return x;
}

LogitVector Model::logits(std::span<const float> hidden_row) const {
  require(hidden_row.size() == config().hidden, ErrorCode::kShape, "hidden row length != hidden");
  return lm_head_quantized(rmsnorm_quant_fused(hidden_row, weights_.final_norm), weights_.lm_head,
                           config().q_block);
}

TokenId Model::prefill(std::span<const TokenId> prompt, Session& session) const {
  const std::vector<float> h = prefill_hidden(prompt, session);
  const std::size_t n = config().hidden;
  return static_cast<TokenId>(logits(std::span<const float>(h).subspan(h.size() - n, n)).argmax());
}

TokenId Model::decode_step(TokenId token, Session& session) const {
  return static_cast<TokenId>(logits(decode_hidden(token, session)).argmax());
}

GenerationResult Model::generate(const GenerationRequest& request) const {
  using Clock = std::chrono::steady_clock;
  const auto& c = config();
  const std::uint64_t saturations_before = instrument::counters().quant_saturations;
  GenerationResult result;
  Session session = new_session();

  const auto t0 = Clock::now();
  const TokenId first = prefill(request.prompt, session);
  result.prefill_seconds = std::chrono::duration<double>(Clock::now() - t0).count();

  // Total tokens (prompt + generated) never exceed the context capacity.
  const std::size_t budget = c.capacity - request.prompt.size();
  const std::size_t target = std::min(request.max_new_tokens, budget);
  if (target > 0) result.tokens.push_back(first);
  while (result.tokens.size() < target) {
    const auto t = Clock::now();
    result.tokens.push_back(decode_step(result.tokens.back(), session));
    result.decode_seconds.push_back(std::chrono::duration<double>(Clock::now() - t).count());
  }
  result.kv_loads = session.kv_loads;
  result.quant_saturations = instrument::counters().quant_saturations - saturations_before;
  return result;
}

}  // namespace tellme
