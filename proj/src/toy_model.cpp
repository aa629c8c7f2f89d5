#include "tellme/toy_model.hpp"

#include <cmath>
#include <random>

namespace tellme {

namespace {

// Portable draws straight from the engine; std distributions are not
// specified bit-for-bit across standard libraries.
class Draw {
 public:
  explicit Draw(std::uint64_t seed) : rng_(seed) {}
  double uniform() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }  // [0, 1)
  float symmetric(float bound) { return static_cast<float>((2.0 * uniform() - 1.0) * bound); }
  Trit trit() { return static_cast<Trit>(static_cast<int>(rng_() % 3) - 1); }

 private:
  std::mt19937_64 rng_;
};

PackedTernaryMatrix random_ternary(Draw& d, const ModelConfig& c, std::size_t rows, std::size_t cols) {
  TernaryMatrix w(rows, cols);
  for (auto& v : w.values) v = d.trit();
  const float scale = static_cast<float>(1.0 / std::sqrt(2.0 / 3.0 * static_cast<double>(rows)));
  return pack_matrix(w, c.group_size, c.tables, scale);
}

NormParams random_norm(Draw& d, const ModelConfig& c) {
  NormParams p{std::vector<float>(c.hidden), c.norm_eps};
  for (auto& g : p.gamma) g = 1.0f + d.symmetric(0.1f);
  return p;
}

}  // namespace

ModelConfig toy_config() {
  ModelConfig c;
  c.hidden = 64;
  c.layers = 2;
  c.heads = 4;
  c.head_dim = 16;
  c.ffn = 128;
  c.vocab = 256;
  c.capacity = 1024;
  c.group_size = 3;
  c.tables = 8;
  c.q_block = 16;
  c.parallelism = 4;
  return c;
}

ModelWeights make_toy_model(std::uint64_t seed, const ModelConfig& config) {
  config.validate();
  Draw d(seed);
  ModelWeights w;
  w.config = config;
  w.embedding.resize(std::size_t{config.vocab} * config.hidden);
  for (auto& e : w.embedding) e = d.symmetric(1.0f);
  for (std::size_t l = 0; l < config.layers; ++l) {
    LayerWeights L;
    L.attn_norm = random_norm(d, config);
    L.wq = random_ternary(d, config, config.hidden, config.hidden);
    L.wk = random_ternary(d, config, config.hidden, config.hidden);
    L.wv = random_ternary(d, config, config.hidden, config.hidden);
    L.wo = random_ternary(d, config, config.hidden, config.hidden);
    L.ffn_norm = random_norm(d, config);
    L.w_gate = random_ternary(d, config, config.hidden, config.ffn);
    L.w_up = random_ternary(d, config, config.hidden, config.ffn);
    L.w_down = random_ternary(d, config, config.ffn, config.hidden);
    w.layers.push_back(std::move(L));
  }
  w.final_norm = random_norm(d, config);
  w.lm_head = config.tied_embeddings ? derive_tied_head(config, w.embedding)
                                     : random_ternary(d, config, config.hidden, config.vocab);
  return w;
}

}  // namespace tellme
