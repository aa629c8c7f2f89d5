#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "tellme/quant_tensor.hpp"
#include "tellme/ternary_pack.hpp"

namespace testutil {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::size_t index(std::size_t lo, std::size_t hi) {  // inclusive
    return lo + static_cast<std::size_t>(eng_() % (hi - lo + 1));
  }
  int integer(int lo, int hi) { return lo + static_cast<int>(eng_() % static_cast<std::uint64_t>(hi - lo + 1)); }
  double uniform(double lo, double hi) {
    return lo + (hi - lo) * (static_cast<double>(eng_() >> 11) * 0x1.0p-53);
  }
  tellme::Trit trit() { return static_cast<tellme::Trit>(integer(-1, 1)); }
  std::mt19937_64& engine() { return eng_; }

 private:
  std::mt19937_64 eng_;
};

inline tellme::TernaryMatrix random_ternary(Rng& rng, std::size_t rows, std::size_t cols) {
  tellme::TernaryMatrix w(rows, cols);
  for (auto& v : w.values) v = rng.trit();
  return w;
}

inline tellme::QuantTensor random_activations(Rng& rng, std::size_t rows, std::size_t cols, int bound = 127,
                                              float scale = 0.05f) {
  tellme::QuantTensor a(rows, cols, scale);
  for (auto& v : a.data) v = static_cast<std::int8_t>(rng.integer(-bound, bound));
  return a;
}

inline std::vector<float> random_floats(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
  return v;
}

// Per-row quantized tensor with random scales.
inline tellme::QuantTensor random_rows(Rng& rng, std::size_t rows, std::size_t cols) {
  tellme::QuantTensor t = random_activations(rng, rows, cols);
  t.scales.resize(rows);
  for (auto& s : t.scales) s = static_cast<float>(rng.uniform(0.005, 0.03));
  return t;
}

}  // namespace testutil
