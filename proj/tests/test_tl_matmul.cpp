#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "support/alloc_counter.hpp"
#include "support/test_util.hpp"
#include "tellme/error.hpp"
#include "tellme/tl_matmul.hpp"

using namespace tellme;

namespace {

// Independent oracle: plain integer dot products over the trit matrix.
AccumMatrix oracle(const QuantTensor& a, const TernaryMatrix& w) {
  AccumMatrix r{a.rows, w.cols, std::vector<Accum>(a.rows * w.cols, 0)};
  for (std::size_t m = 0; m < a.rows; ++m)
    for (std::size_t k = 0; k < w.cols; ++k) {
      std::int64_t s = 0;
      for (std::size_t n = 0; n < w.rows; ++n) s += std::int64_t{a.data[m * a.cols + n]} * w.at(n, k);
      r.data[m * w.cols + k] = static_cast<Accum>(s);
    }
  return r;
}

}  // namespace

TEST_CASE("table setup examples") {
  SUBCASE("G=2 T=1 block [3, 5]") {
    const std::vector<std::int8_t> blk{3, 5};
    const auto t = table_setup(blk, 2, 1);
    REQUIRE(t.entries.size() == 9);
    CHECK(t.at(0, 0) == -8);
    CHECK(t.at(0, 4) == 0);
    CHECK(t.at(0, 8) == 8);
    CHECK(t.at(0, 2) == -2);  // trits (+1, -1): 3 - 5
    CHECK(t.at(0, 1) == -5);  // (0, -1)
    CHECK(t.at(0, 5) == 3);   // (+1, 0)
  }
  SUBCASE("extremes stay within int16") {
    const std::vector<std::int8_t> blk(5, 127);
    const auto t = table_setup(blk, 5, 1);
    CHECK(t.at(0, 242) == 635);
    CHECK(t.at(0, 0) == -635);
  }
  SUBCASE("wrong block length") {
    const std::vector<std::int8_t> blk{1, 2, 3};
    CHECK_THROWS_AS(table_setup(blk, 2, 1), Error);
  }
}

TEST_CASE("property: table entry equals the trit-weighted group sum") {
  testutil::Rng rng(9);
  for (std::uint32_t g = 1; g <= 5; ++g) {
    const std::uint32_t tables = 3;
    std::vector<std::int8_t> blk(g * tables);
    for (auto& v : blk) v = static_cast<std::int8_t>(rng.integer(-127, 127));
    const auto tab = table_setup(blk, g, tables);
    for (std::uint32_t t = 0; t < tables; ++t)
      for (std::uint32_t i = 0; i < pow3(g); ++i) {
        const auto trits = decode_group(i, g);
        int s = 0;
        for (std::uint32_t j = 0; j < g; ++j) s += trits[j] * blk[t * g + j];
        CHECK(tab.at(t, i) == s);
        CHECK(tab.at(t, pow3(g) - 1 - i) == -s);  // mirror
      }
  }
}

TEST_CASE("tl_matmul examples") {
  SUBCASE("M=1 N=3 K=1") {
    QuantTensor a(1, 3);
    a.data = {10, 20, 30};
    TernaryMatrix w(3, 1);
    w.values = {1, -1, 1};
    CHECK(tl_matmul(a, pack_matrix(w, 3, 1)).data == std::vector<Accum>{20});
  }
  SUBCASE("all-zero weights") {
    testutil::Rng rng(1);
    const auto a = testutil::random_activations(rng, 4, 96);
    const auto r = tl_matmul(a, pack_matrix(TernaryMatrix(96, 16), 3, 32));
    for (auto v : r.data) CHECK(v == 0);
  }
  SUBCASE("all -1 weights against all 127 activations") {
    QuantTensor a(1, 1536);
    std::fill(a.data.begin(), a.data.end(), std::int8_t{127});
    TernaryMatrix w(1536, 2);
    std::fill(w.values.begin(), w.values.end(), Trit{-1});
    const auto r = tl_matmul(a, pack_matrix(w, 3, 32));
    CHECK(r.data == std::vector<Accum>{-195072, -195072});
  }
  SUBCASE("shape mismatch") {
    QuantTensor a(1, 4);
    CHECK_THROWS_AS(tl_matmul(a, pack_matrix(TernaryMatrix(5, 1), 3, 1)), Error);
  }
  SUBCASE("activation -128 rejected") {
    QuantTensor a(1, 3);
    a.data[1] = -128;
    CHECK_THROWS_AS(tl_matmul(a, pack_matrix(TernaryMatrix(3, 1), 3, 1)), Error);
  }
}

TEST_CASE("property: tl, naive and partial-table kernels agree with the oracle") {
  testutil::Rng rng(2024);
  for (int trial = 0; trial < 120; ++trial) {
    const std::size_t m = rng.index(1, 8);
    const std::size_t n = rng.index(1, 200);
    const std::size_t k = rng.index(1, 40);
    const auto g = static_cast<std::uint32_t>(rng.index(1, 5));
    const auto t = static_cast<std::uint32_t>(rng.index(1, 8));
    const auto q = static_cast<std::uint32_t>(rng.index(1, 20));
    const auto a = testutil::random_activations(rng, m, n);
    const auto w = testutil::random_ternary(rng, n, k);
    const auto packed = pack_matrix(w, g, t);
    const auto want = oracle(a, w);
    CHECK(tl_matmul(a, packed, q) == want);
    CHECK(naive_ternary_matmul(a, w) == want);
    CHECK(partial_table_matmul(a, packed) == want);
  }
}

TEST_CASE("property: linearity in the activations") {
  testutil::Rng rng(31);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = rng.index(1, 120), k = rng.index(1, 12);
    auto a1 = testutil::random_activations(rng, 2, n, 60);
    auto a2 = testutil::random_activations(rng, 2, n, 60);
    QuantTensor sum(2, n);
    for (std::size_t i = 0; i < sum.data.size(); ++i)
      sum.data[i] = static_cast<std::int8_t>(a1.data[i] + a2.data[i]);
    const auto w = pack_matrix(testutil::random_ternary(rng, n, k), 3, 4);
    const auto r1 = tl_matmul(a1, w), r2 = tl_matmul(a2, w), rs = tl_matmul(sum, w);
    for (std::size_t i = 0; i < rs.data.size(); ++i) CHECK(rs.data[i] == r1.data[i] + r2.data[i]);
  }
}

TEST_CASE("half-table slots") {
  // G=2: 9 entries, mid = 4. Slots cover indices 4..8.
  CHECK(half_table_slot(4, 2).slot == 0);
  CHECK_FALSE(half_table_slot(4, 2).negate);
  CHECK(half_table_slot(8, 2).slot == 4);
  CHECK_FALSE(half_table_slot(8, 2).negate);
  CHECK(half_table_slot(0, 2).slot == 4);
  CHECK(half_table_slot(0, 2).negate);
  CHECK(half_table_slot(3, 2).slot == 1);
  CHECK(half_table_slot(3, 2).negate);
}

TEST_CASE("streaming: rows are handed out in order and the workspace does not scale with M") {
  testutil::Rng rng(4);
  const auto w = pack_matrix(testutil::random_ternary(rng, 96, 24), 3, 4);
  TlWorkspace ws(w);
  const auto bytes = ws.scratch_bytes();
  CHECK(bytes < 96 + 4 * 27 * sizeof(TableEntry) + 24 * sizeof(Accum) + 64);

  const auto a = testutil::random_activations(rng, 64, 96);
  std::size_t expected_row = 0;
  tl_matmul(a, w, 16, [&](std::size_t row, std::span<const Accum> acc) {
    CHECK(row == expected_row++);
    CHECK(acc.size() == 24);
  });
  CHECK(expected_row == 64);

  // Allocation count of a streamed call is independent of M.
  std::size_t allocs_small = 0, allocs_large = 0;
  const auto a_small = testutil::random_activations(rng, 2, 96);
  const RowSink sink = [](std::size_t, std::span<const Accum>) {};
  {
    testutil::AllocationScope s;
    tl_matmul(a_small, w, 16, sink);
    allocs_small = s.count();
  }
  {
    testutil::AllocationScope s;
    tl_matmul(a, w, 16, sink);
    allocs_large = s.count();
  }
  CHECK(allocs_small == allocs_large);
}

TEST_CASE("matvec reuses its workspace without allocating") {
  testutil::Rng rng(8);
  const auto w = pack_matrix(testutil::random_ternary(rng, 64, 16), 3, 8);
  TlWorkspace ws(w);
  const auto a = testutil::random_activations(rng, 1, 64);
  std::vector<Accum> out(16);
  std::size_t allocs = 0;
  {
    testutil::AllocationScope s;
    ws.matvec(a.row(0), w, 16, out);
    allocs = s.count();
  }
  CHECK(allocs == 0);
  CHECK(std::vector<Accum>(out) == tl_matmul(a, w).data);
}

TEST_CASE("dequantize and SiLU epilogue") {
  const std::vector<Accum> acc{100, -200, 0};
  auto y = dequantize_output(acc, 0.5f, 0.1f);
  CHECK(y[0] == doctest::Approx(5.0));
  CHECK(y[1] == doctest::Approx(-10.0));
  std::vector<float> out(3);
  dequantize_into(acc, 0.5f, 0.1f, out, Epilogue::kSilu);
  CHECK(out[0] == doctest::Approx(5.0 / (1.0 + std::exp(-5.0))).epsilon(1e-6));
  CHECK(out[2] == 0.0f);
  CHECK_THROWS_AS(dequantize_into(acc, 0.0f, 1.0f, out), Error);
  CHECK_THROWS_AS(dequantize_into(acc, std::numeric_limits<float>::quiet_NaN(), 1.0f, out), Error);
}

TEST_CASE("more table and kernel examples") {
  const auto t3 = table_setup(std::vector<std::int8_t>{1, 0, 0}, 3, 1);
  CHECK(t3.at(0, 14) == 1);
  CHECK(t3.at(0, 13) == 0);

  QuantTensor a(1, 3);
  a.data = {1, 2, 3};
  TernaryMatrix ones(3, 1);
  ones.values = {1, 1, 1};
  CHECK(tl_matmul(a, pack_matrix(ones, 3, 1)).data == std::vector<Accum>{6});

  SUBCASE("naive kernel: identity column and single -1") {
    testutil::Rng rng(21);
    const auto x = testutil::random_activations(rng, 3, 7);
    TernaryMatrix w(7, 2);
    w.at(4, 0) = 1;
    w.at(2, 1) = -1;
    const auto r = naive_ternary_matmul(x, w);
    for (std::size_t m = 0; m < 3; ++m) {
      CHECK(r.data[m * 2] == x.data[m * 7 + 4]);
      CHECK(r.data[m * 2 + 1] == -x.data[m * 7 + 2]);
    }
  }
  SUBCASE("mirror property by enumeration for G=3") {
    const auto t = table_setup(std::vector<std::int8_t>{7, -3, 11}, 3, 1);
    for (std::uint32_t i = 0; i < 27; ++i) CHECK(t.at(0, 26 - i) == -t.at(0, i));
  }
}

TEST_CASE("dequantize examples") {
  CHECK(dequantize_output(std::vector<Accum>{6}, 0.5f, 2.0f) == std::vector<float>{6.0f});
  for (float v : dequantize_output(std::vector<Accum>(5, 0), 0.3f, 7.0f)) CHECK(v == 0.0f);
}

TEST_CASE("property: quantize -> matmul -> dequantize tracks the real product") {
  testutil::Rng rng(55);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = rng.index(1, 96), k = rng.index(1, 32);
    std::vector<float> x(n);
    for (auto& v : x) v = static_cast<float>(rng.uniform(-3.0, 3.0));
    const auto w = testutil::random_ternary(rng, n, k);
    float amax = 0;
    for (float v : x) amax = std::max(amax, std::fabs(v));
    QuantTensor q(1, n, amax > 0 ? amax / 127.0f : 1.0f);
    for (std::size_t i = 0; i < n; ++i)
      q.data[i] = static_cast<std::int8_t>(amax > 0 ? std::nearbyint(x[i] * 127.0 / amax) : 0);
    const float w_scale = 0.37f;
    const auto y = dequantize_output(tl_matmul(q, pack_matrix(w, 3, 4)).data, q.scales[0], w_scale);
    const double bound = amax / 127.0 * static_cast<double>(n) * w_scale;
    for (std::size_t c = 0; c < k; ++c) {
      double exact = 0;
      for (std::size_t i = 0; i < n; ++i) exact += static_cast<double>(x[i]) * w.at(i, c);
      CHECK(std::fabs(y[c] - exact * w_scale) <= bound);
    }
  }
}
