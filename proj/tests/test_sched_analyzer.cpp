#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "support/test_util.hpp"
#include "tellme/attention_prefill.hpp"
#include "tellme/error.hpp"
#include "tellme/sched_analyzer.hpp"

using namespace tellme;

namespace {
std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}
}  // namespace

TEST_CASE("closed-form examples") {
  const auto r = closed_form(8, 4, Approach::kReverse);
  CHECK(r.data_block_loads == 12);
  CHECK(r.iteration_count == 12);
  CHECK(r.bandwidth_factor == 1);
  CHECK(r.masked_fraction == 0);

  const auto n = closed_form(8, 4, Approach::kNaive);
  CHECK(n.data_block_loads == 72);
  CHECK(n.iteration_count == 16);
  CHECK(n.bandwidth_factor == 4.5);
  CHECK(n.masked_fraction == 0.4375);

  const auto d = closed_form(8, 4, Approach::kDense);
  CHECK(d.data_block_loads == 27);
  CHECK(d.iteration_count == 19);

  CHECK(closed_form(1024, 4, Approach::kReverse).data_block_loads == 131584);
  CHECK_THROWS_AS(closed_form(0, 4, Approach::kNaive), Error);
  CHECK_THROWS_AS(closed_form(4, 0, Approach::kNaive), Error);
}

TEST_CASE("simulated reverse schedule matches the closed form when p divides N") {
  for (std::size_t p : {1u, 2u, 3u, 4u, 8u})
    for (std::size_t n = p; n <= 96; n += p) {
      const auto sim = simulate_reverse(n, p);
      CHECK(sim.cost == closed_form(n, p, Approach::kReverse));
      CHECK(sim.trace.computed_cells == n * (n + 1) / 2);
    }
}

TEST_CASE("simulated reverse schedule when p does not divide N") {
  // N=10, p=4: batches stream 10, 6 and 2 kv tokens.
  const auto sim = simulate_reverse(10, 4);
  CHECK(sim.cost.data_block_loads == 18);
  CHECK(sim.trace.count(LoadKind::kEvict) == 10);
}

TEST_CASE("load ordering: reverse < dense < naive for N >= p >= 2") {
  for (std::size_t p : {2u, 4u, 8u, 16u})
    for (std::size_t n = p; n <= 2048; n *= 2) {
      const double r = closed_form(n, p, Approach::kReverse).data_block_loads;
      const double d = closed_form(n, p, Approach::kDense).data_block_loads;
      const double nv = closed_form(n, p, Approach::kNaive).data_block_loads;
      CHECK(r < d);
      CHECK(d < nv);
      CHECK(closed_form(n, p, Approach::kReverse).iteration_count <
            closed_form(n, p, Approach::kDense).iteration_count);
    }
}

TEST_CASE("naive bandwidth grows like p, the others stay near 1") {
  const auto n = closed_form(1024, 8, Approach::kNaive);
  CHECK(n.bandwidth_factor == doctest::Approx(8.0).epsilon(0.01));
  CHECK(closed_form(1024, 8, Approach::kDense).bandwidth_factor == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("masked waste") {
  CHECK(masked_waste(1, 4, Approach::kNaive) == 0.0);
  CHECK(masked_waste(1024, 4, Approach::kDense) == doctest::Approx(0.5).epsilon(1e-3));
  CHECK(masked_waste(1024, 4, Approach::kReverse) == 0.0);
}

TEST_CASE("CSV golden file and round trip") {
  const auto golden = slurp(std::filesystem::path(TELLME_TEST_DATA) / "golden_costs_p4.csv");
  REQUIRE_FALSE(golden.empty());
  const auto sweep = cost_sweep({64, 128, 256, 512, 1024}, 4);
  CHECK(format_costs_csv(sweep) == golden);
  CHECK(parse_costs_csv(golden) == sweep);

  const auto path = std::filesystem::temp_directory_path() / "tellme_costs.csv";
  emit_csv(sweep, path);
  CHECK(slurp(path) == golden);
  std::filesystem::remove(path);

  CHECK_THROWS_AS(parse_costs_csv("wrong,header\n"), Error);
  CHECK_THROWS_AS(parse_costs_csv(std::string(kCostCsvHeader) + "\nreverse,1,1,1\n"), Error);
  CHECK_THROWS_AS(parse_costs_csv(std::string(kCostCsvHeader) + "\nsideways,1,1,1,1,1,0\n"), Error);
}

TEST_CASE("approach names") {
  CHECK(parse_approach("dense") == Approach::kDense);
  CHECK_FALSE(parse_approach("Dense").has_value());
  CHECK(to_string(Approach::kReverse) == "reverse");
}

TEST_CASE("prefill arithmetic intensity exceeds decode") {
  ModelConfig cfg;
  cfg.heads = 4;
  cfg.head_dim = 16;
  const auto [pre, dec] = phase_profile(cfg, 128, 128);
  CHECK(pre.bytes_moved == 3.0 * 128 * 64);
  CHECK(pre.mac_ops == 128.0 * 129 * 64);
  CHECK(dec.bytes_moved == 257.0 * 64);
  CHECK(dec.mac_ops == 2.0 * 128 * 64);
  CHECK(pre.arithmetic_intensity > dec.arithmetic_intensity);
  CHECK(dec.arithmetic_intensity < 1.0);
  CHECK_THROWS_AS(phase_profile(cfg, 0, 4), Error);
}

TEST_CASE("reverse simulator edge cases and cross-check with the attention engine") {
  for (std::size_t n : {1u, 4u, 8u}) CHECK(simulate_reverse(n, n).cost.data_block_loads == static_cast<double>(n));

  testutil::Rng rng(3);
  for (auto [n, p] : {std::pair<std::size_t, std::size_t>{8, 4}, {13, 3}, {32, 8}, {5, 1}}) {
    PrefillBatch b;
    b.tokens = n;
    b.heads = 1;
    b.head_dim = 2;
    b.parallelism = p;
    b.q = testutil::random_rows(rng, n, 2);
    b.k = testutil::random_rows(rng, n, 2);
    b.v = testutil::random_rows(rng, n, 2);
    const auto engine = reverse_prefill_attention(b).trace;
    const auto sim = simulate_reverse(n, p).trace;
    CHECK(engine.kv_sequence() == sim.kv_sequence());
    CHECK(engine.events == sim.events);
  }
}

TEST_CASE("naive and dense waste the same masked fraction") {
  for (std::size_t n = 1; n <= 300; n += 7)
    CHECK(masked_waste(n, 4, Approach::kNaive) == masked_waste(n, 4, Approach::kDense));
}

TEST_CASE("intensity examples") {
  ModelConfig cfg;
  cfg.heads = 1;
  cfg.head_dim = 64;
  const auto [pre1, dec1] = phase_profile(cfg, 1, 1);
  CHECK(pre1.arithmetic_intensity == dec1.arithmetic_intensity);
  const auto [pre, dec] = phase_profile(cfg, 1024, 1024);
  CHECK(dec.arithmetic_intensity == doctest::Approx(1.0).epsilon(0.01));
  double prev = 0;
  for (std::size_t n = 2; n <= 1024; n *= 2) {
    const double ai = phase_profile(cfg, n, 1).first.arithmetic_intensity;
    CHECK(ai > prev);
    prev = ai;
  }
}

TEST_CASE("CSV shape") {
  const auto text = format_costs_csv(cost_sweep({16, 32}, 2));
  CHECK(std::count(text.begin(), text.end(), '\n') == 7);
  CHECK(parse_costs_csv(text) == cost_sweep({16, 32}, 2));
}
