#pragma once

// Cost accounting for the three prefill attention schedules (reverse,
// naive, dense) and the prefill/decode arithmetic-intensity model.
//
// Counting convention: a data block is one token's q, k or v vector across
// all heads. Load counts follow the closed forms below; for the reverse
// schedule a load is one (k, v) pair, matching the simulator and the trace
// produced by reverse_prefill_attention. The reverse closed form is exact
// when p divides N; otherwise the simulator is authoritative.
//
//   reverse: loads = iterations = N^2/(2p) + N/2
//   naive:   loads = N^2 + N,          iterations = N^2/p
//   dense:   loads = N^2/p + N + p - 1, iterations = N^2/p + p - 1

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tellme/model_config.hpp"
#include "tellme/schedule_trace.hpp"

namespace tellme {

enum class Approach { kReverse, kNaive, kDense };

std::string_view to_string(Approach a);
std::optional<Approach> parse_approach(std::string_view s);

struct ScheduleCost {
  Approach approach = Approach::kReverse;
  std::size_t tokens = 0;       // N
  std::size_t parallelism = 0;  // p
  double data_block_loads = 0;
  double iteration_count = 0;
  double bandwidth_factor = 0;  // loads per iteration
  double masked_fraction = 0;   // computed score cells with key > query

  bool operator==(const ScheduleCost&) const = default;
};

ScheduleCost closed_form(std::size_t n, std::size_t p, Approach approach);

struct SimulatedSchedule {
  ScheduleCost cost;
  LoadTrace trace;
};
SimulatedSchedule simulate_reverse(std::size_t n, std::size_t p);

double masked_waste(std::size_t n, std::size_t p, Approach approach);

enum class Phase { kPrefill, kDecode };

struct PhaseProfile {
  Phase phase = Phase::kPrefill;
  double bytes_moved = 0;
  double mac_ops = 0;
  double arithmetic_intensity = 0;
};

// One attention invocation over all heads with int8 operands.
//   prefill (N tokens): q, k, v streamed once (3*N*h*d bytes);
//                       causal MACs for q.k and p.v: N(N+1)*h*d.
//   decode (M cached):  query plus a full cache scan ((2M+1)*h*d bytes);
//                       MACs 2*M*h*d.
std::pair<PhaseProfile, PhaseProfile> phase_profile(const ModelConfig& config, std::size_t prompt_tokens,
                                                    std::size_t cached_tokens);

inline constexpr std::string_view kCostCsvHeader =
    "approach,N,p,loads,iterations,bandwidth_factor,masked_fraction";

std::string format_costs_csv(const std::vector<ScheduleCost>& costs);
std::vector<ScheduleCost> parse_costs_csv(std::string_view text);
void emit_csv(const std::vector<ScheduleCost>& costs, const std::filesystem::path& path);

// All three approaches for every N in `ns` at one p, ordered by N then
// approach (reverse, naive, dense).
std::vector<ScheduleCost> cost_sweep(const std::vector<std::size_t>& ns, std::size_t p);

}  // namespace tellme
