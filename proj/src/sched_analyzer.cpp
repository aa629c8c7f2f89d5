#include "tellme/sched_analyzer.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <system_error>

#include "tellme/error.hpp"

namespace tellme {

namespace {

std::string fmt_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

template <typename T>
T parse_field(std::string_view s, const char* what) {
  T v{};
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  require(res.ec == std::errc{} && res.ptr == s.data() + s.size(), ErrorCode::kRange,
          std::string("bad CSV field ") + what + ": '" + std::string(s) + "'");
  return v;
}

}  // namespace

std::string_view to_string(Approach a) {
  switch (a) {
    case Approach::kReverse: return "reverse";
    case Approach::kNaive: return "naive";
    case Approach::kDense: return "dense";
  }
  return "?";
}

std::optional<Approach> parse_approach(std::string_view s) {
  for (Approach a : {Approach::kReverse, Approach::kNaive, Approach::kDense})
    if (to_string(a) == s) return a;
  return std::nullopt;
}

double masked_waste(std::size_t n, std::size_t /*p*/, Approach approach) {
  require(n >= 1, ErrorCode::kRange, "N must be >= 1");
  if (approach == Approach::kReverse) return 0.0;
  // N(N-1)/2 masked cells out of the full N^2 grid.
  const double nd = static_cast<double>(n);
  return (nd - 1.0) / (2.0 * nd);
}

ScheduleCost closed_form(std::size_t n, std::size_t p, Approach approach) {
  require(n >= 1 && p >= 1, ErrorCode::kRange, "N and p must be >= 1");
  const double nd = static_cast<double>(n);
  const double pd = static_cast<double>(p);
  ScheduleCost c{approach, n, p, 0, 0, 0, masked_waste(n, p, approach)};
  switch (approach) {
    case Approach::kReverse:
      c.data_block_loads = nd * nd / (2.0 * pd) + nd / 2.0;
      c.iteration_count = c.data_block_loads;
      break;
    case Approach::kNaive:
      c.data_block_loads = nd * nd + nd;
      c.iteration_count = nd * nd / pd;
      break;
    case Approach::kDense:
      c.data_block_loads = nd * nd / pd + nd + pd - 1.0;
      c.iteration_count = nd * nd / pd + pd - 1.0;
      break;
  }
  c.bandwidth_factor = c.data_block_loads / c.iteration_count;
  return c;
}

SimulatedSchedule simulate_reverse(std::size_t n, std::size_t p) {
  require(n >= 1 && p >= 1, ErrorCode::kRange, "N and p must be >= 1");
  SimulatedSchedule sim;
  auto& trace = sim.trace;
  std::uint32_t batch = 0;
  for (std::size_t hi = n; hi > 0; hi = hi > p ? hi - p : 0, ++batch) {
    const std::size_t lo = hi > p ? hi - p : 0;
    for (std::size_t qi = hi; qi-- > lo;)
      trace.events.push_back({LoadKind::kQuery, static_cast<std::uint32_t>(qi), batch});
    for (std::size_t j = 0; j < hi; ++j) {
      trace.events.push_back({LoadKind::kKeyValue, static_cast<std::uint32_t>(j), batch});
      ++trace.iterations;
      for (std::size_t qi = lo; qi < hi; ++qi) trace.computed_cells += j <= qi ? 1 : 0;
    }
    for (std::size_t t = hi; t-- > lo;)
      trace.events.push_back({LoadKind::kEvict, static_cast<std::uint32_t>(t), batch});
  }
  const double loads = static_cast<double>(trace.count(LoadKind::kKeyValue));
  sim.cost = ScheduleCost{Approach::kReverse,
                          n,
                          p,
                          loads,
                          static_cast<double>(trace.iterations),
                          loads / static_cast<double>(trace.iterations),
                          0.0};
  return sim;
}

std::pair<PhaseProfile, PhaseProfile> phase_profile(const ModelConfig& config, std::size_t prompt_tokens,
                                                    std::size_t cached_tokens) {
  require(config.heads >= 1 && config.head_dim >= 1, ErrorCode::kConfig, "heads and head_dim must be >= 1");
  require(prompt_tokens >= 1 && cached_tokens >= 1, ErrorCode::kRange, "token counts must be >= 1");
  const double hd = static_cast<double>(config.heads) * config.head_dim;
  const double n = static_cast<double>(prompt_tokens);
  const double m = static_cast<double>(cached_tokens);

  PhaseProfile prefill{Phase::kPrefill, 3.0 * n * hd, n * (n + 1.0) * hd, 0};
  PhaseProfile decode{Phase::kDecode, (2.0 * m + 1.0) * hd, 2.0 * m * hd, 0};
  prefill.arithmetic_intensity = prefill.mac_ops / prefill.bytes_moved;
  decode.arithmetic_intensity = decode.mac_ops / decode.bytes_moved;
  return {prefill, decode};
}

std::string format_costs_csv(const std::vector<ScheduleCost>& costs) {
  std::string out(kCostCsvHeader);
  out += '\n';
  for (const auto& c : costs) {
    out += to_string(c.approach);
    for (const std::string& f :
         {std::to_string(c.tokens), std::to_string(c.parallelism), fmt_number(c.data_block_loads),
          fmt_number(c.iteration_count), fmt_number(c.bandwidth_factor), fmt_number(c.masked_fraction)}) {
      out += ',';
      out += f;
    }
    out += '\n';
  }
  return out;
}

std::vector<ScheduleCost> parse_costs_csv(std::string_view text) {
  std::vector<ScheduleCost> costs;
  std::istringstream in{std::string(text)};
  std::string line;
  require(static_cast<bool>(std::getline(in, line)) && line == kCostCsvHeader, ErrorCode::kRange,
          "missing or unexpected CSV header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string_view> f;
    std::string_view rest(line);
    for (std::size_t pos; (pos = rest.find(',')) != std::string_view::npos; rest.remove_prefix(pos + 1))
      f.push_back(rest.substr(0, pos));
    f.push_back(rest);
    require(f.size() == 7, ErrorCode::kRange, "CSV row must have 7 fields");
    const auto approach = parse_approach(f[0]);
    require(approach.has_value(), ErrorCode::kRange, "unknown approach '" + std::string(f[0]) + "'");
    costs.push_back({*approach, parse_field<std::size_t>(f[1], "N"), parse_field<std::size_t>(f[2], "p"),
                     parse_field<double>(f[3], "loads"), parse_field<double>(f[4], "iterations"),
                     parse_field<double>(f[5], "bandwidth_factor"), parse_field<double>(f[6], "masked_fraction")});
  }
  return costs;
}

void emit_csv(const std::vector<ScheduleCost>& costs, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot open " + path.string());
  out << format_costs_csv(costs);
  require(static_cast<bool>(out), ErrorCode::kIo, "write failed for " + path.string());
}

std::vector<ScheduleCost> cost_sweep(const std::vector<std::size_t>& ns, std::size_t p) {
  std::vector<ScheduleCost> costs;
  for (std::size_t n : ns)
    for (Approach a : {Approach::kReverse, Approach::kNaive, Approach::kDense}) costs.push_back(closed_form(n, p, a));
  return costs;
}

}  // namespace tellme
