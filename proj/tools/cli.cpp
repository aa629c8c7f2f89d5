#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <bit>
#include <charconv>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "tellme/error.hpp"
#include "tellme/model.hpp"
#include "tellme/sched_analyzer.hpp"
#include "tellme/toy_model.hpp"
#include "tellme/weight_file.hpp"

namespace tellme::cli {

namespace {

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    if (ch == ',' || ch == ' ' || ch == '\n' || ch == '\t' || ch == '\r') {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

template <typename T>
std::vector<T> parse_numbers(const std::string& text, const char* what) {
  std::vector<T> out;
  for (const auto& tok : split_list(text)) {
    T v{};
    const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    require(res.ec == std::errc{} && res.ptr == tok.data() + tok.size(), ErrorCode::kConfig,
            std::string("invalid ") + what + " '" + tok + "'");
    out.push_back(v);
  }
  return out;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// "1,2,3" or "@ids.txt"
std::vector<TokenId> parse_prompt(const std::string& arg) {
  const std::string text = !arg.empty() && arg[0] == '@' ? slurp(arg.substr(1)) : arg;
  auto ids = parse_numbers<TokenId>(text, "token id");
  require(!ids.empty(), ErrorCode::kConfig, "prompt has no token ids");
  return ids;
}

// Matrix dump accepted by `pack`: 4-byte tag "TRIT" or "FP32", u32 rows,
// u32 cols (little-endian), then rows*cols int8 trits or f32 values,
// row-major with rows as the reduction dimension.
struct MatrixDump {
  TernaryMatrix trits;
  float scale = 1.0f;
};

std::uint32_t le32(const std::string& b, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t{static_cast<unsigned char>(b[at + i])} << (8 * i);
  return v;
}

MatrixDump read_dump(const std::string& path) {
  const std::string b = slurp(path);
  require(b.size() >= 12, ErrorCode::kTruncated, "matrix dump header");
  const std::string tag = b.substr(0, 4);
  const std::size_t rows = le32(b, 4);
  const std::size_t cols = le32(b, 8);
  const std::size_t n = rows * cols;
  if (tag == "TRIT") {
    require(b.size() == 12 + n, ErrorCode::kLengthMismatch, "trit dump payload");
    MatrixDump d{TernaryMatrix(rows, cols), 1.0f};
    for (std::size_t i = 0; i < n; ++i) d.trits.values[i] = static_cast<Trit>(static_cast<signed char>(b[12 + i]));
    d.trits.validate();
    return d;
  }
  require(tag == "FP32", ErrorCode::kBadMagic, "matrix dump tag must be TRIT or FP32");
  require(b.size() == 12 + 4 * n, ErrorCode::kLengthMismatch, "fp32 dump payload");
  std::vector<float> w(n);
  for (std::size_t i = 0; i < n; ++i) w[i] = std::bit_cast<float>(le32(b, 12 + 4 * i));
  auto t = ternarize_absmean(w, rows, cols);
  return {std::move(t.trits), t.scale};
}

int exit_code_for(ErrorCode c) {
  switch (c) {
    case ErrorCode::kContextOverflow: return kOverflow;
    case ErrorCode::kConfig:
    case ErrorCode::kRange:
    case ErrorCode::kShape: return kConfigError;
    default: return kFailure;
  }
}

nlohmann::json report_json(const GenerationRequest& req, const GenerationResult& res) {
  nlohmann::json j;
  j["prompt_tokens"] = req.prompt.size();
  j["generated"] = res.tokens;
  j["prefill_seconds"] = res.prefill_seconds;
  j["decode_tokens_per_second"] = res.decode_tokens_per_second();
  j["kv_loads"] = res.kv_loads;
  j["quant_saturations"] = res.quant_saturations;
  return j;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"ternary LLM inference runtime"};
  app.require_subcommand(1);

  std::string weights_path, prompt_spec, report = "text";
  std::size_t max_new = 16;
  std::uint32_t parallelism = 0;
  auto* run_cmd = app.add_subcommand("run", "prefill a prompt and decode greedily");
  run_cmd->add_option("--weights", weights_path, "weight file")->required();
  run_cmd->add_option("--prompt-ids", prompt_spec, "comma-separated token ids or @file")->required();
  run_cmd->add_option("--max-new", max_new, "tokens to generate");
  run_cmd->add_option("--p", parallelism, "prefill attention parallelism (query slots)");
  run_cmd->add_option("--report", report, "report format")->check(CLI::IsMember({"json", "text"}));

  std::uint64_t seed = 0;
  std::string toy_out;
  auto* toy_cmd = app.add_subcommand("make-toy", "write a deterministic random toy checkpoint");
  toy_cmd->add_option("--seed", seed, "generator seed")->required();
  toy_cmd->add_option("--out", toy_out, "output weight file")->required();

  std::string sched_ns = "64,128,256,512,1024", sched_out;
  std::size_t sched_p = 4;
  auto* sched_cmd = app.add_subcommand("sched", "closed-form attention schedule costs as CSV");
  sched_cmd->add_option("--N", sched_ns, "comma-separated sequence lengths");
  sched_cmd->add_option("--p", sched_p, "parallelism")->check(CLI::PositiveNumber);
  sched_cmd->add_option("--out", sched_out, "CSV path (stdout when omitted)");

  std::string pack_in, pack_out, pack_name = "weight";
  std::uint32_t pack_group = 3, pack_tables = 32;
  auto* pack_cmd = app.add_subcommand("pack", "pack a trit or fp32 matrix dump into a weight file");
  pack_cmd->add_option("--in", pack_in, "TRIT/FP32 matrix dump")->required();
  pack_cmd->add_option("--out", pack_out, "output weight file")->required();
  pack_cmd->add_option("--group", pack_group, "trits per lookup index (G)");
  pack_cmd->add_option("--tables", pack_tables, "lookup tables per block (T)");
  pack_cmd->add_option("--name", pack_name, "tensor name");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e, out, err);
    return rc == 0 ? kOk : kConfigError;
  }

  try {
    if (*run_cmd) {
      ModelWeights w = ModelWeights::from_record(read_weights(weights_path));
      if (parallelism > 0) w.config.parallelism = parallelism;
      const Model model(std::move(w));
      const GenerationRequest req{parse_prompt(prompt_spec), max_new};
      const GenerationResult res = model.generate(req);
      if (report == "json") {
        out << report_json(req, res).dump(2) << "\n";
      } else {
        out << "generated:";
        for (TokenId t : res.tokens) out << ' ' << t;
        out << "\nprefill_seconds: " << res.prefill_seconds
            << "\ndecode_tokens_per_second: " << res.decode_tokens_per_second() << "\nkv_loads:";
        for (auto l : res.kv_loads) out << ' ' << l;
        out << "\nquant_saturations: " << res.quant_saturations << "\n";
      }
    } else if (*toy_cmd) {
      write_weights(toy_out, make_toy_model(seed).to_record());
      out << "wrote " << toy_out << "\n";
    } else if (*sched_cmd) {
      const auto costs = cost_sweep(parse_numbers<std::size_t>(sched_ns, "N"), sched_p);
      if (sched_out.empty()) {
        out << format_costs_csv(costs);
      } else {
        emit_csv(costs, sched_out);
        out << "wrote " << costs.size() << " rows to " << sched_out << "\n";
      }
    } else if (*pack_cmd) {
      const MatrixDump d = read_dump(pack_in);
      WeightRecord rec;
      rec.config.group_size = pack_group;
      rec.config.tables = pack_tables;
      rec.tensors.push_back({pack_name, pack_matrix(d.trits, pack_group, pack_tables, d.scale)});
      write_weights(pack_out, rec);
      out << "packed " << d.trits.rows << "x" << d.trits.cols << " into " << pack_out << "\n";
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  }
  return kOk;
}

}  // namespace tellme::cli
