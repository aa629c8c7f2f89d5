#include <doctest.h>

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "tellme/weight_file.hpp"

namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "tellme");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = tellme::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) { return fs::temp_directory_path() / ("tellme_cli_" + name); }

void write_bytes(const fs::path& p, const std::vector<unsigned char>& b) {
  std::ofstream(p, std::ios::binary).write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

}  // namespace

TEST_CASE("sched prints the cost CSV") {
  const auto r = invoke({"sched", "--N", "8,1024", "--p", "4"});
  CHECK(r.code == 0);
  CHECK(r.out.find("approach,N,p,loads,iterations,bandwidth_factor,masked_fraction\n") == 0);
  CHECK(r.out.find("reverse,1024,4,131584,131584,1,0\n") != std::string::npos);
  CHECK(r.out.find("naive,8,4,72,16,4.5,0.4375\n") != std::string::npos);
}

TEST_CASE("make-toy then run with a json report") {
  const auto weights = scratch("toy.bin");
  CHECK(invoke({"make-toy", "--seed", "3", "--out", weights.string()}).code == 0);
  const auto r = invoke({"run", "--weights", weights.string(), "--prompt-ids", "1,2,3,4,5", "--max-new", "4",
                         "--report", "json"});
  REQUIRE(r.code == 0);
  const auto j = nlohmann::json::parse(r.out);
  CHECK(j["prompt_tokens"] == 5);
  CHECK(j["generated"].size() == 4);
  CHECK(j["kv_loads"] == nlohmann::json::array({6, 6}));
  CHECK(j.contains("decode_tokens_per_second"));

  const auto ids = scratch("ids.txt");
  std::ofstream(ids) << "1 2 3\n4 5\n";
  const auto r2 = invoke({"run", "--weights", weights.string(), "--prompt-ids", "@" + ids.string(), "--max-new",
                          "4", "--report", "json"});
  CHECK(nlohmann::json::parse(r2.out)["generated"] == j["generated"]);

  SUBCASE("overflowing prompt") {
    std::string many;
    for (int i = 0; i < 1025; ++i) many += "1,";
    CHECK(invoke({"run", "--weights", weights.string(), "--prompt-ids", many}).code == tellme::cli::kOverflow);
  }
  SUBCASE("bad token id") {
    CHECK(invoke({"run", "--weights", weights.string(), "--prompt-ids", "1,x"}).code == tellme::cli::kConfigError);
  }
  fs::remove(weights);
  fs::remove(ids);
}

TEST_CASE("run on a missing or corrupt file fails") {
  CHECK(invoke({"run", "--weights", scratch("absent.bin").string(), "--prompt-ids", "1"}).code ==
        tellme::cli::kFailure);
  const auto junk = scratch("junk.bin");
  write_bytes(junk, {'n', 'o', 't', 'a', 'f', 'i', 'l', 'e'});
  CHECK(invoke({"run", "--weights", junk.string(), "--prompt-ids", "1"}).code == tellme::cli::kFailure);
  fs::remove(junk);
}

TEST_CASE("pack a trit dump") {
  const auto in = scratch("w.trit");
  const auto out = scratch("w.bin");
  // 3 x 2: columns [1, 0, -1] and [0, 1, 1]
  write_bytes(in, {'T', 'R', 'I', 'T', 3, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 1, 0xFF, 1});
  const auto r = invoke({"pack", "--in", in.string(), "--out", out.string(), "--group", "3", "--tables", "1",
                         "--name", "w"});
  REQUIRE(r.code == 0);
  const auto rec = tellme::read_weights(out);
  const auto* t = rec.find("w");
  REQUIRE(t != nullptr);
  const auto& p = std::get<tellme::PackedTernaryMatrix>(t->payload);
  CHECK(p.indices == std::vector<std::uint8_t>{5, 25});  // 2+3*1+9*0 and 1+3*2+9*2
  fs::remove(in);
  fs::remove(out);
}

TEST_CASE("pack rejects malformed dumps") {
  const auto in = scratch("bad.trit");
  write_bytes(in, {'T', 'R', 'I', 'T', 1, 0, 0, 0, 1, 0, 0, 0, 2});
  CHECK(invoke({"pack", "--in", in.string(), "--out", scratch("bad.bin").string()}).code != 0);
  write_bytes(in, {'T', 'R', 'I', 'T', 1, 0, 0, 0});
  CHECK(invoke({"pack", "--in", in.string(), "--out", scratch("bad.bin").string()}).code != 0);
  fs::remove(in);
}

TEST_CASE("usage errors") {
  CHECK(invoke({}).code == tellme::cli::kConfigError);
  CHECK(invoke({"sched", "--p", "0"}).code == tellme::cli::kConfigError);
  CHECK(invoke({"run", "--weights", "x"}).code == tellme::cli::kConfigError);
}
