#include <unistd.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "chanprobe/cli.hpp"
#include "chanprobe/trace.hpp"
#include "doctest.h"
#include "json.hpp"
#include "oracles.hpp"

using namespace chanprobe;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

struct Fixture {
  fs::path dir;
  std::string train, test, gen, six_class;

  Fixture() {
    dir = fs::temp_directory_path() / ("chanprobe_cli_" + std::to_string(::getpid()));
    fs::create_directories(dir);
    std::mt19937_64 rng(42);
    train = (dir / "train.ctrc").string();
    test = (dir / "test.ctrc").string();
    gen = (dir / "gen_ch17.ctrc").string();
    six_class = (dir / "six.ctrc").string();
    const auto t = oracle::latent_trace(rng, 240, {8, 12}, 3);
    write_trace_file(t, train);
    write_trace_file(oracle::latent_trace(rng, 90, {8, 12}, 3, 3, 1.5), test);
    const auto g = oracle::latent_trace(rng, 120, {8, 12}, 3, 2, 0.8);
    write_trace_file(ActivationTrace(g.layers(), g.num_samples(),
                                     std::vector<float>(g.intensities().begin(), g.intensities().end()), g.labels(),
                                     t.class_names()),
                     gen);
    write_trace_file(oracle::latent_trace(rng, 300, {6}, 6), six_class);
  }
  ~Fixture() { fs::remove_all(dir); }
};

}  // namespace

TEST_CASE_FIXTURE(Fixture, "corr emits pairs and top-k") {
  const auto r = run({"corr", "--trace", six_class, "--layer", "conv1", "--class", "5", "--top-frac", "0.05"});
  REQUIRE(r.code == 0);
  const auto j = nlohmann::json::parse(r.out);
  CHECK(j["layer"] == "conv1");
  CHECK(j["source"] == "class:class5");
  CHECK(j["pairs"].size() == 15);
  CHECK(j["topk"]["pairs"].size() == 1);

  const auto csv = run({"corr", "--trace", six_class, "--layer", "conv1", "--format", "csv"});
  REQUIRE(csv.code == 0);
  CHECK(csv.out.rfind("layer,i,j,coefficient,topk\n", 0) == 0);
  CHECK(std::count(csv.out.begin(), csv.out.end(), '\n') == 16);
}

TEST_CASE_FIXTURE(Fixture, "missing input exits 2 and names the path") {
  const auto missing = (dir / "nope.ctrc").string();
  const auto r = run({"corr", "--trace", missing, "--layer", "conv1"});
  CHECK(r.code == kExitUsage);
  CHECK(r.err.find(missing) != std::string::npos);
  CHECK(r.out.empty());
}

TEST_CASE_FIXTURE(Fixture, "bad fractions are usage errors raised before any I/O") {
  const auto missing = (dir / "nope.ctrc").string();
  const auto r = run({"corr", "--trace", missing, "--layer", "conv1", "--top-frac", "0"});
  CHECK(r.code == kExitUsage);
  CHECK(r.err.find("nope.ctrc") == std::string::npos);
  CHECK(run({"select", "--trace", train, "--theta", "1.5"}).code == kExitUsage);
  CHECK(run({"select", "--trace", train}).code == kExitUsage);  // theta is mandatory
  CHECK(run({"score", "--train", train, "--test", gen, "--layer", "conv2", "--k-frac", "-1"}).code == kExitUsage);
  CHECK(run({"bogus"}).code == kExitUsage);
  CHECK(run({}).code == kExitUsage);
}

TEST_CASE_FIXTURE(Fixture, "select defaults and determinism") {
  const auto a = run({"select", "--trace", train, "--theta", "0.4"});
  REQUIRE(a.code == 0);
  const auto j = nlohmann::json::parse(a.out);
  CHECK(j["policy"] == "greedy-max");
  CHECK(j["mode"] == "absolute");
  CHECK(j["feasible"] == true);
  CHECK(j["covered_fraction"] == 1.0);
  CHECK(!j["selected"].empty());
  CHECK(run({"select", "--trace", train, "--theta", "0.4"}).out == a.out);

  const auto lit = run({"select", "--trace", train, "--theta", "0.4", "--policy", "greedy-min"});
  REQUIRE(lit.code == 0);
  CHECK(nlohmann::json::parse(lit.out)["policy"] == "greedy-min");

  const auto one_layer = run({"select", "--trace", train, "--theta", "0.4", "--layers", "conv2"});
  REQUIRE(one_layer.code == 0);
  for (const auto& s : nlohmann::json::parse(one_layer.out)["selected"]) CHECK(s["layer"] == "conv2");
}

TEST_CASE_FIXTURE(Fixture, "worker count does not change output") {
  const auto one = run({"select", "--trace", train, "--theta", "0.3", "--threads", "1"});
  const auto four = run({"select", "--trace", train, "--theta", "0.3", "--threads", "4"});
  ::setenv("CHANPROBE_THREADS", "3", 1);
  const auto env = run({"select", "--trace", train, "--theta", "0.3"});
  ::unsetenv("CHANPROBE_THREADS");
  REQUIRE(one.code == 0);
  CHECK(one.out == four.out);
  CHECK(one.out == env.out);
}

TEST_CASE_FIXTURE(Fixture, "score reports") {
  const auto r = run({"score", "--train", train, "--test", gen, "--layer", "conv2", "--k-frac", "0.05"});
  REQUIRE(r.code == 0);
  const auto j = nlohmann::json::parse(r.out);
  CHECK(j["basis"] == "raw");
  REQUIRE(j["entries"].size() == 3);
  CHECK(j["entries"][0]["layer"] == "conv2");
  CHECK(j["entries"][0]["channel"].is_null());
  CHECK(j["entries"][0]["rank"] == 1);

  const auto norm = run({"score", "--train", train, "--test", "conv2:7=" + gen, "--test", "conv1:3=" + test,
                         "--basis", "normalized"});
  REQUIRE(norm.code == 0);
  const auto n = nlohmann::json::parse(norm.out);
  CHECK(n["basis"] == "normalized");
  CHECK(n["entries"].size() == 6);
  for (std::size_t k = 1; k < n["entries"].size(); ++k) {
    CHECK(n["entries"][k - 1]["normalized"].get<double>() >= n["entries"][k]["normalized"].get<double>());
  }

  const auto self = run({"score", "--train", train, "--test", train, "--layer", "conv1", "--channel", "2"});
  REQUIRE(self.code == 0);
  for (const auto& e : nlohmann::json::parse(self.out)["entries"]) {
    CHECK(e["raw"] == 0.0);
    CHECK(e["channel"] == 2);
  }

  const auto csv = run({"score", "--train", train, "--test", gen, "--layer", "conv2", "--format", "csv"});
  REQUIRE(csv.code == 0);
  CHECK(csv.out.rfind("layer,channel,class,rank,raw,normalized\n", 0) == 0);

  CHECK(run({"score", "--train", train, "--test", gen}).code == kExitUsage);
  CHECK(run({"score", "--train", train, "--test", "conv2:x=" + gen}).code == kExitUsage);
  CHECK(run({"score", "--train", train, "--test", "nolayer:1=" + gen}).code == kExitFailure);
}

TEST_CASE_FIXTURE(Fixture, "coverage reports") {
  const auto self = run({"coverage", "--train", train, "--test", train});
  REQUIRE(self.code == 0);
  CHECK(nlohmann::json::parse(self.out)["fraction"] == 0.0);

  const auto r = run({"coverage", "--train", train, "--test", test, "--layers", "conv1"});
  REQUIRE(r.code == 0);
  const auto j = nlohmann::json::parse(r.out);
  CHECK(j["bounds"].size() == 8);
  const double f = j["fraction"];
  CHECK(f >= 0.0);
  CHECK(f <= 1.0);

  const auto csv = run({"coverage", "--train", train, "--test", test, "--format", "csv"});
  REQUIRE(csv.code == 0);
  CHECK(std::count(csv.out.begin(), csv.out.end(), '\n') == 21);
}

TEST_CASE_FIXTURE(Fixture, "--out writes the report file") {
  const auto target = (dir / "cov.json").string();
  const auto r = run({"coverage", "--train", train, "--test", test, "--out", target});
  REQUIRE(r.code == 0);
  CHECK(r.out.empty());
  std::ifstream in(target);
  std::stringstream content;
  content << in.rdbuf();
  CHECK(nlohmann::json::parse(content.str()).contains("fraction"));
  CHECK_FALSE(fs::exists(target + ".partial"));

  const auto bad = run({"coverage", "--train", train, "--test", test, "--out", (dir / "no/such/dir.json").string()});
  CHECK(bad.code != 0);
}
