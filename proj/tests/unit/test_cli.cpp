#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "commands.hpp"
#include "repr_robust/report.hpp"

namespace {

using nlohmann::json;
using repr_robust::cli::ConfigError;
using repr_robust::cli::Invocation;
namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

class CliRun : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    root_ = fs::temp_directory_path() / (std::string("repr_robust_cli_") + info->name());
    fs::remove_all(root_);
    fs::create_directories(root_);
  }
  void TearDown() override { fs::remove_all(root_); }

  static json small_dataset() {
    return {{"spec", {{"side", 8}, {"samples_per_class", 24}}}};
  }

  json run(const std::string& command, json config, const std::string& out, std::size_t workers = 1,
           std::uint64_t seed = 3) {
    Invocation inv;
    inv.command = command;
    inv.config = std::move(config);
    inv.seed = seed;
    inv.workers = workers;
    inv.out = root_ / out;
    return repr_robust::cli::run(inv);
  }

  fs::path pretrained() {
    run("pretrain",
        {{"dataset", small_dataset()},
         {"encoder", {{"input_side", 8}, {"hidden", {16}}, {"representation_dim", 6}}},
         {"train", {{"epochs", 2}, {"batch_size", 16}, {"queue_size", 32}}}},
        "pre");
    return root_ / "pre" / "encoder.urre";
  }

  fs::path root_;
};

TEST(CliConfig, UnknownKeysAreRejectedWithTheirPath) {
  try {
    repr_robust::cli::resolve_config("measure", {{"measure", {{"overlap", {{"pairz", 3}}}}}}, 0);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("measure.overlap.pairz"), std::string::npos);
  }
  EXPECT_THROW(repr_robust::cli::resolve_config("nope", json::object(), 0), ConfigError);
  EXPECT_THROW(repr_robust::cli::resolve_config("certify", {{"smoothing", {{"sigma", -1.0}}}}, 0), ConfigError);
}

TEST(CliConfig, ModuleSeedsFollowTheGlobalSeed) {
  const json a = repr_robust::cli::resolve_config("measure", json::object(), 1);
  const json b = repr_robust::cli::resolve_config("measure", json::object(), 1);
  const json c = repr_robust::cli::resolve_config("measure", json::object(), 2);
  EXPECT_EQ(a, b);
  EXPECT_NE(a["measure"]["overlap"]["attack"]["seed"], c["measure"]["overlap"]["attack"]["seed"]);
  EXPECT_NE(a["measure"]["overlap"]["attack"]["seed"], a["measure"]["breakaway"]["attack"]["seed"]);
}

TEST(CliConfig, ResolvedConfigIsAFixedPoint) {
  for (const auto& command : repr_robust::cli::command_names()) {
    const json once = repr_robust::cli::resolve_config(command, json::object(), 11);
    EXPECT_EQ(repr_robust::cli::resolve_config(command, once, 11), once) << command;
  }
}

TEST(CliConfig, CenterKindPicksCenterDefaults) {
  const json c = repr_robust::cli::resolve_config("certify", {{"kind", "center"}}, 0);
  EXPECT_EQ(c["smoothing"]["n0"], 10000);
  EXPECT_EQ(repr_robust::cli::resolve_config("certify", json::object(), 0)["smoothing"]["n0"], 100);
}

TEST_F(CliRun, MeasureIsIdenticalAcrossWorkerCounts) {
  const auto ck = pretrained();
  const json cfg = {{"dataset", small_dataset()},
                    {"checkpoint", ck.string()},
                    {"measure",
                     {{"breakaway", {{"samples", 12}}},
                      {"overlap", {{"pairs", 6}}},
                      {"universal", {{"samples", 8}, {"epsilons", {0.05}}, {"iterations", {3}}}},
                      {"relative", {{"samples", 6}}}}}};
  run("measure", cfg, "one", 1);
  run("measure", cfg, "three", 3);
  for (const char* file : {"results.json", "manifest.json", "margins.csv", "universal_quantiles.csv"}) {
    const auto a = slurp(root_ / "one" / file);
    EXPECT_FALSE(a.empty()) << file;
    EXPECT_EQ(a, slurp(root_ / "three" / file)) << file;
  }
  EXPECT_EQ(slurp(root_ / "one" / "manifest.json").find((root_ / "one").string()), std::string::npos);
  const json r = json::parse(slurp(root_ / "one" / "results.json"));
  EXPECT_EQ(r["report"]["encoder_id"], "pre");
  EXPECT_TRUE(r["report"]["measures"].contains("universal_quantile_median@eps=0.05,it=3"));
}

TEST_F(CliRun, CertifiedAccuracyCurveIsNonIncreasing) {
  const auto ck = pretrained();
  run("probe", {{"dataset", small_dataset()}, {"checkpoint", ck.string()}, {"probe", {{"epochs", 3}}}}, "probe");
  run("certify",
      {{"dataset", small_dataset()},
       {"checkpoint", (root_ / "probe" / "encoder.urre").string()},
       {"samples", 6},
       {"smoothing", {{"n", 400}}}},
      "cert");
  std::istringstream csv(slurp(root_ / "cert" / "certified_accuracy.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "radius,certified_accuracy");
  double previous = 2.0;
  std::size_t rows = 0;
  while (std::getline(csv, line)) {
    const double fraction = std::stod(line.substr(line.find(',') + 1));
    EXPECT_LE(fraction, previous);
    EXPECT_GE(fraction, 0.0);
    previous = fraction;
    ++rows;
  }
  EXPECT_EQ(rows, 51u);
}

TEST_F(CliRun, ImpersonateNeedsAProbe) {
  const auto ck = pretrained();
  EXPECT_THROW(run("impersonate", {{"dataset", small_dataset()}, {"checkpoint", ck.string()}}, "imp"), ConfigError);
}

TEST_F(CliRun, ReportMatchesFixture) {
  const auto write = [&](const std::string& dir, const json& report) {
    fs::create_directories(root_ / dir);
    std::ofstream(root_ / dir / "results.json") << json{{"command", "x"}, {"report", report}}.dump();
  };
  write("a_probe", {{"encoder_id", "moco"},
                    {"divergence", nullptr},
                    {"measures", {{"standard_top1", 0.75}, {"lowpass_top1", 0.5}}}});
  write("a_measure", {{"encoder_id", "moco"},
                      {"divergence", "l2"},
                      {"measures",
                       {{"overlap_risk", 0.125},
                        {"universal_quantile_median@eps=0.05,it=10", 0.25},
                        {"universal_quantile_median@eps=0.05,it=5", 0.0625}}}});
  write("b_measure", {{"encoder_id", "adv"}, {"divergence", "l2"}, {"measures", {{"overlap_risk", 0.0}}}});
  run("report", {{"inputs", {(root_ / "a_probe").string(), (root_ / "a_measure").string(),
                             (root_ / "b_measure" / "results.json").string()}}},
      "report");
  EXPECT_EQ(slurp(root_ / "report" / "report.csv"),
            "encoder_id,standard_top1,lowpass_top1,\"universal_quantile_median@eps=0.05,it=5\","
            "\"universal_quantile_median@eps=0.05,it=10\",overlap_risk\n"
            "moco,0.75,0.5,0.0625,0.25,0.125\n"
            "adv,,,,,0\n");
  EXPECT_EQ(slurp(root_ / "report" / "report_long.csv"),
            "encoder_id,measure,value\n"
            "moco,standard_top1,0.75\n"
            "moco,lowpass_top1,0.5\n"
            "moco,\"universal_quantile_median@eps=0.05,it=5\",0.0625\n"
            "moco,\"universal_quantile_median@eps=0.05,it=10\",0.25\n"
            "moco,overlap_risk,0.125\n"
            "adv,overlap_risk,0\n");
}

TEST_F(CliRun, ReportRejectsConflictingDivergences) {
  fs::create_directories(root_ / "x");
  std::ofstream(root_ / "x" / "results.json")
      << json{{"report", {{"encoder_id", "a"}, {"divergence", "l2"}, {"measures", {{"overlap_risk", 0.1}}}}}}.dump();
  fs::create_directories(root_ / "y");
  std::ofstream(root_ / "y" / "results.json")
      << json{{"report", {{"encoder_id", "b"}, {"divergence", "linf"}, {"measures", {{"overlap_risk", 0.1}}}}}}.dump();
  EXPECT_THROW(run("report", {{"inputs", {(root_ / "x").string(), (root_ / "y").string()}}}, "r"), repr_robust::Error);
}

}  // namespace
