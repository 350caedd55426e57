#include "modbal/cli.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "modbal/io.hpp"

namespace modbal {
namespace {

namespace fs = std::filesystem;

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "modbal");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli_main(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Small model and short runs keep each invocation well under a second.
const std::vector<std::string> kTiny{"--hidden-channels", "2", "--feature-channels", "2",
                                     "--qk-dim",          "1", "--eval-samples",     "4"};

std::vector<std::string> with_tiny(std::vector<std::string> args) {
  args.insert(args.end(), kTiny.begin(), kTiny.end());
  return args;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("modbal_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

TEST_F(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(run({}), 1);
  EXPECT_EQ(run({"train", "--bogus"}), 1);
  EXPECT_EQ(run({"frobnicate"}), 1);
  EXPECT_EQ(run({"train", "--strategy", "sideways"}), 1);
  EXPECT_EQ(run({"train", "--steps", "x"}), 1);
  EXPECT_EQ(run({"train", "--lambda", "0.5", "--out-dir", dir_.string()}), 1);
  EXPECT_EQ(run({"suite", "--out-dir", dir_.string()}), 1);
  EXPECT_EQ(run({"report", (dir_ / "missing").string()}), 1);
}

TEST_F(Cli, HelpExitsZero) {
  EXPECT_EQ(run({"--help"}), 0);
  EXPECT_EQ(run({"train", "--help"}), 0);
}

TEST_F(Cli, TrainZeroStepsWritesManifestAndEmptyMetrics) {
  ASSERT_EQ(run(with_tiny({"train", "--steps", "0", "--out-dir", dir_.string(), "--run-id", "z"})), 0);
  const fs::path d = dir_ / "z";
  const ExperimentManifest m = read_manifest(d / "manifest.json");
  EXPECT_EQ(m.run_id, "z");
  EXPECT_EQ(m.command, "train");
  EXPECT_EQ(m.run.steps, 0);
  EXPECT_EQ(fs::file_size(d / "metrics.jsonl"), 0u);
  const auto rows = read_summary_csv(d / "summary.csv");
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].run_id, "z");
}

TEST_F(Cli, TrainFlagsReachTheManifest) {
  ASSERT_EQ(run(with_tiny({"train", "--steps", "3", "--lr", "0.05", "--delta", "0.25", "--alpha",
                           "0.2", "--beta", "0.3", "--gamma", "0.4", "--strategy", "forward",
                           "--lambda", "3", "--enable-hcg-low", "false", "--seed", "9",
                           "--out-dir", dir_.string(), "--run-id", "f"})),
            0);
  const ExperimentManifest m = read_manifest(dir_ / "f" / "manifest.json");
  EXPECT_EQ(m.run.steps, 3);
  EXPECT_EQ(m.run.lr, 0.05);
  EXPECT_EQ(m.run.delta, 0.25);
  EXPECT_EQ(m.run.alpha, 0.2);
  EXPECT_EQ(m.run.beta, 0.3);
  EXPECT_EQ(m.run.gamma, 0.4);
  EXPECT_EQ(m.run.strategy, WeightingStrategy::Forward);
  EXPECT_EQ(m.run.grad_boost_lambda, 3.0);
  EXPECT_FALSE(m.run.enable_hcg_low);
  EXPECT_TRUE(m.run.enable_mdi);
  EXPECT_EQ(m.run.seed, 9u);
  EXPECT_EQ(read_metrics(dir_ / "f" / "metrics.jsonl").size(), 3u);
  EXPECT_TRUE(fs::exists(dir_ / "f" / "plots" / "gradient_bias.svg"));
}

TEST_F(Cli, ConfigFileWithFlagOverride) {
  std::ofstream(dir_ / "run.toml") << "steps = 4\nlr = 0.07\nstrategy = \"uniform\"\n";
  ASSERT_EQ(run(with_tiny({"train", "--config", (dir_ / "run.toml").string(), "--lr", "0.01",
                           "--out-dir", dir_.string(), "--run-id", "c"})),
            0);
  const ExperimentManifest m = read_manifest(dir_ / "c" / "manifest.json");
  EXPECT_EQ(m.run.steps, 4);
  EXPECT_EQ(m.run.lr, 0.01);
  EXPECT_EQ(m.run.strategy, WeightingStrategy::Uniform);
}

TEST_F(Cli, ConfigSectionsAndUnknownKeys) {
  std::ofstream(dir_ / "sec.toml") << "[train]\nsteps = 2\nenable_mdi = false\n";
  ASSERT_EQ(run(with_tiny({"train", "--config", (dir_ / "sec.toml").string(), "--out-dir",
                           dir_.string(), "--run-id", "sec"})),
            0);
  const ExperimentManifest m = read_manifest(dir_ / "sec" / "manifest.json");
  EXPECT_EQ(m.run.steps, 2);
  EXPECT_FALSE(m.run.enable_mdi);

  std::ofstream(dir_ / "bad.toml") << "stpes = 2\n";
  EXPECT_EQ(run({"train", "--config", (dir_ / "bad.toml").string(), "--out-dir", dir_.string()}), 1);
  EXPECT_EQ(run({"train", "--config", (dir_ / "none.toml").string()}), 1);
}

TEST_F(Cli, ManifestReproducesMetricsExactly) {
  ASSERT_EQ(run(with_tiny({"train", "--steps", "12", "--lambda", "3", "--out-dir",
                           (dir_ / "one").string(), "--run-id", "r"})),
            0);
  ASSERT_EQ(run({"train", "--manifest", (dir_ / "one" / "r" / "manifest.json").string(),
                 "--out-dir", (dir_ / "two").string()}),
            0);
  const std::string a = slurp(dir_ / "one" / "r" / "metrics.jsonl");
  const std::string b = slurp(dir_ / "two" / "r" / "metrics.jsonl");
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, b);
}

TEST_F(Cli, EnvironmentSetsDefaultRootAndFlagWins) {
  const fs::path env_root = dir_ / "env";
  ::setenv("MODBAL_OUT_DIR", env_root.c_str(), 1);
  const int rc_env = run(with_tiny({"train", "--steps", "0", "--run-id", "e"}));
  const int rc_flag =
      run(with_tiny({"train", "--steps", "0", "--run-id", "e", "--out-dir", (dir_ / "flag").string()}));
  ::unsetenv("MODBAL_OUT_DIR");
  EXPECT_EQ(rc_env, 0);
  EXPECT_EQ(rc_flag, 0);
  EXPECT_TRUE(fs::exists(env_root / "e" / "manifest.json"));
  EXPECT_TRUE(fs::exists(dir_ / "flag" / "e" / "manifest.json"));
}

TEST_F(Cli, SuiteWeightingFiveSeedsGivesFifteenCells) {
  ASSERT_EQ(run(with_tiny({"suite", "--weighting", "inverse,uniform,forward", "--seeds", "5",
                           "--steps", "3", "--out-dir", dir_.string(), "--run-id", "s"})),
            0);
  const fs::path d = dir_ / "s";
  const auto rows = read_summary_csv(d / "summary.csv");
  EXPECT_EQ(rows.size(), 15u);
  for (const auto& r : rows) EXPECT_EQ(r.run_id, "s");
  std::ifstream in(d / "report.json");
  const auto j = nlohmann::json::parse(in);
  ASSERT_EQ(j.at("aggregates").size(), 3u);
  for (const auto& a : j.at("aggregates")) {
    EXPECT_EQ(a.at("group"), "weighting");
    EXPECT_EQ(a.at("gradient_bias").at("n"), 5);
  }
  const ExperimentManifest m = read_manifest(d / "manifest.json");
  EXPECT_EQ(m.seeds.size(), 5u);
  int cell_metrics = 0;
  for (const auto& [name, path] : m.outputs) {
    if (name.rfind("cell:", 0) != 0) continue;
    ++cell_metrics;
    EXPECT_EQ(read_metrics(d / path).size(), 3u);
  }
  EXPECT_EQ(cell_metrics, 15);

  ASSERT_EQ(run({"report", d.string(), "--plots-dir", (dir_ / "plots").string()}), 0);
  EXPECT_TRUE(fs::exists(dir_ / "plots" / "gradient_bias.svg"));
  EXPECT_TRUE(fs::exists(dir_ / "plots" / "restricted_eval.svg"));
}

TEST_F(Cli, SuiteWithFailedCellsExitsTwo) {
  EXPECT_EQ(run(with_tiny({"suite", "--grad-boost", "1", "--seeds", "1", "--steps", "50", "--lr",
                           "1e200", "--out-dir", dir_.string(), "--run-id", "bad"})),
            2);
  const auto rows = read_summary_csv(dir_ / "bad" / "summary.csv");
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].status, "failed");
}

TEST_F(Cli, GenDataWritesSamples) {
  ASSERT_EQ(run({"gen-data", "--count", "2", "--seed", "3", "--out-dir", dir_.string()}), 0);
  EXPECT_TRUE(fs::exists(dir_ / "samples.jsonl"));
  EXPECT_TRUE(fs::exists(dir_ / "sample1_gt.pgm"));
  std::ifstream in(dir_ / "samples.jsonl");
  int lines = 0;
  for (std::string l; std::getline(in, l);) ++lines;
  EXPECT_EQ(lines, 2);
}

TEST_F(Cli, GradCheckPasses) { EXPECT_EQ(run({"grad-check", "--instances", "3"}), 0); }

}  // namespace
}  // namespace modbal
