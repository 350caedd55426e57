#include "modbal/io.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace modbal {
namespace {

namespace fs = std::filesystem;

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() /
           ("modbal_io_" + std::string(info->name()) + "_" + std::to_string(::getpid()));
    fs::remove_all(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t count_lines(const std::string& s) {
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

std::vector<StepRecord> sample_records() {
  std::vector<StepRecord> out;
  for (int i = 0; i < 3; ++i) {
    StepRecord r;
    r.step = i;
    r.task_loss = 0.1 * i + 1.0 / 3.0;
    r.distill_loss = 1e-17 * i;
    r.grad_a = 0.5 + i;
    r.grad_b = 0.25;
    r.s_a = 0.4;
    r.s_b = 0.6;
    r.entropy_a = 2.0 / 7.0;
    r.entropy_b = 3.14159;
    out.push_back(r);
  }
  return out;
}

ExperimentManifest sample_manifest() {
  ExperimentManifest m;
  m.command = "suite";
  m.generator.offset_b_x = 1;
  m.generator.noise_b = 0.123456789012345;
  m.run.strategy = WeightingStrategy::Forward;
  m.run.enable_hcg_low = false;
  m.run.lr = 0.1 / 3.0;
  m.run.seed = 0xFFFFFFFFFFFFFFF1ull;
  m.seeds = {1, 2, 0xFFFFFFFFFFFFFFF1ull};
  m.grad_boost = {1, 3, 5};
  m.weighting = {WeightingStrategy::Inverse, WeightingStrategy::Uniform};
  m.ablation = {standard_ablation()[0], standard_ablation()[5]};
  m.run_id = derive_run_id(m);
  m.outputs["metrics"] = "metrics.jsonl";
  return m;
}

TEST_F(TempDir, ManifestRoundTripIsLossless) {
  const ExperimentManifest m = sample_manifest();
  write_manifest(m, dir_ / "manifest.json");
  EXPECT_EQ(read_manifest(dir_ / "manifest.json"), m);
}

TEST(RunId, DependsOnConfigOnly) {
  ExperimentManifest m = sample_manifest();
  const std::string id = derive_run_id(m);
  EXPECT_EQ(id.rfind("suite-", 0), 0u);
  m.outputs["extra"] = "x";
  EXPECT_EQ(derive_run_id(m), id);
  m.run.lr = 0.2;
  EXPECT_NE(derive_run_id(m), id);
}

TEST_F(TempDir, ThreeRecordsThreeLines) {
  const auto recs = sample_records();
  write_metrics(recs, dir_ / "metrics.jsonl");
  const std::string text = slurp(dir_ / "metrics.jsonl");
  EXPECT_EQ(count_lines(text), 3u);
  EXPECT_EQ(text.find('\r'), std::string::npos);
  EXPECT_EQ(text.substr(0, text.find('\n')),
            R"({"step":0,"task_loss":0.3333333333333333,"distill_loss":0.0,"grad_a":0.5,"grad_b":0.25,"s_a":0.4,"s_b":0.6,"entropy_a":0.2857142857142857,"entropy_b":3.14159})");
  EXPECT_EQ(read_metrics(dir_ / "metrics.jsonl"), recs);
}

TEST_F(TempDir, SummaryCsvHasHeaderAndRoundTrips) {
  std::vector<SummaryRow> rows;
  for (int i = 0; i < 3; ++i) {
    SummaryRow r;
    r.run_id = "run";
    r.group = "weighting";
    r.label = i == 2 ? "needs,\"quoting\"" : "inverse";
    r.seed = static_cast<std::uint64_t>(i + 1);
    r.steps = 10;
    r.status = "ok";
    r.final_loss = 1.0 / 3.0;
    r.gradient_bias = 0.1 * i;
    r.iou_both = 0.75;
    rows.push_back(r);
  }
  write_summary_csv(rows, dir_ / "summary.csv");
  const std::string text = slurp(dir_ / "summary.csv");
  EXPECT_EQ(count_lines(text), 4u);
  EXPECT_EQ(text.rfind("run_id,group,label,seed,steps,status,final_loss,", 0), 0u);
  const auto back = read_summary_csv(dir_ / "summary.csv");
  ASSERT_EQ(back.size(), 3u);
  EXPECT_EQ(back[2].label, rows[2].label);
  EXPECT_EQ(back[1].gradient_bias, rows[1].gradient_bias);
  EXPECT_EQ(back[0].final_loss, rows[0].final_loss);
}

TEST_F(TempDir, EmptyRunGivesValidEmptyFiles) {
  write_metrics({}, dir_ / "metrics.jsonl");
  EXPECT_TRUE(fs::exists(dir_ / "metrics.jsonl"));
  EXPECT_EQ(fs::file_size(dir_ / "metrics.jsonl"), 0u);
  EXPECT_TRUE(read_metrics(dir_ / "metrics.jsonl").empty());
  write_summary_csv({}, dir_ / "summary.csv");
  EXPECT_EQ(count_lines(slurp(dir_ / "summary.csv")), 1u);
  EXPECT_TRUE(read_summary_csv(dir_ / "summary.csv").empty());
}

TEST_F(TempDir, MetricsWriterLeavesValidPrefix) {
  const auto recs = sample_records();
  {
    MetricsWriter w(dir_ / "m.jsonl");
    w.append(recs[0]);
    w.append(recs[1]);
    // Readable before the writer closes.
    EXPECT_EQ(read_metrics(dir_ / "m.jsonl"), std::vector<StepRecord>(recs.begin(), recs.begin() + 2));
  }
}

TEST_F(TempDir, UnwritablePathNamesThePath) {
  fs::create_directories(dir_);
  std::ofstream(dir_ / "blocker") << "x";
  const fs::path bad = dir_ / "blocker" / "metrics.jsonl";
  try {
    write_metrics(sample_records(), bad);
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find(bad.string()), std::string::npos) << e.what();
  }
  EXPECT_THROW(write_manifest(sample_manifest(), bad), IoError);
  EXPECT_THROW(read_manifest(dir_ / "missing.json"), IoError);
}

TEST_F(TempDir, MalformedMetricsLineReportsLocation) {
  fs::create_directories(dir_);
  std::ofstream(dir_ / "m.jsonl") << "{\"step\":0}\nnot json\n";
  EXPECT_THROW(read_metrics(dir_ / "m.jsonl"), IoError);
}

}  // namespace
}  // namespace modbal
