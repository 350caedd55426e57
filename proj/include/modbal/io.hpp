#pragma once

// Manifests, per-step metrics (JSONL) and run summaries (CSV).

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "modbal/suite.hpp"

namespace modbal {

inline constexpr const char* kToolVersion = "0.1.0";

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExperimentManifest {
  std::string run_id;
  std::string command;  // train or suite
  std::string tool_version = kToolVersion;
  GeneratorConfig generator;
  RunConfig run;
  std::vector<std::uint64_t> seeds;
  // Suite sweeps; empty for a single training run.
  std::vector<double> grad_boost;
  std::vector<WeightingStrategy> weighting;
  std::vector<AblationConfig> ablation;
  std::map<std::string, std::string> outputs;  // artifact name -> path relative to the run dir

  bool operator==(const ExperimentManifest&) const = default;
};

nlohmann::ordered_json to_json(const GeneratorConfig& g);
nlohmann::ordered_json to_json(const RunConfig& r);
nlohmann::ordered_json to_json(const ExperimentManifest& m);
nlohmann::ordered_json to_json(const StepRecord& r);
GeneratorConfig generator_from_json(const nlohmann::json& j);
RunConfig run_from_json(const nlohmann::json& j);
ExperimentManifest manifest_from_json(const nlohmann::json& j);
StepRecord record_from_json(const nlohmann::json& j);

/// Stable id derived from the configuration, so a rerun lands in the same place.
std::string derive_run_id(const ExperimentManifest& m);

void write_manifest(const ExperimentManifest& m, const std::filesystem::path& path);
ExperimentManifest read_manifest(const std::filesystem::path& path);

/// Appends one JSON object per record and flushes after each, so a crashed
/// run leaves a valid prefix.
class MetricsWriter {
 public:
  explicit MetricsWriter(const std::filesystem::path& path);
  void append(const StepRecord& r);
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

void write_metrics(const std::vector<StepRecord>& records, const std::filesystem::path& path);
std::vector<StepRecord> read_metrics(const std::filesystem::path& path);

/// One row per cell.
struct SummaryRow {
  std::string run_id;
  std::string group;
  std::string label;
  std::uint64_t seed = 0;
  int steps = 0;
  std::string status;  // ok or failed
  double final_loss = 0.0;
  double gradient_bias = 0.0;
  double feature_gradient_bias = 0.0;
  double iou_both = 0.0;
  double iou_a = 0.0;
  double iou_b = 0.0;
  std::string error;
};

SummaryRow summary_row(const std::string& run_id, const CellResult& c);
void write_summary_csv(const std::vector<SummaryRow>& rows, const std::filesystem::path& path);
std::vector<SummaryRow> read_summary_csv(const std::filesystem::path& path);

/// Aggregates across seeds, as JSON.
nlohmann::ordered_json to_json(const std::string& run_id, const std::vector<CellAggregate>& aggs);

/// Creates parent directories; throws IoError naming the path on failure.
std::ofstream open_output(const std::filesystem::path& path, bool append = false);

}  // namespace modbal
