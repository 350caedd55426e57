#pragma once

// Grad-boost, weighting-strategy and ablation sweeps over several seeds.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "modbal/train.hpp"

namespace modbal {

struct AblationConfig {
  std::string label;
  bool mdi = false;
  bool hcg_low = false;
  bool hcg_high = false;
  bool miw = false;

  void apply(RunConfig& run) const;
  bool operator==(const AblationConfig&) const = default;
};

/// baseline, +MDI, +HCG-low, +HCG-high, +MIW, full.
std::vector<AblationConfig> standard_ablation();

/// Parses "baseline", "full", or a '+'-joined subset of mdi, hcg-low, hcg-high, miw.
AblationConfig parse_ablation(const std::string& text);

struct SuiteSpec {
  std::vector<double> grad_boost;
  std::vector<WeightingStrategy> weighting;
  std::vector<AblationConfig> ablation;
  std::vector<std::uint64_t> seeds;
  int window = 100;
  int threads = 1;
};

struct CellResult {
  std::string group;  // grad_boost, weighting or ablation
  std::string label;
  std::uint64_t seed = 0;
  RunConfig run;
  bool ok = false;
  std::string error;
  double final_loss = 0.0;  // mean task loss over the last window
  double gradient_bias = 0.0;
  double feature_gradient_bias = 0.0;
  double iou_both = 0.0;
  double iou_a = 0.0;
  double iou_b = 0.0;
  std::vector<StepRecord> records;
};

struct Stat {
  int n = 0;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation (0 when n < 2)
  double se = 0.0;

  static Stat of(const std::vector<double>& xs);
};

struct CellAggregate {
  std::string group;
  std::string label;
  int failed = 0;
  Stat final_loss, gradient_bias, feature_gradient_bias, iou_both, iou_a, iou_b;
};

struct SuiteReport {
  std::vector<CellResult> cells;
  std::vector<CellAggregate> aggregates;

  const CellAggregate* find(const std::string& group, const std::string& label) const;
};

/// Trains and evaluates one configuration.
CellResult run_cell(const std::string& group, const std::string& label, const RunConfig& run,
                    const GeneratorConfig& gen, int window = 100,
                    const StepCallback& on_step = nullptr);

std::string grad_boost_label(double lambda);

/// Every (configuration x seed) cell. A cell that throws is marked failed and
/// the rest still run. Cell order is fixed regardless of thread count.
SuiteReport run_experiment_suite(const RunConfig& base, const GeneratorConfig& gen,
                                 const SuiteSpec& spec);

/// Seed-paired difference x - y of one metric between two labels of a group,
/// over seeds where both cells succeeded.
struct PairedDiff {
  int n = 0;
  double mean = 0.0;
  double se = 0.0;
};
PairedDiff paired_difference(const SuiteReport& report, const std::string& group,
                             const std::string& label_x, const std::string& label_y,
                             double CellResult::*metric);

std::vector<CellAggregate> aggregate(const std::vector<CellResult>& cells);

}  // namespace modbal
