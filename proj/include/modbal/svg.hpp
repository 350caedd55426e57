#pragma once

// Standalone SVG charts: line charts with a legend and grouped bar charts.

#include <filesystem>
#include <string>
#include <vector>

#include "modbal/suite.hpp"

namespace modbal {

struct AxisRange {
  double lo = 0.0;
  double hi = 1.0;
};

/// Data min/max padded by 5% of the span; a zero span is padded by 5% of
/// |value| (or by 1 when the value is 0).
AxisRange padded_range(const std::vector<double>& values);

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

std::string line_chart(const std::string& title, const std::string& x_label,
                       const std::string& y_label, const std::vector<Series>& series);

struct BarGroup {
  std::string label;
  std::vector<double> values;  // one per bar name
};

std::string bar_chart(const std::string& title, const std::vector<std::string>& bar_names,
                      const std::vector<BarGroup>& groups);

/// Inputs to the three report plots.
struct PlotRun {
  std::string label;
  std::vector<StepRecord> records;  // seed-averaged per step
};
struct EvalBars {
  std::string label;
  double both = 0.0;
  double a_only = 0.0;
  double b_only = 0.0;
};
struct PlotReport {
  std::string run_id;
  std::vector<PlotRun> runs;
  std::vector<EvalBars> evals;
};

/// Trailing-window mean of |grad_a - grad_b| at every step.
std::vector<double> bias_curve(const std::vector<StepRecord>& records, int window = 100);

/// Per-step mean over seeds of each (group, label) in the report.
PlotReport plot_report(const std::string& run_id, const SuiteReport& report);

/// Writes gradient_bias.svg, grad_contrib.svg and restricted_eval.svg into
/// `dir`; returns their paths.
std::vector<std::filesystem::path> render_plots(const PlotReport& report,
                                                const std::filesystem::path& dir,
                                                int window = 100);

}  // namespace modbal
