#pragma once

// Central-difference oracle battery over every hand-written gradient.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "modbal/model.hpp"

namespace modbal {

struct GradCheckOptions {
  int instances = 100;  // per row
  std::uint64_t seed = 7;
  double smooth_tol = 1e-6;  // aux, rw, da
  double kink_tol = 1e-5;    // struct, distill, end-to-end
};

struct GradCheckRow {
  std::string name;
  double tolerance = 0.0;
  int instances = 0;
  int failures = 0;
  int rejected = 0;  // draws discarded for sitting near a kink
  double worst_error = 0.0;
  double seconds = 0.0;

  bool passed() const { return instances > 0 && failures == 0; }
};

/// Largest relative error over elements whose absolute gap exceeds abs_tol
/// (0 when every element is within abs_tol).
double gradient_error(std::span<const double> analytic, std::span<const double> numeric,
                      double abs_tol = 1e-8);

/// Smallest |difference| between horizontally or vertically adjacent values.
double min_adjacent_gap(const FeatureMap& f);

/// Tiny model used by the end-to-end rows (<= 200 parameters).
ModelConfig tiny_model_config();
GeneratorConfig tiny_generator_config();

/// One end-to-end check: analytic backward against central differences of
/// the total objective with detached quantities held fixed. Returns the
/// error, or a negative value when the instance sits too close to a kink.
double end_to_end_error(const ToyModel& model, const SyntheticSample& sample, const RunConfig& run);

std::vector<GradCheckRow> run_grad_checks(const GradCheckOptions& opts = {});

}  // namespace modbal
