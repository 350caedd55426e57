#pragma once

// Training loop, restricted-modality evaluation and the gradient-bias metric.

#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "modbal/model.hpp"

namespace modbal {

struct StepRecord {
  int step = 0;
  double task_loss = 0.0;
  double distill_loss = 0.0;
  double grad_a = 0.0;  // ||d task / d theta_enc_a||, after lambda
  double grad_b = 0.0;
  double s_a = 0.0;
  double s_b = 0.0;
  double entropy_a = 0.0;  // diversity over object pixels
  double entropy_b = 0.0;

  bool operator==(const StepRecord&) const = default;
};

/// Per-step feature-gradient norms ||d task / d F_a||, ||d task / d F_b||.
struct FeatureGradRecord {
  double a = 0.0;
  double b = 0.0;
};

struct TrainResult {
  ToyModel model;
  std::vector<StepRecord> records;
  std::vector<FeatureGradRecord> feature_grads;
};

using StepCallback = std::function<void(const StepRecord&)>;

/// Seeds of the independent streams derived from RunConfig::seed.
std::uint64_t init_seed(std::uint64_t run_seed);
std::uint64_t train_data_seed(std::uint64_t run_seed, std::int64_t index);
std::uint64_t eval_data_seed(std::uint64_t run_seed, std::int64_t index);

/// Fresh samples every step from the training stream of `run.seed`.
/// Throws NumericError naming the step when the loss or a gradient is not finite.
TrainResult train(const GeneratorConfig& gen, const RunConfig& run,
                  const StepCallback& on_step = nullptr);

/// Same, starting from a given model.
TrainResult train(ToyModel model, const GeneratorConfig& gen, const RunConfig& run,
                  const StepCallback& on_step = nullptr);

/// One SGD update of `model` with gradient `grad` (momentum buffer optional).
void sgd_step(ToyModel& model, const ModelParams& grad, const RunConfig& run,
              ModelParams* velocity);

enum class EvalMode { Both, AOnly, BOnly };
std::string_view to_string(EvalMode m);

/// IoU of (pred > tau) against (gt > 0.5); 1 when both are empty.
double thresholded_iou(std::span<const double> pred, const GroundTruthMask& gt, double tau = 0.5);

/// Mean thresholded IoU over `samples`, zeroing the other modality's input
/// in the single-modality modes.
double eval_restricted(const ToyModel& model, std::span<const SyntheticSample> samples,
                       EvalMode mode, const RunConfig& run);

std::vector<SyntheticSample> eval_set(const GeneratorConfig& gen, const RunConfig& run);

/// Mean over consecutive windows (last one may be partial) of the windowed
/// mean of |grad_a - grad_b|.
double gradient_bias(std::span<const StepRecord> records, int window = 100);
double gradient_bias(std::span<const FeatureGradRecord> records, int window = 100);

}  // namespace modbal
