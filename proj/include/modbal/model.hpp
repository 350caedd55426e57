#pragma once

// Two-branch toy detector with hand-written reverse mode.
//
//   x_a -> enc_a -> F_a \                         (MDI scores, detached)
//                        > roles -> F_dom, F_non -> [guidance] -> F'_non
//   x_b -> enc_b -> F_b /                                         |
//                               fuse(F_dom, F'_non) -> conv1x1 -> sigmoid heatmap
//
// Each encoder is conv3x3 -> tanh -> conv3x3 -> tanh. The distillation term
// (teacher F_dom, student F'_non) is added to the objective when enabled.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "modbal/fusion.hpp"
#include "modbal/hcg.hpp"
#include "modbal/mdi.hpp"
#include "modbal/synth.hpp"

namespace modbal {

struct ModelConfig {
  std::size_t hidden_channels = 4;
  std::size_t feature_channels = 4;
  std::size_t qk_dim = 2;

  bool operator==(const ModelConfig&) const = default;
};

struct RunConfig {
  WeightingStrategy strategy = WeightingStrategy::Inverse;
  bool enable_mdi = true;
  bool enable_hcg_low = true;
  bool enable_hcg_high = true;
  bool enable_miw = true;
  double grad_boost_lambda = 1.0;
  int steps = 2000;
  double lr = 0.15;
  std::uint64_t seed = 1;
  double delta = kDefaultDelta;
  double alpha = 0.1;
  double beta = 0.1;
  double gamma = 0.1;
  double momentum = 0.0;
  double weight_decay = 0.0;
  int batch_size = 1;
  double aux_weight = 0.0;  // > 0 adds the auxiliary detector losses to the objective
  double score_ema = 0.0;   // temporal smoothing of the training-time dominance scores
  int eval_samples = 64;
  ModelConfig model;

  bool operator==(const RunConfig&) const = default;
  void validate() const;
  DistillWeights distill_weights() const { return {alpha, beta, gamma}; }
  /// Uniform unless MIW is enabled, in which case `strategy` applies.
  WeightingStrategy effective_strategy() const {
    return enable_miw ? strategy : WeightingStrategy::Uniform;
  }
};

enum class ParamGroup { EncoderA, EncoderB, Guidance, Aux, Head };
std::string_view to_string(ParamGroup g);

struct EncoderParams {
  Conv3x3Kernel stage1;  // 1 -> hidden
  Conv3x3Kernel stage2;  // hidden -> feature
};

/// Every trainable tensor. Gradients use the same type.
struct ModelParams {
  EncoderParams enc_a;
  EncoderParams enc_b;
  QKProjection qk;
  RefineBlock refine;
  AuxDetector aux_a;
  AuxDetector aux_b;
  Matrix head_w;  // 1 x C
  std::vector<double> head_b;  // length 1

  /// A zero-filled parameter set with the same shapes.
  ModelParams zeros_like() const;
  std::size_t size() const;
  std::vector<double> flatten() const;
  void assign(std::span<const double> flat);
};

/// Visits each tensor in a fixed order.
void for_each_tensor(ModelParams& p,
                     const std::function<void(ParamGroup, std::span<double>)>& fn);
void for_each_tensor(const ModelParams& p,
                     const std::function<void(ParamGroup, std::span<const double>)>& fn);

double group_norm(const ModelParams& p, ParamGroup g);

struct ToyModel {
  ModelConfig config;
  ModelParams params;
  DominanceScores inference_scores;  // used when no ground truth is consulted
  std::uint64_t version = 0;         // bumped on every parameter update

  /// Seeded initialization. With `mirrored`, branch B starts as a copy of A
  /// and the aux detectors are shared copies.
  static ToyModel init(const ModelConfig& cfg, std::uint64_t seed, bool mirrored = false);
};

enum class Phase { Train, Infer };

/// Quantities held constant under differentiation. Passing them back into
/// forward() evaluates the objective with them frozen at these values.
struct Detached {
  DominanceScores scores;
  FeatureMap teacher;
  double scale = 1.0;
};

struct EncoderTrace {
  FeatureMap input;
  FeatureMap pre1, h1, pre2, out;
};

struct ForwardCache {
  std::uint64_t model_version = 0;
  RunConfig run;
  EncoderTrace enc_a, enc_b;
  DominanceScores scores;
  Modality dom = Modality::Rgb;
  std::optional<CorrelationTrace> corr;
  FeatureMap reproj;
  std::optional<RefineTrace> refine;
  FeatureMap non_refined;
  FusionCoefficients coeff;
  FeatureMap fused;
  std::vector<double> logits;
  std::vector<double> pred;
  GroundTruthMask gt;
  double task_loss = 0.0;
  std::optional<DistillResult> distill;
  FeatureMap teacher;
  double aux_loss_a = 0.0;
  double aux_loss_b = 0.0;
  double total_loss = 0.0;

  const FeatureMap& feature(Modality m) const { return m == Modality::Rgb ? enc_a.out : enc_b.out; }
  const FeatureMap& dom_feature() const { return feature(dom); }
  const FeatureMap& non_feature() const { return feature(other(dom)); }
  Detached detached() const;
};

/// Mean binary cross-entropy of sigmoid(logits) against a soft mask.
double heatmap_bce(std::span<const double> logits, const GroundTruthMask& gt);

/// `prior` is the previous step's smoothed scores; with run.score_ema > 0 the
/// training-time scores become score_ema * prior + (1 - score_ema) * fresh.
ForwardCache forward(const ToyModel& model, const SyntheticSample& sample, const RunConfig& run,
                     Phase phase = Phase::Train, const Detached* pinned = nullptr,
                     const DominanceScores* prior = nullptr);

struct BackwardResult {
  ModelParams grad;       // full objective, modality-A encoder scaled by lambda
  ModelParams task_grad;  // task loss only, same scaling
  double grad_contrib_a;  // ||d task / d theta_enc_a|| (after lambda)
  double grad_contrib_b;
  double feat_grad_a;     // ||d task / d F_a||
  double feat_grad_b;
};

/// Throws InvalidState if `cache` was produced by a different model version.
BackwardResult backward(const ToyModel& model, const ForwardCache& cache, const RunConfig& run);

}  // namespace modbal
