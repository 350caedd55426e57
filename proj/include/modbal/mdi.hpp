#pragma once

// Modality Dominance Index.
//
// Each modality's score blends two pair-normalized terms:
//   diversity  D = entropy(softmax(flatten(F)))
//   response   R = || d L_aux / d F ||_2,   L_aux = sum_px (sigmoid(w.f + b) - gt)^2
// as S = delta * D_norm + (1 - delta) * R_norm, so S_rgb + S_ir = 1.

#include <optional>
#include <string_view>
#include <utility>
#include <vector>

#include "modbal/tensor.hpp"

namespace modbal {

enum class Modality { Rgb, Ir };

std::string_view to_string(Modality m);
inline Modality other(Modality m) { return m == Modality::Rgb ? Modality::Ir : Modality::Rgb; }

/// Per-pixel linear map C -> 1 followed by a logistic squashing.
struct AuxDetector {
  Matrix weights;  // 1 x C
  double bias = 0.0;

  AuxDetector() = default;
  AuxDetector(Matrix w, double b);
  std::size_t channels() const { return weights.cols(); }
};

/// H x W object mask with values clamped into [0, 1].
class GroundTruthMask {
 public:
  GroundTruthMask() = default;
  GroundTruthMask(std::size_t height, std::size_t width, std::vector<double> values);
  GroundTruthMask(std::size_t height, std::size_t width, double fill = 0.0);

  std::size_t height() const { return h_; }
  std::size_t width() const { return w_; }
  double operator[](std::size_t p) const { return v_[p]; }
  double at(std::size_t y, std::size_t x) const { return v_[y * w_ + x]; }
  std::span<const double> values() const { return v_; }

  friend bool operator==(const GroundTruthMask&, const GroundTruthMask&) = default;

 private:
  std::size_t h_ = 0;
  std::size_t w_ = 0;
  std::vector<double> v_;
};

struct DominanceScores {
  double s_rgb = 0.5;
  double s_ir = 0.5;
  double delta = 0.5;

  double score(Modality m) const { return m == Modality::Rgb ? s_rgb : s_ir; }
};

inline constexpr double kDefaultDelta = 0.5;
inline constexpr double kNormalizeEps = 1e-12;

/// Softmax entropy of the flattened feature. With a mask, only elements at
/// pixels where mask > 0.5 participate; an empty selection throws.
double diversity(const FeatureMap& f, const GroundTruthMask* mask = nullptr);

/// Per-pixel sigmoid(w . f + b) heatmap.
std::vector<double> aux_predict(const FeatureMap& f, const AuxDetector& g);

double aux_loss(const FeatureMap& f, const AuxDetector& g, const GroundTruthMask& gt);

/// Analytic dL_aux/dF: 2 (sigma - gt) sigma (1 - sigma) w_c per pixel and channel.
FeatureMap aux_loss_grad(const FeatureMap& f, const AuxDetector& g, const GroundTruthMask& gt);

/// dL_aux w.r.t. the detector parameters (used when aux losses are trained).
struct AuxParamGrad {
  Matrix d_weights;
  double d_bias = 0.0;
};
AuxParamGrad aux_loss_param_grad(const FeatureMap& f, const AuxDetector& g,
                                 const GroundTruthMask& gt);

double response(const FeatureMap& f, const AuxDetector& g, const GroundTruthMask& gt);

/// Sum-to-one normalization; (0.5, 0.5) when a + b <= 1e-12.
std::pair<double, double> normalize_pair(double a, double b);

/// Raw and normalized terms behind a pair of scores.
struct MdiBreakdown {
  double diversity_rgb = 0.0;
  double diversity_ir = 0.0;
  double response_rgb = 0.0;
  double response_ir = 0.0;
  DominanceScores scores;
};

MdiBreakdown mdi_breakdown(const FeatureMap& f_rgb, const FeatureMap& f_ir,
                           const AuxDetector& g_rgb, const AuxDetector& g_ir,
                           const GroundTruthMask& gt, double delta = kDefaultDelta);

DominanceScores mdi_scores(const FeatureMap& f_rgb, const FeatureMap& f_ir,
                           const AuxDetector& g_rgb, const AuxDetector& g_ir,
                           const GroundTruthMask& gt, double delta = kDefaultDelta);

/// Modality with the strictly larger score; ties go to RGB.
Modality dominant(const DominanceScores& s);

}  // namespace modbal
