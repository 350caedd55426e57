#pragma once

#include <optional>
#include <string_view>

#include "modbal/mdi.hpp"
#include "modbal/tensor.hpp"

namespace modbal {

/// How the dominant and refined non-dominant features are weighted at fusion.
enum class WeightingStrategy {
  Inverse,  // S_non * F_dom + S_dom * F'_non
  Uniform,  // 0.5 * F_dom + 0.5 * F'_non
  Forward,  // S_dom * F_dom + S_non * F'_non
};

std::string_view to_string(WeightingStrategy s);
std::optional<WeightingStrategy> parse_strategy(std::string_view name);

/// Dominance scores ordered by role rather than by modality: s_dom belongs to
/// the feature passed as F_dom, s_non to the one passed as F'_non.
struct RoleScores {
  double s_dom = 0.5;
  double s_non = 0.5;
};

/// Orders a modality score pair by dominant(scores).
RoleScores role_scores(const DominanceScores& scores);

/// Scalar coefficients applied to (F_dom, F'_non). Scores must sum to 1
/// within 1e-9.
struct FusionCoefficients {
  double on_dominant = 0.5;
  double on_non_dominant = 0.5;
};
FusionCoefficients fusion_coefficients(const RoleScores& scores, WeightingStrategy strategy);

/// Minimal inverse weighting: the dominant feature is scaled by the
/// non-dominant score and vice versa, then summed elementwise.
FeatureMap miw_fuse(const FeatureMap& f_dom, const FeatureMap& f_non_refined,
                    const RoleScores& scores);

FeatureMap fuse(const FeatureMap& f_dom, const FeatureMap& f_non_refined,
                const RoleScores& scores, WeightingStrategy strategy);

}  // namespace modbal
