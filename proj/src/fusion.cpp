#include "modbal/fusion.hpp"

#include <cmath>
#include <stdexcept>

#include "modbal/errors.hpp"

namespace modbal {

std::string_view to_string(WeightingStrategy s) {
  switch (s) {
    case WeightingStrategy::Inverse: return "inverse";
    case WeightingStrategy::Uniform: return "uniform";
    case WeightingStrategy::Forward: return "forward";
  }
  return "unknown";
}

std::optional<WeightingStrategy> parse_strategy(std::string_view name) {
  if (name == "inverse") return WeightingStrategy::Inverse;
  if (name == "uniform") return WeightingStrategy::Uniform;
  if (name == "forward") return WeightingStrategy::Forward;
  return std::nullopt;
}

RoleScores role_scores(const DominanceScores& scores) {
  const Modality dom = dominant(scores);
  return {scores.score(dom), scores.score(other(dom))};
}

FusionCoefficients fusion_coefficients(const RoleScores& scores, WeightingStrategy strategy) {
  if (!(std::abs(scores.s_dom + scores.s_non - 1.0) <= 1e-9)) {
    throw std::invalid_argument("fusion scores must sum to 1, got " +
                                std::to_string(scores.s_dom) + " + " +
                                std::to_string(scores.s_non));
  }
  switch (strategy) {
    case WeightingStrategy::Inverse: return {scores.s_non, scores.s_dom};
    case WeightingStrategy::Uniform: return {0.5, 0.5};
    case WeightingStrategy::Forward: return {scores.s_dom, scores.s_non};
  }
  throw std::invalid_argument("unknown weighting strategy");
}

FeatureMap fuse(const FeatureMap& f_dom, const FeatureMap& f_non_refined,
                const RoleScores& scores, WeightingStrategy strategy) {
  if (f_dom.shape() != f_non_refined.shape()) {
    throw ShapeError("fuse: " + to_string(f_dom.shape()) + " vs " +
                     to_string(f_non_refined.shape()));
  }
  const auto k = fusion_coefficients(scores, strategy);
  FeatureMap out(f_dom.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = k.on_dominant * f_dom[i] + k.on_non_dominant * f_non_refined[i];
  }
  return out;
}

FeatureMap miw_fuse(const FeatureMap& f_dom, const FeatureMap& f_non_refined,
                    const RoleScores& scores) {
  return fuse(f_dom, f_non_refined, scores, WeightingStrategy::Inverse);
}

}  // namespace modbal
