#include "modbal/fusion.hpp"

#include <gtest/gtest.h>

#include <random>

#include "modbal/errors.hpp"
#include "test_util.hpp"

namespace modbal {
namespace {

using testing::random_feature;

TEST(Fuse, EquilibriumInverseEqualsUniform) {
  std::mt19937_64 rng(1);
  const FeatureMap d = random_feature(rng, {3, 4, 4}), n = random_feature(rng, {3, 4, 4});
  const RoleScores half{0.5, 0.5};
  const auto inv = miw_fuse(d, n, half);
  EXPECT_EQ(inv, fuse(d, n, half, WeightingStrategy::Uniform));
  for (std::size_t i = 0; i < inv.size(); ++i) EXPECT_EQ(inv[i], 0.5 * (d[i] + n[i]));
}

TEST(Fuse, FullInversionSelectsRefinedFeature) {
  std::mt19937_64 rng(2);
  const FeatureMap d = random_feature(rng, {2, 3, 3}), n = random_feature(rng, {2, 3, 3});
  const RoleScores r = role_scores({1.0, 0.0, 0.5});
  EXPECT_EQ(r.s_dom, 1.0);
  EXPECT_EQ(miw_fuse(d, n, r), n);
  EXPECT_EQ(fuse(d, n, r, WeightingStrategy::Forward), d);
}

TEST(Fuse, MatchesWeightedSumOracle) {
  std::mt19937_64 rng(3);
  const FeatureMap d = random_feature(rng, {2, 3, 4}), n = random_feature(rng, {2, 3, 4});
  const auto out = miw_fuse(d, n, role_scores({0.7, 0.3, 0.5}));
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_EQ(out[i], 0.3 * d[i] + 0.7 * n[i]);
}

TEST(Fuse, UniformIgnoresScores) {
  std::mt19937_64 rng(4);
  const FeatureMap d = random_feature(rng, {2, 2, 2}), n = random_feature(rng, {2, 2, 2});
  EXPECT_EQ(fuse(d, n, {0.9, 0.1}, WeightingStrategy::Uniform),
            fuse(d, n, {0.2, 0.8}, WeightingStrategy::Uniform));
}

TEST(Fuse, InverseAndForwardSwapUnderScoreSwap) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const Shape3 s = testing::random_shape(rng, 4, 6, 1);
    const FeatureMap d = random_feature(rng, s), n = random_feature(rng, s);
    const double a = u(rng);
    EXPECT_EQ(fuse(d, n, {a, 1.0 - a}, WeightingStrategy::Inverse),
              fuse(d, n, {1.0 - a, a}, WeightingStrategy::Forward));
  }
}

TEST(Fuse, InverseSuppressesDominant) {
  std::uniform_real_distribution<double> u(0.5, 1.0);
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    const double a = u(rng);
    if (a == 0.5) continue;
    const auto k = fusion_coefficients({a, 1.0 - a}, WeightingStrategy::Inverse);
    EXPECT_LT(k.on_dominant, k.on_non_dominant);
  }
}

TEST(Fuse, LinearAndZeroPreserving) {
  std::mt19937_64 rng(7);
  const Shape3 s{2, 3, 3};
  const FeatureMap zero(s);
  for (auto strategy : {WeightingStrategy::Inverse, WeightingStrategy::Uniform,
                        WeightingStrategy::Forward}) {
    EXPECT_EQ(fuse(zero, zero, {0.8, 0.2}, strategy), zero);
    const FeatureMap d1 = random_feature(rng, s), d2 = random_feature(rng, s),
                     n = random_feature(rng, s);
    const auto lhs = fuse(d1 + d2, n, {0.8, 0.2}, strategy);
    const auto rhs = fuse(d1, n, {0.8, 0.2}, strategy) + fuse(d2, zero, {0.8, 0.2}, strategy);
    for (std::size_t i = 0; i < lhs.size(); ++i) EXPECT_NEAR(lhs[i], rhs[i], 1e-14);
  }
}

TEST(Fuse, Errors) {
  EXPECT_THROW(fuse(FeatureMap({1, 2, 2}), FeatureMap({1, 2, 3}), {0.5, 0.5},
                    WeightingStrategy::Inverse),
               ShapeError);
  EXPECT_THROW(fuse(FeatureMap({1, 2, 2}), FeatureMap({1, 2, 2}), {0.6, 0.6},
                    WeightingStrategy::Inverse),
               std::invalid_argument);
}

TEST(Strategy, ParseRoundTrip) {
  for (auto s : {WeightingStrategy::Inverse, WeightingStrategy::Uniform, WeightingStrategy::Forward})
    EXPECT_EQ(parse_strategy(to_string(s)), s);
  EXPECT_FALSE(parse_strategy("balanced").has_value());
}

}  // namespace
}  // namespace modbal
