#include "modbal/model.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "modbal/errors.hpp"
#include "modbal/gradcheck.hpp"

namespace modbal {
namespace {

RunConfig all_off() {
  RunConfig r;
  r.enable_mdi = r.enable_hcg_low = r.enable_hcg_high = r.enable_miw = false;
  r.strategy = WeightingStrategy::Uniform;
  return r;
}

SyntheticSample twin_sample(std::uint64_t seed) {
  SyntheticSample s = gen_sample(GeneratorConfig{}, seed);
  s.mod_b = s.mod_a;
  return s;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

TEST(Forward, AllFlagsOffIsPlainAverage) {
  const ToyModel m = ToyModel::init(ModelConfig{}, 3);
  const SyntheticSample s = gen_sample(GeneratorConfig{}, 5);
  const ForwardCache c = forward(m, s, all_off());
  EXPECT_DOUBLE_EQ(c.scores.s_rgb, 0.5);
  EXPECT_DOUBLE_EQ(c.scores.s_ir, 0.5);
  EXPECT_FALSE(c.distill.has_value());
  for (std::size_t i = 0; i < c.fused.values().size(); ++i)
    EXPECT_NEAR(c.fused[i], 0.5 * (c.enc_a.out[i] + c.enc_b.out[i]), 1e-15);
  for (double p : c.pred) EXPECT_TRUE(p > 0.0 && p < 1.0);
}

TEST(Forward, LossMatchesRecomputationFromCache) {
  const ToyModel m = ToyModel::init(ModelConfig{}, 11);
  const SyntheticSample s = gen_sample(GeneratorConfig{}, 12);
  const RunConfig run;
  const ForwardCache c = forward(m, s, run);
  ASSERT_TRUE(c.distill.has_value());
  EXPECT_NEAR(c.task_loss, heatmap_bce(c.logits, c.gt), 1e-12);
  const DistillResult d =
      loss_distill_pinned(c.non_refined, c.teacher, run.distill_weights(), c.distill->components.scale);
  EXPECT_NEAR(c.distill->loss, d.loss, 1e-12);
  EXPECT_NEAR(c.total_loss, c.task_loss + c.distill->loss, 1e-12);

  // Replaying with every detached quantity pinned reproduces the objective.
  const Detached pin = c.detached();
  const ForwardCache again = forward(m, s, run, Phase::Train, &pin);
  EXPECT_NEAR(again.total_loss, c.total_loss, 1e-12);
}

TEST(Forward, TwinInputsGiveEqualScores) {
  const ToyModel m = ToyModel::init(ModelConfig{}, 4, /*mirrored=*/true);
  const ForwardCache c = forward(m, twin_sample(9), RunConfig{});
  EXPECT_NEAR(c.scores.s_rgb, 0.5, 1e-12);
  EXPECT_NEAR(c.scores.s_ir, 0.5, 1e-12);
}

TEST(Backward, SymmetricBranchesWithoutGuidance) {
  const ToyModel m = ToyModel::init(ModelConfig{}, 4, /*mirrored=*/true);
  RunConfig run;
  run.enable_hcg_low = run.enable_hcg_high = false;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const ForwardCache c = forward(m, twin_sample(seed), run);
    const BackwardResult g = backward(m, c, run);
    EXPECT_NEAR(g.grad_contrib_a, g.grad_contrib_b, 1e-10);
    EXPECT_NEAR(g.feat_grad_a, g.feat_grad_b, 1e-10);
  }
}

TEST(Backward, LambdaScalesBranchAOnly) {
  const ToyModel m = ToyModel::init(ModelConfig{}, 21);
  const SyntheticSample s = gen_sample(GeneratorConfig{}, 22);
  RunConfig r1;
  RunConfig r3 = r1;
  r3.grad_boost_lambda = 3.0;
  const BackwardResult g1 = backward(m, forward(m, s, r1), r1);
  const BackwardResult g3 = backward(m, forward(m, s, r3), r3);
  EXPECT_NEAR(g3.grad_contrib_a, 3.0 * g1.grad_contrib_a, 1e-14 * g1.grad_contrib_a);
  EXPECT_EQ(g3.grad_contrib_b, g1.grad_contrib_b);
  EXPECT_NEAR(group_norm(g3.grad, ParamGroup::EncoderA),
              3.0 * group_norm(g1.grad, ParamGroup::EncoderA), 1e-12);
  EXPECT_EQ(group_norm(g3.grad, ParamGroup::EncoderB), group_norm(g1.grad, ParamGroup::EncoderB));
  EXPECT_EQ(group_norm(g3.grad, ParamGroup::Head), group_norm(g1.grad, ParamGroup::Head));
}

TEST(Backward, StaleCacheThrows) {
  ToyModel m = ToyModel::init(ModelConfig{}, 1);
  const RunConfig run;
  const ForwardCache c = forward(m, gen_sample(GeneratorConfig{}, 1), run);
  ++m.version;
  EXPECT_THROW(backward(m, c, run), InvalidState);
  --m.version;
  RunConfig other = run;
  other.enable_hcg_high = false;
  EXPECT_THROW(backward(m, c, other), InvalidState);
}

TEST(Backward, ZeroSignalGivesZeroGradient) {
  // Head outputs logit 0 everywhere, matching a 0.5 mask; the student equals
  // the teacher because both branches are identical and no reprojection runs.
  ToyModel m = ToyModel::init(ModelConfig{}, 8, /*mirrored=*/true);
  for (double& w : m.params.head_w.values()) w = 0.0;
  m.params.head_b = {0.0};
  SyntheticSample s = twin_sample(3);
  s.gt = GroundTruthMask(s.gt.height(), s.gt.width(), 0.5);
  RunConfig run;
  run.enable_hcg_low = false;
  const ForwardCache c = forward(m, s, run);
  const BackwardResult g = backward(m, c, run);
  for (double v : g.grad.flatten()) ASSERT_EQ(v, 0.0);
  EXPECT_EQ(g.grad_contrib_a, 0.0);
  EXPECT_EQ(g.grad_contrib_b, 0.0);
}

TEST(Backward, MatchesFiniteDifferencesOnTinyModel) {
  const ModelConfig tiny = tiny_model_config();
  const GeneratorConfig gen = tiny_generator_config();
  const ToyModel m = ToyModel::init(tiny, 5);
  ASSERT_LE(m.params.size(), 200u);
  int checked = 0;
  for (int flags = 0; flags < 16; ++flags) {
    RunConfig run;
    run.model = tiny;
    run.enable_mdi = flags & 1;
    run.enable_hcg_low = flags & 2;
    run.enable_hcg_high = flags & 4;
    run.enable_miw = flags & 8;
    run.grad_boost_lambda = 2.0;
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
      const double err = end_to_end_error(m, gen_sample(gen, 100 + seed), run);
      if (err < 0.0) continue;
      ++checked;
      EXPECT_LE(err, 1e-5) << "flags " << flags << " seed " << seed;
    }
  }
  EXPECT_GE(checked, 32);
}

TEST(ModelParams, FlattenAssignRoundTrip) {
  ToyModel m = ToyModel::init(ModelConfig{}, 2);
  const std::vector<double> flat = m.params.flatten();
  EXPECT_EQ(flat.size(), m.params.size());
  EXPECT_LE(flat.size(), 2000u);
  ModelParams z = m.params.zeros_like();
  for (double v : z.flatten()) EXPECT_EQ(v, 0.0);
  z.assign(flat);
  EXPECT_EQ(max_abs_diff(z.flatten(), flat), 0.0);
  for (double v : flat) EXPECT_TRUE(std::isfinite(v));
}

TEST(ModelInit, MirroredCopiesBranchA) {
  const ToyModel m = ToyModel::init(ModelConfig{}, 6, true);
  EXPECT_EQ(group_norm(m.params, ParamGroup::EncoderA), group_norm(m.params, ParamGroup::EncoderB));
  const ToyModel u = ToyModel::init(ModelConfig{}, 6, false);
  EXPECT_NE(group_norm(u.params, ParamGroup::EncoderA), group_norm(u.params, ParamGroup::EncoderB));
}

TEST(RunConfig, ValidateRejectsBadValues) {
  RunConfig r;
  EXPECT_NO_THROW(r.validate());
  r.grad_boost_lambda = 0.5;
  EXPECT_THROW(r.validate(), std::invalid_argument);
  r = {};
  r.delta = 1.5;
  EXPECT_THROW(r.validate(), std::invalid_argument);
  r = {};
  r.steps = -1;
  EXPECT_THROW(r.validate(), std::invalid_argument);
}

TEST(RunConfig, MiwOffMeansUniform) {
  RunConfig r;
  r.strategy = WeightingStrategy::Forward;
  EXPECT_EQ(r.effective_strategy(), WeightingStrategy::Forward);
  r.enable_miw = false;
  EXPECT_EQ(r.effective_strategy(), WeightingStrategy::Uniform);
}

}  // namespace
}  // namespace modbal
