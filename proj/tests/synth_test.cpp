#include "modbal/synth.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace modbal {
namespace {

GeneratorConfig noiseless() {
  GeneratorConfig cfg;
  cfg.noise_a = 0.0;
  cfg.noise_b = 0.0;
  cfg.blur_b = 0;
  cfg.contrast_a = 1.0;
  cfg.contrast_b = 1.0;
  return cfg;
}

TEST(GenSample, SameSeedSameSample) {
  const GeneratorConfig cfg;
  for (std::uint64_t seed : {1ull, 42ull, 0xFFFFFFFFFFull}) {
    const SyntheticSample a = gen_sample(cfg, seed);
    const SyntheticSample b = gen_sample(cfg, seed);
    EXPECT_EQ(a.mod_a.values().size(), b.mod_a.values().size());
    EXPECT_TRUE(std::equal(a.mod_a.values().begin(), a.mod_a.values().end(),
                           b.mod_a.values().begin()));
    EXPECT_TRUE(std::equal(a.mod_b.values().begin(), a.mod_b.values().end(),
                           b.mod_b.values().begin()));
    EXPECT_EQ(a.gt, b.gt);
    EXPECT_EQ(a.seed, seed);
  }
}

TEST(GenSample, DifferentSeedsDiffer) {
  const GeneratorConfig cfg;
  const SyntheticSample a = gen_sample(cfg, 1);
  const SyntheticSample b = gen_sample(cfg, 2);
  EXPECT_FALSE(std::equal(a.mod_a.values().begin(), a.mod_a.values().end(),
                          b.mod_a.values().begin()));
}

TEST(GenSample, ValuesInUnitIntervalAndObjectPresent) {
  GeneratorConfig cfg;
  cfg.texture_a = 0.5;
  cfg.distractors_a = 2;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const SyntheticSample s = gen_sample(cfg, seed);
    for (double v : s.mod_a.values()) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
    for (double v : s.mod_b.values()) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
    double mass = 0.0;
    for (double v : s.gt.values()) {
      ASSERT_TRUE(v >= 0.0 && v <= 1.0);
      mass += v;
    }
    EXPECT_GT(mass, 0.0);
  }
}

TEST(GenSample, NoiselessModalityAEqualsMask) {
  const GeneratorConfig cfg = noiseless();
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const SyntheticSample s = gen_sample(cfg, seed);
    for (std::size_t p = 0; p < s.gt.values().size(); ++p) ASSERT_EQ(s.mod_a[p], s.gt[p]);
  }
}

TEST(GenSample, OffsetShiftsCentroid) {
  GeneratorConfig cfg = noiseless();
  cfg.offset_b_y = 2;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const SyntheticSample s = gen_sample(cfg, seed);
    const Centroid g = centroid(s.gt.values(), cfg.height, cfg.width);
    const Centroid b = centroid(s.mod_b.values(), cfg.height, cfg.width);
    EXPECT_NEAR(b.y - g.y, 2.0, 1e-12);
    EXPECT_NEAR(b.x - g.x, 0.0, 1e-12);
  }
}

TEST(Centroid, HandExample) {
  // Mass 1 at (0,0) and 3 at (1,1): centroid (0.75, 0.75).
  const std::vector<double> v{1, 0, 0, 3};
  const Centroid c = centroid(v, 2, 2);
  EXPECT_DOUBLE_EQ(c.y, 0.75);
  EXPECT_DOUBLE_EQ(c.x, 0.75);
  EXPECT_THROW(centroid(std::vector<double>(4, 0.0), 2, 2), std::invalid_argument);
}

TEST(GeneratorConfig, RejectsDegenerateSettings) {
  GeneratorConfig cfg;
  cfg.height = 1;
  EXPECT_THROW(gen_sample(cfg, 1), std::invalid_argument);
  cfg = {};
  cfg.min_blobs = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.max_blob_size = 1;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.offset_b_x = 5;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.noise_b = -0.1;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.hidden_a = 1.5;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(GeneratorConfig, DefaultPresetFavoursA) {
  const GeneratorConfig cfg = GeneratorConfig::a_dominant();
  EXPECT_GE(cfg.contrast_a, cfg.contrast_b);
  EXPECT_LE(cfg.noise_a, cfg.noise_b);
  EXPECT_NO_THROW(cfg.validate());
}

}  // namespace
}  // namespace modbal
