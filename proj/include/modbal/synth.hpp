#pragma once

// Synthetic paired-modality images with object masks.
//
// Modality A ("RGB-like") is sharp and high-contrast but carries background
// distractors and can miss some objects entirely; modality B ("IR-like") sees
// every object but is dimmer, blurred, noisier and possibly shifted.

#include <cstdint>

#include "modbal/mdi.hpp"
#include "modbal/tensor.hpp"

namespace modbal {

struct GeneratorConfig {
  std::size_t height = 12;
  std::size_t width = 12;
  int min_blobs = 1;
  int max_blobs = 3;
  int min_blob_size = 2;
  int max_blob_size = 4;
  double contrast_a = 1.0;
  double contrast_b = 0.6;
  double noise_a = 0.05;
  double noise_b = 0.2;
  int blur_b = 1;          // box-blur radius in pixels
  int offset_b_y = 0;      // misalignment of modality B, rows
  int offset_b_x = 0;      // misalignment of modality B, columns
  double texture_a = 0.0;  // amplitude of background distractors in A
  int distractors_a = 0;   // number of distractor rectangles in A
  double hidden_a = 0.0;   // probability that an object is invisible in A

  void validate() const;
  bool operator==(const GeneratorConfig&) const = default;

  /// Default "A-dominant" preset used by the experiments.
  static GeneratorConfig a_dominant();
};

struct SyntheticSample {
  FeatureMap mod_a;  // 1 x H x W, values in [0, 1]
  FeatureMap mod_b;  // 1 x H x W, values in [0, 1]
  GroundTruthMask gt;
  std::uint64_t seed = 0;
};

/// Deterministic in (cfg, seed).
SyntheticSample gen_sample(const GeneratorConfig& cfg, std::uint64_t seed);

/// Mask-weighted centroid (row, col) of a single-channel map.
struct Centroid {
  double y = 0.0;
  double x = 0.0;
};
Centroid centroid(std::span<const double> values, std::size_t height, std::size_t width);

}  // namespace modbal
