#include "modbal/synth.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "modbal/rng.hpp"

namespace modbal {

namespace {

struct Blob {
  int y0, x0, h, w;
  bool gaussian;
};

// Rectangles are solid; gaussian blobs peak at 1 in their box centre.
void paint(std::vector<double>& img, std::size_t W, const Blob& b) {
  const double cy = b.y0 + (b.h - 1) / 2.0;
  const double cx = b.x0 + (b.w - 1) / 2.0;
  const double sy = std::max(0.5, b.h / 2.5);
  const double sx = std::max(0.5, b.w / 2.5);
  for (int y = b.y0; y < b.y0 + b.h; ++y) {
    for (int x = b.x0; x < b.x0 + b.w; ++x) {
      double v = 1.0;
      if (b.gaussian) {
        const double dy = (y - cy) / sy;
        const double dx = (x - cx) / sx;
        v = std::exp(-0.5 * (dy * dy + dx * dx));
      }
      double& px = img[static_cast<std::size_t>(y) * W + static_cast<std::size_t>(x)];
      px = std::max(px, v);
    }
  }
}

Blob random_blob(SplitMix64& rng, const GeneratorConfig& cfg, int margin) {
  const int H = static_cast<int>(cfg.height);
  const int W = static_cast<int>(cfg.width);
  const int h = static_cast<int>(rng.integer(cfg.min_blob_size, cfg.max_blob_size));
  const int w = static_cast<int>(rng.integer(cfg.min_blob_size, cfg.max_blob_size));
  const int y0 = static_cast<int>(rng.integer(margin, H - margin - h));
  const int x0 = static_cast<int>(rng.integer(margin, W - margin - w));
  const bool gaussian = rng.uniform() < 0.5;
  return {y0, x0, h, w, gaussian};
}

std::vector<double> box_blur(const std::vector<double>& img, std::size_t H, std::size_t W, int r) {
  if (r <= 0) return img;
  std::vector<double> out(img.size(), 0.0);
  const int h = static_cast<int>(H), w = static_cast<int>(W);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      int n = 0;
      for (int dy = -r; dy <= r; ++dy) {
        for (int dx = -r; dx <= r; ++dx) {
          const int yy = y + dy, xx = x + dx;
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
          s += img[static_cast<std::size_t>(yy) * W + static_cast<std::size_t>(xx)];
          ++n;
        }
      }
      out[static_cast<std::size_t>(y) * W + static_cast<std::size_t>(x)] = s / n;
    }
  }
  return out;
}

std::vector<double> shift(const std::vector<double>& img, std::size_t H, std::size_t W, int dy,
                          int dx) {
  if (dy == 0 && dx == 0) return img;
  std::vector<double> out(img.size(), 0.0);
  const int h = static_cast<int>(H), w = static_cast<int>(W);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int sy = y - dy, sx = x - dx;
      if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
      out[static_cast<std::size_t>(y) * W + static_cast<std::size_t>(x)] =
          img[static_cast<std::size_t>(sy) * W + static_cast<std::size_t>(sx)];
    }
  }
  return out;
}

}  // namespace

void GeneratorConfig::validate() const {
  const int margin = std::max(std::abs(offset_b_y), std::abs(offset_b_x));
  if (height < 2 || width < 2) throw std::invalid_argument("generator image must be >= 2x2");
  if (min_blobs < 1 || max_blobs < min_blobs) {
    throw std::invalid_argument("generator blob count range must satisfy 1 <= min <= max");
  }
  if (min_blob_size < 1 || max_blob_size < min_blob_size) {
    throw std::invalid_argument("generator blob size range must satisfy 1 <= min <= max");
  }
  if (static_cast<int>(std::min(height, width)) < 2 * margin + max_blob_size) {
    throw std::invalid_argument("generator image too small for blob size " +
                                std::to_string(max_blob_size) + " with offset margin " +
                                std::to_string(margin));
  }
  if (noise_a < 0.0 || noise_b < 0.0 || blur_b < 0 || distractors_a < 0) {
    throw std::invalid_argument("generator noise, blur and distractor counts must be >= 0");
  }
  if (hidden_a < 0.0 || hidden_a > 1.0) {
    throw std::invalid_argument("generator hidden_a must lie in [0, 1]");
  }
}

GeneratorConfig GeneratorConfig::a_dominant() { return GeneratorConfig{}; }

SyntheticSample gen_sample(const GeneratorConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const std::size_t H = cfg.height, W = cfg.width, HW = H * W;
  const int margin = std::max(std::abs(cfg.offset_b_y), std::abs(cfg.offset_b_x));
  SplitMix64 rng(seed);

  std::vector<double> gt(HW, 0.0);
  std::vector<double> visible_a(HW, 0.0);
  const auto n_blobs = rng.integer(cfg.min_blobs, cfg.max_blobs);
  for (std::int64_t i = 0; i < n_blobs; ++i) {
    const Blob b = random_blob(rng, cfg, margin);
    paint(gt, W, b);
    if (!(rng.uniform() < cfg.hidden_a)) paint(visible_a, W, b);
  }

  std::vector<double> clutter(HW, 0.0);
  for (int i = 0; i < cfg.distractors_a; ++i) paint(clutter, W, random_blob(rng, cfg, 0));

  SyntheticSample s{FeatureMap({1, H, W}), FeatureMap({1, H, W}), GroundTruthMask{}, seed};
  for (std::size_t p = 0; p < HW; ++p) {
    const double texture = cfg.texture_a * clutter[p] * (1.0 - gt[p]);
    double v = cfg.contrast_a * visible_a[p] + texture;
    if (cfg.noise_a > 0.0) v += cfg.noise_a * rng.normal();
    s.mod_a[p] = std::clamp(v, 0.0, 1.0);
  }

  std::vector<double> b(HW);
  for (std::size_t p = 0; p < HW; ++p) b[p] = cfg.contrast_b * gt[p];
  b = shift(box_blur(b, H, W, cfg.blur_b), H, W, cfg.offset_b_y, cfg.offset_b_x);
  for (std::size_t p = 0; p < HW; ++p) {
    double v = b[p];
    if (cfg.noise_b > 0.0) v += cfg.noise_b * rng.normal();
    s.mod_b[p] = std::clamp(v, 0.0, 1.0);
  }
  s.gt = GroundTruthMask(H, W, std::move(gt));
  return s;
}

Centroid centroid(std::span<const double> values, std::size_t height, std::size_t width) {
  double total = 0.0, sy = 0.0, sx = 0.0;
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      const double v = values[y * width + x];
      total += v;
      sy += v * static_cast<double>(y);
      sx += v * static_cast<double>(x);
    }
  if (!(total > 0.0)) throw std::invalid_argument("centroid of an all-zero map");
  return {sy / total, sx / total};
}

}  // namespace modbal
