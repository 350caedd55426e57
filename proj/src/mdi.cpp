#include "modbal/mdi.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "modbal/errors.hpp"

namespace modbal {

namespace {

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

void check_aux_inputs(const FeatureMap& f, const AuxDetector& g, const GroundTruthMask& gt) {
  if (g.weights.rows() != 1 || g.channels() != f.channels()) {
    throw ShapeError("aux detector expects " + std::to_string(g.channels()) +
                     " channels, feature is " + to_string(f.shape()));
  }
  if (gt.height() != f.height() || gt.width() != f.width()) {
    throw ShapeError("ground-truth mask " + std::to_string(gt.height()) + "x" +
                     std::to_string(gt.width()) + " does not match feature " +
                     to_string(f.shape()));
  }
}

}  // namespace

std::string_view to_string(Modality m) { return m == Modality::Rgb ? "rgb" : "ir"; }

AuxDetector::AuxDetector(Matrix w, double b) : weights(std::move(w)), bias(b) {
  if (weights.rows() != 1) throw ShapeError("aux detector weights must be 1 x C");
}

GroundTruthMask::GroundTruthMask(std::size_t height, std::size_t width, std::vector<double> values)
    : h_(height), w_(width), v_(std::move(values)) {
  if (h_ == 0 || w_ == 0) throw std::invalid_argument("mask dimensions must be >= 1");
  if (v_.size() != h_ * w_) {
    throw ShapeError("mask " + std::to_string(h_) + "x" + std::to_string(w_) + " needs " +
                     std::to_string(h_ * w_) + " values, got " + std::to_string(v_.size()));
  }
  for (double& v : v_) v = std::clamp(v, 0.0, 1.0);
}

GroundTruthMask::GroundTruthMask(std::size_t height, std::size_t width, double fill)
    : GroundTruthMask(height, width, std::vector<double>(height * width, fill)) {}

double diversity(const FeatureMap& f, const GroundTruthMask* mask) {
  if (mask == nullptr) return shannon_entropy(softmax(f.values()));
  if (mask->height() != f.height() || mask->width() != f.width()) {
    throw ShapeError("diversity mask does not match feature " + to_string(f.shape()));
  }
  const std::size_t hw = f.shape().pixels();
  std::vector<double> selected;
  for (std::size_t c = 0; c < f.channels(); ++c)
    for (std::size_t p = 0; p < hw; ++p)
      if ((*mask)[p] > 0.5) selected.push_back(f[c * hw + p]);
  if (selected.empty()) throw std::invalid_argument("diversity mask selects no elements");
  return shannon_entropy(softmax(selected));
}

std::vector<double> aux_predict(const FeatureMap& f, const AuxDetector& g) {
  const std::size_t hw = f.shape().pixels();
  std::vector<double> out(hw);
  for (std::size_t p = 0; p < hw; ++p) {
    double z = g.bias;
    for (std::size_t c = 0; c < f.channels(); ++c) z += g.weights(0, c) * f[c * hw + p];
    out[p] = sigmoid(z);
  }
  return out;
}

double aux_loss(const FeatureMap& f, const AuxDetector& g, const GroundTruthMask& gt) {
  check_aux_inputs(f, g, gt);
  const auto pred = aux_predict(f, g);
  double loss = 0.0;
  for (std::size_t p = 0; p < pred.size(); ++p) {
    const double r = pred[p] - gt[p];
    loss += r * r;
  }
  return loss;
}

FeatureMap aux_loss_grad(const FeatureMap& f, const AuxDetector& g, const GroundTruthMask& gt) {
  check_aux_inputs(f, g, gt);
  const auto pred = aux_predict(f, g);
  const std::size_t hw = pred.size();
  FeatureMap grad(f.shape());
  for (std::size_t p = 0; p < hw; ++p) {
    const double s = pred[p];
    const double dz = 2.0 * (s - gt[p]) * s * (1.0 - s);
    for (std::size_t c = 0; c < f.channels(); ++c) grad[c * hw + p] = dz * g.weights(0, c);
  }
  return grad;
}

AuxParamGrad aux_loss_param_grad(const FeatureMap& f, const AuxDetector& g,
                                 const GroundTruthMask& gt) {
  check_aux_inputs(f, g, gt);
  const auto pred = aux_predict(f, g);
  const std::size_t hw = pred.size();
  AuxParamGrad out{Matrix(1, f.channels()), 0.0};
  for (std::size_t p = 0; p < hw; ++p) {
    const double s = pred[p];
    const double dz = 2.0 * (s - gt[p]) * s * (1.0 - s);
    out.d_bias += dz;
    for (std::size_t c = 0; c < f.channels(); ++c) out.d_weights(0, c) += dz * f[c * hw + p];
  }
  return out;
}

double response(const FeatureMap& f, const AuxDetector& g, const GroundTruthMask& gt) {
  return frobenius_norm(aux_loss_grad(f, g, gt));
}

std::pair<double, double> normalize_pair(double a, double b) {
  if (a < 0.0 || b < 0.0) throw std::invalid_argument("normalize_pair: negative input");
  const double s = a + b;
  if (!(s > kNormalizeEps)) return {0.5, 0.5};
  return {a / s, b / s};
}

MdiBreakdown mdi_breakdown(const FeatureMap& f_rgb, const FeatureMap& f_ir,
                           const AuxDetector& g_rgb, const AuxDetector& g_ir,
                           const GroundTruthMask& gt, double delta) {
  if (!(delta >= 0.0 && delta <= 1.0)) {
    throw std::invalid_argument("mdi delta must lie in [0, 1], got " + std::to_string(delta));
  }
  if (f_rgb.shape() != f_ir.shape()) {
    throw ShapeError("mdi: modality features differ " + to_string(f_rgb.shape()) + " vs " +
                     to_string(f_ir.shape()));
  }
  MdiBreakdown b;
  b.diversity_rgb = diversity(f_rgb);
  b.diversity_ir = diversity(f_ir);
  b.response_rgb = response(f_rgb, g_rgb, gt);
  b.response_ir = response(f_ir, g_ir, gt);
  const auto [d_rgb, d_ir] = normalize_pair(b.diversity_rgb, b.diversity_ir);
  const auto [r_rgb, r_ir] = normalize_pair(b.response_rgb, b.response_ir);
  b.scores.delta = delta;
  b.scores.s_rgb = delta * d_rgb + (1.0 - delta) * r_rgb;
  b.scores.s_ir = delta * d_ir + (1.0 - delta) * r_ir;
  return b;
}

DominanceScores mdi_scores(const FeatureMap& f_rgb, const FeatureMap& f_ir,
                           const AuxDetector& g_rgb, const AuxDetector& g_ir,
                           const GroundTruthMask& gt, double delta) {
  return mdi_breakdown(f_rgb, f_ir, g_rgb, g_ir, gt, delta).scores;
}

Modality dominant(const DominanceScores& s) {
  return s.s_ir > s.s_rgb ? Modality::Ir : Modality::Rgb;
}

}  // namespace modbal
