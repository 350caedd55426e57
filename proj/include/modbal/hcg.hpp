#pragma once

// Hierarchical cross-modal guidance.
//
// Low level: the non-dominant feature is reprojected through a spatial
// correlation matrix built from Q = W_q * F_non and K = W_k * F_dom,
//   Corr = rowsoftmax(Q K^T / sqrt(d)),  F_reproj = Corr * F_non,
// and refined as F'_non = relu(conv3x3(F_non + F_reproj)).
//
// High level: a distillation loss pulls the student F_S toward the teacher F_T,
//   L = Scale * (alpha L_RW + beta L_DA) + gamma L_Struct,  Scale = exp(-Delta).
// Scale and the teacher-derived W_sem map are constants under differentiation;
// only the student receives a gradient.

#include <vector>

#include "modbal/tensor.hpp"

namespace modbal {

struct QKProjection {
  Matrix w_q;  // d x C
  Matrix w_k;  // d x C

  QKProjection() = default;
  QKProjection(Matrix q, Matrix k);
  std::size_t dim() const { return w_q.rows(); }
  std::size_t channels() const { return w_q.cols(); }
};

/// Channel-preserving 3x3 convolution followed by max(0, .).
struct RefineBlock {
  Conv3x3Kernel conv;

  RefineBlock() = default;
  explicit RefineBlock(Conv3x3Kernel k);
  std::size_t channels() const { return conv.c_out; }
};

struct DistillWeights {
  double alpha = 1.0;
  double beta = 1.0;
  double gamma = 1.0;

  void validate() const;
};

// ---------------------------------------------------------------------------
// Low-level path

struct CorrelationTrace {
  Matrix q;     // HW x d
  Matrix k;     // HW x d
  Matrix corr;  // HW x HW
};

CorrelationTrace correlation_traced(const FeatureMap& f_non, const FeatureMap& f_dom,
                                    const QKProjection& proj);
Matrix correlation(const FeatureMap& f_non, const FeatureMap& f_dom, const QKProjection& proj);

struct CorrelationGrad {
  FeatureMap d_f_non;
  FeatureMap d_f_dom;
  Matrix d_w_q;
  Matrix d_w_k;
};
CorrelationGrad correlation_backward(const FeatureMap& f_non, const FeatureMap& f_dom,
                                     const QKProjection& proj, const CorrelationTrace& trace,
                                     const Matrix& d_corr);

/// Corr * F_non viewed as [HW, C]. Rejects rows that do not sum to 1 within 1e-6.
FeatureMap reproject(const Matrix& corr, const FeatureMap& f_non);

struct ReprojectGrad {
  Matrix d_corr;
  FeatureMap d_f_non;
};
ReprojectGrad reproject_backward(const Matrix& corr, const FeatureMap& f_non,
                                 const FeatureMap& d_out);

struct RefineTrace {
  FeatureMap input;  // F_non + F_reproj
  FeatureMap pre;    // conv output before rectification
  FeatureMap out;
};
RefineTrace refine_traced(const FeatureMap& f_non, const FeatureMap& f_reproj,
                          const RefineBlock& block);
FeatureMap refine(const FeatureMap& f_non, const FeatureMap& f_reproj, const RefineBlock& block);

struct RefineGrad {
  FeatureMap d_input;  // w.r.t. F_non + F_reproj (same for both summands)
  Conv3x3Kernel d_conv;
};
RefineGrad refine_backward(const RefineTrace& trace, const RefineBlock& block,
                           const FeatureMap& d_out);

// ---------------------------------------------------------------------------
// High-level path

struct LossGrad {
  double value = 0.0;
  FeatureMap grad;  // d value / d F_S
};

/// Delta = mean squared elementwise difference.
double feature_variance(const FeatureMap& f_t, const FeatureMap& f_s);

/// exp(-Delta).
double scale_factor(double delta_var);

/// Channel-wise L2 norm per pixel divided by its spatial mean. An all-zero
/// teacher yields an all-ones map. Returned row-major, length H*W.
std::vector<double> w_sem(const FeatureMap& f_t);

LossGrad loss_rw(const FeatureMap& f_s, const FeatureMap& f_t);
LossGrad loss_da(const FeatureMap& f_s, const FeatureMap& f_t);
LossGrad loss_struct(const FeatureMap& f_s, const FeatureMap& f_t);

struct DistillComponents {
  double l_rw = 0.0;
  double l_da = 0.0;
  double l_struct = 0.0;
  double delta_var = 0.0;
  double scale = 1.0;
};

struct DistillResult {
  double loss = 0.0;
  FeatureMap grad_student;
  DistillComponents components;
};

inline constexpr double kCosineNormFloor = 1e-12;

/// Full loss with Scale computed from (F_S, F_T). When no pixel has a nonzero
/// student and teacher vector the L_DA term is taken as 0.
DistillResult loss_distill(const FeatureMap& f_s, const FeatureMap& f_t, const DistillWeights& w);

/// Same loss with a caller-supplied Scale, for evaluating the objective with
/// the detached factor pinned (e.g. inside a finite-difference oracle).
DistillResult loss_distill_pinned(const FeatureMap& f_s, const FeatureMap& f_t,
                                  const DistillWeights& w, double scale);

}  // namespace modbal
