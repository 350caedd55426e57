#include "modbal/hcg.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "modbal/errors.hpp"

namespace modbal {

namespace {

void require_same(const FeatureMap& a, const FeatureMap& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

// Q or K as [HW, d] from a d x C projection.
Matrix project_rows(const FeatureMap& f, const Matrix& w) {
  const std::size_t hw = f.shape().pixels();
  Matrix out(hw, w.rows());
  for (std::size_t p = 0; p < hw; ++p)
    for (std::size_t k = 0; k < w.rows(); ++k) {
      double acc = 0.0;
      for (std::size_t c = 0; c < f.channels(); ++c) acc += w(k, c) * f[c * hw + p];
      out(p, k) = acc;
    }
  return out;
}

}  // namespace

QKProjection::QKProjection(Matrix q, Matrix k) : w_q(std::move(q)), w_k(std::move(k)) {
  if (w_q.rows() != w_k.rows() || w_q.cols() != w_k.cols()) {
    throw ShapeError("query and key projections must share their d x C shape");
  }
  if (w_q.rows() > w_q.cols()) {
    throw std::invalid_argument("query/key dimension d must not exceed the channel count");
  }
}

RefineBlock::RefineBlock(Conv3x3Kernel k) : conv(std::move(k)) {
  if (conv.c_in != conv.c_out) throw ShapeError("refine block must preserve channels");
}

void DistillWeights::validate() const {
  if (alpha < 0.0 || beta < 0.0 || gamma < 0.0) {
    throw std::invalid_argument("distillation weights must be nonnegative");
  }
  if (alpha == 0.0 && beta == 0.0 && gamma == 0.0) {
    throw std::invalid_argument("distillation weights must not all be zero");
  }
}

CorrelationTrace correlation_traced(const FeatureMap& f_non, const FeatureMap& f_dom,
                                    const QKProjection& proj) {
  require_same(f_non, f_dom, "correlation");
  if (proj.channels() != f_non.channels()) {
    throw ShapeError("correlation: projection expects " + std::to_string(proj.channels()) +
                     " channels, feature is " + to_string(f_non.shape()));
  }
  CorrelationTrace t{project_rows(f_non, proj.w_q), project_rows(f_dom, proj.w_k), Matrix{}};
  const std::size_t hw = t.q.rows();
  const std::size_t d = proj.dim();
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  t.corr = Matrix(hw, hw);
  std::vector<double> logits(hw);
  for (std::size_t i = 0; i < hw; ++i) {
    for (std::size_t j = 0; j < hw; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < d; ++k) acc += t.q(i, k) * t.k(j, k);
      logits[j] = acc * inv_sqrt_d;
    }
    const auto row = softmax(logits);
    std::copy(row.begin(), row.end(), t.corr.values().begin() + static_cast<std::ptrdiff_t>(i * hw));
  }
  return t;
}

Matrix correlation(const FeatureMap& f_non, const FeatureMap& f_dom, const QKProjection& proj) {
  return correlation_traced(f_non, f_dom, proj).corr;
}

CorrelationGrad correlation_backward(const FeatureMap& f_non, const FeatureMap& f_dom,
                                     const QKProjection& proj, const CorrelationTrace& trace,
                                     const Matrix& d_corr) {
  const std::size_t hw = trace.corr.rows();
  const std::size_t d = proj.dim();
  const std::size_t C = f_non.channels();
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  // Row-softmax backward, then the bilinear Q K^T product.
  Matrix d_q(hw, d);
  Matrix d_k(hw, d);
  for (std::size_t i = 0; i < hw; ++i) {
    double dot = 0.0;
    for (std::size_t j = 0; j < hw; ++j) dot += trace.corr(i, j) * d_corr(i, j);
    for (std::size_t j = 0; j < hw; ++j) {
      const double dl = trace.corr(i, j) * (d_corr(i, j) - dot) * inv_sqrt_d;
      for (std::size_t k = 0; k < d; ++k) {
        d_q(i, k) += dl * trace.k(j, k);
        d_k(j, k) += dl * trace.q(i, k);
      }
    }
  }

  CorrelationGrad g{FeatureMap(f_non.shape()), FeatureMap(f_dom.shape()), Matrix(d, C),
                    Matrix(d, C)};
  for (std::size_t p = 0; p < hw; ++p) {
    for (std::size_t k = 0; k < d; ++k) {
      const double gq = d_q(p, k);
      const double gk = d_k(p, k);
      for (std::size_t c = 0; c < C; ++c) {
        g.d_w_q(k, c) += gq * f_non[c * hw + p];
        g.d_w_k(k, c) += gk * f_dom[c * hw + p];
        g.d_f_non[c * hw + p] += gq * proj.w_q(k, c);
        g.d_f_dom[c * hw + p] += gk * proj.w_k(k, c);
      }
    }
  }
  return g;
}

FeatureMap reproject(const Matrix& corr, const FeatureMap& f_non) {
  const std::size_t hw = f_non.shape().pixels();
  if (corr.rows() != hw || corr.cols() != hw) {
    throw ShapeError("reproject: correlation is " + std::to_string(corr.rows()) + "x" +
                     std::to_string(corr.cols()) + ", feature " + to_string(f_non.shape()));
  }
  for (std::size_t i = 0; i < hw; ++i) {
    double s = 0.0;
    for (double v : corr.row(i)) s += v;
    if (std::abs(s - 1.0) > 1e-6) {
      throw std::invalid_argument("reproject: correlation row " + std::to_string(i) +
                                  " sums to " + std::to_string(s));
    }
  }
  return from_pixel_rows(matmul(corr, to_pixel_rows(f_non)), f_non.shape());
}

ReprojectGrad reproject_backward(const Matrix& corr, const FeatureMap& f_non,
                                 const FeatureMap& d_out) {
  require_same(f_non, d_out, "reproject_backward");
  const Matrix x = to_pixel_rows(f_non);
  const Matrix dy = to_pixel_rows(d_out);
  return {matmul(dy, x.transposed()),
          from_pixel_rows(matmul(corr.transposed(), dy), f_non.shape())};
}

RefineTrace refine_traced(const FeatureMap& f_non, const FeatureMap& f_reproj,
                          const RefineBlock& block) {
  require_same(f_non, f_reproj, "refine");
  RefineTrace t{f_non + f_reproj, FeatureMap{}, FeatureMap{}};
  t.pre = conv3x3(t.input, block.conv);
  t.out = t.pre;
  for (double& v : t.out.values()) v = std::max(0.0, v);
  return t;
}

FeatureMap refine(const FeatureMap& f_non, const FeatureMap& f_reproj, const RefineBlock& block) {
  return refine_traced(f_non, f_reproj, block).out;
}

RefineGrad refine_backward(const RefineTrace& trace, const RefineBlock& block,
                           const FeatureMap& d_out) {
  require_same(trace.out, d_out, "refine_backward");
  FeatureMap d_pre = d_out;
  for (std::size_t i = 0; i < d_pre.size(); ++i)
    if (!(trace.pre[i] > 0.0)) d_pre[i] = 0.0;
  auto g = conv3x3_backward(trace.input, block.conv, d_pre);
  return {std::move(g.d_input), std::move(g.d_kernel)};
}

double feature_variance(const FeatureMap& f_t, const FeatureMap& f_s) {
  require_same(f_t, f_s, "feature_variance");
  double s = 0.0;
  for (std::size_t i = 0; i < f_t.size(); ++i) {
    const double d = f_t[i] - f_s[i];
    s += d * d;
  }
  return s / static_cast<double>(f_t.size());
}

double scale_factor(double delta_var) { return std::exp(-delta_var); }

std::vector<double> w_sem(const FeatureMap& f_t) {
  const std::size_t hw = f_t.shape().pixels();
  std::vector<double> norms(hw, 0.0);
  for (std::size_t c = 0; c < f_t.channels(); ++c)
    for (std::size_t p = 0; p < hw; ++p) norms[p] += f_t[c * hw + p] * f_t[c * hw + p];
  double mean = 0.0;
  for (double& n : norms) {
    n = std::sqrt(n);
    mean += n;
  }
  mean /= static_cast<double>(hw);
  if (!(mean > 0.0)) return std::vector<double>(hw, 1.0);
  for (double& n : norms) n /= mean;
  return norms;
}

LossGrad loss_rw(const FeatureMap& f_s, const FeatureMap& f_t) {
  require_same(f_s, f_t, "loss_rw");
  const auto weights = w_sem(f_t);
  const std::size_t hw = f_s.shape().pixels();
  const double n = static_cast<double>(f_s.size());
  LossGrad out{0.0, FeatureMap(f_s.shape())};
  for (std::size_t c = 0; c < f_s.channels(); ++c) {
    for (std::size_t p = 0; p < hw; ++p) {
      const std::size_t i = c * hw + p;
      const double w2 = weights[p] * weights[p];
      const double diff = f_s[i] - f_t[i];
      out.value += w2 * diff * diff;
      out.grad[i] = 2.0 * w2 * diff / n;
    }
  }
  out.value /= n;
  return out;
}

LossGrad loss_da(const FeatureMap& f_s, const FeatureMap& f_t) {
  require_same(f_s, f_t, "loss_da");
  const std::size_t hw = f_s.shape().pixels();
  const std::size_t C = f_s.channels();
  std::vector<double> ns(hw, 0.0);
  std::vector<double> nt(hw, 0.0);
  std::vector<double> dot(hw, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t p = 0; p < hw; ++p) {
      const double s = f_s[c * hw + p];
      const double t = f_t[c * hw + p];
      ns[p] += s * s;
      nt[p] += t * t;
      dot[p] += s * t;
    }
  }
  std::vector<double> cosine(hw, 0.0);
  std::size_t included = 0;
  double cos_sum = 0.0;
  for (std::size_t p = 0; p < hw; ++p) {
    // sqrt(|s|^2 |t|^2) keeps cos(f, f) == 1 exactly.
    const double denom = std::sqrt(ns[p] * nt[p]);
    ns[p] = std::sqrt(ns[p]);
    nt[p] = std::sqrt(nt[p]);
    if (ns[p] < kCosineNormFloor || nt[p] < kCosineNormFloor) continue;
    cosine[p] = std::clamp(dot[p] / denom, -1.0, 1.0);
    cos_sum += cosine[p];
    ++included;
  }
  if (included == 0) throw std::invalid_argument("loss_da: every pixel has a zero-norm vector");
  const double inv_n = 1.0 / static_cast<double>(included);
  LossGrad out{1.0 - cos_sum * inv_n, FeatureMap(f_s.shape())};
  for (std::size_t p = 0; p < hw; ++p) {
    if (ns[p] < kCosineNormFloor || nt[p] < kCosineNormFloor) continue;
    const double a = 1.0 / (ns[p] * nt[p]);
    const double b = cosine[p] / (ns[p] * ns[p]);
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t i = c * hw + p;
      out.grad[i] = -inv_n * (f_t[i] * a - f_s[i] * b);
    }
  }
  return out;
}

LossGrad loss_struct(const FeatureMap& f_s, const FeatureMap& f_t) {
  require_same(f_s, f_t, "loss_struct");
  const double diff = spatial_grad_mean(f_s) - spatial_grad_mean(f_t);
  LossGrad out{std::abs(diff), spatial_grad_mean_grad(f_s)};
  const double s = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
  out.grad *= s;
  return out;
}

namespace {

bool has_cosine_pixel(const FeatureMap& f_s, const FeatureMap& f_t) {
  const std::size_t hw = f_s.shape().pixels();
  const std::size_t C = f_s.channels();
  for (std::size_t p = 0; p < hw; ++p) {
    double ns = 0.0, nt = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      ns += f_s[c * hw + p] * f_s[c * hw + p];
      nt += f_t[c * hw + p] * f_t[c * hw + p];
    }
    if (std::sqrt(ns) >= kCosineNormFloor && std::sqrt(nt) >= kCosineNormFloor) return true;
  }
  return false;
}

}  // namespace

DistillResult loss_distill_pinned(const FeatureMap& f_s, const FeatureMap& f_t,
                                  const DistillWeights& w, double scale) {
  w.validate();
  require_same(f_s, f_t, "loss_distill");
  const auto rw = loss_rw(f_s, f_t);
  // A student or teacher that is zero everywhere leaves the cosine term
  // undefined; it then contributes nothing.
  const auto da = has_cosine_pixel(f_s, f_t) ? loss_da(f_s, f_t) : LossGrad{0.0, FeatureMap(f_s.shape())};
  const auto st = loss_struct(f_s, f_t);

  DistillResult r;
  r.components = {rw.value, da.value, st.value, feature_variance(f_t, f_s), scale};
  r.loss = scale * (w.alpha * rw.value + w.beta * da.value) + w.gamma * st.value;
  r.grad_student = FeatureMap(f_s.shape());
  for (std::size_t i = 0; i < f_s.size(); ++i) {
    r.grad_student[i] =
        scale * (w.alpha * rw.grad[i] + w.beta * da.grad[i]) + w.gamma * st.grad[i];
  }
  return r;
}

DistillResult loss_distill(const FeatureMap& f_s, const FeatureMap& f_t, const DistillWeights& w) {
  return loss_distill_pinned(f_s, f_t, w, scale_factor(feature_variance(f_t, f_s)));
}

}  // namespace modbal
