#include "modbal/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "modbal/errors.hpp"

namespace modbal {

namespace {

void require_valid_shape(const Shape3& s) {
  if (s.c == 0 || s.h == 0 || s.w == 0) {
    throw std::invalid_argument("feature map dimensions must be >= 1, got " + to_string(s));
  }
}

void require_same_shape(const FeatureMap& a, const FeatureMap& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace

std::string to_string(const Shape3& s) {
  std::ostringstream os;
  os << '[' << s.c << 'x' << s.h << 'x' << s.w << ']';
  return os.str();
}

FeatureMap::FeatureMap(Shape3 shape, double fill) : shape_(shape), data_(shape.size(), fill) {
  require_valid_shape(shape_);
}

FeatureMap::FeatureMap(Shape3 shape, std::vector<double> data)
    : shape_(shape), data_(std::move(data)) {
  require_valid_shape(shape_);
  if (data_.size() != shape_.size()) {
    throw ShapeError("feature map " + to_string(shape_) + " needs " +
                     std::to_string(shape_.size()) + " values, got " +
                     std::to_string(data_.size()));
  }
}

FeatureMap& FeatureMap::operator+=(const FeatureMap& other) {
  require_same_shape(*this, other, "add");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

FeatureMap& FeatureMap::operator-=(const FeatureMap& other) {
  require_same_shape(*this, other, "subtract");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

FeatureMap& FeatureMap::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

FeatureMap operator+(FeatureMap a, const FeatureMap& b) { return a += b; }
FeatureMap operator-(FeatureMap a, const FeatureMap& b) { return a -= b; }
FeatureMap operator*(double s, FeatureMap a) { return a *= s; }

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {
  if (rows == 0 || cols == 0) throw std::invalid_argument("matrix dimensions must be >= 1");
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (rows == 0 || cols == 0) throw std::invalid_argument("matrix dimensions must be >= 1");
  if (data_.size() != rows * cols) {
    throw ShapeError("matrix " + std::to_string(rows) + "x" + std::to_string(cols) + " needs " +
                     std::to_string(rows * cols) + " values, got " +
                     std::to_string(data_.size()));
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

Conv3x3Kernel::Conv3x3Kernel(std::size_t out, std::size_t in)
    : c_out(out), c_in(in), weights(out * in * 9, 0.0), bias(out, 0.0) {
  if (out == 0 || in == 0) throw std::invalid_argument("kernel channel counts must be >= 1");
}

Conv3x3Kernel Conv3x3Kernel::delta(std::size_t channels) {
  Conv3x3Kernel k(channels, channels);
  for (std::size_t c = 0; c < channels; ++c) k.at(c, c, 1, 1) = 1.0;
  return k;
}

std::vector<double> softmax(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("softmax of an empty vector");
  const double m = *std::max_element(v.begin(), v.end());
  std::vector<double> out(v.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - m);
    sum += out[i];
  }
  for (double& x : out) x /= sum;
  return out;
}

double shannon_entropy(std::span<const double> p) {
  double total = 0.0;
  for (double x : p) {
    if (x < 0.0) throw std::invalid_argument("entropy of a distribution with a negative entry");
    total += x;
  }
  if (p.empty() || std::abs(total - 1.0) > 1e-9) {
    throw std::invalid_argument("entropy input does not sum to 1");
  }
  double h = 0.0;
  for (double x : p) {
    if (x > 0.0) h -= x * std::log(x);
  }
  return std::max(h, 0.0);
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: [" + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                     "] * [" + std::to_string(b.rows()) + "x" + std::to_string(b.cols()) + "]");
  }
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  }
  return out;
}

FeatureMap conv1x1(const FeatureMap& f, const Matrix& weights, std::span<const double> bias) {
  if (weights.cols() != f.channels()) {
    throw ShapeError("conv1x1: weights take " + std::to_string(weights.cols()) +
                     " channels, input " + to_string(f.shape()));
  }
  if (bias.size() != weights.rows()) {
    throw ShapeError("conv1x1: bias length " + std::to_string(bias.size()) + " != " +
                     std::to_string(weights.rows()) + " output channels");
  }
  const Shape3 out_shape{weights.rows(), f.height(), f.width()};
  FeatureMap out(out_shape);
  const std::size_t hw = f.shape().pixels();
  for (std::size_t o = 0; o < out_shape.c; ++o) {
    for (std::size_t p = 0; p < hw; ++p) {
      double acc = bias[o];
      for (std::size_t c = 0; c < f.channels(); ++c) acc += weights(o, c) * f[c * hw + p];
      out[o * hw + p] = acc;
    }
  }
  return out;
}

FeatureMap conv3x3(const FeatureMap& f, const Conv3x3Kernel& k) {
  if (k.c_in != f.channels()) {
    throw ShapeError("conv3x3: kernel takes " + std::to_string(k.c_in) + " channels, input " +
                     to_string(f.shape()));
  }
  const std::size_t H = f.height();
  const std::size_t W = f.width();
  FeatureMap out({k.c_out, H, W});
  for (std::size_t o = 0; o < k.c_out; ++o) {
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        double acc = k.bias[o];
        for (std::size_t i = 0; i < k.c_in; ++i) {
          for (std::size_t ky = 0; ky < 3; ++ky) {
            const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
            if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(H)) continue;
            for (std::size_t kx = 0; kx < 3; ++kx) {
              const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + kx) - 1;
              if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(W)) continue;
              acc += k.at(o, i, ky, kx) * f.at(i, static_cast<std::size_t>(sy),
                                               static_cast<std::size_t>(sx));
            }
          }
        }
        out.at(o, y, x) = acc;
      }
    }
  }
  return out;
}

Conv3x3Grad conv3x3_backward(const FeatureMap& input, const Conv3x3Kernel& k,
                             const FeatureMap& d_out) {
  const std::size_t H = input.height();
  const std::size_t W = input.width();
  if (k.c_in != input.channels() || d_out.shape() != Shape3{k.c_out, H, W}) {
    throw ShapeError("conv3x3_backward: input " + to_string(input.shape()) + ", d_out " +
                     to_string(d_out.shape()));
  }
  Conv3x3Grad g{FeatureMap(input.shape()), Conv3x3Kernel(k.c_out, k.c_in)};
  for (std::size_t o = 0; o < k.c_out; ++o) {
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        const double go = d_out.at(o, y, x);
        g.d_kernel.bias[o] += go;
        for (std::size_t i = 0; i < k.c_in; ++i) {
          for (std::size_t ky = 0; ky < 3; ++ky) {
            const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
            if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(H)) continue;
            for (std::size_t kx = 0; kx < 3; ++kx) {
              const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + kx) - 1;
              if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(W)) continue;
              const auto uy = static_cast<std::size_t>(sy);
              const auto ux = static_cast<std::size_t>(sx);
              g.d_kernel.at(o, i, ky, kx) += go * input.at(i, uy, ux);
              g.d_input.at(i, uy, ux) += go * k.at(o, i, ky, kx);
            }
          }
        }
      }
    }
  }
  return g;
}

Conv1x1Grad conv1x1_backward(const FeatureMap& input, const Matrix& weights,
                             const FeatureMap& d_out) {
  const std::size_t hw = input.shape().pixels();
  if (weights.cols() != input.channels() ||
      d_out.shape() != Shape3{weights.rows(), input.height(), input.width()}) {
    throw ShapeError("conv1x1_backward: input " + to_string(input.shape()) + ", d_out " +
                     to_string(d_out.shape()));
  }
  Conv1x1Grad g{FeatureMap(input.shape()), Matrix(weights.rows(), weights.cols()),
                std::vector<double>(weights.rows(), 0.0)};
  for (std::size_t o = 0; o < weights.rows(); ++o) {
    for (std::size_t p = 0; p < hw; ++p) {
      const double go = d_out[o * hw + p];
      g.d_bias[o] += go;
      for (std::size_t c = 0; c < input.channels(); ++c) {
        g.d_weights(o, c) += go * input[c * hw + p];
        g.d_input[c * hw + p] += go * weights(o, c);
      }
    }
  }
  return g;
}

Matrix to_pixel_rows(const FeatureMap& f) {
  const std::size_t hw = f.shape().pixels();
  Matrix m(hw, f.channels());
  for (std::size_t c = 0; c < f.channels(); ++c)
    for (std::size_t p = 0; p < hw; ++p) m(p, c) = f[c * hw + p];
  return m;
}

FeatureMap from_pixel_rows(const Matrix& m, Shape3 shape) {
  if (m.rows() != shape.pixels() || m.cols() != shape.c) {
    throw ShapeError("from_pixel_rows: matrix " + std::to_string(m.rows()) + "x" +
                     std::to_string(m.cols()) + " does not reshape to " + to_string(shape));
  }
  FeatureMap f(shape);
  const std::size_t hw = shape.pixels();
  for (std::size_t c = 0; c < shape.c; ++c)
    for (std::size_t p = 0; p < hw; ++p) f[c * hw + p] = m(p, c);
  return f;
}

SpatialGrad spatial_grad_terms(const FeatureMap& f) {
  const std::size_t C = f.channels();
  const std::size_t H = f.height();
  const std::size_t W = f.width();
  if (H < 2 || W < 2) {
    throw std::invalid_argument("spatial gradient needs H >= 2 and W >= 2, got " +
                                to_string(f.shape()));
  }
  double sx = 0.0;
  double sy = 0.0;
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        if (x > 0) sx += std::abs(f.at(c, y, x) - f.at(c, y, x - 1));
        if (y > 0) sy += std::abs(f.at(c, y, x) - f.at(c, y - 1, x));
      }
    }
  }
  return {sx / static_cast<double>(C * H * (W - 1)), sy / static_cast<double>(C * (H - 1) * W)};
}

double spatial_grad_mean(const FeatureMap& f) { return spatial_grad_terms(f).total(); }

FeatureMap spatial_grad_mean_grad(const FeatureMap& f) {
  const std::size_t C = f.channels();
  const std::size_t H = f.height();
  const std::size_t W = f.width();
  if (H < 2 || W < 2) {
    throw std::invalid_argument("spatial gradient needs H >= 2 and W >= 2, got " +
                                to_string(f.shape()));
  }
  const double nx = static_cast<double>(C * H * (W - 1));
  const double ny = static_cast<double>(C * (H - 1) * W);
  FeatureMap g(f.shape());
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        if (x > 0) {
          const double s = sign(f.at(c, y, x) - f.at(c, y, x - 1)) / nx;
          g.at(c, y, x) += s;
          g.at(c, y, x - 1) -= s;
        }
        if (y > 0) {
          const double s = sign(f.at(c, y, x) - f.at(c, y - 1, x)) / ny;
          g.at(c, y, x) += s;
          g.at(c, y - 1, x) -= s;
        }
      }
    }
  }
  return g;
}

double frobenius_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double frobenius_norm(const FeatureMap& f) { return frobenius_norm(f.values()); }

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

FeatureMap finite_diff_grad(const ScalarFn& f, const FeatureMap& at, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite difference step must be > 0");
  FeatureMap probe = at;
  FeatureMap grad(at.shape());
  for (std::size_t i = 0; i < at.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = f(probe);
    probe[i] = orig - h;
    const double down = f(probe);
    probe[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("finite_diff_grad: non-finite evaluation at element " +
                         std::to_string(i));
    }
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& f,
                                     std::span<const double> at, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite difference step must be > 0");
  std::vector<double> probe(at.begin(), at.end());
  std::vector<double> grad(at.size());
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = f(probe);
    probe[i] = orig - h;
    const double down = f(probe);
    probe[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("finite_diff_grad: non-finite evaluation at parameter " +
                         std::to_string(i));
    }
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

}  // namespace modbal
