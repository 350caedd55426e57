#pragma once

// Dense 64-bit tensor kernel: the feature-map and matrix types plus the handful
// of primitives (softmax, entropy, 1x1/3x3 convolution, spatial gradients)
// that the dominance, guidance and fusion code is written against.
//
// Storage is row-major. Feature maps are laid out channel-outer, i.e. element
// (c, y, x) lives at ((c * H) + y) * W + x. Every reduction walks memory in that
// order so results are bit-reproducible.

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace modbal {

struct Shape3 {
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  std::size_t size() const { return c * h * w; }
  std::size_t pixels() const { return h * w; }
  friend bool operator==(const Shape3&, const Shape3&) = default;
};

std::string to_string(const Shape3& s);

/// Rank-3 tensor [C, H, W].
class FeatureMap {
 public:
  FeatureMap() = default;
  explicit FeatureMap(Shape3 shape, double fill = 0.0);
  FeatureMap(Shape3 shape, std::vector<double> data);

  const Shape3& shape() const { return shape_; }
  std::size_t channels() const { return shape_.c; }
  std::size_t height() const { return shape_.h; }
  std::size_t width() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }

  double& at(std::size_t c, std::size_t y, std::size_t x) {
    return data_[(c * shape_.h + y) * shape_.w + x];
  }
  double at(std::size_t c, std::size_t y, std::size_t x) const {
    return data_[(c * shape_.h + y) * shape_.w + x];
  }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  FeatureMap& operator+=(const FeatureMap& other);
  FeatureMap& operator-=(const FeatureMap& other);
  FeatureMap& operator*=(double s);

  friend bool operator==(const FeatureMap&, const FeatureMap&) = default;

 private:
  Shape3 shape_{};
  std::vector<double> data_;
};

FeatureMap operator+(FeatureMap a, const FeatureMap& b);
FeatureMap operator-(FeatureMap a, const FeatureMap& b);
FeatureMap operator*(double s, FeatureMap a);

/// Row-major dense matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * cols_, cols_);
  }

  Matrix transposed() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// 3x3 convolution kernel, layout [C_out, C_in, 3, 3].
struct Conv3x3Kernel {
  std::size_t c_out = 0;
  std::size_t c_in = 0;
  std::vector<double> weights;  // c_out * c_in * 9
  std::vector<double> bias;     // c_out

  Conv3x3Kernel() = default;
  Conv3x3Kernel(std::size_t out, std::size_t in);

  double& at(std::size_t o, std::size_t i, std::size_t ky, std::size_t kx) {
    return weights[((o * c_in + i) * 3 + ky) * 3 + kx];
  }
  double at(std::size_t o, std::size_t i, std::size_t ky, std::size_t kx) const {
    return weights[((o * c_in + i) * 3 + ky) * 3 + kx];
  }

  /// Kernel whose output channel o copies input channel o (C_out == C_in).
  static Conv3x3Kernel delta(std::size_t channels);
};

// ---------------------------------------------------------------------------
// Vector primitives

/// Max-subtracted softmax. Throws std::invalid_argument on empty input.
std::vector<double> softmax(std::span<const double> v);

/// Entropy in nats with 0 ln 0 = 0. Throws on negative entries or when the
/// entries do not sum to 1 within 1e-9.
double shannon_entropy(std::span<const double> p);

// ---------------------------------------------------------------------------
// Matrix / feature primitives

/// Throws ShapeError naming both shapes when a.cols != b.rows.
Matrix matmul(const Matrix& a, const Matrix& b);

/// Per-pixel linear map: out[:, y, x] = weights * in[:, y, x] + bias.
FeatureMap conv1x1(const FeatureMap& f, const Matrix& weights, std::span<const double> bias);

/// Zero-padded, stride-1 3x3 convolution.
FeatureMap conv3x3(const FeatureMap& f, const Conv3x3Kernel& kernel);

/// Gradients of a 3x3 convolution given dL/d(output).
struct Conv3x3Grad {
  FeatureMap d_input;
  Conv3x3Kernel d_kernel;
};
Conv3x3Grad conv3x3_backward(const FeatureMap& input, const Conv3x3Kernel& kernel,
                             const FeatureMap& d_out);

/// Gradients of conv1x1 given dL/d(output).
struct Conv1x1Grad {
  FeatureMap d_input;
  Matrix d_weights;
  std::vector<double> d_bias;
};
Conv1x1Grad conv1x1_backward(const FeatureMap& input, const Matrix& weights,
                             const FeatureMap& d_out);

/// [C,H,W] -> [HW, C] (one row per pixel).
Matrix to_pixel_rows(const FeatureMap& f);
/// Inverse of to_pixel_rows.
FeatureMap from_pixel_rows(const Matrix& m, Shape3 shape);

/// Horizontal and vertical mean absolute neighbour differences.
struct SpatialGrad {
  double horizontal = 0.0;
  double vertical = 0.0;
  double total() const { return horizontal + vertical; }
};

/// E|F_x - F_{x-1}| + E|F_y - F_{y-1}|, each expectation over every valid
/// adjacent pair in every channel. Requires H >= 2 and W >= 2.
SpatialGrad spatial_grad_terms(const FeatureMap& f);
double spatial_grad_mean(const FeatureMap& f);

/// Subgradient of spatial_grad_mean w.r.t. f, using sign(0) = 0.
FeatureMap spatial_grad_mean_grad(const FeatureMap& f);

double frobenius_norm(std::span<const double> v);
double frobenius_norm(const FeatureMap& f);

bool all_finite(std::span<const double> v);

// ---------------------------------------------------------------------------
// Finite differences

inline constexpr double kDefaultFdStep = 1e-6;

using ScalarFn = std::function<double(const FeatureMap&)>;

/// Central-difference gradient (f(F + h e_i) - f(F - h e_i)) / 2h per element.
/// Throws NumericError if any evaluation is non-finite.
FeatureMap finite_diff_grad(const ScalarFn& f, const FeatureMap& at, double h = kDefaultFdStep);

/// Same oracle over a flat parameter vector.
std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& f,
                                     std::span<const double> at, double h = kDefaultFdStep);

}  // namespace modbal
