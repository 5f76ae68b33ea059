// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major matrices, a counter-based seeded generator, softmax
// routing, the four distance functions with closed-form gradients, and a
// central finite-difference oracle.
//
// Everything here computes in double precision. Reductions run in a fixed
// left-to-right order so repeated calls are bit-identical.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "hydra/errors.hpp"

namespace hydra {

class Matrix {
 public:
  Matrix() = default;

  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(checked_size(rows, cols), fill) {}

  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != checked_size(rows, cols)) {
      throw DimensionError("matrix data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_string(rows, cols));
    }
  }

  /// Nested-list construction: Matrix{{1, 2}, {3, 4}}.
  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    checked_size(rows_, cols_);
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw DimensionError("ragged matrix initializer");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  /// Column vector (n x 1).
  static Matrix column(std::vector<double> v) {
    const std::size_t n = v.size();
    return Matrix(n, 1, std::move(v));
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  std::span<double> flat() noexcept { return data_; }
  std::span<const double> flat() const noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  bool same_shape(const Matrix& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }
  std::string shape() const { return shape_string(rows_, cols_); }

  Matrix transpose() const {
    Matrix t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
    return t;
  }

  Matrix& operator+=(const Matrix& o) {
    require_same_shape(*this, o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Matrix& operator-=(const Matrix& o) {
    require_same_shape(*this, o, "-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Matrix& operator*=(double s) noexcept {
    for (double& x : data_) x *= s;
    return *this;
  }

  /// this += s * o
  Matrix& add_scaled(const Matrix& o, double s) {
    require_same_shape(*this, o, "add_scaled");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += s * o.data_[i];
    return *this;
  }

  friend Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
  friend Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
  friend Matrix operator*(Matrix a, double s) { return a *= s; }
  friend Matrix operator*(double s, Matrix a) { return a *= s; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

  static void require_same_shape(const Matrix& x, const Matrix& y, std::string_view op) {
    if (!x.same_shape(y)) {
      throw DimensionError(std::string(op) + ": shape mismatch " + x.shape() + " vs " + y.shape());
    }
  }

 private:
  static std::string shape_string(std::size_t r, std::size_t c) {
    return "(" + std::to_string(r) + "x" + std::to_string(c) + ")";
  }
  static std::size_t checked_size(std::size_t r, std::size_t c) {
    if (r != 0 && c > SIZE_MAX / r) throw DimensionError("matrix size overflow");
    return r * c;
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline Matrix matmul(const Matrix& x, const Matrix& y) {
  if (x.cols() != y.rows()) {
    throw DimensionError("matmul: inner dimensions differ, " + x.shape() + " * " + y.shape());
  }
  const std::size_t n = x.rows(), inner = x.cols(), m = y.cols();
  Matrix out(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < inner; ++p) acc += x(i, p) * y(p, j);
      out(i, j) = acc;
    }
  }
  return out;
}

/// Flattened inner product <vec x, vec y>.
inline double dot(const Matrix& x, const Matrix& y) {
  Matrix::require_same_shape(x, y, "dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * y[i];
  return acc;
}

inline double frobenius_norm(const Matrix& x) { return std::sqrt(dot(x, x)); }

/// diag(v) * m, v given as an n x 1 column.
inline Matrix scale_rows(const Matrix& v, const Matrix& m) {
  if (v.size() != m.rows()) throw DimensionError("scale_rows: " + v.shape() + " vs " + m.shape());
  Matrix out = m;
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) out(r, c) *= v[r];
  return out;
}

/// m * diag(v), v given as an n x 1 column.
inline Matrix scale_cols(const Matrix& m, const Matrix& v) {
  if (v.size() != m.cols()) throw DimensionError("scale_cols: " + m.shape() + " vs " + v.shape());
  Matrix out = m;
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) out(r, c) *= v[c];
  return out;
}

// ---------------------------------------------------------------------------
// Randomness
// ---------------------------------------------------------------------------

/// Counter-based generator: the n-th 64-bit output is the SplitMix64
/// finalizer applied to seed + (n + 1) * 0x9E3779B97F4A7C15. The stream
/// depends only on (seed, counter), so it is reproducible everywhere.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) noexcept : seed_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t counter() const noexcept { return counter_; }

  std::uint64_t next_u64() noexcept {
    ++counter_;
    return mix(seed_ + counter_ * 0x9E3779B97F4A7C15ULL);
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Standard normal by Box-Muller; consumes exactly two outputs and keeps
  /// only the cosine branch so every sample has the same stream footprint.
  double normal() noexcept {
    const double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  static std::uint64_t mix(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

/// FNV-1a; used to derive per-slot streams as seed ^ stable_hash(slot key).
inline std::uint64_t stable_hash(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline Matrix gaussian_sample(Rng& rng, std::size_t rows, std::size_t cols, double mean,
                              double stdev) {
  if (!(stdev >= 0.0)) throw ParameterError("gaussian_sample: stdev must be >= 0");
  Matrix out(rows, cols, mean);
  if (stdev == 0.0) return out;
  for (double& x : out.flat()) x = mean + stdev * rng.normal();
  return out;
}

// ---------------------------------------------------------------------------
// Softmax routing
// ---------------------------------------------------------------------------

inline Matrix softmax_rows(const Matrix& logits, double temperature) {
  if (!(temperature > 0.0)) throw ParameterError("softmax_rows: temperature must be > 0");
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    double mx = logits(r, 0);
    for (std::size_t c = 1; c < logits.cols(); ++c) mx = std::max(mx, logits(r, c));
    double total = 0.0;
    for (std::size_t c = 0; c < logits.cols(); ++c) {
      out(r, c) = std::exp((logits(r, c) - mx) / temperature);
      total += out(r, c);
    }
    for (std::size_t c = 0; c < logits.cols(); ++c) out(r, c) /= total;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Distances
// ---------------------------------------------------------------------------

enum class DistanceKind { MAE, MSE, FRO, COS };

inline std::string_view to_string(DistanceKind k) noexcept {
  switch (k) {
    case DistanceKind::MAE: return "mae";
    case DistanceKind::MSE: return "mse";
    case DistanceKind::FRO: return "fro";
    case DistanceKind::COS: return "cos";
  }
  return "?";
}

inline DistanceKind parse_distance(std::string_view s) {
  if (s == "mae") return DistanceKind::MAE;
  if (s == "mse") return DistanceKind::MSE;
  if (s == "fro") return DistanceKind::FRO;
  if (s == "cos") return DistanceKind::COS;
  throw ParameterError("unknown distance kind '" + std::string(s) + "'");
}

namespace detail {

inline void check_cos_operands(const Matrix& x, const Matrix& y) {
  const bool x_zero = std::all_of(x.flat().begin(), x.flat().end(), [](double v) { return v == 0.0; });
  const bool y_zero = std::all_of(y.flat().begin(), y.flat().end(), [](double v) { return v == 0.0; });
  if (x_zero || y_zero) throw DegenerateInputError("cosine distance with an all-zero matrix");
}

inline double sign(double v) noexcept { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace detail

inline double distance(const Matrix& x, const Matrix& y, DistanceKind kind) {
  Matrix::require_same_shape(x, y, "distance");
  const double n = static_cast<double>(x.size());
  switch (kind) {
    case DistanceKind::MAE: {
      double acc = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) acc += std::abs(x[i] - y[i]);
      return acc / n;
    }
    case DistanceKind::MSE: {
      double acc = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) acc += (x[i] - y[i]) * (x[i] - y[i]);
      return acc / n;
    }
    case DistanceKind::FRO: {
      double acc = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) acc += (x[i] - y[i]) * (x[i] - y[i]);
      return std::sqrt(acc);
    }
    case DistanceKind::COS: {
      detail::check_cos_operands(x, y);
      return 1.0 - dot(x, y) / (frobenius_norm(x) * frobenius_norm(y));
    }
  }
  return 0.0;
}

/// Gradient of distance(x, y, kind) with respect to y.
///
/// MAE uses sign(0) = 0 and FRO returns zeros at x == y, so an exact
/// reconstruction is a stationary point.
inline Matrix distance_grad(const Matrix& x, const Matrix& y, DistanceKind kind) {
  Matrix::require_same_shape(x, y, "distance_grad");
  const double n = static_cast<double>(x.size());
  Matrix g(x.rows(), x.cols());
  switch (kind) {
    case DistanceKind::MAE:
      for (std::size_t i = 0; i < x.size(); ++i) g[i] = -detail::sign(x[i] - y[i]) / n;
      break;
    case DistanceKind::MSE:
      for (std::size_t i = 0; i < x.size(); ++i) g[i] = -2.0 * (x[i] - y[i]) / n;
      break;
    case DistanceKind::FRO: {
      double acc = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) acc += (x[i] - y[i]) * (x[i] - y[i]);
      if (acc == 0.0) break;
      const double norm = std::sqrt(acc);
      for (std::size_t i = 0; i < x.size(); ++i) g[i] = -(x[i] - y[i]) / norm;
      break;
    }
    case DistanceKind::COS: {
      // d/dy [1 - <x,y>/(|x||y|)] = -x/(|x||y|) + <x,y> y/(|x||y|^3)
      detail::check_cos_operands(x, y);
      const double nx = frobenius_norm(x), ny = frobenius_norm(y), xy = dot(x, y);
      for (std::size_t i = 0; i < x.size(); ++i)
        g[i] = -x[i] / (nx * ny) + xy * y[i] / (nx * ny * ny * ny);
      break;
    }
  }
  return g;
}

/// Central differences (f(t + h e) - f(t - h e)) / 2h for every entry of `at`.
template <typename LossFn>
Matrix finite_diff(LossFn&& loss_fn, const Matrix& at, double h) {
  if (!(h > 0.0)) throw ParameterError("finite_diff: step must be > 0");
  Matrix grad(at.rows(), at.cols());
  Matrix probe = at;
  for (std::size_t i = 0; i < at.size(); ++i) {
    probe[i] = at[i] + h;
    const double up = loss_fn(static_cast<const Matrix&>(probe));
    probe[i] = at[i] - h;
    const double down = loss_fn(static_cast<const Matrix&>(probe));
    probe[i] = at[i];
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

}  // namespace hydra
