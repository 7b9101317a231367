#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace shom {

/// Base class of every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Ellipticity violated at a sampled point; carries the witness (y, xi).
class EllipticityError : public Error {
 public:
  EllipticityError(const std::string& what, std::vector<double> y, std::vector<double> xi, double value)
      : Error(what), y_(std::move(y)), xi_(std::move(xi)), value_(value) {}
  const std::vector<double>& y() const { return y_; }
  const std::vector<double>& xi() const { return xi_; }
  double value() const { return value_; }

 private:
  std::vector<double> y_;
  std::vector<double> xi_;
  double value_;
};

class MalformedTensorError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Iterative solver stopped without meeting its tolerance.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double residual, std::vector<double> history = {})
      : Error(what), residual_(residual), history_(std::move(history)) {}
  double residual() const { return residual_; }
  const std::vector<double>& history() const { return history_; }

 private:
  double residual_;
  std::vector<double> history_;
};

class CompatibilityError : public Error {
 public:
  CompatibilityError(const std::string& what, double defect) : Error(what), defect_(defect) {}
  double defect() const { return defect_; }

 private:
  double defect_;
};

class NormalizationError : public Error {
 public:
  using Error::Error;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

class GridMismatchError : public Error {
 public:
  using Error::Error;
};

class FitError : public Error {
 public:
  using Error::Error;
};

/// Rank-four coefficient tensor a_ij^{alpha beta} in dimension d <= 3.
///
/// Stored as a d^2 x d^2 matrix whose row is the pair (i, alpha) and whose
/// column is the pair (j, beta), so that the flux is sigma = M g with
/// g_(j,beta) = d_j u^beta.
class Tensor4 {
 public:
  Tensor4() = default;
  explicit Tensor4(int d) : d_(d) {}

  static Tensor4 identity(int d, double scale = 1.0) {
    Tensor4 t(d);
    for (int i = 0; i < d; ++i)
      for (int a = 0; a < d; ++a) t(i, i, a, a) = scale;
    return t;
  }

  int dim() const { return d_; }
  int pairs() const { return d_ * d_; }

  static int pair(int d, int i, int alpha) { return i * d + alpha; }

  double& operator()(int i, int j, int alpha, int beta) {
    return v_[static_cast<std::size_t>(pair(d_, i, alpha) * 9 + pair(d_, j, beta))];
  }
  double operator()(int i, int j, int alpha, int beta) const {
    return v_[static_cast<std::size_t>(pair(d_, i, alpha) * 9 + pair(d_, j, beta))];
  }

  /// Entry of the d^2 x d^2 matrix view.
  double& m(int row, int col) { return v_[static_cast<std::size_t>(row * 9 + col)]; }
  double m(int row, int col) const { return v_[static_cast<std::size_t>(row * 9 + col)]; }

  /// a*_ij^{ab} = a_ji^{ba}, the coefficient of the adjoint operator.
  Tensor4 transposed() const {
    Tensor4 t(d_);
    for (int r = 0; r < pairs(); ++r)
      for (int c = 0; c < pairs(); ++c) t.m(r, c) = m(c, r);
    return t;
  }

  /// a_ij^{ab} xi_i^a zeta_j^b with xi, zeta flattened by pair index.
  double contract(const double* xi, const double* zeta) const {
    double s = 0.0;
    for (int r = 0; r < pairs(); ++r)
      for (int c = 0; c < pairs(); ++c) s += m(r, c) * xi[r] * zeta[c];
    return s;
  }

  double max_abs() const {
    double s = 0.0;
    for (int r = 0; r < pairs(); ++r)
      for (int c = 0; c < pairs(); ++c) s = std::max(s, std::abs(m(r, c)));
    return s;
  }

  Tensor4& operator+=(const Tensor4& o) {
    for (std::size_t k = 0; k < v_.size(); ++k) v_[k] += o.v_[k];
    return *this;
  }
  Tensor4& operator-=(const Tensor4& o) {
    for (std::size_t k = 0; k < v_.size(); ++k) v_[k] -= o.v_[k];
    return *this;
  }
  Tensor4& operator*=(double s) {
    for (auto& x : v_) x *= s;
    return *this;
  }

  const std::array<double, 81>& raw() const { return v_; }

 private:
  int d_ = 0;
  std::array<double, 81> v_{};
};

inline double kron(int a, int b) { return a == b ? 1.0 : 0.0; }

inline constexpr double kPi = 3.14159265358979323846;

}  // namespace shom
