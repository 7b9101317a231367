#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "shom/common.hpp"

namespace shom {

/// Empirical ellipticity window (mu_lo, mu_hi).
struct EllipticityBounds {
  double lo = 0.0;
  double hi = 0.0;
};

/// A 1-periodic coefficient tensor y -> a_ij^{ab}(y), evaluated in closed form.
///
/// Immutable after construction and cheap to copy (shared implementation).
/// Fields of the form a = c(y) delta_ij delta_ab expose the scalar profile c so
/// that solvers can take a diagonal fast path.
class CoefficientField {
 public:
  using TensorFn = std::function<void(const double* y, Tensor4& out)>;
  using ScalarFn = std::function<double(const double* y)>;

  struct Info {
    std::string family;
    nlohmann::json params;
    EllipticityBounds bounds;   // known eigen-window of the symmetric part
    double holder_exponent = 1.0;  // lambda, metadata only
    double holder_seminorm = 0.0;  // tau, metadata only
    bool artifact_family = true;   // built-in families are artifact choices
  };

  CoefficientField() = default;

  static CoefficientField from_tensor_fn(int d, TensorFn fn, Info info, bool symmetric);
  static CoefficientField from_scalar_fn(int d, ScalarFn fn, Info info);
  static CoefficientField constant(const Tensor4& a, Info info);

  int dim() const;
  const Info& info() const;
  /// Ellipticity constant mu with mu|xi|^2 <= a xi.xi <= |xi|^2 / mu.
  double mu() const;

  void eval(const double* y, Tensor4& out) const;
  Tensor4 operator()(std::span<const double> y) const;

  bool is_scalar() const;
  double scalar(const double* y) const;
  bool is_constant() const;
  /// a_ij^{ab} = a_ji^{ba} everywhere.
  bool is_symmetric() const;
  /// The tensor of a constant field.
  const Tensor4& constant_value() const;

  /// Field of the adjoint operator, a*_ij^{ab}(y) = a_ji^{ba}(y).
  CoefficientField transposed() const;

  /// Representative scalar "viscosity" nu(y) = trace(A(y)) / d^2.
  double viscosity(const double* y) const;
  /// Mean viscosity over the unit cell, estimated on a fixed lattice.
  double mean_viscosity() const;

 private:
  struct Impl;
  std::shared_ptr<const Impl> impl_;
};

/// Linearised incompressible-elasticity tensor b_ij^{ab}(y).
class ElasticityTensor {
 public:
  using TensorFn = CoefficientField::TensorFn;

  ElasticityTensor(int d, TensorFn fn, double mu, std::string family = "elasticity");

  int dim() const { return d_; }
  double mu() const { return mu_; }
  const std::string& family() const { return family_; }
  void eval(const double* y, Tensor4& out) const { fn_(y, out); }

  /// Isotropic tensor lambda delta_ia delta_jb + G (delta_ij delta_ab + delta_ib delta_ja)
  /// with constant Lame-type parameters.
  static ElasticityTensor isotropic(int d, double lambda, double shear);
  /// Isotropic tensor with shear modulus G(y) = shear (1 + rho cos 2 pi y_1 ... ) and constant lambda.
  static ElasticityTensor isotropic_trig(int d, double lambda, double shear, double rho);

 private:
  int d_;
  TensorFn fn_;
  double mu_;
  std::string family_;
};

/// Instantiate a built-in family: "constant", "trig", "smoothed-checkerboard",
/// "elastic-isotropic" (reduced through elasticity_reduce).
CoefficientField make_coefficient(const std::string& family, const nlohmann::json& params, int d);

/// Load {"family": ..., "dim": ..., "params": {...}} from a JSON object.
CoefficientField coefficient_from_config(const nlohmann::json& cfg);
CoefficientField coefficient_from_file(const std::string& path);

/// Sampled best ellipticity constants. Throws EllipticityError when mu_lo <= 0.
EllipticityBounds check_ellipticity(const CoefficientField& a, int samples);

/// Pointwise periodicity check at integer shifts of the sample points.
double periodicity_defect(const CoefficientField& a, int samples);

/// b~_ij^{ab} = b_ij^{ab} + (mu/2) delta_ia delta_jb - (mu/2) delta_ib delta_ja.
CoefficientField elasticity_reduce(const ElasticityTensor& b);

/// Largest violation of b_ij^{ab} = b_ji^{ba} = b_aj^{ib} over sampled points.
double elasticity_symmetry_defect(const ElasticityTensor& b, int samples);

/// Deterministic sample points in the unit cell (Halton sequence).
std::vector<double> cell_samples(int d, int count);

/// Seed of the pseudo-random xi sequence used by check_ellipticity.
inline constexpr unsigned long long kEllipticitySeed = 20170611ULL;

}  // namespace shom
