#pragma once

// Dirichlet problem for the Stokes system on axis-aligned boxes
//   -div(A(x/eps) grad u) + grad p = F + div(h),  div u = g,  u = f on the walls,
// discretised on the staggered grid of mac.hpp.

#include <array>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "shom/coeff.hpp"
#include "shom/common.hpp"
#include "shom/mac.hpp"
#include "shom/snapshot.hpp"

namespace shom {

using Vec = std::vector<double>;

/// Box [0, L_0] x ... x [0, L_{d-1}] with cubic cells of side h.
struct BoxDomain {
  int d = 2;
  std::array<int, 3> cells{1, 1, 1};
  double h = 1.0;

  /// Unit-length box side `side` resolved by `n` cells per axis.
  static BoxDomain cube(int d, int n, double side = 1.0);
  double extent(int axis) const { return cells[axis] * h; }
  double volume() const;
  void center(double* x) const;
  /// Distance from x to the boundary.
  double distance_to_boundary(const double* x) const;
  /// Resolution >= 8 per axis.
  void validate() const;
  mac::Grid grid() const { return mac::Grid::box(d, cells, h); }
  bool operator==(const BoxDomain& o) const { return d == o.d && cells == o.cells && h == o.h; }
};

using PointFn = std::function<void(const double* x, double* out)>;
using ScalarPointFn = std::function<double(const double* x)>;

struct StokesProblem {
  BoxDomain domain;
  /// A(x / eps); a constant field gives the homogenised operator.
  CoefficientField coefficient;
  double eps = 1.0;
  PointFn force;          // F^alpha, d values
  PointFn flux;           // h_i^alpha at index i * d + alpha
  ScalarPointFn div;      // g
  PointFn boundary;       // f^alpha on the walls
  /// Extra discrete data added to the sampled data (point sources and the like).
  mac::SaddleData discrete;
};

struct StokesSolution {
  BoxDomain domain;
  Vec u;  // velocity layout of mac::Layout, wall values included
  Vec p;  // cell centres, mean zero
  double momentum_residual = 0.0;
  double divergence_residual = 0.0;
  int iterations = 0;
  std::vector<double> history;
  /// (||u||_H1 + ||p||_L2_0) / (||F||_L2 + ||h||_L2 + ||g||_L2 + ||f||_L2(boundary)), 0 for zero data.
  double energy_constant = 0.0;
  double solution_norm = 0.0;
  double data_norm = 0.0;
};

struct SolveOptions {
  double tol = 1e-9;      // relative residual of the saddle system
  int max_iter = 20000;
  const Vec* guess = nullptr;  // velocity initial guess (velocity layout)
};

/// Signed defect int g - int_{boundary} f.n with the scheme's quadrature
/// (cell midpoint rule for g, face midpoints for f.n).
double check_compatibility(const StokesProblem& problem);

/// Sampled saddle-point data of a problem.
mac::SaddleData discretise(const StokesProblem& problem, const mac::Layout& layout);

StokesSolution solve_stokes(const StokesProblem& problem, const SolveOptions& opt = {});

/// Same problem with the operator replaced by the constant tensor a_hat.
StokesSolution solve_homogenized(const StokesProblem& problem, const Tensor4& a_hat, const SolveOptions& opt = {});

// ---------------------------------------------------------------------------
// Discrete norms and point evaluation

/// Norms over interior unknowns with the quadrature of the scheme.
double velocity_l2(const BoxDomain& dom, const Vec& u);
double velocity_max(const BoxDomain& dom, const Vec& u);
double gradient_l2(const BoxDomain& dom, const Vec& u);
/// L2 norm of p minus its mean.
double pressure_l2_0(const BoxDomain& dom, const Vec& p);

/// Multilinear interpolation of component alpha at x.
double velocity_at(const BoxDomain& dom, const Vec& u, int alpha, const double* x);
/// Multilinear interpolation of the cell-centred field at x (constant extension to the walls).
double cell_value_at(const BoxDomain& dom, const Vec& p, const double* x);
/// Gradient d_j u^alpha at every cell centre, index (j * d + alpha) * cells + c.
Vec gradient_at_centers(const BoxDomain& dom, const Vec& u);
/// Velocity averaged to cell centres, index alpha * cells + c.
Vec velocity_at_centers(const BoxDomain& dom, const Vec& u);

// ---------------------------------------------------------------------------
// Caccioppoli check

struct CaccioppoliResult {
  double lhs = 0.0;  // int_{D_{r/2}} |grad u|^2
  double rhs = 0.0;  // r^-2 int_{D_r}|u|^2 + r^2 int|F|^2 + int|h|^2 + int|g|^2 + r^-1 int_{Delta_r}|f|^2
  double ratio() const { return rhs > 0.0 ? lhs / rhs : 0.0; }
};

/// Both sides of the Caccioppoli inequality on D_r(x) = Omega cap B_r(x). The
/// boundary H^1/2 term is replaced by its scaling-consistent proxy r^-1 ||f||^2_L2.
CaccioppoliResult caccioppoli_check(const StokesSolution& sol, const StokesProblem& problem, const double* x, double r);

// ---------------------------------------------------------------------------
// Output

Snapshot to_snapshot(const StokesSolution& sol);
StokesSolution solution_from_snapshot(const Snapshot& s);

/// CSV slice along the line x_axis = t through `point`: columns x, u^0..u^{d-1}, p.
void write_slice_csv(const std::string& path, const StokesSolution& sol, int axis, const double* point, int samples);

}  // namespace shom
