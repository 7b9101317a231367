#pragma once

// Discrete Green's functions on boxes. A column is the solution of the Stokes
// system driven by a unit point force in direction beta at a pressure-cell
// centre y: the mass 1/h^d of that cell is split equally between its two
// faces normal to beta.

#include <array>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "shom/coeff.hpp"
#include "shom/stokes_bvp.hpp"

namespace shom {

struct GreenColumn {
  BoxDomain domain;
  std::array<double, 3> y{0, 0, 0};  // source (cell centre)
  int beta = 0;
  bool adjoint = false;
  double eps = 1.0;
  std::string family;
  /// "column", or "dy<l>" for a source-shift difference quotient.
  std::string kind = "column";
  Vec u;  // G^{. beta}(., y) on the velocity layout
  Vec p;  // Pi^beta(., y) at cell centres, mean zero
  double momentum_residual = 0.0;
  int iterations = 0;

  int dim() const { return domain.d; }
  /// G^{alpha beta}(x, y).
  double velocity(int alpha, const double* x) const { return velocity_at(domain, u, alpha, x); }
  double pressure(const double* x) const { return cell_value_at(domain, p, x); }
};

struct GreenOptions {
  double tol = 1e-9;
  int max_iter = 20000;
  bool adjoint = false;       // solve with the transposed tensor
  std::string cache_dir;      // empty: no cache
  int threads = 1;            // concurrent columns in multi-column studies
};

/// Serialised persistent store of columns keyed by (coefficient, eps, grid, y, beta, adjoint, tol).
class ColumnCache {
 public:
  explicit ColumnCache(std::string dir) : dir_(std::move(dir)) {}
  std::string path_for(const std::string& key) const;
  std::optional<GreenColumn> load(const std::string& key) const;
  void store(const std::string& key, const GreenColumn& c) const;
  const std::string& dir() const { return dir_; }

 private:
  std::string dir_;
  static std::mutex& mutex();
};

std::string column_key(const CoefficientField& a, double eps, const BoxDomain& dom, const double* y, int beta,
                       bool adjoint, double tol);

/// Snaps y to the centre of its cell. Throws PreconditionError when dist(y, boundary) < 4h.
std::array<double, 3> source_cell_centre(const BoxDomain& dom, const double* y);

/// Discrete delta for direction beta at cell centre y (velocity layout).
Vec point_force(const BoxDomain& dom, const double* y, int beta);

GreenColumn green_column(const CoefficientField& a, double eps, const BoxDomain& dom, const double* y, int beta,
                         const GreenOptions& opt = {});

/// (G(., y + h e_l) - G(., y)) / h and the same for Pi; the result is located at
/// the midpoint y + (h/2) e_l.
GreenColumn dy_green_column(const CoefficientField& a, double eps, const BoxDomain& dom, const double* y, int beta,
                            int l, const GreenOptions& opt = {});
GreenColumn dy_difference(const GreenColumn& at_y, const GreenColumn& shifted, int l);

struct DecayRow {
  double r = 0.0;
  int samples = 0;
  double absG = 0.0;      // max |G(x, y)| over the sphere
  double absDxG = 0.0;    // max |grad_x G|
  double oscPi = 0.0;     // max - min of Pi over the sphere
  double absDyG = 0.0;    // from a source-shift column, if given
  double absDxDyG = 0.0;
  double oscDyPi = 0.0;
};

/// Sphere statistics at each radius: points with |x - y| = r and
/// dist(x, boundary) >= margin, cell-centre fields interpolated multilinearly. Radii below 4h are skipped with a notice in `notes`.
std::vector<DecayRow> decay_profile(const GreenColumn& col, const std::vector<double>& radii, double margin,
                                    const GreenColumn* dy = nullptr, std::vector<std::string>* notes = nullptr);

/// Tensor version: |G| and |grad_x G| are Frobenius norms over all columns of
/// `cols` (one per beta), |grad_y G| and |grad_x grad_y G| over all of `dys`
/// (one per beta and l, each sampled around its own centre along shared
/// directions). Oscillations are the largest over single columns.
std::vector<DecayRow> decay_profile(const std::vector<const GreenColumn*>& cols, const std::vector<double>& radii,
                                    double margin, const std::vector<const GreenColumn*>& dys,
                                    std::vector<std::string>* notes = nullptr);

/// Unit directions sampling a sphere of radius ratio * h at spacing about h/2
/// (Fibonacci lattice in 3D).
std::vector<std::array<double, 3>> sphere_directions(int d, double ratio);

/// Geometric radii r_0 q^k spanning [r_lo, r_hi] with `count` points.
std::vector<double> geometric_radii(double r_lo, double r_hi, int count);

/// Average of Pi over the cells with r0 <= |x - y| <= r1.
double shell_average(const GreenColumn& col, double r0, double r1);

/// Whole-space approximation from two Dirichlet boxes sharing h and the source
/// offset: sides L and 2L. For a Dirichlet box the regular part of the Green's
/// function scales like 1/L at fixed separation, so 2 G_2L - G_L removes the
/// leading truncation term. Pressures come from the 2L box minus its far-field
/// constant.
struct FundamentalColumn {
  GreenColumn base;            // side L
  GreenColumn large;           // side 2L
  double side = 1.0;           // L
  double qbar = 0.0;           // far-field pressure constant of the 2L box (shell [L_2/4, L_2/3])
  double qbar_base = 0.0;      // the same for the L box
  double measure_radius = 0.0;  // L / 4, a quarter of the base box side
  /// Boundary contamination bound (r / L_2)^(d-1) at the measurement radius.
  double contamination = 0.0;

  /// Gamma^{alpha beta} at separation rv = x - y (extrapolated).
  double velocity(int alpha, const double* rv) const;
  /// Single-box value G_L at separation rv.
  double velocity_base(int alpha, const double* rv) const;
  /// Q(x) - Qbar at separation rv.
  double pressure(const double* rv) const;
};

/// Richardson combination (2^m Q_2L - Q_L) / (2^m - 1) of two columns, on the
/// layout of the L box. The regular part of a quantity with k derivatives
/// scales like L^(2-d-k), so m = d - 2 + k removes its leading term. Both
/// columns must share h and the source position relative to the box centre;
/// throws GridMismatchError otherwise.
GreenColumn extrapolate_columns(const GreenColumn& base, const GreenColumn& large, int order = 1);

/// Fundamental column with the source next to the box centre.
FundamentalColumn fundamental_column(const CoefficientField& a, double eps, int d, double side, int n, int beta,
                                     const GreenOptions& opt = {});

/// Cross-check of G*(x, y) = G(y, x)^T from independent primal and adjoint
/// columns. Sources snap to their cells; values are interpolated at the given
/// points.
struct SymmetryCheck {
  std::vector<double> primal;   // G^{ab}(x, y), index a * d + b (sources at y)
  std::vector<double> adjoint;  // G*^{ab}(y, x) (sources at x)
  double rel_error = 0.0;       // |G*(y, x) - G(x, y)^T|_F / |G(x, y)|_F
};

SymmetryCheck symmetry_check(const CoefficientField& a, double eps, const BoxDomain& dom, const double* x,
                             const double* y, const GreenOptions& opt = {});

/// Integral representation u(x) = int G(x, y) F(y) dy checked against a direct
/// solve. The integral is a midpoint rule over cell-centre sources on lattices
/// of spacing stride * h and stride * h / 2 inside the support box of F. The
/// quadrature bound has two parts: the lattice estimate |coarse - fine| and the
/// discrete-delta part |u_delta(x) - u(x)|, where u_delta solves with F
/// averaged over the two cells of each face (the stride-1 sum, by linearity).
struct RepresentationCheck {
  std::vector<double> direct;  // u(x) from solve_stokes
  std::vector<double> delta;   // u_delta(x)
  std::vector<double> coarse;  // lattice stride
  std::vector<double> fine;    // lattice stride / 2
  double error = 0.0;          // |fine - direct|
  double lattice_bound = 0.0;  // |coarse - fine|
  double delta_bound = 0.0;    // |u_delta - direct|
  double bound = 0.0;          // sum of the two
  int columns = 0;
  bool passed() const { return error <= bound; }
};

RepresentationCheck representation_check(const CoefficientField& a, double eps, const BoxDomain& dom,
                                         const PointFn& force, const double* support_lo, const double* support_hi,
                                         const double* x, int stride, const GreenOptions& opt = {});

/// Whole-space decay study: every column beta and every source shift (beta, l)
/// on boxes of side L (n cells) and 2L (2n cells) around the centre, each
/// quantity extrapolated with its own order (G: d-2, grad_x G, Pi, grad_y G:
/// d-1, mixed derivatives and grad_y Pi: d). With extrapolate = false only the
/// L box is used.
struct DecayStudy {
  BoxDomain domain;  // the L box
  std::vector<DecayRow> rows;
  std::vector<std::string> notes;
  double max_residual = 0.0;
  int columns = 0;  // solves performed or loaded
};

DecayStudy whole_space_decay(const CoefficientField& a, double eps, int d, int n, double side,
                             const std::vector<double>& radii, const GreenOptions& opt = {}, bool extrapolate = true);

/// Closed-form Stokeslet for -Delta u + grad p = delta e_beta in R^3 (or R^2):
/// velocity component alpha and pressure at x - y.
double stokeslet_velocity(int d, int alpha, int beta, const double* r);
double stokeslet_pressure(int d, int beta, const double* r);

Snapshot to_snapshot(const GreenColumn& c);
GreenColumn green_column_from_snapshot(const Snapshot& s);

}  // namespace shom
