#pragma once

// Periodic cell problem on Y = (0,1]^d: correctors (chi, pi), effective tensor,
// flux tensor b and dual correctors (phi, q).
//
// Two schemes share one interface. The spectral scheme is a Fourier-Galerkin
// method on a collocation grid (products dealiased on a 3/2 grid, Nyquist modes
// dropped); every field lives on the nodes k/N. The finite-difference scheme is
// the periodic staggered grid of the box solver, so fields carry their
// staggered placement.

#include <array>
#include <string>
#include <vector>

#include "shom/coeff.hpp"
#include "shom/common.hpp"
#include "shom/snapshot.hpp"

namespace shom {

using Vec = std::vector<double>;

enum class CellScheme { Spectral, FiniteDifference };

std::string to_string(CellScheme s);
CellScheme cell_scheme_from_string(const std::string& s);

struct TorusGrid {
  int d = 2;
  int n = 64;  // points per axis

  double h() const { return 1.0 / n; }
  std::size_t points() const;
  /// N >= 8 and a power of two.
  void validate() const;
};

/// Values on the torus grid. `offset[a]` is the placement along axis a in
/// units of h (0 for nodes and faces, 0.5 for cell centres).
struct PeriodicField {
  TorusGrid grid;
  std::string location = "node";
  std::array<double, 3> offset{0.0, 0.0, 0.0};
  Vec values;

  double mean() const;
  double max_abs() const;
  /// Value at an arbitrary point y (periodic). Trigonometric interpolation on
  /// spectral nodes, multilinear interpolation otherwise.
  double operator()(const double* y) const;
  bool spectral() const { return location == "node"; }
};

struct CellOptions {
  CellScheme scheme = CellScheme::Spectral;
  double tol = 1e-8;       // discrete L2 residual of each cell solve
  int max_iter = 4000;
  int threads = 1;
};

class CorrectorSet {
 public:
  CorrectorSet() = default;
  CorrectorSet(const TorusGrid& grid, CellScheme scheme);

  const TorusGrid& grid() const { return grid_; }
  CellScheme scheme() const { return scheme_; }
  int dim() const { return grid_.d; }

  /// Component gamma of chi_j^beta.
  PeriodicField& chi(int j, int beta, int gamma) { return chi_[idx3(j, beta, gamma)]; }
  const PeriodicField& chi(int j, int beta, int gamma) const { return chi_[idx3(j, beta, gamma)]; }
  PeriodicField& pi(int j, int beta) { return pi_[j * dim() + beta]; }
  const PeriodicField& pi(int j, int beta) const { return pi_[j * dim() + beta]; }

  const Tensor4& effective() const { return ahat_; }
  void set_effective(const Tensor4& a) { ahat_ = a; }

  bool has_flux() const { return !b_.empty(); }
  const PeriodicField& b(int i, int j, int alpha, int beta) const;
  void set_flux(std::vector<PeriodicField> b) { b_ = std::move(b); }

  bool has_dual() const { return !phi_.empty(); }
  bool has_q() const { return !q_.empty(); }
  const PeriodicField& phi(int k, int i, int j, int alpha, int beta) const;
  const PeriodicField& q(int i, int j, int beta) const;
  void set_dual(std::vector<PeriodicField> phi, std::vector<PeriodicField> q) {
    phi_ = std::move(phi);
    q_ = std::move(q);
  }
  void set_q(std::vector<PeriodicField> q) { q_ = std::move(q); }

  /// Final discrete L2 residual of each (j, beta) solve, index j * d + beta.
  std::vector<double>& residuals() { return residuals_; }
  const std::vector<double>& residuals() const { return residuals_; }
  std::vector<int>& iterations() { return iterations_; }
  const std::vector<int>& iterations() const { return iterations_; }

  std::string family;

 private:
  int idx3(int a, int b, int c) const { return (a * dim() + b) * dim() + c; }
  TorusGrid grid_;
  CellScheme scheme_ = CellScheme::Spectral;
  std::vector<PeriodicField> chi_, pi_, b_, phi_, q_;
  Tensor4 ahat_;
  std::vector<double> residuals_;
  std::vector<int> iterations_;
};

/// Correctors chi_j^beta, pi_j^beta for every (j, beta). Mean-zero
/// normalisations are enforced by projection.
CorrectorSet solve_cell_problem(const CoefficientField& a, const TorusGrid& grid, const CellOptions& opt = {});

/// Effective tensor, averaging a + a grad chi with the quadrature of the scheme.
/// Also stored in the corrector set.
Tensor4 effective_tensor(const CoefficientField& a, CorrectorSet& c);

/// Flux tensor b = a + a grad chi - A_hat (mean zero). Requires the effective tensor.
std::vector<PeriodicField> flux_tensor(const CoefficientField& a, CorrectorSet& c);

/// Dual correctors (phi, q) built in Fourier space. Spectral scheme only.
void dual_correctors(CorrectorSet& c);

/// q_ij^beta = d_i Delta^-1 pi_j^beta on the pressure grid, for either scheme.
std::vector<PeriodicField> dual_pressures(const CorrectorSet& c);

/// Solve, then assemble effective tensor, flux tensor and (spectral) dual correctors.
CorrectorSet homogenize(const CoefficientField& a, const TorusGrid& grid, const CellOptions& opt = {});

/// Consistency measures used by the tests and the acceptance suite.
struct CellDiagnostics {
  double max_residual = 0.0;
  double max_divergence = 0.0;      // discrete L2 of div chi
  double max_mean = 0.0;            // largest |mean| / max over chi, pi, b, q, phi
  double flux_identity = 0.0;       // || d_i b_ij - d_alpha pi_j || (L2)
  double dual_identity = 0.0;       // || b - d_k phi_k - d_alpha q || (L2)
  double q_identity = 0.0;          // || d_i q_ij - pi_j || (L2)
  double antisymmetry = 0.0;        // max |phi_kij + phi_ikj|
};
CellDiagnostics diagnose(const CorrectorSet& c);

Snapshot to_snapshot(const CorrectorSet& c);
CorrectorSet corrector_set_from_snapshot(const Snapshot& s);

}  // namespace shom
