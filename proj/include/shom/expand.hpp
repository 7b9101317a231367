#pragma once

// Dirichlet correctors, the two-scale error fields (w, tau), expansion errors
// of Green's functions, the Laplacian-Stokes divergence solver and the
// truncated maximal function.

#include <array>
#include <string>
#include <vector>

#include "shom/coeff.hpp"
#include "shom/green.hpp"
#include "shom/stokes_bvp.hpp"
#include "shom/torus.hpp"

namespace shom {

/// P_j^beta(x) = x_j e^beta on the velocity layout (wall entries included).
Vec linear_field(const BoxDomain& dom, int j, int beta);

/// Cell correctors matched to a box grid. When eps / h is an integer n the
/// finite-difference cell problem on n points per axis is used, so its grid is
/// the box grid folded onto one period and A_hat is the homogenized tensor of
/// the discrete operator. Otherwise the spectral scheme on `fallback_n` points.
/// The effective tensor and q are always set; phi only for the spectral scheme.
CorrectorSet box_cell_correctors(const CoefficientField& a, double eps, const BoxDomain& dom,
                                 const CellOptions& opt = {}, int fallback_n = 32);

/// True when eps / h is an integer (to 1e-9).
bool grid_resolves_period(double eps, const BoxDomain& dom);

struct DirichletCorrectorSet {
  BoxDomain domain;
  double eps = 1.0;
  bool adjoint = false;
  std::string family;
  std::vector<Vec> phi;     // Phi_j^beta on the velocity layout, index j * d + beta
  std::vector<Vec> lambda;  // Lambda_j^beta at cell centres
  std::array<double, 3> anchor{0, 0, 0};
  double anchor_distance = 0.0;  // dist(x0, boundary)
  double max_residual = 0.0;
  int iterations = 0;

  int dim() const { return domain.d; }
  const Vec& Phi(int j, int beta) const { return phi[j * dim() + beta]; }
  const Vec& Lambda(int j, int beta) const { return lambda[j * dim() + beta]; }
};

struct DirichletOptions {
  double tol = 1e-9;
  int max_iter = 20000;
  int threads = 1;
  bool adjoint = false;  // solve with the transposed tensor; pass matching cell correctors
};

/// Solves L(Phi) + grad Lambda = 0, div Phi = div P, Phi = P on the walls for
/// every (j, beta), starting from Phi = P. Lambda is shifted so that
/// Lambda_j^beta(x0) = pi_j^beta(x0 / eps) at the box centre x0.
DirichletCorrectorSet solve_dirichlet_correctors(const CoefficientField& a, double eps, const BoxDomain& dom,
                                                 const CorrectorSet& cell, const DirichletOptions& opt = {});

/// max over (j, beta) of sup |Phi - P|.
double corrector_deviation(const DirichletCorrectorSet& dc);

/// max over cells with dist(x, boundary) >= margin of
/// |Lambda(x) - pi(x / eps)| / min(1, eps / dist(x, boundary)).
double lambda_interior_constant(const DirichletCorrectorSet& dc, const CorrectorSet& cell, double margin);

// ---------------------------------------------------------------------------
// Two-scale error fields

enum class Instantiation { Dirichlet, Periodic };
std::string to_string(Instantiation t);
Instantiation instantiation_from_string(const std::string& s);

struct ExpansionFields {
  BoxDomain domain;
  double eps = 1.0;
  Instantiation tag = Instantiation::Dirichlet;
  Vec w;    // velocity layout
  Vec tau;  // cell centres
  // norms
  double diff_l2 = 0.0;    // ||u_eps - u_0||_L2
  double diff_h1 = 0.0;    // ||grad (u_eps - u_0)||_L2
  double w_l2 = 0.0;
  double w_h1 = 0.0;       // (||w||_L2^2 + ||grad w||_L2^2)^(1/2)
  double w_max = 0.0;
  double w_interior_l2 = 0.0;  // over cells with dist(x, boundary) >= interior margin
  double tau_l2_0 = 0.0;   // L2 norm of tau minus its mean
  double tau_max = 0.0;    // max |tau - mean|
  double pressure_l2_0 = 0.0;  // ||p_eps - p_0||_L2_0
};

/// w = u_eps - u_0 - (V_j^beta - P_j^beta) d_j u_0^beta and
/// tau = p_eps - p_0 - T_j^beta d_j u_0^beta - eps q_ij^beta(x / eps) d_i d_j u_0^beta,
/// with (V, T) = (Phi, Lambda) or (eps chi(x / eps) + P, pi(x / eps)). Derivatives
/// of u_0 are the scheme's differences at cell centres, interpolated where needed.
ExpansionFields build_expansion(const StokesSolution& ue, const StokesSolution& u0, const CorrectorSet& cell,
                                const DirichletCorrectorSet* dc, Instantiation tag, double eps,
                                double interior_margin = 0.25);

/// d_i d_j u^beta at cell centres, index ((i * d + j) * d + beta) * cells + c
/// (central differences of the centre gradient, one-sided next to the walls).
Vec second_derivatives_at_centers(const BoxDomain& dom, const Vec& u);

// ---------------------------------------------------------------------------
// Green's function expansions

struct GreenExpansionRow {
  double eps = 0.0;
  double r = 0.0;
  int samples = 0;
  double eG = 0.0;     // max |G_eps - G_0| (Frobenius over alpha, beta)
  double eDG = 0.0;    // max |d_i G_eps - d_i Phi_j d_j G_0|
  double ePi = 0.0;    // max over pairs (x, z) on the sphere of the difference form
  double ePi1 = 0.0;   // non-difference form
  double envG = 0.0;   // eps / r^(d-1)
  double envDG = 0.0;  // eps (log(r / eps + 2))^2 / r^d
  double envPi = 0.0;  // 2 envDG (pair of equal separations)
  double envPi1 = 0.0; // eps (log(r / eps + 2))^3 / r^d
  double ratioG() const { return envG > 0 ? eG / envG : 0.0; }
  double ratioDG() const { return envDG > 0 ? eDG / envDG : 0.0; }
  double ratioPi() const { return envPi > 0 ? ePi / envPi : 0.0; }
  double ratioPi1() const { return envPi1 > 0 ? ePi1 / envPi1 : 0.0; }
};

struct GreenExpansionOptions {
  GreenOptions green;
  /// Probes closer than max(4h, separation_eps * eps) to y are excluded.
  double separation_eps = 2.0;
};

/// Errors of the first-order expansions of G, grad_x G and Pi on spheres
/// |x - y| = r. G_0 uses A_hat from `cell`; Phi and Lambda from `dc`.
std::vector<GreenExpansionRow> green_expansion_errors(const CoefficientField& a, double eps, const BoxDomain& dom,
                                                      const double* y, const std::vector<double>& radii,
                                                      const CorrectorSet& cell, const DirichletCorrectorSet& dc,
                                                      const GreenExpansionOptions& opt = {},
                                                      std::vector<std::string>* notes = nullptr);

struct SecondDerivativeRow {
  double eps = 0.0;
  double r = 0.0;
  int samples = 0;
  double eDDG = 0.0;     // max |d_xi d_yj G_eps - d_i Phi_k d_xk d_yl G_0 d_j Phi*_l|
  double eDyPi = 0.0;    // difference form for grad_y Pi
  double envDDG = 0.0;   // eps (log(r / eps + 2))^2 / r^(d+1)
  double envDyPi = 0.0;  // 2 envDDG
  double ratioDDG() const { return envDDG > 0 ? eDDG / envDDG : 0.0; }
  double ratioDyPi() const { return envDyPi > 0 ? eDyPi / envDyPi : 0.0; }
};

/// Expansion errors of grad_x grad_y G and grad_y Pi. `dc_adj` holds the
/// Dirichlet correctors of the transposed tensor.
std::vector<SecondDerivativeRow> second_derivative_expansion_errors(
    const CoefficientField& a, double eps, const BoxDomain& dom, const double* y, const std::vector<double>& radii,
    const CorrectorSet& cell, const DirichletCorrectorSet& dc, const DirichletCorrectorSet& dc_adj,
    const GreenExpansionOptions& opt = {}, std::vector<std::string>* notes = nullptr);

// ---------------------------------------------------------------------------
// Divergence equation and maximal function

/// Velocity of -Delta u + grad p = 0, div u = psi, u = 0 on the walls.
/// Throws CompatibilityError when the mean of psi is not zero.
StokesSolution solve_divergence(const ScalarPointFn& psi, const BoxDomain& dom, const SolveOptions& opt = {});

/// max over cell centres of the Frobenius norm of grad u.
double gradient_max(const BoxDomain& dom, const Vec& u);

/// Truncated maximal function sup_{s in {t, 2t, 4t, ...}} avg_{B(x, s) cap E} |f|
/// of a cell-centred field f at each probe, with E = [lo, hi] (a sub-box) and
/// s up to the diameter of E. Throws ConfigError for t < h.
std::vector<double> truncated_maximal(const BoxDomain& dom, const Vec& f, double t,
                                      const std::vector<std::array<double, 3>>& probes, const double* lo = nullptr,
                                      const double* hi = nullptr);

Snapshot to_snapshot(const DirichletCorrectorSet& dc);
DirichletCorrectorSet dirichlet_correctors_from_snapshot(const Snapshot& s);

}  // namespace shom
