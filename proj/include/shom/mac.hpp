#pragma once

// Staggered (MAC) discretisation shared by the box Stokes solver and the
// finite-difference cell solver.
//
// Pressure lives at cell centres, u^a on the faces normal to axis a. On a box
// every velocity array also carries the boundary values: the normal component
// sits exactly on the boundary faces, tangential components carry one extra
// point on each wall (at distance h/2 from the first interior value). Gradient
// components d_j u^a live at cell centres (j == a) or on the edges shared by
// d_j u^a and d_a u^j (j != a). The energy form sums w * (A g).g over these
// locations, with w halved for every coordinate lying on a wall, so that
// K = G^T W A G and the divergence D is the trace of G. -D^T is then exactly the
// discrete pressure gradient.

#include <array>
#include <cstdint>
#include <memory>
#include <mutex>
#include <vector>

#include "shom/coeff.hpp"
#include "shom/common.hpp"
#include "shom/krylov.hpp"

namespace shom::mac {

using Vec = std::vector<double>;

struct Grid {
  int d = 2;
  std::array<int, 3> n{1, 1, 1};  // cells per axis; n[a] = 1 for a >= d
  double h = 1.0;
  bool periodic = false;

  static Grid box(int d, int cells, double h);
  static Grid box(int d, std::array<int, 3> cells, double h);
  static Grid torus(int d, int cells);

  std::size_t cells() const { return static_cast<std::size_t>(n[0]) * n[1] * n[2]; }
  double cell_volume() const { return d == 2 ? h * h : h * h * h; }
  double extent(int axis) const { return n[axis] * h; }
  bool operator==(const Grid& o) const { return d == o.d && n == o.n && h == o.h && periodic == o.periodic; }
};

/// Per-axis index tables of a staggered array or of a derivative location.
struct AxisTable {
  int count = 1;
  std::vector<int> lo, hi;       // velocity index along the axis (differ only on the derivative axis)
  std::vector<double> inv_dist;  // 1/spacing on the derivative axis, 0 elsewhere
  std::vector<double> weight;    // quadrature weight factor
  std::vector<double> coord;     // physical coordinate
};

/// Index bookkeeping for velocity, pressure and gradient arrays.
class Layout {
 public:
  explicit Layout(const Grid& g);

  const Grid& grid() const { return grid_; }
  int dim() const { return grid_.d; }

  // velocity ---------------------------------------------------------------
  const std::array<int, 3>& vel_dims(int alpha) const { return vel_dims_[alpha]; }
  std::size_t vel_offset(int alpha) const { return vel_offset_[alpha]; }
  std::size_t vel_count(int alpha) const { return vel_offset_[alpha + 1] - vel_offset_[alpha]; }
  std::size_t vel_size() const { return vel_offset_[grid_.d]; }
  double vel_coord(int alpha, int axis, int idx) const { return vel_coord_[alpha][axis][idx]; }
  bool vel_on_wall(int alpha, int axis, int idx) const { return vel_wall_[alpha][axis][idx] != 0; }
  /// 1 for unknown entries, 0 for wall entries.
  const std::vector<std::uint8_t>& vel_mask() const { return vel_mask_; }
  std::size_t vel_index(int alpha, int i0, int i1, int i2) const {
    const auto& dm = vel_dims_[alpha];
    return vel_offset_[alpha] + (static_cast<std::size_t>(i0) * dm[1] + i1) * dm[2] + i2;
  }
  void vel_position(int alpha, std::size_t local, double* x) const;

  // pressure ----------------------------------------------------------------
  std::size_t p_size() const { return grid_.cells(); }
  std::size_t cell_index(int i0, int i1, int i2) const {
    return (static_cast<std::size_t>(i0) * grid_.n[1] + i1) * grid_.n[2] + i2;
  }
  void cell_position(std::size_t c, double* x) const;

  // gradient pairs p = j * d + alpha  (g_p = d_j u^alpha) ---------------------
  int pairs() const { return grid_.d * grid_.d; }
  static int pair_j(int d, int p) { return p / d; }
  static int pair_alpha(int d, int p) { return p % d; }
  const std::array<AxisTable, 3>& grad_axes(int p) const { return grad_axes_[p]; }
  std::array<int, 3> grad_dims(int p) const {
    return {grad_axes_[p][0].count, grad_axes_[p][1].count, grad_axes_[p][2].count};
  }
  std::size_t grad_offset(int p) const { return grad_offset_[p]; }
  std::size_t grad_count(int p) const { return grad_offset_[p + 1] - grad_offset_[p]; }
  std::size_t grad_size() const { return grad_offset_[pairs()]; }
  const Vec& grad_weight() const { return grad_weight_; }
  void grad_position(int p, std::size_t local, double* x) const;
  int derivative_axis(int p) const;
  /// Class of a pair: 0 for cell centres, otherwise 1 + edge id.
  int pair_class(int p) const;

  /// For an edge pair, the four edge entries surrounding each cell centre.
  const std::vector<std::array<std::uint32_t, 4>>& center_stencil(int p) const;

  // operators ---------------------------------------------------------------
  /// g = G u for all pairs.
  void gradient(const Vec& u, Vec& g) const;
  /// u += G^T s (wall entries are written too; callers mask).
  void gradient_transpose_add(const Vec& s, Vec& u) const;
  /// div u at cell centres (trace of G).
  void divergence(const Vec& u, Vec& div) const;
  /// u += D^T p.
  void divergence_transpose_add(const Vec& p, Vec& u) const;
  void mask_walls(Vec& u) const;

  /// Averages of the staggered velocity at cell centres, d arrays of size cells().
  std::vector<Vec> velocity_at_centers(const Vec& u) const;
  /// All d^2 gradient components at cell centres (edge pairs averaged).
  std::vector<Vec> gradient_at_centers(const Vec& u) const;

 private:
  Grid grid_;
  std::array<std::array<int, 3>, 3> vel_dims_{};
  std::array<std::size_t, 4> vel_offset_{};
  std::array<std::array<std::vector<double>, 3>, 3> vel_coord_;
  std::array<std::array<std::vector<std::uint8_t>, 3>, 3> vel_wall_;
  std::vector<std::uint8_t> vel_mask_;
  std::array<std::array<AxisTable, 3>, 9> grad_axes_;
  std::array<std::size_t, 10> grad_offset_{};
  Vec grad_weight_;
  mutable std::array<std::vector<std::array<std::uint32_t, 4>>, 9> center_stencil_;
  mutable std::once_flag stencil_once_[9];
};

/// Coefficient A(x / eps) sampled at the gradient locations of a layout.
class CoefficientSampler {
 public:
  CoefficientSampler(const Layout& layout, const CoefficientField& field, double eps);

  /// sigma = W A g (including cross-location couplings interpolated to centres).
  void apply(const Vec& g, Vec& sigma) const;
  /// Local viscosity at each cell centre (pressure Schur-complement scaling).
  const Vec& cell_viscosity() const { return cell_visc_; }
  double mean_viscosity() const { return mean_visc_; }
  bool symmetric() const { return symmetric_; }
  bool has_cross_terms() const { return cross_; }

 private:
  enum class Mode { Scalar, ConstantTensor, General };
  const Layout* layout_;
  Mode mode_;
  bool symmetric_;
  bool cross_ = false;
  Vec wa_;                                // Scalar: w * a at every gradient entry
  Tensor4 const_;                         // ConstantTensor
  std::vector<std::vector<int>> class_pairs_;  // pairs sharing a location class
  std::vector<Vec> block_;                // General: per pair, its same-class row at every entry
  Vec center_full_;                       // General with cross terms: d^4 per cell
  Vec cell_visc_;
  double mean_visc_ = 1.0;
};

/// Fast solver for the constant-coefficient MAC vector Laplacian -Delta_h
/// (sine transforms on a box, Fourier on the torus).
class LaplaceSolver {
 public:
  explicit LaplaceSolver(const Layout& layout);
  ~LaplaceSolver();
  LaplaceSolver(const LaplaceSolver&) = delete;
  LaplaceSolver& operator=(const LaplaceSolver&) = delete;

  /// z = (-Delta_h)^{-1} r on unknown entries; wall entries of z are zero.
  /// On the torus the mean of every component is removed.
  void solve(const Vec& r, Vec& z) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Serialises FFTW planner calls.
std::mutex& fftw_planner_mutex();

struct SaddleData {
  Vec force;     // velocity layout, body force at the face positions (walls ignored)
  Vec flux;      // gradient layout, h sampled at the gradient locations (may be empty)
  Vec stress;    // gradient layout, an already weighted flux W s (may be empty)
  Vec div;       // cell values of g (may be empty)
  Vec boundary;  // velocity layout, wall entries hold f (may be empty)
};

struct SaddleResult {
  Vec u;  // velocity layout including wall values
  Vec p;  // cell values, mean zero
  krylov::Result stats;
  double momentum_residual = 0.0;    // discrete L2 norm
  double divergence_residual = 0.0;  // discrete L2 norm
};

/// Solves K u - D^T p = F - G^T (W h + s), D u = g with u = f on the walls (box) or
/// mean-zero u (torus), and mean-zero p. MINRES for symmetric coefficients,
/// GMRES otherwise; the preconditioner is diag(nu^-1 (-Delta_h)^-1, nu).
SaddleResult solve_saddle(const Layout& layout, const CoefficientSampler& coef, const LaplaceSolver& lap,
                          const SaddleData& data, double tol, int max_iter, const Vec* guess = nullptr);

/// Velocity-layout vector of F^a sampled at the face positions.
template <class Fn>
Vec sample_velocity(const Layout& layout, Fn&& fn) {
  Vec out(layout.vel_size(), 0.0);
  double x[3] = {0, 0, 0};
  for (int a = 0; a < layout.dim(); ++a) {
    const std::size_t off = layout.vel_offset(a);
    for (std::size_t k = 0; k < layout.vel_count(a); ++k) {
      layout.vel_position(a, k, x);
      out[off + k] = fn(a, x);
    }
  }
  return out;
}

}  // namespace shom::mac
