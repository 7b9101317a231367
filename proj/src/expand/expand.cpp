#include "shom/expand.hpp"

#include <algorithm>
#include <cmath>

#include "shom/parallel.hpp"

namespace shom {

namespace {

// Calls fn(alpha, global index, position) for every velocity entry.
template <class Fn>
void for_each_velocity_point(const mac::Layout& L, Fn&& fn) {
  for (int al = 0; al < L.dim(); ++al)
    for (std::size_t k = 0; k < L.vel_count(al); ++k) {
      double x[3] = {0, 0, 0};
      L.vel_position(al, k, x);
      fn(al, L.vel_offset(al) + k, x);
    }
}

template <class Fn>
void for_each_cell(const BoxDomain& dom, Fn&& fn) {
  const auto& n = dom.cells;
  std::size_t c = 0;
  for (int i0 = 0; i0 < n[0]; ++i0)
    for (int i1 = 0; i1 < n[1]; ++i1)
      for (int i2 = 0; i2 < n[2]; ++i2, ++c) {
        const double x[3] = {(i0 + 0.5) * dom.h, (i1 + 0.5) * dom.h, dom.d > 2 ? (i2 + 0.5) * dom.h : 0.0};
        fn(c, x);
      }
}

// Cell-centred fields of a flattened block: component k occupies [k * cells, (k + 1) * cells).
Vec slice(const Vec& v, std::size_t k, std::size_t cells) {
  return Vec(v.begin() + static_cast<std::ptrdiff_t>(k * cells), v.begin() + static_cast<std::ptrdiff_t>((k + 1) * cells));
}

void scaled_point(const double* x, double eps, int d, double* y) {
  for (int a = 0; a < 3; ++a) y[a] = a < d ? x[a] / eps : 0.0;
}

double envelope_log(double eps, double r, int power) { return std::pow(std::log(r / eps + 2.0), power); }

}  // namespace

Vec linear_field(const BoxDomain& dom, int j, int beta) {
  const mac::Layout L(dom.grid());
  Vec u(L.vel_size(), 0.0);
  for_each_velocity_point(L, [&](int al, std::size_t k, const double* x) {
    if (al == beta) u[k] = x[j];
  });
  return u;
}

bool grid_resolves_period(double eps, const BoxDomain& dom) {
  const double n = eps / dom.h;
  return n >= 2.0 - 1e-9 && std::abs(n - std::round(n)) < 1e-9;
}

CorrectorSet box_cell_correctors(const CoefficientField& a, double eps, const BoxDomain& dom, const CellOptions& opt,
                                 int fallback_n) {
  CellOptions o = opt;
  TorusGrid g;
  g.d = dom.d;
  if (grid_resolves_period(eps, dom)) {
    o.scheme = CellScheme::FiniteDifference;
    g.n = static_cast<int>(std::lround(eps / dom.h));
  } else {
    o.scheme = CellScheme::Spectral;
    g.n = fallback_n;
  }
  CorrectorSet c = homogenize(a, g, o);
  if (!c.has_q()) c.set_q(dual_pressures(c));
  return c;
}

// ---------------------------------------------------------------------------
// Dirichlet correctors

DirichletCorrectorSet solve_dirichlet_correctors(const CoefficientField& a, double eps, const BoxDomain& dom,
                                                 const CorrectorSet& cell, const DirichletOptions& opt) {
  dom.validate();
  const int d = dom.d;
  if (cell.dim() != d) throw GridMismatchError("cell correctors and domain differ in dimension");
  if (eps < 2.0 * dom.h * (1.0 - 1e-12)) throw PreconditionError("Dirichlet correctors need eps >= 2h");
  DirichletCorrectorSet out;
  out.domain = dom;
  out.eps = eps;
  out.adjoint = opt.adjoint;
  out.family = a.info().family;
  dom.center(out.anchor.data());
  out.anchor_distance = dom.distance_to_boundary(out.anchor.data());
  if (out.anchor_distance < 4.0 * dom.h) throw PreconditionError("anchor too close to the boundary");
  out.phi.resize(static_cast<std::size_t>(d * d));
  out.lambda.resize(static_cast<std::size_t>(d * d));
  std::vector<double> res(static_cast<std::size_t>(d * d), 0.0);
  std::vector<int> its(static_cast<std::size_t>(d * d), 0);
  const CoefficientField coef = opt.adjoint ? a.transposed() : a;
  parallel_for(d * d, opt.threads, [&](int t) {
    const int j = t / d, beta = t % d;
    StokesProblem pb;
    pb.domain = dom;
    pb.coefficient = coef;
    pb.eps = eps;
    pb.boundary = [j, beta, d](const double* x, double* f) {
      for (int k = 0; k < d; ++k) f[k] = 0.0;
      f[beta] = x[j];
    };
    if (j == beta) pb.div = [](const double*) { return 1.0; };
    const Vec guess = linear_field(dom, j, beta);
    SolveOptions so;
    so.tol = opt.tol;
    so.max_iter = opt.max_iter;
    so.guess = &guess;
    StokesSolution s = solve_stokes(pb, so);
    double y0[3];
    scaled_point(out.anchor.data(), eps, d, y0);
    const double shift = cell.pi(j, beta)(y0) - cell_value_at(dom, s.p, out.anchor.data());
    for (double& v : s.p) v += shift;
    out.phi[t] = std::move(s.u);
    out.lambda[t] = std::move(s.p);
    res[t] = s.momentum_residual;
    its[t] = s.iterations;
  });
  for (int t = 0; t < d * d; ++t) {
    out.max_residual = std::max(out.max_residual, res[t]);
    out.iterations += its[t];
  }
  return out;
}

double corrector_deviation(const DirichletCorrectorSet& dc) {
  const int d = dc.dim();
  double m = 0.0;
  for (int j = 0; j < d; ++j)
    for (int b = 0; b < d; ++b) {
      const Vec p = linear_field(dc.domain, j, b);
      const Vec& f = dc.Phi(j, b);
      for (std::size_t k = 0; k < p.size(); ++k) m = std::max(m, std::abs(f[k] - p[k]));
    }
  return m;
}

double lambda_interior_constant(const DirichletCorrectorSet& dc, const CorrectorSet& cell, double margin) {
  const int d = dc.dim();
  double c = 0.0;
  for_each_cell(dc.domain, [&](std::size_t k, const double* x) {
    const double delta = dc.domain.distance_to_boundary(x);
    if (delta < margin) return;
    double y[3];
    scaled_point(x, dc.eps, d, y);
    const double weight = std::min(1.0, dc.eps / delta);
    for (int j = 0; j < d; ++j)
      for (int b = 0; b < d; ++b) c = std::max(c, std::abs(dc.Lambda(j, b)[k] - cell.pi(j, b)(y)) / weight);
  });
  return c;
}

// ---------------------------------------------------------------------------
// Two-scale error fields

std::string to_string(Instantiation t) { return t == Instantiation::Dirichlet ? "dirichlet" : "periodic"; }

Instantiation instantiation_from_string(const std::string& s) {
  if (s == "dirichlet") return Instantiation::Dirichlet;
  if (s == "periodic") return Instantiation::Periodic;
  throw ConfigError("unknown instantiation '" + s + "' (dirichlet | periodic)");
}

Vec second_derivatives_at_centers(const BoxDomain& dom, const Vec& u) {
  const int d = dom.d;
  const std::size_t nc = static_cast<std::size_t>(dom.cells[0]) * dom.cells[1] * dom.cells[2];
  const Vec g = gradient_at_centers(dom, u);
  Vec out(static_cast<std::size_t>(d * d * d) * nc, 0.0);
  const auto& n = dom.cells;
  const std::array<std::size_t, 3> stride{static_cast<std::size_t>(n[1]) * n[2], static_cast<std::size_t>(n[2]), 1};
  for (int j = 0; j < d; ++j)
    for (int b = 0; b < d; ++b) {
      const std::size_t src = static_cast<std::size_t>(j * d + b) * nc;
      for (int i = 0; i < d; ++i) {
        const std::size_t dst = static_cast<std::size_t>((i * d + j) * d + b) * nc;
        std::size_t c = 0;
        for (int i0 = 0; i0 < n[0]; ++i0)
          for (int i1 = 0; i1 < n[1]; ++i1)
            for (int i2 = 0; i2 < n[2]; ++i2, ++c) {
              const int ii[3] = {i0, i1, i2};
              const int m = n[i];
              const std::size_t s = stride[i];
              double v;
              if (ii[i] == 0)
                v = (g[src + c + s] - g[src + c]) / dom.h;
              else if (ii[i] == m - 1)
                v = (g[src + c] - g[src + c - s]) / dom.h;
              else
                v = (g[src + c + s] - g[src + c - s]) / (2.0 * dom.h);
              out[dst + c] = v;
            }
      }
    }
  return out;
}

ExpansionFields build_expansion(const StokesSolution& ue, const StokesSolution& u0, const CorrectorSet& cell,
                                const DirichletCorrectorSet* dc, Instantiation tag, double eps,
                                double interior_margin) {
  const BoxDomain& dom = ue.domain;
  if (!(u0.domain == dom)) throw GridMismatchError("u_eps and u_0 live on different grids");
  if (ue.u.size() != u0.u.size() || ue.p.size() != u0.p.size()) throw GridMismatchError("solution sizes differ");
  if (tag == Instantiation::Dirichlet) {
    if (!dc) throw ConfigError("the Dirichlet instantiation needs Dirichlet correctors");
    if (!(dc->domain == dom)) throw GridMismatchError("Dirichlet correctors live on a different grid");
  }
  const int d = dom.d;
  const mac::Layout L(dom.grid());
  const std::size_t nc = L.p_size();
  ExpansionFields out;
  out.domain = dom;
  out.eps = eps;
  out.tag = tag;

  const Vec grad0 = gradient_at_centers(dom, u0.u);
  std::vector<Vec> du0;  // d_j u0^beta at cell centres, index j * d + beta
  for (int p = 0; p < d * d; ++p) du0.push_back(slice(grad0, static_cast<std::size_t>(p), nc));

  // w
  Vec diff(ue.u.size());
  for (std::size_t k = 0; k < diff.size(); ++k) diff[k] = ue.u[k] - u0.u[k];
  out.w = diff;
  std::vector<Vec> plin;
  if (tag == Instantiation::Dirichlet)
    for (int j = 0; j < d; ++j)
      for (int b = 0; b < d; ++b) plin.push_back(linear_field(dom, j, b));
  for_each_velocity_point(L, [&](int g, std::size_t k, const double* x) {
    double y[3];
    scaled_point(x, eps, d, y);
    double corr = 0.0;
    for (int j = 0; j < d; ++j)
      for (int b = 0; b < d; ++b) {
        const double v = tag == Instantiation::Dirichlet ? dc->Phi(j, b)[k] - plin[j * d + b][k]
                                                         : eps * cell.chi(j, b, g)(y);
        if (v != 0.0) corr += v * cell_value_at(dom, du0[j * d + b], x);
      }
    out.w[k] -= corr;
  });

  // tau
  const Vec dd0 = second_derivatives_at_centers(dom, u0.u);
  out.tau.assign(nc, 0.0);
  for_each_cell(dom, [&](std::size_t c, const double* x) {
    double y[3];
    scaled_point(x, eps, d, y);
    double v = ue.p[c] - u0.p[c];
    for (int j = 0; j < d; ++j)
      for (int b = 0; b < d; ++b) {
        const double t = tag == Instantiation::Dirichlet ? dc->Lambda(j, b)[c] : cell.pi(j, b)(y);
        v -= t * du0[j * d + b][c];
        if (cell.has_q())
          for (int i = 0; i < d; ++i)
            v -= eps * cell.q(i, j, b)(y) * dd0[static_cast<std::size_t>((i * d + j) * d + b) * nc + c];
      }
    out.tau[c] = v;
  });

  out.diff_l2 = velocity_l2(dom, diff);
  out.diff_h1 = gradient_l2(dom, diff);
  out.w_l2 = velocity_l2(dom, out.w);
  out.w_h1 = std::sqrt(out.w_l2 * out.w_l2 + std::pow(gradient_l2(dom, out.w), 2));
  out.w_max = velocity_max(dom, out.w);
  {
    const Vec wc = velocity_at_centers(dom, out.w);
    double s = 0.0;
    for_each_cell(dom, [&](std::size_t c, const double* x) {
      if (dom.distance_to_boundary(x) < interior_margin) return;
      for (int a = 0; a < d; ++a) s += wc[a * nc + c] * wc[a * nc + c];
    });
    out.w_interior_l2 = std::sqrt(s * std::pow(dom.h, d));
  }
  out.tau_l2_0 = pressure_l2_0(dom, out.tau);
  double mean = 0.0;
  for (double v : out.tau) mean += v;
  mean /= static_cast<double>(nc);
  for (double v : out.tau) out.tau_max = std::max(out.tau_max, std::abs(v - mean));
  Vec dp(nc);
  for (std::size_t c = 0; c < nc; ++c) dp[c] = ue.p[c] - u0.p[c];
  out.pressure_l2_0 = pressure_l2_0(dom, dp);
  return out;
}

// ---------------------------------------------------------------------------
// Green's function expansions
//
// Errors are sampled at the native locations of each field (faces for G,
// gradient locations for grad_x G, cell centres for Pi) lying in the shell
// | |x - y| - r | <= h / 2. G_eps and the correctors share one grid, so the
// oscillating parts are never interpolated; only the smooth G_0 terms are.

namespace {

struct Shell {
  const BoxDomain* dom;
  std::array<double, 3> y;
  double r;
  bool contains(const double* x) const {
    double q = 0.0;
    for (int a = 0; a < dom->d; ++a) q += (x[a] - y[a]) * (x[a] - y[a]);
    return std::abs(std::sqrt(q) - r) <= 0.5 * dom->h && dom->distance_to_boundary(x) >= 4.0 * dom->h;
  }
};

// d^2 arrays of a field at cell centres, index pair j * d + alpha.
std::vector<Vec> centre_gradient(const BoxDomain& dom, const Vec& u) {
  const Vec g = gradient_at_centers(dom, u);
  const std::size_t nc = g.size() / static_cast<std::size_t>(dom.d * dom.d);
  std::vector<Vec> out;
  for (int p = 0; p < dom.d * dom.d; ++p) out.push_back(slice(g, static_cast<std::size_t>(p), nc));
  return out;
}

Vec native_gradient(const mac::Layout& L, const Vec& u) {
  Vec g;
  L.gradient(u, g);
  return g;
}

CoefficientField homogenized_field(const CorrectorSet& cell) {
  CoefficientField::Info info;
  info.family = "homogenized";
  return CoefficientField::constant(cell.effective(), info);
}

std::vector<double> usable_radii(const BoxDomain& dom, double eps, const std::vector<double>& radii, double sep,
                                 std::vector<std::string>* notes) {
  std::vector<double> kept;
  const double rmin = std::max(4.0 * dom.h, sep * eps);
  for (double r : radii) {
    if (r < rmin) {
      if (notes) notes->push_back("radius " + std::to_string(r) + " below max(4h, " + std::to_string(sep) + " eps)");
      continue;
    }
    kept.push_back(r);
  }
  return kept;
}

// Native gradient of Phi_p - P_p. The identity part of grad Phi is applied to
// the native gradient of G_0 and only this remainder meets interpolated values.
Vec corrector_gradient(const BoxDomain& dom, const mac::Layout& L, const DirichletCorrectorSet& dc, int p) {
  Vec v = dc.phi[p];
  const Vec P = linear_field(dom, p / dom.d, p % dom.d);
  for (std::size_t k = 0; k < v.size(); ++k) v[k] -= P[k];
  return native_gradient(L, v);
}

template <class Fn>
void for_each_gradient_point(const mac::Layout& L, Fn&& fn) {
  for (int p = 0; p < L.pairs(); ++p)
    for (std::size_t k = 0; k < L.grad_count(p); ++k) {
      double x[3] = {0, 0, 0};
      L.grad_position(p, k, x);
      fn(p, L.grad_offset(p) + k, x);
    }
}

}  // namespace

std::vector<GreenExpansionRow> green_expansion_errors(const CoefficientField& a, double eps, const BoxDomain& dom,
                                                      const double* y_in, const std::vector<double>& radii,
                                                      const CorrectorSet& cell, const DirichletCorrectorSet& dc,
                                                      const GreenExpansionOptions& opt,
                                                      std::vector<std::string>* notes) {
  const int d = dom.d;
  if (!(dc.domain == dom)) throw GridMismatchError("Dirichlet correctors live on a different grid");
  const auto y = source_cell_centre(dom, y_in);
  const CoefficientField a0 = homogenized_field(cell);
  std::vector<GreenColumn> ge(static_cast<std::size_t>(d)), g0(static_cast<std::size_t>(d));
  parallel_for(2 * d, opt.green.threads, [&](int t) {
    GreenOptions o = opt.green;
    o.threads = 1;
    if (t < d)
      ge[t] = green_column(a, eps, dom, y.data(), t, o);
    else
      g0[t - d] = green_column(a0, 1.0, dom, y.data(), t - d, o);
  });
  const mac::Layout L(dom.grid());
  const std::size_t nc = L.p_size();
  std::vector<Vec> ge_grad, g0_native, phi_grad;
  std::vector<std::vector<Vec>> g0_grad;  // per beta, centre gradient of G_0
  for (int b = 0; b < d; ++b) {
    ge_grad.push_back(native_gradient(L, ge[b].u));
    g0_native.push_back(native_gradient(L, g0[b].u));
    g0_grad.push_back(centre_gradient(dom, g0[b].u));
  }
  for (int p = 0; p < d * d; ++p) phi_grad.push_back(corrector_gradient(dom, L, dc, p));

  // box mean of Lambda_j^gamma d_j G_0^{gamma beta}, per beta
  std::vector<double> mean_lg(static_cast<std::size_t>(d), 0.0);
  for (int b = 0; b < d; ++b) {
    double s = 0.0;
    for (std::size_t c = 0; c < nc; ++c)
      for (int p = 0; p < d * d; ++p) s += dc.lambda[p][c] * g0_grad[b][p][c];
    mean_lg[b] = s / static_cast<double>(nc);
  }

  std::vector<GreenExpansionRow> rows;
  for (double r : usable_radii(dom, eps, radii, opt.separation_eps, notes)) {
    const Shell shell{&dom, y, r};
    GreenExpansionRow row;
    row.eps = eps;
    row.r = r;
    for_each_velocity_point(L, [&](int, std::size_t k, const double* x) {
      if (!shell.contains(x)) return;
      double s = 0.0;
      for (int b = 0; b < d; ++b) s += std::pow(ge[b].u[k] - g0[b].u[k], 2);
      row.eG = std::max(row.eG, std::sqrt(s));
    });
    std::vector<double> dg0(static_cast<std::size_t>(d * d * d));  // (j * d + gamma) * d + beta
    for_each_gradient_point(L, [&](int, std::size_t k, const double* x) {
      if (!shell.contains(x)) return;
      for (int b = 0; b < d; ++b)
        for (int p = 0; p < d * d; ++p) dg0[p * d + b] = cell_value_at(dom, g0_grad[b][p], x);
      double s = 0.0;
      for (int b = 0; b < d; ++b) {
        double v = ge_grad[b][k] - g0_native[b][k];
        for (int p = 0; p < d * d; ++p) v -= phi_grad[p][k] * dg0[p * d + b];
        s += v * v;
      }
      row.eDG = std::max(row.eDG, std::sqrt(s));
    });
    std::vector<double> dmin(static_cast<std::size_t>(d), 1e300), dmax(static_cast<std::size_t>(d), -1e300);
    for (std::size_t c = 0; c < nc; ++c) {
      double x[3];
      L.cell_position(c, x);
      if (!shell.contains(x)) continue;
      ++row.samples;
      for (int b = 0; b < d; ++b) {
        double v = ge[b].p[c] - g0[b].p[c];
        for (int p = 0; p < d * d; ++p) v -= dc.lambda[p][c] * g0_grad[b][p][c];
        dmin[b] = std::min(dmin[b], v);
        dmax[b] = std::max(dmax[b], v);
        row.ePi1 = std::max(row.ePi1, std::abs(v + mean_lg[b]));
      }
    }
    if (row.samples == 0) {
      if (notes) notes->push_back("radius " + std::to_string(r) + " has no interior samples");
      continue;
    }
    for (int b = 0; b < d; ++b) row.ePi = std::max(row.ePi, dmax[b] - dmin[b]);
    row.envG = eps / std::pow(r, d - 1);
    row.envDG = eps * envelope_log(eps, r, 2) / std::pow(r, d);
    row.envPi = 2.0 * row.envDG;
    row.envPi1 = eps * envelope_log(eps, r, 3) / std::pow(r, d);
    rows.push_back(row);
  }
  return rows;
}

std::vector<SecondDerivativeRow> second_derivative_expansion_errors(
    const CoefficientField& a, double eps, const BoxDomain& dom, const double* y_in, const std::vector<double>& radii,
    const CorrectorSet& cell, const DirichletCorrectorSet& dc, const DirichletCorrectorSet& dc_adj,
    const GreenExpansionOptions& opt, std::vector<std::string>* notes) {
  const int d = dom.d;
  if (!(dc.domain == dom) || !(dc_adj.domain == dom))
    throw GridMismatchError("Dirichlet correctors live on a different grid");
  const auto y = source_cell_centre(dom, y_in);
  const CoefficientField a0 = homogenized_field(cell);
  // columns at y (slot d) and y + h e_l (slot l) for both operators
  const int per = d + 1;
  std::vector<GreenColumn> cols(static_cast<std::size_t>(2 * d * per));
  parallel_for(2 * d * per, opt.green.threads, [&](int t) {
    GreenOptions o = opt.green;
    o.threads = 1;
    const int op = t / (d * per), beta = (t / per) % d, slot = t % per;
    auto s = y;
    if (slot < d) s[slot] += dom.h;
    cols[t] = op == 0 ? green_column(a, eps, dom, s.data(), beta, o) : green_column(a0, 1.0, dom, s.data(), beta, o);
  });
  auto col = [&](int op, int beta, int slot) -> const GreenColumn& { return cols[(op * d + beta) * per + slot]; };
  const mac::Layout L(dom.grid());
  const std::size_t nc = L.p_size();
  // index beta * d + l
  std::vector<GreenColumn> dye, dy0;
  for (int b = 0; b < d; ++b)
    for (int l = 0; l < d; ++l) {
      dye.push_back(dy_difference(col(0, b, d), col(0, b, l), l));
      dy0.push_back(dy_difference(col(1, b, d), col(1, b, l), l));
    }
  std::vector<Vec> dye_grad, dy0_native, phi_grad;
  std::vector<std::vector<Vec>> dy0_grad;
  for (std::size_t k = 0; k < dye.size(); ++k) {
    dye_grad.push_back(native_gradient(L, dye[k].u));
    dy0_native.push_back(native_gradient(L, dy0[k].u));
    dy0_grad.push_back(centre_gradient(dom, dy0[k].u));
  }
  for (int p = 0; p < d * d; ++p) phi_grad.push_back(corrector_gradient(dom, L, dc, p));
  // d_{y_j} Phi*_l^{beta sigma}(y) at the quotient midpoints, index ((j * d + l) * d + s) * d + b
  std::vector<double> dps(static_cast<std::size_t>(d * d * d * d), 0.0);
  for (int l = 0; l < d; ++l)
    for (int s = 0; s < d; ++s) {
      const auto g = centre_gradient(dom, dc_adj.Phi(l, s));
      for (int j = 0; j < d; ++j) {
        auto m = y;
        m[j] += 0.5 * dom.h;
        for (int b = 0; b < d; ++b) dps[((j * d + l) * d + s) * d + b] = cell_value_at(dom, g[j * d + b], m.data());
      }
    }
  // m[((k * d + gamma) * d + beta) * d + j] = d_xk d_yl G_0^{gamma sigma}(x) d_yj Phi*_l^{beta sigma}(y)
  std::vector<double> m(static_cast<std::size_t>(d * d * d * d)), pm(static_cast<std::size_t>(d * d));
  auto contract = [&](const double* x, bool with_pressure) {
    std::fill(m.begin(), m.end(), 0.0);
    std::fill(pm.begin(), pm.end(), 0.0);
    for (int s = 0; s < d; ++s)
      for (int l = 0; l < d; ++l) {
        const std::size_t src = static_cast<std::size_t>(s * d + l);
        const double p0 = with_pressure ? cell_value_at(dom, dy0[src].p, x) : 0.0;
        double gx[9] = {};
        for (int q = 0; q < d * d; ++q) gx[q] = cell_value_at(dom, dy0_grad[src][q], x);
        for (int b = 0; b < d; ++b)
          for (int j = 0; j < d; ++j) {
            const double w = dps[((j * d + l) * d + s) * d + b];
            if (w == 0.0) continue;
            pm[b * d + j] += w * p0;
            for (int q = 0; q < d * d; ++q) m[(q * d + b) * d + j] += w * gx[q];
          }
      }
  };

  std::vector<SecondDerivativeRow> rows;
  for (double r : usable_radii(dom, eps, radii, opt.separation_eps, notes)) {
    const Shell shell{&dom, y, r};
    SecondDerivativeRow row;
    row.eps = eps;
    row.r = r;
    for_each_gradient_point(L, [&](int, std::size_t k, const double* x) {
      if (!shell.contains(x)) return;
      contract(x, false);
      double s = 0.0;
      for (int b = 0; b < d; ++b)
        for (int j = 0; j < d; ++j) {
          // identity part of grad Phi on the native gradient of the G_0 quotients
          double v = dye_grad[b * d + j][k];
          for (int s2 = 0; s2 < d; ++s2)
            for (int l = 0; l < d; ++l) v -= dps[((j * d + l) * d + s2) * d + b] * dy0_native[s2 * d + l][k];
          for (int q = 0; q < d * d; ++q) v -= phi_grad[q][k] * m[(q * d + b) * d + j];
          s += v * v;
        }
      row.eDDG = std::max(row.eDDG, std::sqrt(s));
    });
    std::vector<double> dmin(static_cast<std::size_t>(d * d), 1e300), dmax(static_cast<std::size_t>(d * d), -1e300);
    for (std::size_t c = 0; c < nc; ++c) {
      double x[3];
      L.cell_position(c, x);
      if (!shell.contains(x)) continue;
      ++row.samples;
      contract(x, true);
      for (int b = 0; b < d; ++b)
        for (int j = 0; j < d; ++j) {
          double v = dye[b * d + j].p[c] - pm[b * d + j];
          for (int q = 0; q < d * d; ++q) v -= dc.lambda[q][c] * m[(q * d + b) * d + j];
          dmin[b * d + j] = std::min(dmin[b * d + j], v);
          dmax[b * d + j] = std::max(dmax[b * d + j], v);
        }
    }
    if (row.samples == 0) continue;
    for (int k = 0; k < d * d; ++k) row.eDyPi = std::max(row.eDyPi, dmax[k] - dmin[k]);
    row.envDDG = eps * envelope_log(eps, r, 2) / std::pow(r, d + 1);
    row.envDyPi = 2.0 * row.envDDG;
    rows.push_back(row);
  }
  return rows;
}
// ---------------------------------------------------------------------------
// Divergence equation and maximal function

StokesSolution solve_divergence(const ScalarPointFn& psi, const BoxDomain& dom, const SolveOptions& opt) {
  StokesProblem pb;
  pb.domain = dom;
  CoefficientField::Info info;
  info.family = "constant";
  pb.coefficient = CoefficientField::constant(Tensor4::identity(dom.d), info);
  pb.eps = 1.0;
  pb.div = psi;
  return solve_stokes(pb, opt);
}

double gradient_max(const BoxDomain& dom, const Vec& u) {
  const int d = dom.d;
  const Vec g = gradient_at_centers(dom, u);
  const std::size_t nc = g.size() / static_cast<std::size_t>(d * d);
  double m = 0.0;
  for (std::size_t c = 0; c < nc; ++c) {
    double s = 0.0;
    for (int p = 0; p < d * d; ++p) s += g[p * nc + c] * g[p * nc + c];
    m = std::max(m, std::sqrt(s));
  }
  return m;
}

std::vector<double> truncated_maximal(const BoxDomain& dom, const Vec& f, double t,
                                      const std::vector<std::array<double, 3>>& probes, const double* lo_in,
                                      const double* hi_in) {
  if (t < dom.h * (1.0 - 1e-12)) throw ConfigError("truncation radius must be at least h");
  const int d = dom.d;
  double lo[3] = {0, 0, 0}, hi[3] = {0, 0, 0};
  double diam2 = 0.0;
  for (int a = 0; a < d; ++a) {
    lo[a] = lo_in ? lo_in[a] : 0.0;
    hi[a] = hi_in ? hi_in[a] : dom.extent(a);
    diam2 += (hi[a] - lo[a]) * (hi[a] - lo[a]);
  }
  const double diam = std::sqrt(diam2);
  std::vector<double> out;
  for (const auto& x : probes) {
    double best = 0.0;
    for (double s = t;; s *= 2.0) {
      double sum = 0.0;
      std::size_t cnt = 0;
      int i_lo[3] = {0, 0, 0}, i_hi[3] = {1, 1, 1};
      for (int a = 0; a < d; ++a) {
        i_lo[a] = std::max(0, static_cast<int>(std::floor((std::max(lo[a], x[a] - s)) / dom.h)));
        i_hi[a] = std::min(dom.cells[a], static_cast<int>(std::ceil((std::min(hi[a], x[a] + s)) / dom.h)));
      }
      for (int i0 = i_lo[0]; i0 < i_hi[0]; ++i0)
        for (int i1 = i_lo[1]; i1 < i_hi[1]; ++i1)
          for (int i2 = i_lo[2]; i2 < i_hi[2]; ++i2) {
            const int ii[3] = {i0, i1, i2};
            double r2 = 0.0;
            bool inside = true;
            for (int a = 0; a < d; ++a) {
              const double c = (ii[a] + 0.5) * dom.h;
              inside = inside && c >= lo[a] && c <= hi[a];
              r2 += (c - x[a]) * (c - x[a]);
            }
            if (!inside || r2 > s * s) continue;
            sum += std::abs(f[(static_cast<std::size_t>(i0) * dom.cells[1] + i1) * dom.cells[2] + i2]);
            ++cnt;
          }
      if (cnt > 0) best = std::max(best, sum / static_cast<double>(cnt));
      if (s >= diam) break;
    }
    out.push_back(best);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Snapshots

Snapshot to_snapshot(const DirichletCorrectorSet& dc) {
  const int d = dc.dim();
  Snapshot s;
  s.dim = d;
  s.meta = {{"kind", "dirichlet-correctors"},
            {"cells", std::vector<int>(dc.domain.cells.begin(), dc.domain.cells.begin() + d)},
            {"h", dc.domain.h},
            {"eps", dc.eps},
            {"adjoint", dc.adjoint},
            {"family", dc.family},
            {"anchor", std::vector<double>(dc.anchor.begin(), dc.anchor.begin() + d)},
            {"anchor_distance", dc.anchor_distance},
            {"max_residual", dc.max_residual},
            {"iterations", dc.iterations}};
  for (int j = 0; j < d; ++j)
    for (int b = 0; b < d; ++b) {
      SnapshotArray u;
      u.name = "Phi_" + std::to_string(j) + std::to_string(b);
      u.location = "velocity";
      u.shape = {static_cast<int>(dc.Phi(j, b).size())};
      u.values = dc.Phi(j, b);
      s.arrays.push_back(std::move(u));
      SnapshotArray p;
      p.name = "Lambda_" + std::to_string(j) + std::to_string(b);
      p.location = "cell";
      p.shape.assign(dc.domain.cells.begin(), dc.domain.cells.begin() + d);
      p.values = dc.Lambda(j, b);
      s.arrays.push_back(std::move(p));
    }
  return s;
}

DirichletCorrectorSet dirichlet_correctors_from_snapshot(const Snapshot& s) {
  if (s.meta.value("kind", "") != "dirichlet-correctors") throw Error("snapshot does not hold Dirichlet correctors");
  DirichletCorrectorSet dc;
  const int d = s.dim;
  dc.domain.d = d;
  const auto cells = s.meta.at("cells").get<std::vector<int>>();
  for (int a = 0; a < d; ++a) dc.domain.cells[a] = cells.at(static_cast<std::size_t>(a));
  dc.domain.h = s.meta.at("h").get<double>();
  dc.eps = s.meta.at("eps").get<double>();
  dc.adjoint = s.meta.value("adjoint", false);
  dc.family = s.meta.value("family", "");
  const auto anchor = s.meta.at("anchor").get<std::vector<double>>();
  for (int a = 0; a < d; ++a) dc.anchor[a] = anchor.at(static_cast<std::size_t>(a));
  dc.anchor_distance = s.meta.value("anchor_distance", 0.0);
  dc.max_residual = s.meta.value("max_residual", 0.0);
  dc.iterations = s.meta.value("iterations", 0);
  for (int j = 0; j < d; ++j)
    for (int b = 0; b < d; ++b) {
      dc.phi.push_back(s.get("Phi_" + std::to_string(j) + std::to_string(b)).values);
      dc.lambda.push_back(s.get("Lambda_" + std::to_string(j) + std::to_string(b)).values);
    }
  return dc;
}

}  // namespace shom
