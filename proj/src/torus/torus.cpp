#include "shom/torus.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "fourier.hpp"
#include "shom/krylov.hpp"
#include "shom/mac.hpp"
#include "shom/parallel.hpp"

namespace shom {

using detail::cd;
using detail::Fourier;

std::string to_string(CellScheme s) { return s == CellScheme::Spectral ? "spectral" : "fd"; }

CellScheme cell_scheme_from_string(const std::string& s) {
  if (s == "spectral") return CellScheme::Spectral;
  if (s == "fd" || s == "finite-difference") return CellScheme::FiniteDifference;
  throw ConfigError("unknown cell scheme '" + s + "'");
}

std::size_t TorusGrid::points() const {
  std::size_t p = 1;
  for (int a = 0; a < d; ++a) p *= static_cast<std::size_t>(n);
  return p;
}

void TorusGrid::validate() const {
  if (d != 2 && d != 3) throw ConfigError("torus dimension must be 2 or 3");
  if (n < 8 || (n & (n - 1)) != 0) throw ConfigError("torus points per axis must be a power of two >= 8");
}

// ---------------------------------------------------------------------------
// PeriodicField

double PeriodicField::mean() const {
  double s = 0.0;
  for (double v : values) s += v;
  return values.empty() ? 0.0 : s / static_cast<double>(values.size());
}

double PeriodicField::max_abs() const {
  double m = 0.0;
  for (double v : values) m = std::max(m, std::abs(v));
  return m;
}

double PeriodicField::operator()(const double* y) const {
  const int d = grid.d;
  const int n = grid.n;
  if (spectral()) {
    Fourier f(d, n);
    std::vector<cd> c(f.spec_size());
    f.forward(values.data(), c.data());
    double s = 0.0;
    for (std::size_t q = 0; q < c.size(); ++q) {
      if (f.nyquist(q)) continue;
      double th = 0.0;
      for (int a = 0; a < d; ++a) th += f.wave(q)[a] * y[a];
      const double re = (c[q] * cd(std::cos(th), std::sin(th))).real();
      s += f.k(q)[d - 1] == 0 ? re : 2.0 * re;
    }
    return s;
  }
  int i0[3] = {0, 0, 0};
  double fr[3] = {0, 0, 0};
  for (int a = 0; a < d; ++a) {
    const double t = y[a] * n - offset[a];
    const double fl = std::floor(t);
    fr[a] = t - fl;
    i0[a] = static_cast<int>(((static_cast<long>(fl) % n) + n) % n);
  }
  double s = 0.0;
  const int corners = 1 << d;
  for (int c = 0; c < corners; ++c) {
    double w = 1.0;
    std::size_t idx = 0;
    for (int a = 0; a < d; ++a) {
      const int bit = (c >> a) & 1;
      w *= bit ? fr[a] : 1.0 - fr[a];
      idx = idx * n + static_cast<std::size_t>((i0[a] + bit) % n);
    }
    if (w != 0.0) s += w * values[idx];
  }
  return s;
}

// ---------------------------------------------------------------------------
// CorrectorSet

CorrectorSet::CorrectorSet(const TorusGrid& grid, CellScheme scheme) : grid_(grid), scheme_(scheme), ahat_(grid.d) {
  const int d = grid.d;
  chi_.resize(d * d * d);
  pi_.resize(d * d);
  residuals_.assign(d * d, 0.0);
  iterations_.assign(d * d, 0);
}

const PeriodicField& CorrectorSet::b(int i, int j, int alpha, int beta) const {
  if (b_.empty()) throw PreconditionError("flux tensor not computed");
  const int d = dim();
  return b_[((i * d + j) * d + alpha) * d + beta];
}

const PeriodicField& CorrectorSet::phi(int k, int i, int j, int alpha, int beta) const {
  if (phi_.empty()) throw PreconditionError("dual correctors not computed");
  const int d = dim();
  return phi_[(((k * d + i) * d + j) * d + alpha) * d + beta];
}

const PeriodicField& CorrectorSet::q(int i, int j, int beta) const {
  if (q_.empty()) throw PreconditionError("dual pressures not computed");
  const int d = dim();
  return q_[(i * d + j) * d + beta];
}

namespace {

PeriodicField node_field(const TorusGrid& g, Vec v) {
  PeriodicField f;
  f.grid = g;
  f.location = "node";
  f.values = std::move(v);
  return f;
}

PeriodicField staggered_field(const TorusGrid& g, const std::string& loc, std::array<double, 3> off, Vec v) {
  PeriodicField f;
  f.grid = g;
  f.location = loc;
  f.offset = off;
  f.values = std::move(v);
  return f;
}

std::array<double, 3> cell_offset(int d) {
  std::array<double, 3> o{0, 0, 0};
  for (int a = 0; a < d; ++a) o[a] = 0.5;
  return o;
}

std::array<double, 3> face_offset(int d, int gamma) {
  auto o = cell_offset(d);
  o[gamma] = 0.0;
  return o;
}

std::array<double, 3> grad_offset(int d, int i, int alpha) {
  auto o = cell_offset(d);
  if (i != alpha) o[i] = o[alpha] = 0.0;
  return o;
}

double l2(const Vec& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return v.empty() ? 0.0 : std::sqrt(s / static_cast<double>(v.size()));
}

// ---------------------------------------------------------------------------
// Spectral Fourier-Galerkin cell operator

class SpectralCell {
 public:
  SpectralCell(const CoefficientField& a, int d, int n)
      : d_(d), n_(n), m_(3 * n / 2), fn_(d, n), fm_(d, 3 * n / 2), embed_(fn_.embed_into(3 * n / 2)) {
    const std::size_t mp = fm_.real_size();
    scalar_ = a.is_scalar();
    const int P = d * d;
    if (scalar_)
      c_.resize(mp);
    else
      t_.resize(mp * P * P);
    double y[3] = {0, 0, 0};
    Tensor4 t(d);
    std::size_t pt = 0;
    const std::array<int, 3> md{m_, d > 1 ? m_ : 1, d > 2 ? m_ : 1};
    for (int i0 = 0; i0 < md[0]; ++i0)
      for (int i1 = 0; i1 < md[1]; ++i1)
        for (int i2 = 0; i2 < md[2]; ++i2, ++pt) {
          y[0] = static_cast<double>(i0) / m_;
          y[1] = static_cast<double>(i1) / m_;
          y[2] = d > 2 ? static_cast<double>(i2) / m_ : 0.0;
          if (scalar_) {
            c_[pt] = a.scalar(y);
          } else {
            a.eval(y, t);
            for (int r = 0; r < P; ++r)
              for (int s = 0; s < P; ++s) t_[(pt * P + r) * P + s] = t.m(r, s);
          }
        }
    nu_ = a.mean_viscosity();
  }

  const Fourier& fn() const { return fn_; }
  std::size_t size() const { return fn_.real_size(); }

  /// Truncated spectra of sigma_(i,alpha) = a (grad chi + e_j x e_beta); chi may be null,
  /// pair < 0 drops the affine part.
  std::vector<std::vector<cd>> flux(const std::vector<Vec>* chi, int pair) const {
    const int d = d_;
    const int P = d * d;
    const std::size_t mp = fm_.real_size();
    const std::size_t ns = fn_.spec_size();
    std::vector<Vec> grad;  // d^2 arrays on the padded grid, index k*d+gamma
    if (chi) {
      grad.assign(P, Vec(mp));
      std::vector<cd> c(ns), gm(fm_.spec_size());
      for (int g = 0; g < d; ++g) {
        fn_.forward((*chi)[g].data(), c.data());
        for (int k = 0; k < d; ++k) {
          std::fill(gm.begin(), gm.end(), cd(0.0, 0.0));
          for (std::size_t q = 0; q < ns; ++q)
            if (!fn_.nyquist(q)) gm[embed_[q]] = cd(0.0, fn_.wave(q)[k]) * c[q];
          fm_.inverse(gm.data(), grad[k * d + g].data());
        }
      }
    }
    std::vector<std::vector<cd>> out(P, std::vector<cd>(ns));
    Vec sig(mp);
    std::vector<cd> sm(fm_.spec_size());
    for (int r = 0; r < P; ++r) {
      for (std::size_t pt = 0; pt < mp; ++pt) {
        double s = 0.0;
        if (scalar_) {
          if (chi) s = c_[pt] * grad[r][pt];
          if (pair == r) s += c_[pt];
        } else {
          const double* row = t_.data() + (pt * P + r) * P;
          if (chi)
            for (int q = 0; q < P; ++q) s += row[q] * grad[q][pt];
          if (pair >= 0) s += row[pair];
        }
        sig[pt] = s;
      }
      fm_.forward(sig.data(), sm.data());
      for (std::size_t q = 0; q < ns; ++q) out[r][q] = fn_.nyquist(q) ? cd(0.0, 0.0) : sm[embed_[q]];
    }
    return out;
  }

  /// s^alpha = d_i sigma_(i,alpha) in Fourier space.
  std::vector<std::vector<cd>> divergence(const std::vector<std::vector<cd>>& sig) const {
    const int d = d_;
    const std::size_t ns = fn_.spec_size();
    std::vector<std::vector<cd>> s(d, std::vector<cd>(ns, cd(0.0, 0.0)));
    for (int al = 0; al < d; ++al)
      for (int i = 0; i < d; ++i)
        for (std::size_t q = 0; q < ns; ++q) s[al][q] += cd(0.0, fn_.wave(q)[i]) * sig[i * d + al][q];
    return s;
  }

  /// Leray projection with the zero mode removed.
  void project(std::vector<std::vector<cd>>& s) const {
    const std::size_t ns = fn_.spec_size();
    for (std::size_t q = 0; q < ns; ++q) {
      const double k2 = fn_.k2(q);
      if (k2 == 0.0) {
        for (int a = 0; a < d_; ++a) s[a][q] = 0.0;
        continue;
      }
      cd kd(0.0, 0.0);
      for (int a = 0; a < d_; ++a) kd += fn_.wave(q)[a] * s[a][q];
      for (int a = 0; a < d_; ++a) s[a][q] -= fn_.wave(q)[a] * kd / k2;
    }
  }

  /// T chi = -P div(a grad chi) on nodal arrays.
  void apply(const std::vector<Vec>& chi, std::vector<Vec>& out) const {
    auto s = divergence(flux(&chi, -1));
    project(s);
    out.assign(d_, Vec(size()));
    for (int a = 0; a < d_; ++a) {
      fn_.inverse(s[a].data(), out[a].data());
      for (double& v : out[a]) v = -v;
    }
  }

  std::vector<Vec> rhs(int pair) const {
    auto s = divergence(flux(nullptr, pair));
    project(s);
    std::vector<Vec> out(d_, Vec(size()));
    for (int a = 0; a < d_; ++a) fn_.inverse(s[a].data(), out[a].data());
    return out;
  }

  void precondition(const std::vector<Vec>& r, std::vector<Vec>& z) const {
    const std::size_t ns = fn_.spec_size();
    std::vector<cd> c(ns);
    z.assign(d_, Vec(size()));
    for (int a = 0; a < d_; ++a) {
      fn_.forward(r[a].data(), c.data());
      for (std::size_t q = 0; q < ns; ++q) c[q] = fn_.k2(q) > 0.0 ? c[q] / (nu_ * fn_.k2(q)) : cd(0.0, 0.0);
      fn_.inverse(c.data(), z[a].data());
    }
  }

 private:
  int d_, n_, m_;
  Fourier fn_, fm_;
  std::vector<std::size_t> embed_;
  bool scalar_ = false;
  Vec c_, t_;
  double nu_ = 1.0;
};

std::vector<Vec> split(const Vec& x, int d, std::size_t n) {
  std::vector<Vec> out(d);
  for (int a = 0; a < d; ++a) out[a].assign(x.begin() + a * n, x.begin() + (a + 1) * n);
  return out;
}

Vec join(const std::vector<Vec>& v) {
  Vec out;
  for (const auto& a : v) out.insert(out.end(), a.begin(), a.end());
  return out;
}

CorrectorSet solve_spectral(const CoefficientField& a, const TorusGrid& grid, const CellOptions& opt) {
  const int d = grid.d;
  const int P = d * d;
  SpectralCell cell(a, d, grid.n);
  const std::size_t n = cell.size();
  CorrectorSet out(grid, CellScheme::Spectral);
  Tensor4 ahat(d);
  parallel_for(P, opt.threads, [&](int pair) {
    const int j = pair / d, beta = pair % d;
    const Vec b = join(cell.rhs(pair));
    const double bl2 = l2(b);
    Vec x(b.size(), 0.0);
    krylov::Result res;
    if (bl2 > 0.0) {
      const double rtol = std::max(1e-15, 0.5 * opt.tol / bl2);
      auto op = [&](const Vec& in, Vec& o) {
        std::vector<Vec> r;
        cell.apply(split(in, d, n), r);
        o = join(r);
      };
      auto pc = [&](const Vec& in, Vec& o) {
        std::vector<Vec> r;
        cell.precondition(split(in, d, n), r);
        o = join(r);
      };
      res = krylov::pcg(op, pc, b, x, rtol, opt.max_iter);
    } else {
      res.converged = true;
    }
    auto chi = split(x, d, n);
    // exact projections onto mean-zero, divergence-free fields
    {
      const Fourier& f = cell.fn();
      std::vector<std::vector<cd>> c(d, std::vector<cd>(f.spec_size()));
      for (int g = 0; g < d; ++g) f.forward(chi[g].data(), c[g].data());
      cell.project(c);
      for (int g = 0; g < d; ++g) f.inverse(c[g].data(), chi[g].data());
    }
    auto sig = cell.flux(&chi, pair);
    auto s = cell.divergence(sig);
    const Fourier& f = cell.fn();
    std::vector<cd> pic(f.spec_size(), cd(0.0, 0.0));
    for (std::size_t q = 0; q < f.spec_size(); ++q) {
      if (f.k2(q) == 0.0) continue;
      cd kd(0.0, 0.0);
      for (int al = 0; al < d; ++al) kd += f.wave(q)[al] * s[al][q];
      pic[q] = cd(0.0, -1.0) * kd / f.k2(q);
    }
    Vec piv(n);
    f.inverse(pic.data(), piv.data());
    // residual -P s
    cell.project(s);
    double r2 = 0.0;
    Vec tmp(n);
    for (int al = 0; al < d; ++al) {
      f.inverse(s[al].data(), tmp.data());
      for (double v : tmp) r2 += v * v;
    }
    for (int g = 0; g < d; ++g) out.chi(j, beta, g) = node_field(grid, std::move(chi[g]));
    out.pi(j, beta) = node_field(grid, std::move(piv));
    out.residuals()[pair] = std::sqrt(r2 / static_cast<double>(n));
    out.iterations()[pair] = res.iterations;
    for (int r = 0; r < P; ++r) ahat.m(r, pair) = sig[r][0].real();
    if (!res.converged || out.residuals()[pair] > opt.tol)
      throw ConvergenceError("cell problem did not converge", out.residuals()[pair], res.history);
  });
  out.set_effective(ahat);
  out.family = a.info().family;
  return out;
}

// ---------------------------------------------------------------------------
// Finite-difference (periodic staggered) cell problem

struct FdCell {
  mac::Grid grid;
  mac::Layout layout;
  mac::CoefficientSampler coef;
  FdCell(const CoefficientField& a, const TorusGrid& g)
      : grid(mac::Grid::torus(g.d, g.n)), layout(grid), coef(layout, a, 1.0) {}

  Vec affine_gradient(int pair) const {
    Vec gp(layout.grad_size(), 0.0);
    const std::size_t off = layout.grad_offset(pair);
    std::fill(gp.begin() + static_cast<std::ptrdiff_t>(off),
              gp.begin() + static_cast<std::ptrdiff_t>(off + layout.grad_count(pair)), 1.0);
    return gp;
  }

  /// Weighted flux W a (grad chi + grad P) for the (j, beta) problem.
  Vec total_flux(const Vec& u, int pair) const {
    Vec g;
    layout.gradient(u, g);
    const Vec gp = affine_gradient(pair);
    for (std::size_t k = 0; k < g.size(); ++k) g[k] += gp[k];
    Vec s;
    coef.apply(g, s);
    return s;
  }

  Vec velocity(const CorrectorSet& c, int j, int beta) const {
    Vec u(layout.vel_size());
    for (int g = 0; g < grid.d; ++g) {
      const auto& v = c.chi(j, beta, g).values;
      std::copy(v.begin(), v.end(), u.begin() + static_cast<std::ptrdiff_t>(layout.vel_offset(g)));
    }
    return u;
  }
};

CorrectorSet solve_fd(const CoefficientField& a, const TorusGrid& grid, const CellOptions& opt) {
  const int d = grid.d;
  const int P = d * d;
  FdCell cell(a, grid);
  mac::LaplaceSolver lap(cell.layout);
  CorrectorSet out(grid, CellScheme::FiniteDifference);
  Tensor4 ahat(d);
  const double vol = cell.grid.cell_volume();
  parallel_for(P, opt.threads, [&](int pair) {
    const int j = pair / d, beta = pair % d;
    mac::SaddleData data;
    Vec gp = cell.affine_gradient(pair);
    cell.coef.apply(gp, data.stress);
    Vec rhs(cell.layout.vel_size(), 0.0);
    cell.layout.gradient_transpose_add(data.stress, rhs);
    double r2 = 0.0;
    for (double v : rhs) r2 += v * v;
    const double rl2 = std::sqrt(r2 * vol);
    mac::SaddleResult res;
    if (rl2 > 1e-14) {
      const double rtol = std::max(1e-15, 0.5 * opt.tol / rl2);
      res = mac::solve_saddle(cell.layout, cell.coef, lap, data, rtol, opt.max_iter);
    } else {
      res.u.assign(cell.layout.vel_size(), 0.0);
      res.p.assign(cell.layout.p_size(), 0.0);
      res.stats.converged = true;
    }
    for (int g = 0; g < d; ++g) {
      const auto off = static_cast<std::ptrdiff_t>(cell.layout.vel_offset(g));
      Vec v(res.u.begin() + off, res.u.begin() + off + static_cast<std::ptrdiff_t>(cell.layout.vel_count(g)));
      out.chi(j, beta, g) = staggered_field(grid, "face:" + std::to_string(g), face_offset(d, g), std::move(v));
    }
    out.pi(j, beta) = staggered_field(grid, "cell", cell_offset(d), res.p);
    out.residuals()[pair] = std::hypot(res.momentum_residual, res.divergence_residual);
    out.iterations()[pair] = res.stats.iterations;
    const Vec s = cell.total_flux(res.u, pair);
    for (int r = 0; r < P; ++r) {
      double sum = 0.0;
      const std::size_t off = cell.layout.grad_offset(r);
      for (std::size_t e = 0; e < cell.layout.grad_count(r); ++e) sum += s[off + e];
      ahat.m(r, pair) = sum * vol;
    }
    if (out.residuals()[pair] > opt.tol)
      throw ConvergenceError("cell problem did not reach the requested residual", out.residuals()[pair],
                             res.stats.history);
  });
  out.set_effective(ahat);
  out.family = a.info().family;
  return out;
}

void check_grid_for_scheme(const TorusGrid& grid, CellScheme scheme) {
  if (scheme == CellScheme::Spectral) {
    grid.validate();
  } else {
    if (grid.d != 2 && grid.d != 3) throw ConfigError("torus dimension must be 2 or 3");
    if (grid.n < 2) throw ConfigError("torus grid needs at least 2 points per axis");
  }
}

}  // namespace

CorrectorSet solve_cell_problem(const CoefficientField& a, const TorusGrid& grid, const CellOptions& opt) {
  if (a.dim() != grid.d) throw GridMismatchError("coefficient dimension differs from torus dimension");
  if (!(opt.tol > 0.0)) throw ConfigError("tol must be positive");
  check_grid_for_scheme(grid, opt.scheme);
  return opt.scheme == CellScheme::Spectral ? solve_spectral(a, grid, opt) : solve_fd(a, grid, opt);
}

Tensor4 effective_tensor(const CoefficientField& a, CorrectorSet& c) {
  const int d = c.dim();
  const int P = d * d;
  Tensor4 ahat(d);
  if (c.scheme() == CellScheme::Spectral) {
    SpectralCell cell(a, d, c.grid().n);
    for (int pair = 0; pair < P; ++pair) {
      std::vector<Vec> chi(d);
      for (int g = 0; g < d; ++g) chi[g] = c.chi(pair / d, pair % d, g).values;
      auto sig = cell.flux(&chi, pair);
      for (int r = 0; r < P; ++r) ahat.m(r, pair) = sig[r][0].real();
    }
  } else {
    FdCell cell(a, c.grid());
    const double vol = cell.grid.cell_volume();
    for (int pair = 0; pair < P; ++pair) {
      const Vec s = cell.total_flux(cell.velocity(c, pair / d, pair % d), pair);
      for (int r = 0; r < P; ++r) {
        double sum = 0.0;
        const std::size_t off = cell.layout.grad_offset(r);
        for (std::size_t e = 0; e < cell.layout.grad_count(r); ++e) sum += s[off + e];
        ahat.m(r, pair) = sum * vol;
      }
    }
  }
  c.set_effective(ahat);
  return ahat;
}

std::vector<PeriodicField> flux_tensor(const CoefficientField& a, CorrectorSet& c) {
  const int d = c.dim();
  const int P = d * d;
  const Tensor4& ahat = c.effective();
  std::vector<PeriodicField> b(static_cast<std::size_t>(P * P));
  auto slot = [d](int i, int j, int al, int be) { return static_cast<std::size_t>(((i * d + j) * d + al) * d + be); };
  if (c.scheme() == CellScheme::Spectral) {
    SpectralCell cell(a, d, c.grid().n);
    const Fourier& f = cell.fn();
    for (int pair = 0; pair < P; ++pair) {
      const int j = pair / d, be = pair % d;
      std::vector<Vec> chi(d);
      for (int g = 0; g < d; ++g) chi[g] = c.chi(j, be, g).values;
      auto sig = cell.flux(&chi, pair);
      for (int r = 0; r < P; ++r) {
        const int i = r / d, al = r % d;
        sig[r][0] = 0.0;  // subtract the mean, which is exactly A_hat
        Vec v(f.real_size());
        f.inverse(sig[r].data(), v.data());
        b[slot(i, j, al, be)] = node_field(c.grid(), std::move(v));
      }
    }
  } else {
    FdCell cell(a, c.grid());
    for (int pair = 0; pair < P; ++pair) {
      const int j = pair / d, be = pair % d;
      const Vec s = cell.total_flux(cell.velocity(c, j, be), pair);
      for (int r = 0; r < P; ++r) {
        const int i = r / d, al = r % d;
        const std::size_t off = cell.layout.grad_offset(r);
        Vec v(s.begin() + static_cast<std::ptrdiff_t>(off),
              s.begin() + static_cast<std::ptrdiff_t>(off + cell.layout.grad_count(r)));
        const double m = ahat.m(r, pair);
        for (double& x : v) x -= m;
        b[slot(i, j, al, be)] =
            staggered_field(c.grid(), "grad:" + std::to_string(i) + std::to_string(al), grad_offset(d, i, al), std::move(v));
      }
    }
  }
  c.set_flux(b);
  return b;
}

std::vector<PeriodicField> dual_pressures(const CorrectorSet& c) {
  const int d = c.dim();
  const int n = c.grid().n;
  Fourier f(d, n);
  std::vector<PeriodicField> q(static_cast<std::size_t>(d * d * d));
  std::vector<cd> pic(f.spec_size()), qc(f.spec_size());
  for (int j = 0; j < d; ++j)
    for (int be = 0; be < d; ++be) {
      const PeriodicField& pi = c.pi(j, be);
      f.forward(pi.values.data(), pic.data());
      for (int i = 0; i < d; ++i) {
        for (std::size_t k = 0; k < f.spec_size(); ++k)
          qc[k] = f.k2(k) > 0.0 ? cd(0.0, -f.wave(k)[i] / f.k2(k)) * pic[k] : cd(0.0, 0.0);
        PeriodicField out = pi;
        f.inverse(qc.data(), out.values.data());
        q[static_cast<std::size_t>((i * d + j) * d + be)] = std::move(out);
      }
    }
  return q;
}

void dual_correctors(CorrectorSet& c) {
  if (c.scheme() != CellScheme::Spectral)
    throw PreconditionError("dual correctors are built with the spectral scheme only");
  if (!c.has_flux()) throw PreconditionError("flux tensor not computed");
  const int d = c.dim();
  const int P = d * d;
  Fourier f(d, c.grid().n);
  const std::size_t ns = f.spec_size();
  const std::size_t nr = f.real_size();
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      for (int al = 0; al < d; ++al)
        for (int be = 0; be < d; ++be) {
          const auto& bf = c.b(i, j, al, be);
          if (std::abs(bf.mean()) > 1e-10 * std::max(1.0, bf.max_abs()))
            throw NormalizationError("flux tensor component has nonzero mean");
        }
  auto q = dual_pressures(c);
  std::vector<PeriodicField> phi(static_cast<std::size_t>(P * P * d));
  std::vector<std::vector<cd>> fhat(d, std::vector<cd>(ns));
  std::vector<cd> bc(ns), qc(ns), tmp(ns);
  for (int j = 0; j < d; ++j)
    for (int al = 0; al < d; ++al)
      for (int be = 0; be < d; ++be) {
        // f_ij = Delta^-1 (b_ij - d_alpha q_ij) for every i
        for (int i = 0; i < d; ++i) {
          f.forward(c.b(i, j, al, be).values.data(), bc.data());
          f.forward(q[static_cast<std::size_t>((i * d + j) * d + be)].values.data(), qc.data());
          for (std::size_t k = 0; k < ns; ++k) {
            const double k2 = f.k2(k);
            const cd cc = bc[k] - cd(0.0, f.wave(k)[al]) * qc[k];
            fhat[i][k] = k2 > 0.0 ? -cc / k2 : cd(0.0, 0.0);
          }
        }
        // D[k][i] = d_k f_ij
        std::vector<Vec> D(static_cast<std::size_t>(P), Vec(nr));
        for (int k = 0; k < d; ++k)
          for (int i = 0; i < d; ++i) {
            for (std::size_t m = 0; m < ns; ++m) tmp[m] = cd(0.0, f.wave(m)[k]) * fhat[i][m];
            f.inverse(tmp.data(), D[static_cast<std::size_t>(k * d + i)].data());
          }
        for (int k = 0; k < d; ++k)
          for (int i = 0; i < d; ++i) {
            Vec v(nr);
            const Vec& dki = D[static_cast<std::size_t>(k * d + i)];
            const Vec& dik = D[static_cast<std::size_t>(i * d + k)];
            for (std::size_t m = 0; m < nr; ++m) v[m] = dki[m] - dik[m];
            phi[static_cast<std::size_t>((((k * d + i) * d + j) * d + al) * d + be)] = node_field(c.grid(), std::move(v));
          }
      }
  c.set_dual(std::move(phi), std::move(q));
}

CorrectorSet homogenize(const CoefficientField& a, const TorusGrid& grid, const CellOptions& opt) {
  CorrectorSet c = solve_cell_problem(a, grid, opt);
  flux_tensor(a, c);
  if (c.scheme() == CellScheme::Spectral)
    dual_correctors(c);
  else
    c.set_q(dual_pressures(c));
  return c;
}

// ---------------------------------------------------------------------------
// Diagnostics

CellDiagnostics diagnose(const CorrectorSet& c) {
  CellDiagnostics out;
  const int d = c.dim();
  for (double r : c.residuals()) out.max_residual = std::max(out.max_residual, r);
  auto track_mean = [&out](const PeriodicField& f) {
    const double m = f.max_abs();
    if (m > 0.0) out.max_mean = std::max(out.max_mean, std::abs(f.mean()) / m);
  };
  for (int j = 0; j < d; ++j)
    for (int be = 0; be < d; ++be) {
      for (int g = 0; g < d; ++g) track_mean(c.chi(j, be, g));
      track_mean(c.pi(j, be));
    }

  if (c.scheme() == CellScheme::Spectral) {
    Fourier f(d, c.grid().n);
    const std::size_t ns = f.spec_size();
    const std::size_t nr = f.real_size();
    auto spec = [&](const PeriodicField& p) {
      std::vector<cd> s(ns);
      f.forward(p.values.data(), s.data());
      return s;
    };
    auto l2spec = [&](const std::vector<cd>& s) {
      Vec v(nr);
      f.inverse(s.data(), v.data());
      return l2(v);
    };
    for (int j = 0; j < d; ++j)
      for (int be = 0; be < d; ++be) {
        std::vector<cd> dv(ns, cd(0.0, 0.0));
        for (int g = 0; g < d; ++g) {
          auto s = spec(c.chi(j, be, g));
          for (std::size_t k = 0; k < ns; ++k) dv[k] += cd(0.0, f.wave(k)[g]) * s[k];
        }
        out.max_divergence = std::max(out.max_divergence, l2spec(dv));
      }
    if (c.has_flux()) {
      for (int j = 0; j < d; ++j)
        for (int be = 0; be < d; ++be) {
          auto pis = spec(c.pi(j, be));
          for (int al = 0; al < d; ++al) {
            std::vector<cd> r(ns, cd(0.0, 0.0));
            for (int i = 0; i < d; ++i) {
              const auto& bf = c.b(i, j, al, be);
              track_mean(bf);
              auto s = spec(bf);
              for (std::size_t k = 0; k < ns; ++k) r[k] += cd(0.0, f.wave(k)[i]) * s[k];
            }
            for (std::size_t k = 0; k < ns; ++k) r[k] -= cd(0.0, f.wave(k)[al]) * pis[k];
            out.flux_identity = std::max(out.flux_identity, l2spec(r));
          }
        }
    }
    if (c.has_dual()) {
      for (int j = 0; j < d; ++j)
        for (int be = 0; be < d; ++be) {
          std::vector<cd> qi(ns, cd(0.0, 0.0));
          for (int i = 0; i < d; ++i) {
            const auto& qf = c.q(i, j, be);
            track_mean(qf);
            auto s = spec(qf);
            for (std::size_t k = 0; k < ns; ++k) qi[k] += cd(0.0, f.wave(k)[i]) * s[k];
          }
          auto pis = spec(c.pi(j, be));
          for (std::size_t k = 0; k < ns; ++k) qi[k] -= pis[k];
          out.q_identity = std::max(out.q_identity, l2spec(qi));
          for (int i = 0; i < d; ++i)
            for (int al = 0; al < d; ++al) {
              auto r = spec(c.b(i, j, al, be));
              for (int k = 0; k < d; ++k) {
                const auto& pf = c.phi(k, i, j, al, be);
                track_mean(pf);
                auto s = spec(pf);
                for (std::size_t m = 0; m < ns; ++m) r[m] -= cd(0.0, f.wave(m)[k]) * s[m];
                const auto& pt = c.phi(i, k, j, al, be);
                for (std::size_t m = 0; m < pf.values.size(); ++m)
                  out.antisymmetry = std::max(out.antisymmetry, std::abs(pf.values[m] + pt.values[m]));
              }
              auto qs = spec(c.q(i, j, be));
              for (std::size_t m = 0; m < ns; ++m) r[m] -= cd(0.0, f.wave(m)[al]) * qs[m];
              out.dual_identity = std::max(out.dual_identity, l2spec(r));
            }
        }
    }
  } else {
    FdCell cell(CoefficientField::constant(Tensor4::identity(d), {}), c.grid());
    const auto& L = cell.layout;
    for (int j = 0; j < d; ++j)
      for (int be = 0; be < d; ++be) {
        Vec u = cell.velocity(c, j, be);
        Vec dv;
        L.divergence(u, dv);
        out.max_divergence = std::max(out.max_divergence, l2(dv));
        if (c.has_flux()) {
          // G^T b must equal D^T pi (both at the velocity faces)
          Vec s(L.grad_size());
          for (int i = 0; i < d; ++i)
            for (int al = 0; al < d; ++al) {
              const auto& bf = c.b(i, j, al, be);
              track_mean(bf);
              std::copy(bf.values.begin(), bf.values.end(),
                        s.begin() + static_cast<std::ptrdiff_t>(L.grad_offset(i * d + al)));
            }
          Vec r(L.vel_size(), 0.0), pneg = c.pi(j, be).values;
          L.gradient_transpose_add(s, r);
          for (double& v : pneg) v = -v;
          L.divergence_transpose_add(pneg, r);
          out.flux_identity = std::max(out.flux_identity, l2(r));
        }
      }
    if (c.has_q()) {
      Fourier f(d, c.grid().n);
      const std::size_t ns = f.spec_size();
      for (int j = 0; j < d; ++j)
        for (int be = 0; be < d; ++be) {
          std::vector<cd> qi(ns, cd(0.0, 0.0)), s(ns);
          for (int i = 0; i < d; ++i) {
            track_mean(c.q(i, j, be));
            f.forward(c.q(i, j, be).values.data(), s.data());
            for (std::size_t k = 0; k < ns; ++k) qi[k] += cd(0.0, f.wave(k)[i]) * s[k];
          }
          f.forward(c.pi(j, be).values.data(), s.data());
          for (std::size_t k = 0; k < ns; ++k) qi[k] -= s[k];
          Vec v(f.real_size());
          f.inverse(qi.data(), v.data());
          out.q_identity = std::max(out.q_identity, l2(v));
        }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Snapshots

namespace {

void add_field(Snapshot& s, const std::string& name, const PeriodicField& f) {
  SnapshotArray a;
  a.name = name;
  a.location = f.location;
  a.shape.assign(f.grid.d, f.grid.n);
  a.values = f.values;
  s.arrays.push_back(std::move(a));
}

PeriodicField read_field(const Snapshot& s, const std::string& name, const TorusGrid& g) {
  const auto& a = s.get(name);
  PeriodicField f;
  f.grid = g;
  f.location = a.location;
  f.values = a.values;
  const int d = g.d;
  if (a.location == "cell") {
    f.offset = cell_offset(d);
  } else if (a.location.rfind("face:", 0) == 0) {
    f.offset = face_offset(d, std::stoi(a.location.substr(5)));
  } else if (a.location.rfind("grad:", 0) == 0) {
    f.offset = grad_offset(d, a.location[5] - '0', a.location[6] - '0');
  }
  return f;
}

std::string tag(std::initializer_list<int> idx) {
  std::string s;
  for (int i : idx) s += std::to_string(i);
  return s;
}

}  // namespace

Snapshot to_snapshot(const CorrectorSet& c) {
  Snapshot s;
  const int d = c.dim();
  s.dim = d;
  Vec ah;
  for (int r = 0; r < d * d; ++r)
    for (int q = 0; q < d * d; ++q) ah.push_back(c.effective().m(r, q));
  s.meta = {{"kind", "correctors"},
            {"n", c.grid().n},
            {"scheme", to_string(c.scheme())},
            {"family", c.family},
            {"effective", ah},
            {"residuals", c.residuals()},
            {"iterations", c.iterations()},
            {"has_flux", c.has_flux()},
            {"has_dual", c.has_dual()},
            {"has_q", c.has_q()}};
  for (int j = 0; j < d; ++j)
    for (int be = 0; be < d; ++be) {
      for (int g = 0; g < d; ++g) add_field(s, "chi_" + tag({j, be, g}), c.chi(j, be, g));
      add_field(s, "pi_" + tag({j, be}), c.pi(j, be));
    }
  if (c.has_flux())
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        for (int al = 0; al < d; ++al)
          for (int be = 0; be < d; ++be) add_field(s, "b_" + tag({i, j, al, be}), c.b(i, j, al, be));
  if (c.has_q())
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        for (int be = 0; be < d; ++be) add_field(s, "q_" + tag({i, j, be}), c.q(i, j, be));
  if (c.has_dual())
    for (int k = 0; k < d; ++k)
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
          for (int al = 0; al < d; ++al)
            for (int be = 0; be < d; ++be) add_field(s, "phi_" + tag({k, i, j, al, be}), c.phi(k, i, j, al, be));
  return s;
}

CorrectorSet corrector_set_from_snapshot(const Snapshot& s) {
  if (s.meta.value("kind", "") != "correctors") throw Error("snapshot does not hold correctors");
  TorusGrid g{s.dim, s.meta.at("n").get<int>()};
  CorrectorSet c(g, cell_scheme_from_string(s.meta.at("scheme").get<std::string>()));
  const int d = g.d;
  c.family = s.meta.value("family", "");
  Tensor4 ah(d);
  const auto ev = s.meta.at("effective").get<Vec>();
  for (int r = 0; r < d * d; ++r)
    for (int q = 0; q < d * d; ++q) ah.m(r, q) = ev[static_cast<std::size_t>(r * d * d + q)];
  c.set_effective(ah);
  c.residuals() = s.meta.at("residuals").get<std::vector<double>>();
  c.iterations() = s.meta.at("iterations").get<std::vector<int>>();
  for (int j = 0; j < d; ++j)
    for (int be = 0; be < d; ++be) {
      for (int gg = 0; gg < d; ++gg) c.chi(j, be, gg) = read_field(s, "chi_" + tag({j, be, gg}), g);
      c.pi(j, be) = read_field(s, "pi_" + tag({j, be}), g);
    }
  if (s.meta.value("has_flux", false)) {
    std::vector<PeriodicField> b;
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        for (int al = 0; al < d; ++al)
          for (int be = 0; be < d; ++be) b.push_back(read_field(s, "b_" + tag({i, j, al, be}), g));
    c.set_flux(std::move(b));
  }
  std::vector<PeriodicField> q, phi;
  if (s.meta.value("has_q", false))
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        for (int be = 0; be < d; ++be) q.push_back(read_field(s, "q_" + tag({i, j, be}), g));
  if (s.meta.value("has_dual", false)) {
    for (int k = 0; k < d; ++k)
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
          for (int al = 0; al < d; ++al)
            for (int be = 0; be < d; ++be) phi.push_back(read_field(s, "phi_" + tag({k, i, j, al, be}), g));
    c.set_dual(std::move(phi), std::move(q));
  } else if (!q.empty()) {
    c.set_q(std::move(q));
  }
  return c;
}

}  // namespace shom
