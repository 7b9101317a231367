#include "shom/green.hpp"
#include "shom/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <sstream>

namespace shom {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Cache

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string fmt(double v) {
  std::ostringstream o;
  o << std::setprecision(10) << v;
  return o.str();
}

}  // namespace

std::mutex& ColumnCache::mutex() {
  static std::mutex m;
  return m;
}

std::string column_key(const CoefficientField& a, double eps, const BoxDomain& dom, const double* y, int beta,
                       bool adjoint, double tol) {
  std::string coef = a.info().family + "|" + a.info().params.dump();
  if (a.is_constant()) {
    const Tensor4& t = a.constant_value();
    for (int r = 0; r < t.pairs(); ++r)
      for (int c = 0; c < t.pairs(); ++c) coef += "," + fmt(t.m(r, c));
  }
  std::ostringstream k;
  std::string fam = a.info().family.empty() ? "field" : a.info().family;
  std::replace(fam.begin(), fam.end(), '/', '_');
  k << fam << "-" << std::hex << fnv1a(coef) << std::dec << "_d" << dom.d << "_n";
  for (int i = 0; i < dom.d; ++i) k << (i ? "x" : "") << dom.cells[i];
  k << "_h" << fmt(dom.h) << "_eps" << fmt(eps) << "_y";
  for (int i = 0; i < dom.d; ++i) k << (i ? "," : "") << fmt(y[i]);
  k << "_b" << beta << (adjoint ? "_adj" : "") << "_tol" << fmt(tol);
  return k.str();
}

std::string ColumnCache::path_for(const std::string& key) const { return (fs::path(dir_) / (key + ".shom")).string(); }

std::optional<GreenColumn> ColumnCache::load(const std::string& key) const {
  std::lock_guard<std::mutex> lock(mutex());
  const std::string path = path_for(key);
  if (!fs::exists(path)) return std::nullopt;
  return green_column_from_snapshot(read_snapshot(path));
}

void ColumnCache::store(const std::string& key, const GreenColumn& c) const {
  std::lock_guard<std::mutex> lock(mutex());
  fs::create_directories(dir_);
  const std::string path = path_for(key);
  const std::string tmp = path + ".tmp";
  write_snapshot(tmp, to_snapshot(c));
  fs::rename(tmp, path);
}

// ---------------------------------------------------------------------------
// Columns

std::array<double, 3> source_cell_centre(const BoxDomain& dom, const double* y) {
  std::array<double, 3> c{0, 0, 0};
  for (int a = 0; a < dom.d; ++a) {
    if (y[a] < 0.0 || y[a] > dom.extent(a)) throw PreconditionError("source lies outside the domain");
    const int i = std::clamp(static_cast<int>(std::floor(y[a] / dom.h)), 0, dom.cells[a] - 1);
    c[a] = (i + 0.5) * dom.h;
  }
  if (dom.distance_to_boundary(c.data()) < 4.0 * dom.h - 1e-12)
    throw PreconditionError("source is closer than 4h to the boundary");
  return c;
}

Vec point_force(const BoxDomain& dom, const double* y, int beta) {
  mac::Layout L(dom.grid());
  Vec f(L.vel_size(), 0.0);
  int idx[3] = {0, 0, 0};
  for (int a = 0; a < dom.d; ++a) idx[a] = std::clamp(static_cast<int>(std::floor(y[a] / dom.h)), 0, dom.cells[a] - 1);
  // velocity index of the two faces of the cell: tangential axes are shifted by the wall entry
  int lo[3] = {0, 0, 0}, hi[3] = {0, 0, 0};
  for (int a = 0; a < dom.d; ++a) {
    lo[a] = a == beta ? idx[a] : idx[a] + 1;
    hi[a] = a == beta ? idx[a] + 1 : idx[a] + 1;
  }
  const double mass = 1.0 / std::pow(dom.h, dom.d);
  f[L.vel_index(beta, lo[0], lo[1], lo[2])] += 0.5 * mass;
  f[L.vel_index(beta, hi[0], hi[1], hi[2])] += 0.5 * mass;
  return f;
}

GreenColumn green_column(const CoefficientField& a, double eps, const BoxDomain& dom, const double* y_in, int beta,
                         const GreenOptions& opt) {
  dom.validate();
  if (beta < 0 || beta >= dom.d) throw ConfigError("column index out of range");
  const auto y = source_cell_centre(dom, y_in);
  std::optional<ColumnCache> cache;
  std::string key;
  if (!opt.cache_dir.empty()) {
    cache.emplace(opt.cache_dir);
    key = column_key(a, eps, dom, y.data(), beta, opt.adjoint, opt.tol);
    if (auto c = cache->load(key)) return *c;
  }
  StokesProblem pb;
  pb.domain = dom;
  pb.coefficient = opt.adjoint ? a.transposed() : a;
  pb.eps = eps;
  pb.discrete.force = point_force(dom, y.data(), beta);
  SolveOptions so;
  so.tol = opt.tol;
  so.max_iter = opt.max_iter;
  StokesSolution sol = solve_stokes(pb, so);
  GreenColumn col;
  col.domain = dom;
  col.y = y;
  col.beta = beta;
  col.adjoint = opt.adjoint;
  col.eps = eps;
  col.family = a.info().family;
  col.u = std::move(sol.u);
  col.p = std::move(sol.p);
  col.momentum_residual = sol.momentum_residual;
  col.iterations = sol.iterations;
  if (cache) cache->store(key, col);
  return col;
}

GreenColumn dy_difference(const GreenColumn& at_y, const GreenColumn& shifted, int l) {
  if (!(at_y.domain == shifted.domain) || at_y.beta != shifted.beta)
    throw GridMismatchError("columns differ in grid or direction");
  GreenColumn out = at_y;
  const double h = at_y.domain.h;
  out.kind = "dy" + std::to_string(l);
  // the quotient is centred between the two sources
  out.y[l] += 0.5 * h;
  for (std::size_t k = 0; k < out.u.size(); ++k) out.u[k] = (shifted.u[k] - at_y.u[k]) / h;
  for (std::size_t k = 0; k < out.p.size(); ++k) out.p[k] = (shifted.p[k] - at_y.p[k]) / h;
  out.momentum_residual = std::max(at_y.momentum_residual, shifted.momentum_residual) / h;
  out.iterations = at_y.iterations + shifted.iterations;
  return out;
}

GreenColumn dy_green_column(const CoefficientField& a, double eps, const BoxDomain& dom, const double* y, int beta,
                            int l, const GreenOptions& opt) {
  if (l < 0 || l >= dom.d) throw ConfigError("shift direction out of range");
  const auto c = source_cell_centre(dom, y);
  auto s = c;
  s[l] += dom.h;
  source_cell_centre(dom, s.data());
  const GreenColumn g0 = green_column(a, eps, dom, c.data(), beta, opt);
  const GreenColumn g1 = green_column(a, eps, dom, s.data(), beta, opt);
  return dy_difference(g0, g1, l);
}

// ---------------------------------------------------------------------------
// Measurements

std::vector<double> geometric_radii(double r_lo, double r_hi, int count) {
  if (count < 2 || !(r_hi > r_lo) || !(r_lo > 0.0)) throw ConfigError("invalid radius window");
  std::vector<double> r(static_cast<std::size_t>(count));
  const double q = std::pow(r_hi / r_lo, 1.0 / (count - 1));
  for (int k = 0; k < count; ++k) r[static_cast<std::size_t>(k)] = r_lo * std::pow(q, k);
  return r;
}

// Unit directions for sampling a sphere of radius r at spacing about h/2
// (Fibonacci lattice in 3D).
std::vector<std::array<double, 3>> sphere_directions(int d, double ratio) {
  std::vector<std::array<double, 3>> dirs;
  if (d == 2) {
    const int m = std::max(16, static_cast<int>(std::ceil(4.0 * kPi * ratio)));
    for (int k = 0; k < m; ++k) {
      const double t = 2.0 * kPi * k / m;
      dirs.push_back({std::cos(t), std::sin(t), 0.0});
    }
    return dirs;
  }
  const int m = std::clamp(static_cast<int>(std::ceil(16.0 * kPi * ratio * ratio)), 64, 40000);
  const double golden = kPi * (3.0 - std::sqrt(5.0));
  for (int k = 0; k < m; ++k) {
    const double z = 1.0 - (2.0 * k + 1.0) / m;
    const double rho = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double t = golden * k;
    dirs.push_back({rho * std::cos(t), rho * std::sin(t), z});
  }
  return dirs;
}

namespace {

struct CentreFields {
  std::vector<Vec> vel;   // per alpha
  std::vector<Vec> grad;  // per pair
};

CentreFields centre_fields(const GreenColumn& col) {
  const int d = col.dim();
  const std::size_t nc = col.p.size();
  const Vec v = velocity_at_centers(col.domain, col.u);
  const Vec g = gradient_at_centers(col.domain, col.u);
  CentreFields cf;
  for (int a = 0; a < d; ++a) cf.vel.emplace_back(v.begin() + a * nc, v.begin() + (a + 1) * nc);
  for (int p = 0; p < d * d; ++p) cf.grad.emplace_back(g.begin() + p * nc, g.begin() + (p + 1) * nc);
  return cf;
}

// Squared norms summed over a column set at y_c + r * dir, and the largest
// pressure oscillation of a single column.
struct SphereStats {
  double absG = 0.0, absDG = 0.0, osc = 0.0;
};

SphereStats sphere_stats(const std::vector<const GreenColumn*>& cols, const std::vector<CentreFields>& cf,
                         const std::vector<std::array<double, 3>>& dirs, const std::vector<std::uint8_t>& keep,
                         double r) {
  SphereStats st;
  std::vector<double> g2(dirs.size(), 0.0), dg2(dirs.size(), 0.0);
  for (std::size_t c = 0; c < cols.size(); ++c) {
    const GreenColumn& col = *cols[c];
    double pmin = 1e300, pmax = -1e300;
    for (std::size_t k = 0; k < dirs.size(); ++k) {
      if (!keep[k]) continue;
      double x[3];
      for (int a = 0; a < 3; ++a) x[a] = col.y[a] + r * dirs[k][a];
      for (const Vec& f : cf[c].vel) g2[k] += std::pow(cell_value_at(col.domain, f, x), 2);
      for (const Vec& f : cf[c].grad) dg2[k] += std::pow(cell_value_at(col.domain, f, x), 2);
      const double p = cell_value_at(col.domain, col.p, x);
      pmin = std::min(pmin, p);
      pmax = std::max(pmax, p);
    }
    if (pmax >= pmin) st.osc = std::max(st.osc, pmax - pmin);
  }
  for (std::size_t k = 0; k < dirs.size(); ++k) {
    st.absG = std::max(st.absG, std::sqrt(g2[k]));
    st.absDG = std::max(st.absDG, std::sqrt(dg2[k]));
  }
  return st;
}

}  // namespace

std::vector<DecayRow> decay_profile(const std::vector<const GreenColumn*>& cols, const std::vector<double>& radii,
                                    double margin, const std::vector<const GreenColumn*>& dys,
                                    std::vector<std::string>* notes) {
  if (cols.empty()) throw ConfigError("decay profile needs at least one column");
  const BoxDomain& dom = cols.front()->domain;
  for (const auto* c : cols)
    if (!(c->domain == dom)) throw GridMismatchError("decay profile columns differ in grid");
  for (const auto* c : dys)
    if (!(c->domain == dom)) throw GridMismatchError("decay profile columns differ in grid");
  const double m = std::max(margin, 4.0 * dom.h);
  std::vector<double> kept;
  for (double r : radii) {
    if (r < 4.0 * dom.h) {
      if (notes) notes->push_back("radius " + fmt(r) + " below 4h excluded");
      continue;
    }
    kept.push_back(r);
  }
  std::vector<CentreFields> cf, cfd;
  for (const auto* c : cols) cf.push_back(centre_fields(*c));
  for (const auto* c : dys) cfd.push_back(centre_fields(*c));
  std::vector<DecayRow> out;
  for (double r : kept) {
    const auto dirs = sphere_directions(dom.d, r / dom.h);
    // a direction is used only if every column's sample point is far enough from the walls
    std::vector<std::uint8_t> keep(dirs.size(), 1);
    int samples = 0;
    for (std::size_t k = 0; k < dirs.size(); ++k) {
      auto ok = [&](const GreenColumn* c) {
        double x[3];
        for (int a = 0; a < 3; ++a) x[a] = c->y[a] + r * dirs[k][a];
        return dom.distance_to_boundary(x) >= m;
      };
      for (const auto* c : cols) keep[k] = keep[k] && ok(c);
      for (const auto* c : dys) keep[k] = keep[k] && ok(c);
      samples += keep[k];
    }
    if (samples == 0) {
      if (notes) notes->push_back("radius " + fmt(r) + " has no interior samples");
      continue;
    }
    DecayRow row;
    row.r = r;
    row.samples = samples;
    const SphereStats s = sphere_stats(cols, cf, dirs, keep, r);
    row.absG = s.absG;
    row.absDxG = s.absDG;
    row.oscPi = s.osc;
    if (!dys.empty()) {
      const SphereStats t = sphere_stats(dys, cfd, dirs, keep, r);
      row.absDyG = t.absG;
      row.absDxDyG = t.absDG;
      row.oscDyPi = t.osc;
    }
    out.push_back(row);
  }
  return out;
}

std::vector<DecayRow> decay_profile(const GreenColumn& col, const std::vector<double>& radii, double margin,
                                    const GreenColumn* dy, std::vector<std::string>* notes) {
  std::vector<const GreenColumn*> dys;
  if (dy) dys.push_back(dy);
  return decay_profile({&col}, radii, margin, dys, notes);
}

double shell_average(const GreenColumn& col, double r0, double r1) {
  const BoxDomain& dom = col.domain;
  const auto& n = dom.cells;
  double s = 0.0;
  std::size_t cnt = 0, c = 0;
  for (int i0 = 0; i0 < n[0]; ++i0)
    for (int i1 = 0; i1 < n[1]; ++i1)
      for (int i2 = 0; i2 < n[2]; ++i2, ++c) {
        const double x[3] = {(i0 + 0.5) * dom.h, (i1 + 0.5) * dom.h, dom.d > 2 ? (i2 + 0.5) * dom.h : 0.0};
        double r2 = 0.0;
        for (int a = 0; a < dom.d; ++a) r2 += (x[a] - col.y[a]) * (x[a] - col.y[a]);
        const double r = std::sqrt(r2);
        if (r < r0 || r > r1) continue;
        s += col.p[c];
        ++cnt;
      }
  if (cnt == 0) throw PreconditionError("pressure shell contains no cells");
  return s / static_cast<double>(cnt);
}

namespace {

void offset_point(const GreenColumn& c, const double* rv, double* x) {
  for (int a = 0; a < 3; ++a) x[a] = a < c.domain.d ? c.y[a] + rv[a] : 0.0;
}

}  // namespace

double FundamentalColumn::velocity(int alpha, const double* rv) const {
  double x0[3], x1[3];
  offset_point(base, rv, x0);
  offset_point(large, rv, x1);
  return 2.0 * large.velocity(alpha, x1) - base.velocity(alpha, x0);
}

double FundamentalColumn::velocity_base(int alpha, const double* rv) const {
  double x[3];
  offset_point(base, rv, x);
  return base.velocity(alpha, x);
}

double FundamentalColumn::pressure(const double* rv) const {
  double x[3];
  offset_point(large, rv, x);
  return large.pressure(x) - qbar;
}

GreenColumn extrapolate_columns(const GreenColumn& base, const GreenColumn& large, int order) {
  const int d = base.dim();
  if (order < 1) throw ConfigError("extrapolation order must be positive");
  const double w = std::ldexp(1.0, order);
  if (large.dim() != d || std::abs(large.domain.h - base.domain.h) > 1e-12 * base.domain.h)
    throw GridMismatchError("extrapolation needs equal spacing");
  std::array<int, 3> off{0, 0, 0};
  for (int k = 0; k < d; ++k) {
    const int diff = large.domain.cells[k] - base.domain.cells[k];
    if (diff < 0 || diff % 2 != 0) throw GridMismatchError("large box must extend the base box evenly");
    off[k] = diff / 2;
    const double shift = (large.y[k] - base.y[k]) / base.domain.h - off[k];
    if (std::abs(shift) > 1e-9) throw GridMismatchError("sources are not at the same relative position");
  }
  GreenColumn out = base;
  out.kind = base.kind + "-extrapolated";
  const mac::Layout lb(base.domain.grid()), ll(large.domain.grid());
  for (int a = 0; a < d; ++a) {
    const auto& dm = lb.vel_dims(a);
    for (int i0 = 0; i0 < dm[0]; ++i0)
      for (int i1 = 0; i1 < dm[1]; ++i1)
        for (int i2 = 0; i2 < dm[2]; ++i2) {
          const std::size_t ib = lb.vel_index(a, i0, i1, i2);
          const std::size_t il = ll.vel_index(a, i0 + off[0], i1 + off[1], i2 + off[2]);
          out.u[ib] = (w * large.u[il] - base.u[ib]) / (w - 1.0);
        }
  }
  const auto& nb = base.domain.cells;
  for (int i0 = 0; i0 < (d > 0 ? nb[0] : 1); ++i0)
    for (int i1 = 0; i1 < (d > 1 ? nb[1] : 1); ++i1)
      for (int i2 = 0; i2 < (d > 2 ? nb[2] : 1); ++i2) {
        const std::size_t cb = lb.cell_index(i0, i1, i2);
        const std::size_t cl = ll.cell_index(i0 + off[0], i1 + off[1], i2 + off[2]);
        out.p[cb] = (w * large.p[cl] - base.p[cb]) / (w - 1.0);
      }
  double mean = 0.0;
  for (double v : out.p) mean += v;
  mean /= static_cast<double>(out.p.size());
  for (double& v : out.p) v -= mean;
  out.momentum_residual = std::max(base.momentum_residual, large.momentum_residual);
  out.iterations = base.iterations + large.iterations;
  return out;
}

FundamentalColumn fundamental_column(const CoefficientField& a, double eps, int d, double side, int n, int beta,
                                     const GreenOptions& opt) {
  FundamentalColumn out;
  auto column = [&](double s, int cells) {
    const BoxDomain dom = BoxDomain::cube(d, cells, s);
    double y[3];
    dom.center(y);
    // the centre of an even grid is a vertex; take the cell just above it
    for (int k = 0; k < d; ++k) y[k] += 0.25 * dom.h;
    return green_column(a, eps, dom, y, beta, opt);
  };
  out.base = column(side, n);
  out.large = column(2.0 * side, 2 * n);
  out.side = side;
  out.qbar_base = shell_average(out.base, side / 4.0, side / 3.0);
  out.qbar = shell_average(out.large, side / 2.0, 2.0 * side / 3.0);
  out.measure_radius = side / 4.0;
  out.contamination = std::pow(out.measure_radius / (2.0 * side), d - 1);
  return out;
}

SymmetryCheck symmetry_check(const CoefficientField& a, double eps, const BoxDomain& dom, const double* x,
                             const double* y, const GreenOptions& opt) {
  const int d = dom.d;
  SymmetryCheck out;
  out.primal.assign(static_cast<std::size_t>(d * d), 0.0);
  out.adjoint.assign(static_cast<std::size_t>(d * d), 0.0);
  GreenOptions adj = opt;
  adj.adjoint = true;
  std::vector<GreenColumn> cols(static_cast<std::size_t>(2 * d));
  parallel_for(2 * d, opt.threads, [&](int t) {
    const int b = t % d;
    cols[t] = t < d ? green_column(a, eps, dom, y, b, opt) : green_column(a, eps, dom, x, b, adj);
  });
  double num = 0.0, den = 0.0;
  for (int al = 0; al < d; ++al)
    for (int b = 0; b < d; ++b) {
      out.primal[al * d + b] = cols[b].velocity(al, x);
      out.adjoint[al * d + b] = cols[d + b].velocity(al, y);
    }
  for (int al = 0; al < d; ++al)
    for (int b = 0; b < d; ++b) {
      const double g = out.primal[al * d + b];
      num += std::pow(out.adjoint[b * d + al] - g, 2);
      den += g * g;
    }
  out.rel_error = den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
  return out;
}

RepresentationCheck representation_check(const CoefficientField& a, double eps, const BoxDomain& dom,
                                         const PointFn& force, const double* support_lo, const double* support_hi,
                                         const double* x, int stride, const GreenOptions& opt) {
  const int d = dom.d;
  if (stride < 2 || stride % 2 != 0) throw ConfigError("lattice stride must be even and at least 2");
  RepresentationCheck out;
  StokesProblem pb;
  pb.domain = dom;
  pb.coefficient = a;
  pb.eps = eps;
  pb.force = force;
  SolveOptions so;
  so.tol = opt.tol;
  so.max_iter = opt.max_iter;
  const StokesSolution sol = solve_stokes(pb, so);
  for (int al = 0; al < d; ++al) out.direct.push_back(velocity_at(dom, sol.u, al, x));
  {
    // F at cell centres spread by the discrete delta of every cell
    StokesProblem pd = pb;
    pd.force = nullptr;
    const mac::Layout lay(dom.grid());
    Vec spread(lay.vel_size(), 0.0);
    const auto& n = dom.cells;
    for (int i0 = 0; i0 < n[0]; ++i0)
      for (int i1 = 0; i1 < n[1]; ++i1)
        for (int i2 = 0; i2 < n[2]; ++i2) {
          const int ii[3] = {i0, i1, i2};
          double yc[3] = {0, 0, 0}, f[3] = {0, 0, 0};
          for (int k = 0; k < d; ++k) yc[k] = (ii[k] + 0.5) * dom.h;
          force(yc, f);
          for (int b = 0; b < d; ++b) {
            if (f[b] == 0.0) continue;
            // the two faces normal to b, value 1/2 each (delta mass 1/h^d times cell volume h^d)
            int lo[3] = {i0, i1, i2}, hi[3] = {i0, i1, i2};
            for (int k = 0; k < d; ++k) {
              if (k == b) {
                hi[k] = ii[k] + 1;
              } else {
                lo[k] += 1;
                hi[k] += 1;
              }
            }
            spread[lay.vel_index(b, lo[0], lo[1], lo[2])] += 0.5 * f[b];
            spread[lay.vel_index(b, hi[0], hi[1], hi[2])] += 0.5 * f[b];
          }
        }
    pd.discrete.force = std::move(spread);
    const StokesSolution sd = solve_stokes(pd, so);
    for (int al = 0; al < d; ++al) out.delta.push_back(velocity_at(dom, sd.u, al, x));
  }

  // fine lattice: every (stride/2)-th cell whose centre lies in the support box;
  // the coarse lattice is every other fine point per axis
  const int sf = stride / 2;
  std::array<int, 3> lo{0, 0, 0}, cnt{1, 1, 1};
  for (int k = 0; k < d; ++k) {
    lo[k] = std::max(0, static_cast<int>(std::floor(support_lo[k] / dom.h)));
    const int hi = std::min(dom.cells[k] - 1, static_cast<int>(std::ceil(support_hi[k] / dom.h)));
    cnt[k] = std::max(1, (hi - lo[k]) / sf + 1);
  }
  struct Source {
    std::array<double, 3> y;
    bool coarse;
  };
  std::vector<Source> src;
  for (int i0 = 0; i0 < cnt[0]; ++i0)
    for (int i1 = 0; i1 < cnt[1]; ++i1)
      for (int i2 = 0; i2 < cnt[2]; ++i2) {
        const int ii[3] = {i0, i1, i2};
        Source s{{0, 0, 0}, true};
        for (int k = 0; k < d; ++k) {
          s.y[k] = (lo[k] + ii[k] * sf + 0.5) * dom.h;
          s.coarse = s.coarse && ii[k] % 2 == 0;
        }
        double f[3] = {0, 0, 0};
        force(s.y.data(), f);
        bool any = false;
        for (int k = 0; k < d; ++k) any = any || f[k] != 0.0;
        if (any) src.push_back(s);
      }
  const double wf = std::pow(sf * dom.h, d), wc = std::pow(stride * dom.h, d);
  out.coarse.assign(static_cast<std::size_t>(d), 0.0);
  out.fine.assign(static_cast<std::size_t>(d), 0.0);
  std::vector<std::vector<double>> contrib(src.size(), std::vector<double>(static_cast<std::size_t>(d), 0.0));
  parallel_for(static_cast<int>(src.size()), opt.threads, [&](int t) {
    double f[3] = {0, 0, 0};
    force(src[t].y.data(), f);
    GreenOptions o = opt;
    o.threads = 1;
    for (int b = 0; b < d; ++b) {
      if (f[b] == 0.0) continue;
      const GreenColumn c = green_column(a, eps, dom, src[t].y.data(), b, o);
      for (int al = 0; al < d; ++al) contrib[t][al] += c.velocity(al, x) * f[b];
    }
  });
  for (std::size_t t = 0; t < src.size(); ++t)
    for (int al = 0; al < d; ++al) {
      out.fine[al] += wf * contrib[t][al];
      if (src[t].coarse) out.coarse[al] += wc * contrib[t][al];
    }
  out.columns = static_cast<int>(src.size()) * d;
  double e = 0.0, lat = 0.0, del = 0.0;
  for (int al = 0; al < d; ++al) {
    e += std::pow(out.fine[al] - out.direct[al], 2);
    lat += std::pow(out.coarse[al] - out.fine[al], 2);
    del += std::pow(out.delta[al] - out.direct[al], 2);
  }
  out.error = std::sqrt(e);
  out.lattice_bound = std::sqrt(lat);
  out.delta_bound = std::sqrt(del);
  out.bound = out.lattice_bound + out.delta_bound;
  return out;
}

DecayStudy whole_space_decay(const CoefficientField& a, double eps, int d, int n, double side,
                             const std::vector<double>& radii, const GreenOptions& opt, bool extrapolate) {
  const int boxes = extrapolate ? 2 : 1;
  std::vector<BoxDomain> dom;
  std::vector<std::array<double, 3>> src;
  for (int b = 0; b < boxes; ++b) {
    dom.push_back(BoxDomain::cube(d, n << b, side * (1 << b)));
    std::array<double, 3> y{0, 0, 0};
    dom[b].center(y.data());
    for (int k = 0; k < d; ++k) y[k] += 0.25 * dom[b].h;
    src.push_back(y);
  }
  // per box: d columns at y, then d * d shifted columns (beta, l)
  const int per_box = d + d * d;
  std::vector<GreenColumn> cols(static_cast<std::size_t>(boxes * per_box));
  parallel_for(boxes * per_box, opt.threads, [&](int t) {
    const int b = t / per_box, k = t % per_box;
    auto y = src[b];
    int beta = k;
    if (k >= d) {
      beta = (k - d) / d;
      y[(k - d) % d] += dom[b].h;
    }
    cols[t] = green_column(a, eps, dom[b], y.data(), beta, opt);
  });
  DecayStudy out;
  out.domain = dom[0];
  out.columns = boxes * per_box;
  for (const auto& c : cols) out.max_residual = std::max(out.max_residual, c.momentum_residual);
  auto column = [&](int b, int beta) -> const GreenColumn& { return cols[b * per_box + beta]; };
  auto shifted = [&](int b, int beta, int l) -> const GreenColumn& { return cols[b * per_box + d + beta * d + l]; };
  // column sets at one extrapolation order (order 0: the L box alone)
  auto sets = [&](int order, std::vector<GreenColumn>& g, std::vector<GreenColumn>& dy) {
    for (int beta = 0; beta < d; ++beta) {
      g.push_back(order == 0 ? column(0, beta) : extrapolate_columns(column(0, beta), column(1, beta), order));
      for (int l = 0; l < d; ++l) {
        GreenColumn q0 = dy_difference(column(0, beta), shifted(0, beta, l), l);
        if (order == 0)
          dy.push_back(std::move(q0));
        else
          dy.push_back(extrapolate_columns(q0, dy_difference(column(1, beta), shifted(1, beta, l), l), order));
      }
    }
  };
  auto ptrs = [](const std::vector<GreenColumn>& v) {
    std::vector<const GreenColumn*> p;
    for (const auto& c : v) p.push_back(&c);
    return p;
  };
  auto profile = [&](int order, std::vector<std::string>* notes) {
    std::vector<GreenColumn> g, dy;
    sets(order, g, dy);
    return decay_profile(ptrs(g), radii, 0.0, ptrs(dy), notes);
  };
  if (!extrapolate) {
    out.rows = profile(0, &out.notes);
    return out;
  }
  // order m removes the L^(-m) regular part: m = d - 2 + number of derivatives
  const auto r0 = profile(d - 2, &out.notes);
  const auto r1 = profile(d - 1, nullptr);
  const auto r2 = profile(d, nullptr);
  for (std::size_t k = 0; k < r0.size(); ++k) {
    DecayRow row = r0[k];
    row.absDxG = r1[k].absDxG;
    row.oscPi = r1[k].oscPi;
    row.absDyG = r1[k].absDyG;
    row.absDxDyG = r2[k].absDxDyG;
    row.oscDyPi = r2[k].oscDyPi;
    out.rows.push_back(row);
  }
  return out;
}

double stokeslet_velocity(int d, int alpha, int beta, const double* r) {
  double r2 = 0.0;
  for (int a = 0; a < d; ++a) r2 += r[a] * r[a];
  const double rr = std::sqrt(r2);
  if (d == 3) return (kron(alpha, beta) / rr + r[alpha] * r[beta] / (rr * r2)) / (8.0 * kPi);
  return (-kron(alpha, beta) * std::log(rr) + r[alpha] * r[beta] / r2) / (4.0 * kPi);
}

double stokeslet_pressure(int d, int beta, const double* r) {
  double r2 = 0.0;
  for (int a = 0; a < d; ++a) r2 += r[a] * r[a];
  if (d == 3) return r[beta] / (4.0 * kPi * r2 * std::sqrt(r2));
  return r[beta] / (2.0 * kPi * r2);
}

// ---------------------------------------------------------------------------
// Snapshots

Snapshot to_snapshot(const GreenColumn& c) {
  Snapshot s;
  s.dim = c.domain.d;
  s.meta = {{"kind", "green"},
            {"cells", std::vector<int>(c.domain.cells.begin(), c.domain.cells.begin() + c.domain.d)},
            {"h", c.domain.h},
            {"y", std::vector<double>(c.y.begin(), c.y.begin() + c.domain.d)},
            {"beta", c.beta},
            {"adjoint", c.adjoint},
            {"eps", c.eps},
            {"family", c.family},
            {"column_kind", c.kind},
            {"momentum_residual", c.momentum_residual},
            {"iterations", c.iterations}};
  SnapshotArray u;
  u.name = "u";
  u.location = "velocity";
  u.shape = {static_cast<int>(c.u.size())};
  u.values = c.u;
  SnapshotArray p;
  p.name = "p";
  p.location = "cell";
  p.shape.assign(c.domain.cells.begin(), c.domain.cells.begin() + c.domain.d);
  p.values = c.p;
  s.arrays = {std::move(u), std::move(p)};
  return s;
}

GreenColumn green_column_from_snapshot(const Snapshot& s) {
  if (s.meta.value("kind", "") != "green") throw Error("snapshot does not hold a Green column");
  GreenColumn c;
  c.domain.d = s.dim;
  const auto cells = s.meta.at("cells").get<std::vector<int>>();
  for (int a = 0; a < s.dim; ++a) c.domain.cells[a] = cells.at(static_cast<std::size_t>(a));
  c.domain.h = s.meta.at("h").get<double>();
  const auto y = s.meta.at("y").get<std::vector<double>>();
  for (int a = 0; a < s.dim; ++a) c.y[a] = y.at(static_cast<std::size_t>(a));
  c.beta = s.meta.at("beta").get<int>();
  c.adjoint = s.meta.value("adjoint", false);
  c.eps = s.meta.value("eps", 1.0);
  c.family = s.meta.value("family", "");
  c.kind = s.meta.value("column_kind", "column");
  c.momentum_residual = s.meta.value("momentum_residual", 0.0);
  c.iterations = s.meta.value("iterations", 0);
  c.u = s.get("u").values;
  c.p = s.get("p").values;
  return c;
}

}  // namespace shom
