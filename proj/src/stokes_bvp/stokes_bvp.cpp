#include "shom/stokes_bvp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>

namespace shom {

// ---------------------------------------------------------------------------
// BoxDomain

BoxDomain BoxDomain::cube(int d, int n, double side) {
  if (d != 2 && d != 3) throw ConfigError("dimension must be 2 or 3");
  BoxDomain b;
  b.d = d;
  b.h = side / n;
  for (int a = 0; a < 3; ++a) b.cells[a] = a < d ? n : 1;
  return b;
}

double BoxDomain::volume() const {
  double v = 1.0;
  for (int a = 0; a < d; ++a) v *= extent(a);
  return v;
}

void BoxDomain::center(double* x) const {
  for (int a = 0; a < 3; ++a) x[a] = a < d ? 0.5 * extent(a) : 0.0;
}

double BoxDomain::distance_to_boundary(const double* x) const {
  double r = 1e300;
  for (int a = 0; a < d; ++a) r = std::min({r, x[a], extent(a) - x[a]});
  return r;
}

void BoxDomain::validate() const {
  if (d != 2 && d != 3) throw ConfigError("dimension must be 2 or 3");
  if (!(h > 0.0)) throw ConfigError("grid spacing must be positive");
  for (int a = 0; a < d; ++a)
    if (cells[a] < 8) throw ConfigError("box resolution must be at least 8 cells per axis");
}

namespace {

double cell_measure(const BoxDomain& dom) { return std::pow(dom.h, dom.d); }
double face_measure(const BoxDomain& dom) { return std::pow(dom.h, dom.d - 1); }

std::array<int, 3> vel_dims(const BoxDomain& dom, int alpha) {
  std::array<int, 3> dm{1, 1, 1};
  for (int a = 0; a < dom.d; ++a) dm[a] = a == alpha ? dom.cells[a] + 1 : dom.cells[a] + 2;
  return dm;
}

std::size_t vel_offset(const BoxDomain& dom, int alpha) {
  std::size_t off = 0;
  for (int b = 0; b < alpha; ++b) {
    const auto dm = vel_dims(dom, b);
    off += static_cast<std::size_t>(dm[0]) * dm[1] * dm[2];
  }
  return off;
}

// Bracketing index and fraction of coordinate t on the staggered axis of component alpha.
void locate_velocity(const BoxDomain& dom, int alpha, int a, double t, int& i, double& f) {
  const int n = dom.cells[a];
  const double h = dom.h;
  const double L = n * h;
  t = std::clamp(t, 0.0, L);
  if (a == alpha) {
    i = std::min(n - 1, static_cast<int>(std::floor(t / h)));
    f = t / h - i;
    return;
  }
  if (t < 0.5 * h) {
    i = 0;
    f = t / (0.5 * h);
  } else if (t > L - 0.5 * h) {
    i = n;
    f = (t - (L - 0.5 * h)) / (0.5 * h);
  } else {
    i = std::min(n - 1, static_cast<int>(std::floor(t / h + 0.5)));
    f = (t - (i - 0.5) * h) / h;
  }
}

void locate_cell(const BoxDomain& dom, int a, double t, int& i, double& f) {
  const int n = dom.cells[a];
  const double s = t / dom.h - 0.5;
  if (s <= 0.0) {
    i = 0;
    f = 0.0;
  } else if (s >= n - 1) {
    i = n - 2;
    f = 1.0;
  } else {
    i = static_cast<int>(std::floor(s));
    f = s - i;
  }
}

template <class Index>
double multilinear(int d, const int* i0, const double* fr, Index&& index, const Vec& v) {
  double s = 0.0;
  for (int c = 0; c < (1 << d); ++c) {
    double w = 1.0;
    int idx[3] = {0, 0, 0};
    for (int a = 0; a < d; ++a) {
      const int bit = (c >> a) & 1;
      w *= bit ? fr[a] : 1.0 - fr[a];
      idx[a] = i0[a] + bit;
    }
    if (w != 0.0) s += w * v[index(idx)];
  }
  return s;
}

// Quadrature weight of a velocity entry: trapezoid along the normal axis,
// interior-only along tangential axes.
double vel_weight(const BoxDomain& dom, int alpha, const int* idx) {
  double w = 1.0;
  for (int a = 0; a < dom.d; ++a) {
    const int n = dom.cells[a];
    if (a == alpha) {
      if (idx[a] == 0 || idx[a] == n) w *= 0.5;
    } else if (idx[a] == 0 || idx[a] == n + 1) {
      return 0.0;
    }
  }
  return w;
}

template <class Fn>
void for_each_velocity(const BoxDomain& dom, Fn&& fn) {
  for (int al = 0; al < dom.d; ++al) {
    const auto dm = vel_dims(dom, al);
    std::size_t k = vel_offset(dom, al);
    for (int i0 = 0; i0 < dm[0]; ++i0)
      for (int i1 = 0; i1 < dm[1]; ++i1)
        for (int i2 = 0; i2 < dm[2]; ++i2, ++k) {
          const int idx[3] = {i0, i1, i2};
          fn(al, idx, k);
        }
  }
}

bool on_wall(const BoxDomain& dom, int alpha, const int* idx) {
  for (int a = 0; a < dom.d; ++a) {
    const int n = dom.cells[a];
    if (a == alpha ? (idx[a] == 0 || idx[a] == n) : (idx[a] == 0 || idx[a] == n + 1)) return true;
  }
  return false;
}

void vel_point(const BoxDomain& dom, int alpha, const int* idx, double* x) {
  for (int a = 0; a < 3; ++a) {
    if (a >= dom.d) {
      x[a] = 0.0;
      continue;
    }
    const int n = dom.cells[a];
    if (a == alpha)
      x[a] = idx[a] * dom.h;
    else
      x[a] = idx[a] == 0 ? 0.0 : (idx[a] == n + 1 ? n * dom.h : (idx[a] - 0.5) * dom.h);
  }
}

void add_into(Vec& dst, const Vec& src, std::size_t size, const char* what) {
  if (src.empty()) return;
  if (src.size() != size) throw GridMismatchError(std::string(what) + " has the wrong size");
  if (dst.empty()) dst.assign(size, 0.0);
  for (std::size_t k = 0; k < size; ++k) dst[k] += src[k];
}

double grad_data_l2(const mac::Layout& L, const Vec& flux) {
  if (flux.empty()) return 0.0;
  const Vec& w = L.grad_weight();
  double s = 0.0;
  for (std::size_t k = 0; k < flux.size(); ++k) s += w[k] * flux[k] * flux[k];
  return std::sqrt(s * L.grid().cell_volume());
}

double cell_l2(const BoxDomain& dom, const Vec& g) {
  double s = 0.0;
  for (double v : g) s += v * v;
  return std::sqrt(s * cell_measure(dom));
}

double wall_l2(const BoxDomain& dom, const Vec& ub) {
  if (ub.empty()) return 0.0;
  double s = 0.0;
  for_each_velocity(dom, [&](int al, const int* idx, std::size_t k) {
    if (on_wall(dom, al, idx)) s += ub[k] * ub[k];
  });
  return std::sqrt(s * face_measure(dom));
}

double compatibility_defect(const BoxDomain& dom, const mac::SaddleData& data, double* scale) {
  double vol = 0.0, sur = 0.0, mag = 0.0;
  for (double g : data.div) {
    vol += g;
    mag += std::abs(g) * cell_measure(dom);
  }
  vol *= cell_measure(dom);
  if (!data.boundary.empty()) {
    for (int al = 0; al < dom.d; ++al) {
      const auto dm = vel_dims(dom, al);
      const std::size_t off = vel_offset(dom, al);
      const int n = dom.cells[al];
      std::size_t k = off;
      for (int i0 = 0; i0 < dm[0]; ++i0)
        for (int i1 = 0; i1 < dm[1]; ++i1)
          for (int i2 = 0; i2 < dm[2]; ++i2, ++k) {
            const int idx[3] = {i0, i1, i2};
            if (idx[al] != 0 && idx[al] != n) continue;
            bool interior = true;
            for (int a = 0; a < dom.d; ++a)
              if (a != al && (idx[a] == 0 || idx[a] == dom.cells[a] + 1)) interior = false;
            if (!interior) continue;
            const double fn = idx[al] == 0 ? -data.boundary[k] : data.boundary[k];
            sur += fn;
            mag += std::abs(fn) * face_measure(dom);
          }
    }
    sur *= face_measure(dom);
  }
  if (scale) *scale = mag;
  return vol - sur;
}

}  // namespace

// ---------------------------------------------------------------------------
// Discretisation

mac::SaddleData discretise(const StokesProblem& pb, const mac::Layout& L) {
  const BoxDomain& dom = pb.domain;
  mac::SaddleData data;
  double buf[9];
  if (pb.force) {
    data.force = mac::sample_velocity(L, [&](int a, const double* x) {
      pb.force(x, buf);
      return buf[a];
    });
  }
  if (pb.flux) {
    data.flux.assign(L.grad_size(), 0.0);
    double x[3];
    for (int p = 0; p < L.pairs(); ++p) {
      const std::size_t off = L.grad_offset(p);
      for (std::size_t e = 0; e < L.grad_count(p); ++e) {
        L.grad_position(p, e, x);
        pb.flux(x, buf);
        data.flux[off + e] = buf[p];
      }
    }
  }
  if (pb.div) {
    data.div.assign(L.p_size(), 0.0);
    double x[3];
    for (std::size_t c = 0; c < L.p_size(); ++c) {
      L.cell_position(c, x);
      data.div[c] = pb.div(x);
    }
  }
  if (pb.boundary) {
    data.boundary.assign(L.vel_size(), 0.0);
    for_each_velocity(dom, [&](int al, const int* idx, std::size_t k) {
      if (!on_wall(dom, al, idx)) return;
      double x[3];
      vel_point(dom, al, idx, x);
      pb.boundary(x, buf);
      data.boundary[k] = buf[al];
    });
  }
  add_into(data.force, pb.discrete.force, L.vel_size(), "discrete force");
  add_into(data.flux, pb.discrete.flux, L.grad_size(), "discrete flux");
  add_into(data.stress, pb.discrete.stress, L.grad_size(), "discrete stress");
  add_into(data.div, pb.discrete.div, L.p_size(), "discrete divergence");
  add_into(data.boundary, pb.discrete.boundary, L.vel_size(), "discrete boundary");
  return data;
}

double check_compatibility(const StokesProblem& pb) {
  mac::Layout L(pb.domain.grid());
  return compatibility_defect(pb.domain, discretise(pb, L), nullptr);
}

StokesSolution solve_stokes(const StokesProblem& pb, const SolveOptions& opt) {
  const BoxDomain& dom = pb.domain;
  dom.validate();
  if (pb.coefficient.dim() != dom.d) throw GridMismatchError("coefficient dimension differs from domain dimension");
  if (!(opt.tol > 0.0)) throw ConfigError("tol must be positive");
  mac::Layout L(dom.grid());
  const mac::SaddleData data = discretise(pb, L);
  double scale = 0.0;
  const double defect = compatibility_defect(dom, data, &scale);
  if (std::abs(defect) > 1e-8 * std::max(1.0, scale))
    throw CompatibilityError("data violate the compatibility condition", defect);

  StokesSolution sol;
  sol.domain = dom;
  bool zero = true;
  for (const Vec* v : {&data.force, &data.flux, &data.stress, &data.div, &data.boundary})
    for (double x : *v) zero &= (x == 0.0);
  if (zero) {
    sol.u.assign(L.vel_size(), 0.0);
    sol.p.assign(L.p_size(), 0.0);
    return sol;
  }
  mac::CoefficientSampler coef(L, pb.coefficient, pb.eps);
  mac::LaplaceSolver lap(L);
  mac::SaddleResult r = mac::solve_saddle(L, coef, lap, data, opt.tol, opt.max_iter, opt.guess);
  sol.u = std::move(r.u);
  sol.p = std::move(r.p);
  sol.momentum_residual = r.momentum_residual;
  sol.divergence_residual = r.divergence_residual;
  sol.iterations = r.stats.iterations;
  sol.history = std::move(r.stats.history);

  sol.data_norm = velocity_l2(dom, data.force) + grad_data_l2(L, data.flux) + cell_l2(dom, data.div) +
                  wall_l2(dom, data.boundary);
  sol.solution_norm = std::sqrt(std::pow(velocity_l2(dom, sol.u), 2) + std::pow(gradient_l2(dom, sol.u), 2)) +
                      pressure_l2_0(dom, sol.p);
  sol.energy_constant = sol.data_norm > 0.0 ? sol.solution_norm / sol.data_norm : 0.0;
  return sol;
}

StokesSolution solve_homogenized(const StokesProblem& pb, const Tensor4& a_hat, const SolveOptions& opt) {
  StokesProblem p0 = pb;
  CoefficientField::Info info;
  info.family = "homogenized";
  p0.coefficient = CoefficientField::constant(a_hat, info);
  p0.eps = 1.0;
  return solve_stokes(p0, opt);
}

// ---------------------------------------------------------------------------
// Norms and evaluation

double velocity_l2(const BoxDomain& dom, const Vec& u) {
  if (u.empty()) return 0.0;
  double s = 0.0;
  for_each_velocity(dom, [&](int al, const int* idx, std::size_t k) { s += vel_weight(dom, al, idx) * u[k] * u[k]; });
  return std::sqrt(s * cell_measure(dom));
}

double velocity_max(const BoxDomain&, const Vec& u) {
  double m = 0.0;
  for (double v : u) m = std::max(m, std::abs(v));
  return m;
}

double gradient_l2(const BoxDomain& dom, const Vec& u) {
  mac::Layout L(dom.grid());
  Vec g;
  L.gradient(u, g);
  return grad_data_l2(L, g);
}

double pressure_l2_0(const BoxDomain& dom, const Vec& p) {
  if (p.empty()) return 0.0;
  double m = 0.0;
  for (double v : p) m += v;
  m /= static_cast<double>(p.size());
  double s = 0.0;
  for (double v : p) s += (v - m) * (v - m);
  return std::sqrt(s * cell_measure(dom));
}

double velocity_at(const BoxDomain& dom, const Vec& u, int alpha, const double* x) {
  const auto dm = vel_dims(dom, alpha);
  const std::size_t off = vel_offset(dom, alpha);
  int i0[3] = {0, 0, 0};
  double fr[3] = {0, 0, 0};
  for (int a = 0; a < dom.d; ++a) locate_velocity(dom, alpha, a, x[a], i0[a], fr[a]);
  return multilinear(
      dom.d, i0, fr,
      [&](const int* idx) { return off + (static_cast<std::size_t>(idx[0]) * dm[1] + idx[1]) * dm[2] + idx[2]; }, u);
}

double cell_value_at(const BoxDomain& dom, const Vec& p, const double* x) {
  int i0[3] = {0, 0, 0};
  double fr[3] = {0, 0, 0};
  for (int a = 0; a < dom.d; ++a) locate_cell(dom, a, x[a], i0[a], fr[a]);
  const auto& n = dom.cells;
  return multilinear(
      dom.d, i0, fr, [&](const int* idx) { return (static_cast<std::size_t>(idx[0]) * n[1] + idx[1]) * n[2] + idx[2]; },
      p);
}

Vec gradient_at_centers(const BoxDomain& dom, const Vec& u) {
  mac::Layout L(dom.grid());
  Vec out;
  for (const Vec& v : L.gradient_at_centers(u)) out.insert(out.end(), v.begin(), v.end());
  return out;
}

Vec velocity_at_centers(const BoxDomain& dom, const Vec& u) {
  mac::Layout L(dom.grid());
  Vec out;
  for (const Vec& v : L.velocity_at_centers(u)) out.insert(out.end(), v.begin(), v.end());
  return out;
}

// ---------------------------------------------------------------------------
// Caccioppoli

CaccioppoliResult caccioppoli_check(const StokesSolution& sol, const StokesProblem& pb, const double* x0, double r) {
  const BoxDomain& dom = sol.domain;
  const int d = dom.d;
  if (!(r > 0.0)) throw ConfigError("ball radius must be positive");
  for (int a = 0; a < d; ++a)
    if (x0[a] < 0.0 || x0[a] > dom.extent(a)) throw PreconditionError("ball centre lies outside the domain");
  auto dist2 = [&](const double* x) {
    double s = 0.0;
    for (int a = 0; a < d; ++a) s += (x[a] - x0[a]) * (x[a] - x0[a]);
    return s;
  };
  const double vol = cell_measure(dom);
  mac::Layout L(dom.grid());
  CaccioppoliResult out;
  Vec g;
  L.gradient(sol.u, g);
  const Vec& gw = L.grad_weight();
  double x[3];
  double hh = 0.0;
  double buf[9];
  for (int p = 0; p < L.pairs(); ++p) {
    const std::size_t off = L.grad_offset(p);
    for (std::size_t e = 0; e < L.grad_count(p); ++e) {
      L.grad_position(p, e, x);
      const double r2 = dist2(x);
      if (r2 <= 0.25 * r * r) out.lhs += gw[off + e] * g[off + e] * g[off + e] * vol;
      if (pb.flux && r2 <= r * r) {
        pb.flux(x, buf);
        hh += gw[off + e] * buf[p] * buf[p] * vol;
      }
    }
  }
  double uu = 0.0, ff = 0.0, bb = 0.0;
  for_each_velocity(dom, [&](int al, const int* idx, std::size_t k) {
    double y[3];
    vel_point(dom, al, idx, y);
    if (dist2(y) > r * r) return;
    const double w = vel_weight(dom, al, idx) * vol;
    uu += w * sol.u[k] * sol.u[k];
    if (pb.force && w > 0.0) {
      pb.force(y, buf);
      ff += w * buf[al] * buf[al];
    }
    if (on_wall(dom, al, idx)) bb += sol.u[k] * sol.u[k] * face_measure(dom);
  });
  double gg = 0.0;
  if (pb.div)
    for (std::size_t c = 0; c < L.p_size(); ++c) {
      L.cell_position(c, x);
      if (dist2(x) > r * r) continue;
      const double v = pb.div(x);
      gg += v * v * vol;
    }
  out.rhs = uu / (r * r) + r * r * ff + hh + gg + bb / r;
  return out;
}

// ---------------------------------------------------------------------------
// Output

Snapshot to_snapshot(const StokesSolution& sol) {
  const BoxDomain& dom = sol.domain;
  Snapshot s;
  s.dim = dom.d;
  s.meta = {{"kind", "stokes"},
            {"cells", std::vector<int>(dom.cells.begin(), dom.cells.begin() + dom.d)},
            {"h", dom.h},
            {"momentum_residual", sol.momentum_residual},
            {"divergence_residual", sol.divergence_residual},
            {"iterations", sol.iterations},
            {"energy_constant", sol.energy_constant}};
  for (int al = 0; al < dom.d; ++al) {
    SnapshotArray a;
    a.name = "u" + std::to_string(al);
    a.location = "face:" + std::to_string(al);
    const auto dm = vel_dims(dom, al);
    a.shape.assign(dm.begin(), dm.begin() + dom.d);
    const std::size_t off = vel_offset(dom, al);
    const std::size_t cnt = static_cast<std::size_t>(dm[0]) * dm[1] * dm[2];
    a.values.assign(sol.u.begin() + static_cast<std::ptrdiff_t>(off),
                    sol.u.begin() + static_cast<std::ptrdiff_t>(off + cnt));
    s.arrays.push_back(std::move(a));
  }
  SnapshotArray p;
  p.name = "p";
  p.location = "cell";
  p.shape.assign(dom.cells.begin(), dom.cells.begin() + dom.d);
  p.values = sol.p;
  s.arrays.push_back(std::move(p));
  return s;
}

StokesSolution solution_from_snapshot(const Snapshot& s) {
  if (s.meta.value("kind", "") != "stokes") throw Error("snapshot does not hold a Stokes solution");
  StokesSolution sol;
  sol.domain.d = s.dim;
  const auto cells = s.meta.at("cells").get<std::vector<int>>();
  for (int a = 0; a < s.dim; ++a) sol.domain.cells[a] = cells.at(static_cast<std::size_t>(a));
  sol.domain.h = s.meta.at("h").get<double>();
  sol.momentum_residual = s.meta.value("momentum_residual", 0.0);
  sol.divergence_residual = s.meta.value("divergence_residual", 0.0);
  sol.iterations = s.meta.value("iterations", 0);
  sol.energy_constant = s.meta.value("energy_constant", 0.0);
  for (int al = 0; al < s.dim; ++al) {
    const auto& a = s.get("u" + std::to_string(al));
    sol.u.insert(sol.u.end(), a.values.begin(), a.values.end());
  }
  sol.p = s.get("p").values;
  return sol;
}

void write_slice_csv(const std::string& path, const StokesSolution& sol, int axis, const double* point, int samples) {
  const BoxDomain& dom = sol.domain;
  std::ofstream f(path);
  if (!f) throw Error("cannot open " + path);
  f << "x";
  for (int al = 0; al < dom.d; ++al) f << ",u" << al;
  f << ",p\n" << std::setprecision(12);
  double x[3] = {point[0], point[1], dom.d > 2 ? point[2] : 0.0};
  for (int k = 0; k < samples; ++k) {
    x[axis] = dom.extent(axis) * k / std::max(1, samples - 1);
    f << x[axis];
    for (int al = 0; al < dom.d; ++al) f << "," << velocity_at(dom, sol.u, al, x);
    f << "," << cell_value_at(dom, sol.p, x) << "\n";
  }
  if (!f) throw Error("write failed for " + path);
}

}  // namespace shom
