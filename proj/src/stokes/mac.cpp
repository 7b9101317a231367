#include "shom/mac.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>

namespace shom::mac {

namespace {

int edge_id(int d, int a, int b) {
  if (a > b) std::swap(a, b);
  if (d == 2) return 0;
  return a == 0 ? b - 1 : 2;  // (0,1) (0,2) (1,2)
}

/// Calls f(entry, lo, hi, inv_dist) for every location of a gradient pair.
template <class F>
void for_each_entry(const std::array<AxisTable, 3>& t, int deriv, std::size_t u1, std::size_t u2, F&& f) {
  std::size_t e = 0;
  for (int i0 = 0; i0 < t[0].count; ++i0) {
    for (int i1 = 0; i1 < t[1].count; ++i1) {
      const std::size_t lo01 = (static_cast<std::size_t>(t[0].lo[i0]) * u1 + t[1].lo[i1]) * u2;
      const std::size_t hi01 = (static_cast<std::size_t>(t[0].hi[i0]) * u1 + t[1].hi[i1]) * u2;
      const double inv01 = deriv == 0 ? t[0].inv_dist[i0] : t[1].inv_dist[i1];
      for (int i2 = 0; i2 < t[2].count; ++i2) {
        const double inv = deriv == 2 ? t[2].inv_dist[i2] : inv01;
        f(e++, lo01 + t[2].lo[i2], hi01 + t[2].hi[i2], inv);
      }
    }
  }
}

void unravel(std::size_t local, const std::array<int, 3>& dims, int* idx) {
  idx[2] = static_cast<int>(local % dims[2]);
  local /= dims[2];
  idx[1] = static_cast<int>(local % dims[1]);
  idx[0] = static_cast<int>(local / dims[1]);
}

}  // namespace

std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

// ---------------------------------------------------------------------------
// Grid

Grid Grid::box(int d, int cells, double h) { return box(d, {cells, cells, d == 3 ? cells : 1}, h); }

Grid Grid::box(int d, std::array<int, 3> cells, double h) {
  if (d != 2 && d != 3) throw ConfigError("dimension must be 2 or 3");
  Grid g;
  g.d = d;
  g.h = h;
  g.periodic = false;
  for (int a = 0; a < 3; ++a) g.n[a] = a < d ? cells[a] : 1;
  for (int a = 0; a < d; ++a)
    if (g.n[a] < 2) throw ConfigError("box grid needs at least 2 cells per axis");
  return g;
}

Grid Grid::torus(int d, int cells) {
  if (d != 2 && d != 3) throw ConfigError("dimension must be 2 or 3");
  if (cells < 2) throw ConfigError("torus grid needs at least 2 cells per axis");
  Grid g;
  g.d = d;
  g.h = 1.0 / cells;
  g.periodic = true;
  for (int a = 0; a < 3; ++a) g.n[a] = a < d ? cells : 1;
  return g;
}

// ---------------------------------------------------------------------------
// Layout

Layout::Layout(const Grid& g) : grid_(g) {
  const int d = g.d;
  const double h = g.h;
  std::size_t off = 0;
  for (int al = 0; al < 3; ++al) {
    vel_offset_[al] = off;
    if (al >= d) continue;
    for (int ax = 0; ax < 3; ++ax) {
      auto& coord = vel_coord_[al][ax];
      auto& wall = vel_wall_[al][ax];
      const int n = g.n[ax];
      if (ax >= d) {
        coord = {0.0};
        wall = {0};
      } else if (g.periodic) {
        coord.resize(n);
        for (int i = 0; i < n; ++i) coord[i] = ax == al ? i * h : (i + 0.5) * h;
        wall.assign(n, 0);
      } else if (ax == al) {
        coord.resize(n + 1);
        for (int i = 0; i <= n; ++i) coord[i] = i * h;
        wall.assign(n + 1, 0);
        wall[0] = wall[n] = 1;
      } else {
        coord.resize(n + 2);
        coord[0] = 0.0;
        for (int k = 1; k <= n; ++k) coord[k] = (k - 0.5) * h;
        coord[n + 1] = n * h;
        wall.assign(n + 2, 0);
        wall[0] = wall[n + 1] = 1;
      }
      vel_dims_[al][ax] = static_cast<int>(coord.size());
    }
    off += static_cast<std::size_t>(vel_dims_[al][0]) * vel_dims_[al][1] * vel_dims_[al][2];
  }
  vel_offset_[3] = off;
  for (int al = d; al < 3; ++al) vel_offset_[al] = off;

  vel_mask_.assign(off, 1);
  if (!g.periodic) {
    for (int al = 0; al < d; ++al) {
      const auto& dm = vel_dims_[al];
      std::size_t k = vel_offset_[al];
      for (int i0 = 0; i0 < dm[0]; ++i0)
        for (int i1 = 0; i1 < dm[1]; ++i1)
          for (int i2 = 0; i2 < dm[2]; ++i2, ++k)
            if (vel_wall_[al][0][i0] || vel_wall_[al][1][i1] || vel_wall_[al][2][i2]) vel_mask_[k] = 0;
    }
  }

  // gradient locations
  std::size_t goff = 0;
  for (int p = 0; p < pairs(); ++p) {
    grad_offset_[p] = goff;
    const int j = pair_j(d, p);
    const int al = pair_alpha(d, p);
    for (int ax = 0; ax < 3; ++ax) {
      AxisTable& t = grad_axes_[p][ax];
      const int n = g.n[ax];
      auto push = [&t](int lo, int hi, double inv, double w, double x) {
        t.lo.push_back(lo);
        t.hi.push_back(hi);
        t.inv_dist.push_back(inv);
        t.weight.push_back(w);
        t.coord.push_back(x);
      };
      if (ax >= d) {
        push(0, 0, 0.0, 1.0, 0.0);
      } else if (ax == j && j == al) {
        for (int c = 0; c < n; ++c) push(c, g.periodic ? (c + 1) % n : c + 1, 1.0 / h, 1.0, (c + 0.5) * h);
      } else if (ax == j) {
        if (g.periodic) {
          for (int m = 0; m < n; ++m) push((m - 1 + n) % n, m, 1.0 / h, 1.0, m * h);
        } else {
          for (int m = 0; m <= n; ++m) {
            const bool edge = (m == 0 || m == n);
            push(m, m + 1, edge ? 2.0 / h : 1.0 / h, edge ? 0.5 : 1.0, m * h);
          }
        }
      } else if (ax == al) {
        if (g.periodic) {
          for (int i = 0; i < n; ++i) push(i, i, 0.0, 1.0, i * h);
        } else {
          for (int i = 0; i <= n; ++i) push(i, i, 0.0, (i == 0 || i == n) ? 0.5 : 1.0, i * h);
        }
      } else {
        const int shift = g.periodic ? 0 : 1;
        for (int c = 0; c < n; ++c) push(c + shift, c + shift, 0.0, 1.0, (c + 0.5) * h);
      }
      t.count = static_cast<int>(t.lo.size());
    }
    goff += static_cast<std::size_t>(grad_axes_[p][0].count) * grad_axes_[p][1].count * grad_axes_[p][2].count;
  }
  grad_offset_[pairs()] = goff;
  for (int p = pairs() + 1; p < 10; ++p) grad_offset_[p] = goff;

  grad_weight_.resize(goff);
  for (int p = 0; p < pairs(); ++p) {
    const auto& t = grad_axes_[p];
    std::size_t e = grad_offset_[p];
    for (int i0 = 0; i0 < t[0].count; ++i0)
      for (int i1 = 0; i1 < t[1].count; ++i1)
        for (int i2 = 0; i2 < t[2].count; ++i2) grad_weight_[e++] = t[0].weight[i0] * t[1].weight[i1] * t[2].weight[i2];
  }
}

void Layout::vel_position(int alpha, std::size_t local, double* x) const {
  int idx[3];
  unravel(local, vel_dims_[alpha], idx);
  for (int a = 0; a < 3; ++a) x[a] = a < grid_.d ? vel_coord_[alpha][a][idx[a]] : 0.0;
}

void Layout::cell_position(std::size_t c, double* x) const {
  int idx[3];
  unravel(c, grid_.n, idx);
  for (int a = 0; a < 3; ++a) x[a] = a < grid_.d ? (idx[a] + 0.5) * grid_.h : 0.0;
}

void Layout::grad_position(int p, std::size_t local, double* x) const {
  int idx[3];
  unravel(local, grad_dims(p), idx);
  for (int a = 0; a < 3; ++a) x[a] = grad_axes_[p][a].coord[idx[a]];
}

int Layout::derivative_axis(int p) const { return pair_j(grid_.d, p); }

int Layout::pair_class(int p) const {
  const int j = pair_j(grid_.d, p);
  const int al = pair_alpha(grid_.d, p);
  return j == al ? 0 : 1 + edge_id(grid_.d, j, al);
}

const std::vector<std::array<std::uint32_t, 4>>& Layout::center_stencil(int p) const {
  std::call_once(stencil_once_[p], [this, p] {
    auto& st = center_stencil_[p];
    if (pair_class(p) == 0) return;
    const int d = grid_.d;
    const int j = pair_j(d, p);
    const int al = pair_alpha(d, p);
    const auto gd = grad_dims(p);
    st.resize(grid_.cells());
    std::size_t c = 0;
    for (int c0 = 0; c0 < grid_.n[0]; ++c0)
      for (int c1 = 0; c1 < grid_.n[1]; ++c1)
        for (int c2 = 0; c2 < grid_.n[2]; ++c2, ++c) {
          const int cc[3] = {c0, c1, c2};
          int lo[3], hi[3];
          for (int a = 0; a < 3; ++a) {
            lo[a] = hi[a] = cc[a];
            if (a == j || a == al) hi[a] = grid_.periodic ? (cc[a] + 1) % grid_.n[a] : cc[a] + 1;
          }
          auto at = [&](bool bj, bool ba) {
            int k[3] = {lo[0], lo[1], lo[2]};
            if (bj) k[j] = hi[j];
            if (ba) k[al] = hi[al];
            return static_cast<std::uint32_t>((static_cast<std::size_t>(k[0]) * gd[1] + k[1]) * gd[2] + k[2]);
          };
          st[c] = {at(false, false), at(true, false), at(false, true), at(true, true)};
        }
  });
  return center_stencil_[p];
}

void Layout::gradient(const Vec& u, Vec& g) const {
  g.resize(grad_size());
  const int d = grid_.d;
  for (int p = 0; p < pairs(); ++p) {
    const int al = pair_alpha(d, p);
    const double* ua = u.data() + vel_offset_[al];
    double* gp = g.data() + grad_offset_[p];
    for_each_entry(grad_axes_[p], pair_j(d, p), vel_dims_[al][1], vel_dims_[al][2],
                   [&](std::size_t e, std::size_t lo, std::size_t hi, double inv) { gp[e] = (ua[hi] - ua[lo]) * inv; });
  }
}

void Layout::gradient_transpose_add(const Vec& s, Vec& u) const {
  const int d = grid_.d;
  for (int p = 0; p < pairs(); ++p) {
    const int al = pair_alpha(d, p);
    double* ua = u.data() + vel_offset_[al];
    const double* sp = s.data() + grad_offset_[p];
    for_each_entry(grad_axes_[p], pair_j(d, p), vel_dims_[al][1], vel_dims_[al][2],
                   [&](std::size_t e, std::size_t lo, std::size_t hi, double inv) {
                     const double v = sp[e] * inv;
                     ua[hi] += v;
                     ua[lo] -= v;
                   });
  }
}

void Layout::divergence(const Vec& u, Vec& div) const {
  div.assign(grid_.cells(), 0.0);
  const int d = grid_.d;
  for (int al = 0; al < d; ++al) {
    const int p = al * d + al;
    const double* ua = u.data() + vel_offset_[al];
    for_each_entry(grad_axes_[p], al, vel_dims_[al][1], vel_dims_[al][2],
                   [&](std::size_t e, std::size_t lo, std::size_t hi, double inv) { div[e] += (ua[hi] - ua[lo]) * inv; });
  }
}

void Layout::divergence_transpose_add(const Vec& pr, Vec& u) const {
  const int d = grid_.d;
  for (int al = 0; al < d; ++al) {
    const int p = al * d + al;
    double* ua = u.data() + vel_offset_[al];
    for_each_entry(grad_axes_[p], al, vel_dims_[al][1], vel_dims_[al][2],
                   [&](std::size_t e, std::size_t lo, std::size_t hi, double inv) {
                     const double v = pr[e] * inv;
                     ua[hi] += v;
                     ua[lo] -= v;
                   });
  }
}

void Layout::mask_walls(Vec& u) const {
  if (grid_.periodic) return;
  for (std::size_t k = 0; k < u.size(); ++k)
    if (!vel_mask_[k]) u[k] = 0.0;
}

std::vector<Vec> Layout::velocity_at_centers(const Vec& u) const {
  const int d = grid_.d;
  std::vector<Vec> out(d, Vec(grid_.cells(), 0.0));
  for (int al = 0; al < d; ++al) {
    const int p = al * d + al;
    const double* ua = u.data() + vel_offset_[al];
    for_each_entry(grad_axes_[p], al, vel_dims_[al][1], vel_dims_[al][2],
                   [&](std::size_t e, std::size_t lo, std::size_t hi, double) { out[al][e] = 0.5 * (ua[lo] + ua[hi]); });
  }
  return out;
}

std::vector<Vec> Layout::gradient_at_centers(const Vec& u) const {
  Vec g;
  gradient(u, g);
  std::vector<Vec> out(pairs(), Vec(grid_.cells(), 0.0));
  for (int p = 0; p < pairs(); ++p) {
    const double* gp = g.data() + grad_offset_[p];
    if (pair_class(p) == 0) {
      std::copy(gp, gp + grid_.cells(), out[p].begin());
    } else {
      const auto& st = center_stencil(p);
      for (std::size_t c = 0; c < st.size(); ++c)
        out[p][c] = 0.25 * (gp[st[c][0]] + gp[st[c][1]] + gp[st[c][2]] + gp[st[c][3]]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// CoefficientSampler

CoefficientSampler::CoefficientSampler(const Layout& layout, const CoefficientField& field, double eps)
    : layout_(&layout), symmetric_(field.is_symmetric()) {
  if (field.dim() != layout.dim()) throw GridMismatchError("coefficient dimension differs from grid dimension");
  if (!(eps > 0.0)) throw ConfigError("eps must be positive");
  const int d = layout.dim();
  const int np = layout.pairs();
  const double inv_eps = 1.0 / eps;
  double x[3], y[3] = {0, 0, 0};

  const std::size_t ncell = layout.p_size();
  cell_visc_.resize(ncell);
  double vsum = 0.0;
  for (std::size_t c = 0; c < ncell; ++c) {
    layout.cell_position(c, x);
    for (int a = 0; a < 3; ++a) y[a] = x[a] * inv_eps;
    cell_visc_[c] = field.viscosity(y);
    vsum += cell_visc_[c];
  }
  mean_visc_ = vsum / static_cast<double>(ncell);

  class_pairs_.assign(1 + d * (d - 1) / 2, {});
  for (int p = 0; p < np; ++p) class_pairs_[layout.pair_class(p)].push_back(p);

  const Vec& w = layout.grad_weight();
  if (field.is_scalar()) {
    mode_ = Mode::Scalar;
    wa_.resize(layout.grad_size());
    for (int p = 0; p < np; ++p) {
      const std::size_t off = layout.grad_offset(p);
      for (std::size_t e = 0; e < layout.grad_count(p); ++e) {
        layout.grad_position(p, e, x);
        for (int a = 0; a < 3; ++a) y[a] = x[a] * inv_eps;
        wa_[off + e] = w[off + e] * field.scalar(y);
      }
    }
    return;
  }

  auto is_cross = [&](int p, int q) { return layout.pair_class(p) != layout.pair_class(q); };

  if (field.is_constant()) {
    mode_ = Mode::ConstantTensor;
    const_ = field.constant_value();
    const double thr = 1e-9 * const_.max_abs();
    for (int p = 0; p < np; ++p)
      for (int q = 0; q < np; ++q)
        if (is_cross(p, q) && std::abs(const_.m(p, q)) > thr) cross_ = true;
    if (!cross_) {
      for (int p = 0; p < np; ++p)
        for (int q = 0; q < np; ++q)
          if (is_cross(p, q)) const_.m(p, q) = 0.0;
    }
    return;
  }

  mode_ = Mode::General;
  block_.assign(np, {});
  Tensor4 t(d);
  double amax = 0.0, cmax = 0.0;
  for (const auto& cls : class_pairs_) {
    const int p0 = cls.front();
    const std::size_t cnt = layout.grad_count(p0);
    const std::size_t bs = cls.size();
    for (int p : cls) block_[p].resize(cnt * bs);
    const bool centers = layout.pair_class(p0) == 0;
    if (centers) center_full_.resize(cnt * np * np);
    for (std::size_t e = 0; e < cnt; ++e) {
      layout.grad_position(p0, e, x);
      for (int a = 0; a < 3; ++a) y[a] = x[a] * inv_eps;
      field.eval(y, t);
      amax = std::max(amax, t.max_abs());
      for (std::size_t r = 0; r < bs; ++r)
        for (std::size_t s = 0; s < bs; ++s) block_[cls[r]][e * bs + s] = t.m(cls[r], cls[s]);
      if (centers) {
        double* dst = center_full_.data() + e * np * np;
        for (int p = 0; p < np; ++p)
          for (int q = 0; q < np; ++q) {
            dst[p * np + q] = t.m(p, q);
            if (is_cross(p, q)) cmax = std::max(cmax, std::abs(t.m(p, q)));
          }
      }
    }
  }
  cross_ = cmax > 1e-12 * amax;
  if (!cross_) Vec().swap(center_full_);
}

void CoefficientSampler::apply(const Vec& g, Vec& sigma) const {
  const Layout& L = *layout_;
  const Vec& w = L.grad_weight();
  sigma.resize(L.grad_size());
  if (mode_ == Mode::Scalar) {
    const std::size_t n = sigma.size();
    for (std::size_t k = 0; k < n; ++k) sigma[k] = wa_[k] * g[k];
    return;
  }
  const int np = L.pairs();
  for (const auto& cls : class_pairs_) {
    const std::size_t bs = cls.size();
    for (std::size_t r = 0; r < bs; ++r) {
      const int p = cls[r];
      const std::size_t op = L.grad_offset(p);
      const std::size_t cnt = L.grad_count(p);
      double* sp = sigma.data() + op;
      const double* wp = w.data() + op;
      if (mode_ == Mode::ConstantTensor) {
        double coef[3];
        for (std::size_t s = 0; s < bs; ++s) coef[s] = const_.m(p, cls[s]);
        for (std::size_t e = 0; e < cnt; ++e) {
          double acc = 0.0;
          for (std::size_t s = 0; s < bs; ++s) acc += coef[s] * g[L.grad_offset(cls[s]) + e];
          sp[e] = wp[e] * acc;
        }
      } else {
        const double* blk = block_[p].data();
        for (std::size_t e = 0; e < cnt; ++e) {
          double acc = 0.0;
          for (std::size_t s = 0; s < bs; ++s) acc += blk[e * bs + s] * g[L.grad_offset(cls[s]) + e];
          sp[e] = wp[e] * acc;
        }
      }
    }
  }
  if (!cross_) return;

  // couplings between different location classes, evaluated at cell centres
  const std::size_t ncell = L.p_size();
  std::vector<Vec> gc(np, Vec(ncell));
  for (int q = 0; q < np; ++q) {
    const double* gq = g.data() + L.grad_offset(q);
    if (L.pair_class(q) == 0) {
      std::copy(gq, gq + ncell, gc[q].begin());
    } else {
      const auto& st = L.center_stencil(q);
      for (std::size_t c = 0; c < ncell; ++c) gc[q][c] = 0.25 * (gq[st[c][0]] + gq[st[c][1]] + gq[st[c][2]] + gq[st[c][3]]);
    }
  }
  Vec tmp(ncell);
  for (int p = 0; p < np; ++p) {
    const int cp = L.pair_class(p);
    std::fill(tmp.begin(), tmp.end(), 0.0);
    bool any = false;
    for (int q = 0; q < np; ++q) {
      if (L.pair_class(q) == cp) continue;
      if (mode_ == Mode::ConstantTensor) {
        const double a = const_.m(p, q);
        if (a == 0.0) continue;
        any = true;
        for (std::size_t c = 0; c < ncell; ++c) tmp[c] += a * gc[q][c];
      } else {
        any = true;
        for (std::size_t c = 0; c < ncell; ++c) tmp[c] += center_full_[c * np * np + p * np + q] * gc[q][c];
      }
    }
    if (!any) continue;
    double* sp = sigma.data() + L.grad_offset(p);
    if (cp == 0) {
      for (std::size_t c = 0; c < ncell; ++c) sp[c] += tmp[c];
    } else {
      const auto& st = L.center_stencil(p);
      for (std::size_t c = 0; c < ncell; ++c) {
        const double v = 0.25 * tmp[c];
        for (int k = 0; k < 4; ++k) sp[st[c][k]] += v;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// LaplaceSolver

struct LaplaceSolver::Impl {
  const Layout* layout = nullptr;
  bool periodic = false;
  int d = 2;
  struct Component {
    std::array<int, 3> m{1, 1, 1};      // transform sizes
    std::array<int, 3> start{0, 0, 0};  // first unknown index per axis
    std::size_t size = 0;
    fftw_plan fwd = nullptr, bwd = nullptr;
    Vec inv_eig;  // 1 / (eigenvalue * normalisation), 0 for the null mode
  };
  std::array<Component, 3> comp;
  std::size_t complex_size = 0;

  ~Impl() {
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    for (auto& c : comp) {
      if (c.fwd) fftw_destroy_plan(c.fwd);
      if (c.bwd) fftw_destroy_plan(c.bwd);
    }
  }
};

LaplaceSolver::LaplaceSolver(const Layout& layout) : impl_(std::make_unique<Impl>()) {
  Impl& I = *impl_;
  const Grid& g = layout.grid();
  I.layout = &layout;
  I.periodic = g.periodic;
  I.d = g.d;
  const double h2 = g.h * g.h;
  std::lock_guard<std::mutex> lock(fftw_planner_mutex());
  for (int al = 0; al < g.d; ++al) {
    auto& c = I.comp[al];
    int dims[3];
    for (int a = 0; a < g.d; ++a) {
      if (g.periodic) {
        c.m[a] = g.n[a];
        c.start[a] = 0;
      } else {
        c.m[a] = a == al ? g.n[a] - 1 : g.n[a];
        c.start[a] = 1;
      }
      dims[a] = c.m[a];
    }
    c.size = static_cast<std::size_t>(c.m[0]) * c.m[1] * c.m[2];
    if (g.periodic) {
      const int last = g.d - 1;
      const std::size_t csz = c.size / c.m[last] * (c.m[last] / 2 + 1);
      I.complex_size = csz;
      double* rbuf = fftw_alloc_real(c.size);
      fftw_complex* cbuf = fftw_alloc_complex(csz);
      c.fwd = fftw_plan_dft_r2c(g.d, dims, rbuf, cbuf, FFTW_ESTIMATE);
      c.bwd = fftw_plan_dft_c2r(g.d, dims, cbuf, rbuf, FFTW_ESTIMATE);
      fftw_free(rbuf);
      fftw_free(cbuf);
      c.inv_eig.assign(csz, 0.0);
      std::array<int, 3> cm = c.m;
      cm[last] = c.m[last] / 2 + 1;
      const double norm = static_cast<double>(c.size);
      std::size_t k = 0;
      for (int k0 = 0; k0 < cm[0]; ++k0)
        for (int k1 = 0; k1 < cm[1]; ++k1)
          for (int k2 = 0; k2 < cm[2]; ++k2, ++k) {
            const int kk[3] = {k0, k1, k2};
            double lam = 0.0;
            for (int a = 0; a < g.d; ++a) lam += (2.0 - 2.0 * std::cos(2.0 * kPi * kk[a] / c.m[a])) / h2;
            c.inv_eig[k] = lam > 0.0 ? 1.0 / (lam * norm) : 0.0;
          }
    } else {
      fftw_r2r_kind kf[3], kb[3];
      for (int a = 0; a < g.d; ++a) {
        kf[a] = a == al ? FFTW_RODFT00 : FFTW_RODFT10;
        kb[a] = a == al ? FFTW_RODFT00 : FFTW_RODFT01;
      }
      double* buf = fftw_alloc_real(c.size);
      c.fwd = fftw_plan_r2r(g.d, dims, buf, buf, kf, FFTW_ESTIMATE);
      c.bwd = fftw_plan_r2r(g.d, dims, buf, buf, kb, FFTW_ESTIMATE);
      fftw_free(buf);
      double norm = 1.0;
      for (int a = 0; a < g.d; ++a) norm *= 2.0 * g.n[a];
      c.inv_eig.resize(c.size);
      std::size_t k = 0;
      for (int k0 = 0; k0 < c.m[0]; ++k0)
        for (int k1 = 0; k1 < c.m[1]; ++k1)
          for (int k2 = 0; k2 < c.m[2]; ++k2, ++k) {
            const int kk[3] = {k0, k1, k2};
            double lam = 0.0;
            for (int a = 0; a < g.d; ++a) lam += (2.0 - 2.0 * std::cos(kPi * (kk[a] + 1) / g.n[a])) / h2;
            c.inv_eig[k] = 1.0 / (lam * norm);
          }
    }
  }
}

LaplaceSolver::~LaplaceSolver() = default;

void LaplaceSolver::solve(const Vec& r, Vec& z) const {
  const Impl& I = *impl_;
  const Layout& L = *I.layout;
  z.assign(L.vel_size(), 0.0);
  for (int al = 0; al < I.d; ++al) {
    const auto& c = I.comp[al];
    const auto& vd = L.vel_dims(al);
    const std::size_t off = L.vel_offset(al);
    double* buf = fftw_alloc_real(c.size);
    std::size_t k = 0;
    for (int i0 = 0; i0 < c.m[0]; ++i0)
      for (int i1 = 0; i1 < c.m[1]; ++i1) {
        const std::size_t base =
            off + (static_cast<std::size_t>(i0 + c.start[0]) * vd[1] + (i1 + c.start[1])) * vd[2] + c.start[2];
        for (int i2 = 0; i2 < c.m[2]; ++i2) buf[k++] = r[base + i2];
      }
    if (I.periodic) {
      fftw_complex* cb = fftw_alloc_complex(I.complex_size);
      fftw_execute_dft_r2c(c.fwd, buf, cb);
      for (std::size_t q = 0; q < I.complex_size; ++q) {
        cb[q][0] *= c.inv_eig[q];
        cb[q][1] *= c.inv_eig[q];
      }
      fftw_execute_dft_c2r(c.bwd, cb, buf);
      fftw_free(cb);
    } else {
      fftw_execute_r2r(c.fwd, buf, buf);
      for (std::size_t q = 0; q < c.size; ++q) buf[q] *= c.inv_eig[q];
      fftw_execute_r2r(c.bwd, buf, buf);
    }
    k = 0;
    for (int i0 = 0; i0 < c.m[0]; ++i0)
      for (int i1 = 0; i1 < c.m[1]; ++i1) {
        const std::size_t base =
            off + (static_cast<std::size_t>(i0 + c.start[0]) * vd[1] + (i1 + c.start[1])) * vd[2] + c.start[2];
        for (int i2 = 0; i2 < c.m[2]; ++i2) z[base + i2] = buf[k++];
      }
    fftw_free(buf);
  }
}

// ---------------------------------------------------------------------------
// Saddle-point solve

namespace {

void remove_mean(double* v, std::size_t n) {
  double s = 0.0;
  for (std::size_t k = 0; k < n; ++k) s += v[k];
  s /= static_cast<double>(n);
  for (std::size_t k = 0; k < n; ++k) v[k] -= s;
}

void remove_velocity_means(const Layout& L, double* u) {
  for (int a = 0; a < L.dim(); ++a) remove_mean(u + L.vel_offset(a), L.vel_count(a));
}

}  // namespace

SaddleResult solve_saddle(const Layout& L, const CoefficientSampler& coef, const LaplaceSolver& lap,
                          const SaddleData& data, double tol, int max_iter, const Vec* guess) {
  const std::size_t nu = L.vel_size();
  const std::size_t np = L.p_size();
  const bool periodic = L.grid().periodic;
  const auto& mask = L.vel_mask();

  Vec ub(nu, 0.0);
  if (!data.boundary.empty() && !periodic) {
    if (data.boundary.size() != nu) throw GridMismatchError("boundary data has the wrong size");
    for (std::size_t k = 0; k < nu; ++k)
      if (!mask[k]) ub[k] = data.boundary[k];
  }

  // right-hand side
  Vec rhs(nu + np, 0.0);
  Vec g, s;
  if (!data.force.empty()) {
    if (data.force.size() != nu) throw GridMismatchError("force has the wrong size");
    std::copy(data.force.begin(), data.force.end(), rhs.begin());
  }
  Vec lift(nu, 0.0);
  Vec work(L.grad_size(), 0.0);
  bool need_grad = false;
  if (!data.flux.empty()) {
    if (data.flux.size() != L.grad_size()) throw GridMismatchError("flux has the wrong size");
    const Vec& w = L.grad_weight();
    for (std::size_t k = 0; k < work.size(); ++k) work[k] = w[k] * data.flux[k];
    need_grad = true;
  }
  if (!data.stress.empty()) {
    if (data.stress.size() != L.grad_size()) throw GridMismatchError("stress has the wrong size");
    for (std::size_t k = 0; k < work.size(); ++k) work[k] += data.stress[k];
    need_grad = true;
  }
  bool has_boundary = false;
  for (double v : ub) has_boundary |= (v != 0.0);
  if (has_boundary) {
    L.gradient(ub, g);
    coef.apply(g, s);
    for (std::size_t k = 0; k < work.size(); ++k) work[k] += s[k];
    need_grad = true;
  }
  if (need_grad) {
    L.gradient_transpose_add(work, lift);
    for (std::size_t k = 0; k < nu; ++k) rhs[k] -= lift[k];
  }
  L.mask_walls(rhs);
  Vec div_b;
  L.divergence(ub, div_b);
  for (std::size_t c = 0; c < np; ++c) {
    const double gv = data.div.empty() ? 0.0 : data.div[c];
    rhs[nu + c] = -(gv - div_b[c]);
  }
  remove_mean(rhs.data() + nu, np);
  if (periodic) remove_velocity_means(L, rhs.data());

  const auto apply = [&](const Vec& x, Vec& y) {
    y.assign(nu + np, 0.0);
    Vec ux(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(nu));
    Vec px(x.begin() + static_cast<std::ptrdiff_t>(nu), x.end());
    Vec gg, ss, yu(nu, 0.0), dv;
    L.gradient(ux, gg);
    coef.apply(gg, ss);
    L.gradient_transpose_add(ss, yu);
    for (double& v : px) v = -v;
    L.divergence_transpose_add(px, yu);
    L.mask_walls(yu);
    L.divergence(ux, dv);
    std::copy(yu.begin(), yu.end(), y.begin());
    for (std::size_t c = 0; c < np; ++c) y[nu + c] = -dv[c];
    remove_mean(y.data() + nu, np);
    if (periodic) remove_velocity_means(L, y.data());
  };

  const double inv_nu = 1.0 / coef.mean_viscosity();
  const Vec& cv = coef.cell_viscosity();
  const auto prec = [&](const Vec& r, Vec& z) {
    Vec ru(r.begin(), r.begin() + static_cast<std::ptrdiff_t>(nu)), zu;
    lap.solve(ru, zu);
    z.resize(nu + np);
    for (std::size_t k = 0; k < nu; ++k) z[k] = inv_nu * zu[k];
    for (std::size_t c = 0; c < np; ++c) z[nu + c] = cv[c] * r[nu + c];
    remove_mean(z.data() + nu, np);
    if (periodic) remove_velocity_means(L, z.data());
  };

  Vec x(nu + np, 0.0);
  if (guess && guess->size() == nu) {
    for (std::size_t k = 0; k < nu; ++k) x[k] = mask[k] ? (*guess)[k] : 0.0;
    if (periodic) remove_velocity_means(L, x.data());
  }

  SaddleResult out;
  out.stats = coef.symmetric() ? krylov::minres(apply, prec, rhs, x, tol, max_iter)
                               : krylov::gmres(apply, prec, rhs, x, tol, max_iter);
  if (!out.stats.converged)
    throw ConvergenceError("saddle-point solver did not converge", out.stats.relative_residual, out.stats.history);

  out.u.assign(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(nu));
  out.p.assign(x.begin() + static_cast<std::ptrdiff_t>(nu), x.end());
  remove_mean(out.p.data(), np);
  if (periodic) remove_velocity_means(L, out.u.data());

  Vec ax;
  apply(x, ax);
  const double vol = L.grid().cell_volume();
  double rm = 0.0, rd = 0.0;
  for (std::size_t k = 0; k < nu; ++k) rm += (rhs[k] - ax[k]) * (rhs[k] - ax[k]);
  for (std::size_t c = 0; c < np; ++c) rd += (rhs[nu + c] - ax[nu + c]) * (rhs[nu + c] - ax[nu + c]);
  out.momentum_residual = std::sqrt(rm * vol);
  out.divergence_residual = std::sqrt(rd * vol);
  for (std::size_t k = 0; k < nu; ++k) out.u[k] += ub[k];
  return out;
}

}  // namespace shom::mac
