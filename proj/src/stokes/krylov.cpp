#include "shom/krylov.hpp"

#include <algorithm>

namespace shom::krylov {

double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  const std::size_t n = a.size();
  for (std::size_t k = 0; k < n; ++k) s += a[k] * b[k];
  return s;
}

double norm(const Vec& a) { return std::sqrt(dot(a, a)); }

void axpy(double s, const Vec& x, Vec& y) {
  const std::size_t n = x.size();
  for (std::size_t k = 0; k < n; ++k) y[k] += s * x[k];
}

namespace {

double true_residual(const LinearOp& a, const Vec& b, const Vec& x, Vec& work) {
  a(x, work);
  double s = 0.0;
  for (std::size_t k = 0; k < b.size(); ++k) {
    const double r = b[k] - work[k];
    s += r * r;
  }
  return std::sqrt(s);
}

}  // namespace

Result minres(const LinearOp& a, const LinearOp& prec, const Vec& b, Vec& x, double rtol, int max_iter) {
  Result res;
  const std::size_t n = b.size();
  if (x.size() != n) x.assign(n, 0.0);
  const double bnorm = norm(b);
  if (bnorm == 0.0) {
    std::fill(x.begin(), x.end(), 0.0);
    res.converged = true;
    return res;
  }
  Vec work(n);
  int total = 0;
  // Outer restarts only re-seed from the true residual when the recurrence drifts.
  for (int cycle = 0; cycle < 8 && total < max_iter; ++cycle) {
    Vec r1(n);
    a(x, work);
    for (std::size_t k = 0; k < n; ++k) r1[k] = b[k] - work[k];
    double rel = norm(r1) / bnorm;
    res.relative_residual = rel;
    if (rel <= rtol) {
      res.converged = true;
      res.iterations = total;
      return res;
    }
    Vec y(n);
    prec(r1, y);
    double beta1 = dot(r1, y);
    if (beta1 <= 0.0) throw ConvergenceError("MINRES preconditioner is not positive definite", rel);
    beta1 = std::sqrt(beta1);

    Vec r2 = r1, v(n), w(n, 0.0), w1(n, 0.0), w2(n, 0.0);
    double oldb = 0.0, beta = beta1, dbar = 0.0, epsln = 0.0, phibar = beta1;
    double cs = -1.0, sn = 0.0;
    const double target = rtol * bnorm;
    // preconditioned residual estimate is checked against the true residual at intervals
    for (int it = 0; total < max_iter; ++it) {
      ++total;
      const double s = 1.0 / beta;
      for (std::size_t k = 0; k < n; ++k) v[k] = s * y[k];
      a(v, y);
      if (it > 0) axpy(-beta / oldb, r1, y);
      const double alfa = dot(v, y);
      axpy(-alfa / beta, r2, y);
      r1.swap(r2);
      r2 = y;
      prec(r2, y);
      oldb = beta;
      double b2 = dot(r2, y);
      if (b2 < 0.0) throw ConvergenceError("MINRES preconditioner lost definiteness", rel);
      beta = std::sqrt(b2);

      const double oldeps = epsln;
      const double delta = cs * dbar + sn * alfa;
      const double gbar = sn * dbar - cs * alfa;
      epsln = sn * beta;
      dbar = -cs * beta;
      const double gamma = std::max(std::hypot(gbar, beta), 1e-300);
      cs = gbar / gamma;
      sn = beta / gamma;
      const double phi = cs * phibar;
      phibar = sn * phibar;

      const double denom = 1.0 / gamma;
      w1.swap(w2);
      w2.swap(w);
      for (std::size_t k = 0; k < n; ++k) w[k] = (v[k] - oldeps * w1[k] - delta * w2[k]) * denom;
      axpy(phi, w, x);

      const double est = phibar;  // preconditioned-norm residual estimate
      res.history.push_back(est / beta1);
      const bool check = (it % 10 == 9) || est / beta1 < rtol * 0.5 || beta == 0.0;
      if (check) {
        rel = true_residual(a, b, x, work) / bnorm;
        res.relative_residual = rel;
        if (rel <= rtol) {
          res.converged = true;
          res.iterations = total;
          return res;
        }
        if (est / beta1 < rtol * 1e-3 || beta == 0.0) break;  // stagnated recurrence: restart
      }
      (void)target;
    }
  }
  res.iterations = total;
  res.relative_residual = true_residual(a, b, x, work) / bnorm;
  res.converged = res.relative_residual <= rtol;
  return res;
}

Result gmres(const LinearOp& a, const LinearOp& prec, const Vec& b, Vec& x, double rtol, int max_iter,
             int restart) {
  Result res;
  const std::size_t n = b.size();
  if (x.size() != n) x.assign(n, 0.0);
  const double bnorm = norm(b);
  if (bnorm == 0.0) {
    std::fill(x.begin(), x.end(), 0.0);
    res.converged = true;
    return res;
  }
  Vec work(n), z(n);
  std::vector<Vec> basis;
  int total = 0;
  while (total < max_iter) {
    Vec r(n);
    a(x, work);
    for (std::size_t k = 0; k < n; ++k) r[k] = b[k] - work[k];
    double beta = norm(r);
    res.relative_residual = beta / bnorm;
    if (res.relative_residual <= rtol) {
      res.converged = true;
      break;
    }
    const int m = restart;
    basis.assign(1, Vec(n));
    for (std::size_t k = 0; k < n; ++k) basis[0][k] = r[k] / beta;
    std::vector<std::vector<double>> hmat(static_cast<std::size_t>(m + 1), std::vector<double>(m, 0.0));
    std::vector<double> cs(m), sn(m), g(m + 1, 0.0);
    g[0] = beta;
    int j = 0;
    for (; j < m && total < max_iter; ++j, ++total) {
      prec(basis[j], z);
      Vec wv(n);
      a(z, wv);
      for (int i = 0; i <= j; ++i) {
        hmat[i][j] = dot(wv, basis[i]);
        axpy(-hmat[i][j], basis[i], wv);
      }
      hmat[j + 1][j] = norm(wv);
      if (hmat[j + 1][j] > 0) {
        for (auto& e : wv) e /= hmat[j + 1][j];
      }
      basis.push_back(std::move(wv));
      for (int i = 0; i < j; ++i) {
        const double t = cs[i] * hmat[i][j] + sn[i] * hmat[i + 1][j];
        hmat[i + 1][j] = -sn[i] * hmat[i][j] + cs[i] * hmat[i + 1][j];
        hmat[i][j] = t;
      }
      const double den = std::hypot(hmat[j][j], hmat[j + 1][j]);
      cs[j] = hmat[j][j] / den;
      sn[j] = hmat[j + 1][j] / den;
      hmat[j][j] = den;
      hmat[j + 1][j] = 0.0;
      g[j + 1] = -sn[j] * g[j];
      g[j] = cs[j] * g[j];
      res.history.push_back(std::abs(g[j + 1]) / bnorm);
      if (std::abs(g[j + 1]) / bnorm <= rtol * 0.5) {
        ++j;
        ++total;
        break;
      }
    }
    std::vector<double> yv(j, 0.0);
    for (int i = j - 1; i >= 0; --i) {
      double s = g[i];
      for (int k = i + 1; k < j; ++k) s -= hmat[i][k] * yv[k];
      yv[i] = s / hmat[i][i];
    }
    Vec upd(n, 0.0);
    for (int i = 0; i < j; ++i) axpy(yv[i], basis[i], upd);
    prec(upd, z);
    axpy(1.0, z, x);
  }
  res.iterations = total;
  res.relative_residual = true_residual(a, b, x, work) / bnorm;
  res.converged = res.relative_residual <= rtol;
  return res;
}

Result pcg(const LinearOp& a, const LinearOp& prec, const Vec& b, Vec& x, double rtol, int max_iter) {
  Result res;
  const std::size_t n = b.size();
  if (x.size() != n) x.assign(n, 0.0);
  const double bnorm = norm(b);
  if (bnorm == 0.0) {
    std::fill(x.begin(), x.end(), 0.0);
    res.converged = true;
    return res;
  }
  Vec r(n), z(n), p(n), q(n);
  a(x, q);
  for (std::size_t k = 0; k < n; ++k) r[k] = b[k] - q[k];
  prec(r, z);
  p = z;
  double rz = dot(r, z);
  for (int it = 0; it < max_iter; ++it) {
    const double rel = norm(r) / bnorm;
    res.history.push_back(rel);
    res.relative_residual = rel;
    if (rel <= rtol) {
      res.converged = true;
      res.iterations = it;
      break;
    }
    a(p, q);
    const double pq = dot(p, q);
    if (pq <= 0.0) throw ConvergenceError("CG operator is not positive definite", rel, res.history);
    const double alpha = rz / pq;
    axpy(alpha, p, x);
    axpy(-alpha, q, r);
    prec(r, z);
    const double rz_new = dot(r, z);
    const double beta = rz_new / rz;
    rz = rz_new;
    for (std::size_t k = 0; k < n; ++k) p[k] = z[k] + beta * p[k];
    res.iterations = it + 1;
  }
  if (!res.converged) {
    Vec work(n);
    res.relative_residual = true_residual(a, b, x, work) / bnorm;
    res.converged = res.relative_residual <= rtol;
  }
  return res;
}

}  // namespace shom::krylov
