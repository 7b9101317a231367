#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "shom/common.hpp"

namespace shom::krylov {

using Vec = std::vector<double>;
using LinearOp = std::function<void(const Vec& in, Vec& out)>;

struct Result {
  bool converged = false;
  int iterations = 0;
  double relative_residual = 0.0;
  std::vector<double> history;
};

double dot(const Vec& a, const Vec& b);
double norm(const Vec& a);
/// y += s x
void axpy(double s, const Vec& x, Vec& y);

/// Preconditioned MINRES for symmetric A with SPD preconditioner M^-1.
/// Stops on the true relative residual ||b - A x|| / ||b|| <= rtol.
Result minres(const LinearOp& a, const LinearOp& prec, const Vec& b, Vec& x, double rtol, int max_iter);

/// Right-preconditioned restarted GMRES.
Result gmres(const LinearOp& a, const LinearOp& prec, const Vec& b, Vec& x, double rtol, int max_iter,
             int restart = 40);

/// Preconditioned conjugate gradients for SPD A.
Result pcg(const LinearOp& a, const LinearOp& prec, const Vec& b, Vec& x, double rtol, int max_iter);

}  // namespace shom::krylov
