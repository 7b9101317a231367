#include <cmath>

#include "doctest.h"
#include "shom/torus.hpp"

using namespace shom;

namespace {

// c(y) = 1 + rho cos(2 pi y_0): a laminate in y_0.
CoefficientField laminate(double rho) {
  return make_coefficient("trig", {{"rho", rho}, {"terms", {{{"amp", 1.0}, {"k", {1, 0}}}}}}, 2);
}

}  // namespace

TEST_CASE("constant coefficients have vanishing correctors") {
  for (CellScheme s : {CellScheme::Spectral, CellScheme::FiniteDifference}) {
    const auto a = make_coefficient("constant", {}, 2);
    TorusGrid g;
    g.d = 2;
    g.n = 16;
    CellOptions o;
    o.scheme = s;
    const CorrectorSet c = homogenize(a, g, o);
    for (int j = 0; j < 2; ++j)
      for (int b = 0; b < 2; ++b) {
        CHECK(c.pi(j, b).max_abs() == 0.0);
        for (int k = 0; k < 2; ++k) CHECK(c.chi(j, b, k).max_abs() == 0.0);
      }
    Tensor4 diff = c.effective();
    diff -= Tensor4::identity(2);
    CHECK(diff.max_abs() < 1e-14);
  }
}

TEST_CASE("laminate: effective tensor is the harmonic mean across layers") {
  // The cell problem reduces to ODEs in y_0: c (1 + d_0 chi_0^{11}) is constant,
  // chi_0^{00} = 0 and pi_0^0 = c - <c>.
  const double rho = 0.5;
  const auto a = laminate(rho);
  TorusGrid g;
  g.d = 2;
  g.n = 32;
  const CorrectorSet c = homogenize(a, g);
  const Tensor4& A = c.effective();
  CHECK(A(0, 0, 1, 1) == doctest::Approx(std::sqrt(1.0 - rho * rho)).epsilon(1e-10));
  CHECK(A(0, 0, 0, 0) == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(A(1, 1, 0, 0) == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(A(1, 1, 1, 1) == doctest::Approx(1.0).epsilon(1e-10));
  const double y[2] = {0.0, 0.3};
  CHECK(c.pi(0, 0)(y) == doctest::Approx(rho).epsilon(1e-8));
  const double y2[2] = {0.5, 0.9};
  CHECK(c.pi(0, 0)(y2) == doctest::Approx(-rho).epsilon(1e-8));
}

TEST_CASE("finite-difference laminate tends to the harmonic mean") {
  // The discrete flux is constant across layers, so A_hat is the harmonic mean of
  // c over the grid points: a periodic trapezoid rule, which converges geometrically.
  const double exact = std::sqrt(1.0 - 0.25);
  double prev = 1.0;
  for (int n : {8, 16, 32}) {
    TorusGrid g;
    g.d = 2;
    g.n = n;
    CellOptions o;
    o.scheme = CellScheme::FiniteDifference;
    o.tol = 1e-12;
    const CorrectorSet c = homogenize(laminate(0.5), g, o);
    const double err = std::abs(c.effective()(0, 0, 1, 1) - exact);
    CHECK(err < prev);
    prev = err;
  }
  CHECK(prev < 1e-9);
}

TEST_CASE("dual corrector identities hold to round-off") {
  TorusGrid g;
  g.d = 2;
  g.n = 32;
  const CorrectorSet c = homogenize(make_coefficient("trig", {{"rho", 0.5}}, 2), g);
  const CellDiagnostics dg = diagnose(c);
  CHECK(dg.max_residual <= 1e-8);
  CHECK(dg.flux_identity <= 1e-8);
  CHECK(dg.dual_identity <= 1e-8);
  CHECK(dg.q_identity <= 1e-8);
  CHECK(dg.antisymmetry == 0.0);
}

TEST_CASE("finite-difference correctors expose q but not phi") {
  TorusGrid g;
  g.d = 2;
  g.n = 12;
  CellOptions o;
  o.scheme = CellScheme::FiniteDifference;
  CorrectorSet c = homogenize(make_coefficient("trig", {{"rho", 0.5}}, 2), g, o);
  CHECK_THROWS_AS(dual_correctors(c), PreconditionError);
  const auto q = dual_pressures(c);
  CHECK(q.size() == 8u);
}

TEST_CASE("corrector snapshots round-trip") {
  TorusGrid g;
  g.d = 2;
  g.n = 16;
  const CorrectorSet c = homogenize(make_coefficient("trig", {{"rho", 0.3}}, 2), g);
  const CorrectorSet r = corrector_set_from_snapshot(to_snapshot(c));
  CHECK(r.grid().n == 16);
  CHECK(r.chi(0, 1, 1).values == c.chi(0, 1, 1).values);
  CHECK(r.pi(1, 0).values == c.pi(1, 0).values);
  Tensor4 diff = r.effective();
  diff -= c.effective();
  CHECK(diff.max_abs() == 0.0);
}

TEST_CASE("bad torus inputs") {
  TorusGrid g;
  g.d = 2;
  g.n = 12;
  CHECK_THROWS(homogenize(make_coefficient("trig", {}, 2), g));  // spectral needs a power of two
  g.n = 16;
  CHECK_THROWS_AS(homogenize(make_coefficient("trig", {}, 3), g), GridMismatchError);
}
