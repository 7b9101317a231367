#include <cmath>
#include <numeric>

#include "doctest.h"
#include "shom/green.hpp"

using namespace shom;

TEST_CASE("Stokeslet closed form") {
  const double e0[3] = {1.0, 0.0, 0.0};
  CHECK(stokeslet_velocity(3, 0, 0, e0) == doctest::Approx(1.0 / (4.0 * kPi)));
  CHECK(stokeslet_velocity(3, 1, 1, e0) == doctest::Approx(1.0 / (8.0 * kPi)));
  CHECK(stokeslet_velocity(3, 0, 1, e0) == 0.0);
  CHECK(stokeslet_pressure(3, 0, e0) == doctest::Approx(1.0 / (4.0 * kPi)));
  CHECK(stokeslet_velocity(2, 0, 0, e0) == doctest::Approx(1.0 / (4.0 * kPi)));
  CHECK(stokeslet_pressure(2, 0, e0) == doctest::Approx(1.0 / (2.0 * kPi)));
}

TEST_CASE("Stokeslet solves the homogeneous Stokes system away from the source") {
  // Fourth-order central differences of -Delta u + grad p and div u at a point.
  const double h = 1e-3;
  for (int d : {2, 3}) {
    const double x0[3] = {0.4, -0.3, 0.25};
    for (int beta = 0; beta < d; ++beta) {
      auto u = [&](int a, const double* x) { return stokeslet_velocity(d, a, beta, x); };
      auto p = [&](const double* x) { return stokeslet_pressure(d, beta, x); };
      auto shifted = [&](int k, double s) {
        std::array<double, 3> x{x0[0], x0[1], x0[2]};
        x[k] += s;
        return x;
      };
      double div = 0.0;
      for (int k = 0; k < d; ++k) {
        auto xp = shifted(k, h), xm = shifted(k, -h);
        div += (u(k, xp.data()) - u(k, xm.data())) / (2 * h);
      }
      CHECK(std::abs(div) < 1e-5);
      for (int a = 0; a < d; ++a) {
        double lap = 0.0;
        for (int k = 0; k < d; ++k) {
          auto xp = shifted(k, h), xm = shifted(k, -h);
          lap += (u(a, xp.data()) - 2 * u(a, x0) + u(a, xm.data())) / (h * h);
        }
        auto xp = shifted(a, h), xm = shifted(a, -h);
        const double gp = (p(xp.data()) - p(xm.data())) / (2 * h);
        CHECK(std::abs(-lap + gp) < 1e-4);
      }
    }
  }
}

TEST_CASE("geometric radii span the requested range") {
  const auto r = geometric_radii(0.05, 0.4, 4);
  REQUIRE(r.size() == 4u);
  CHECK(r.front() == doctest::Approx(0.05));
  CHECK(r.back() == doctest::Approx(0.4));
  CHECK(r[1] / r[0] == doctest::Approx(2.0));
  CHECK(r[2] / r[1] == doctest::Approx(2.0));
}

TEST_CASE("Green column: mean-zero pressure, wall values and snapshot round trip") {
  const BoxDomain dom = BoxDomain::cube(2, 32);
  const double y[2] = {0.5, 0.5};
  const GreenColumn c = green_column(make_coefficient("trig", {{"rho", 0.5}}, 2), 0.25, dom, y, 0);
  const double mean = std::accumulate(c.p.begin(), c.p.end(), 0.0) / c.p.size();
  CHECK(std::abs(mean) < 1e-10);
  const mac::Layout L(dom.grid());
  for (int a = 0; a < 2; ++a)
    for (std::size_t k = 0; k < L.vel_count(a); ++k)
      if (!L.vel_mask()[L.vel_offset(a) + k]) CHECK(c.u[L.vel_offset(a) + k] == 0.0);
  const GreenColumn r = green_column_from_snapshot(to_snapshot(c));
  CHECK(r.u == c.u);
  CHECK(r.p == c.p);
  CHECK(r.beta == 0);
  CHECK(r.y == c.y);
}

TEST_CASE("sources too close to the wall are rejected") {
  const BoxDomain dom = BoxDomain::cube(2, 32);
  const double y[2] = {0.05, 0.5};
  CHECK_THROWS_AS(source_cell_centre(dom, y), PreconditionError);
}

TEST_CASE("primal and adjoint columns agree at cell-centred points") {
  const BoxDomain dom = BoxDomain::cube(2, 32);
  const double x[2] = {10.5 / 32, 14.5 / 32}, y[2] = {21.5 / 32, 17.5 / 32};
  for (double skew : {0.0, 0.3}) {
    const auto a = make_coefficient("trig", {{"rho", 0.5}, {"skew", skew}}, 2);
    const SymmetryCheck s = symmetry_check(a, 0.25, dom, x, y);
    CHECK(s.rel_error < 1e-6);
  }
}

TEST_CASE("extrapolation needs matching spacing") {
  const auto a = make_coefficient("constant", {}, 2);
  const double y[2] = {0.5, 0.5};
  const GreenColumn c16 = green_column(a, 1.0, BoxDomain::cube(2, 16), y, 0);
  const GreenColumn c32 = green_column(a, 1.0, BoxDomain::cube(2, 32), y, 0);
  CHECK_THROWS_AS(extrapolate_columns(c16, c32), GridMismatchError);
}

TEST_CASE("integral representation matches a direct solve within its bound") {
  const auto a = make_coefficient("trig", {{"rho", 0.5}}, 2);
  auto F = [](const double* z, double* f) {
    const double r2 = (std::pow(z[0] - 0.35, 2) + std::pow(z[1] - 0.5, 2)) / 0.04;
    const double b = r2 < 1 ? std::pow(1 - r2, 4) : 0.0;
    f[0] = b;
    f[1] = -0.5 * b;
  };
  const double lo[2] = {0.15, 0.3}, hi[2] = {0.55, 0.7}, x[2] = {0.72, 0.53};
  const RepresentationCheck r = representation_check(a, 0.25, BoxDomain::cube(2, 32), F, lo, hi, x, 4);
  CHECK(r.passed());
  CHECK(r.error > 0.0);
}
