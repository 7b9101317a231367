#include <cmath>

#include "doctest.h"
#include "shom/stokes_bvp.hpp"

using namespace shom;

namespace {

// u = (pi sin^2(pi x) sin(2 pi y), -pi sin(2 pi x) sin^2(pi y)), p = cos(pi x) cos(pi y),
// -Delta u + grad p = F for A = I.
void mms_force(const double* x, double* F) {
  const double P = kPi, X = x[0], Y = x[1];
  const double lap1 = P * (2 * P * P * std::cos(2 * P * X) * std::sin(2 * P * Y) -
                           4 * P * P * std::pow(std::sin(P * X), 2) * std::sin(2 * P * Y));
  const double lap2 = -P * (-4 * P * P * std::sin(2 * P * X) * std::pow(std::sin(P * Y), 2) +
                            2 * P * P * std::sin(2 * P * X) * std::cos(2 * P * Y));
  F[0] = -lap1 - P * std::sin(P * X) * std::cos(P * Y);
  F[1] = -lap2 - P * std::cos(P * X) * std::sin(P * Y);
}

double mms_velocity(int a, const double* x) {
  const double P = kPi;
  return a == 0 ? P * std::pow(std::sin(P * x[0]), 2) * std::sin(2 * P * x[1])
                : -P * std::sin(2 * P * x[0]) * std::pow(std::sin(P * x[1]), 2);
}

}  // namespace

TEST_CASE("manufactured solution converges at second order") {
  double prev = 0.0;
  for (int n : {16, 32, 64}) {
    StokesProblem pb;
    pb.domain = BoxDomain::cube(2, n);
    pb.coefficient = make_coefficient("constant", {}, 2);
    pb.force = mms_force;
    const StokesSolution s = solve_stokes(pb);
    const mac::Layout L(pb.domain.grid());
    Vec e = mac::sample_velocity(L, mms_velocity);
    for (std::size_t k = 0; k < e.size(); ++k) e[k] -= s.u[k];
    const double err = velocity_l2(pb.domain, e);
    if (prev > 0.0) CHECK(std::log2(prev / err) == doctest::Approx(2.0).epsilon(0.1));
    prev = err;
  }
}

TEST_CASE("linear shear is reproduced exactly") {
  StokesProblem pb;
  pb.domain = BoxDomain::cube(2, 16);
  pb.coefficient = make_coefficient("constant", {}, 2);
  pb.boundary = [](const double* x, double* f) {
    f[0] = x[1];
    f[1] = 0.0;
  };
  const StokesSolution s = solve_stokes(pb);
  const double x[2] = {0.37, 0.61};
  CHECK(velocity_at(pb.domain, s.u, 0, x) == doctest::Approx(0.61).epsilon(1e-8));
  CHECK(std::abs(velocity_at(pb.domain, s.u, 1, x)) < 1e-8);
  CHECK(pressure_l2_0(pb.domain, s.p) < 1e-8);
}

TEST_CASE("zero data gives the zero solution") {
  StokesProblem pb;
  pb.domain = BoxDomain::cube(3, 8);
  pb.coefficient = make_coefficient("trig", {}, 3);
  pb.eps = 0.5;
  const StokesSolution s = solve_stokes(pb);
  CHECK(velocity_max(pb.domain, s.u) == 0.0);
  CHECK(s.energy_constant == 0.0);
}

TEST_CASE("incompatible data is rejected") {
  StokesProblem pb;
  pb.domain = BoxDomain::cube(2, 16);
  pb.coefficient = make_coefficient("constant", {}, 2);
  pb.div = [](const double*) { return 1.0; };
  CHECK(check_compatibility(pb) == doctest::Approx(1.0));
  CHECK_THROWS_AS(solve_stokes(pb), CompatibilityError);
}

TEST_CASE("homogenized solve with the identity equals the constant solve") {
  StokesProblem pb;
  pb.domain = BoxDomain::cube(2, 16);
  pb.coefficient = make_coefficient("constant", {}, 2);
  pb.force = mms_force;
  const StokesSolution a = solve_stokes(pb);
  pb.coefficient = make_coefficient("trig", {}, 2);
  const StokesSolution b = solve_homogenized(pb, Tensor4::identity(2));
  double m = 0.0;
  for (std::size_t k = 0; k < a.u.size(); ++k) m = std::max(m, std::abs(a.u[k] - b.u[k]));
  CHECK(m < 1e-7);
}

TEST_CASE("solution snapshots round-trip") {
  StokesProblem pb;
  pb.domain = BoxDomain::cube(2, 8);
  pb.coefficient = make_coefficient("constant", {}, 2);
  pb.force = mms_force;
  const StokesSolution s = solve_stokes(pb);
  const StokesSolution r = solution_from_snapshot(to_snapshot(s));
  CHECK(r.u == s.u);
  CHECK(r.p == s.p);
  CHECK(r.domain == s.domain);
}
