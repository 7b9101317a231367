#include <cmath>

#include "doctest.h"
#include "shom/expand.hpp"

using namespace shom;

namespace {

void smooth_force(const double* x, double* F) {
  F[0] = std::sin(kPi * x[0]) * x[1];
  F[1] = std::cos(2.0 * x[0] + x[1]);
}

}  // namespace

TEST_CASE("linear field and period resolution") {
  const BoxDomain dom = BoxDomain::cube(2, 16);
  const mac::Layout L(dom.grid());
  const Vec P = linear_field(dom, 1, 0);
  double x[3] = {0, 0, 0};
  for (int a = 0; a < 2; ++a)
    for (std::size_t k = 0; k < L.vel_count(a); ++k) {
      L.vel_position(a, k, x);
      CHECK(P[L.vel_offset(a) + k] == doctest::Approx(a == 0 ? x[1] : 0.0));
    }
  CHECK(grid_resolves_period(0.25, dom));
  CHECK(grid_resolves_period(0.125, dom));
  CHECK_FALSE(grid_resolves_period(0.1, dom));
}

TEST_CASE("second derivatives of a quadratic field are exact") {
  const BoxDomain dom = BoxDomain::cube(2, 16);
  const mac::Layout L(dom.grid());
  const Vec u = mac::sample_velocity(L, [](int a, const double* x) { return a == 0 ? x[0] * x[0] : x[0] * x[1]; });
  const Vec dd = second_derivatives_at_centers(dom, u);
  const std::size_t cells = 256;
  auto at = [&](int i, int j, int b, std::size_t c) { return dd[((i * 2 + j) * 2 + b) * cells + c]; };
  for (std::size_t c = 0; c < cells; ++c) {
    CHECK(at(0, 0, 0, c) == doctest::Approx(2.0));
    CHECK(at(0, 1, 1, c) == doctest::Approx(1.0));
    CHECK(at(1, 0, 1, c) == doctest::Approx(1.0));
    CHECK(std::abs(at(1, 1, 0, c)) < 1e-9);
    CHECK(std::abs(at(0, 0, 1, c)) < 1e-9);
  }
}

TEST_CASE("constant coefficients: correctors are trivial and both error fields vanish") {
  const BoxDomain dom = BoxDomain::cube(2, 32);
  const double eps = 0.25;
  const auto a = make_coefficient("constant", {}, 2);
  const CorrectorSet cell = box_cell_correctors(a, eps, dom);
  const DirichletCorrectorSet dc = solve_dirichlet_correctors(a, eps, dom, cell);
  CHECK(corrector_deviation(dc) < 1e-8);
  CHECK(lambda_interior_constant(dc, cell, 0.1) < 1e-8);

  StokesProblem pb;
  pb.domain = dom;
  pb.coefficient = a;
  pb.eps = eps;
  pb.force = smooth_force;
  const StokesSolution ue = solve_stokes(pb);
  const StokesSolution u0 = solve_homogenized(pb, cell.effective());
  for (Instantiation tag : {Instantiation::Dirichlet, Instantiation::Periodic}) {
    const ExpansionFields f = build_expansion(ue, u0, cell, &dc, tag, eps);
    CHECK(f.diff_l2 < 1e-8);
    CHECK(f.w_h1 < 1e-6);
    CHECK(f.tau_l2_0 < 1e-6);
  }
}

TEST_CASE("Dirichlet correctors: preconditions and snapshot round trip") {
  const BoxDomain dom = BoxDomain::cube(2, 16);
  const auto a = make_coefficient("trig", {{"rho", 0.5}}, 2);
  const CorrectorSet cell = box_cell_correctors(a, 0.25, dom);
  CHECK_THROWS_AS(solve_dirichlet_correctors(a, 0.0625, dom, cell), PreconditionError);
  const DirichletCorrectorSet dc = solve_dirichlet_correctors(a, 0.25, dom, cell);
  // Phi = P on the walls.
  const mac::Layout L(dom.grid());
  const Vec P = linear_field(dom, 0, 1);
  for (int al = 0; al < 2; ++al)
    for (std::size_t k = 0; k < L.vel_count(al); ++k)
      if (!L.vel_mask()[L.vel_offset(al) + k]) CHECK(dc.Phi(0, 1)[L.vel_offset(al) + k] == P[L.vel_offset(al) + k]);
  const DirichletCorrectorSet r = dirichlet_correctors_from_snapshot(to_snapshot(dc));
  CHECK(r.eps == dc.eps);
  CHECK(r.Phi(1, 0) == dc.Phi(1, 0));
  CHECK(r.Lambda(0, 1) == dc.Lambda(0, 1));
  CHECK(r.domain == dc.domain);
}

TEST_CASE("instantiation names") {
  CHECK(to_string(Instantiation::Dirichlet) == "dirichlet");
  CHECK(instantiation_from_string("periodic") == Instantiation::Periodic);
  CHECK_THROWS_AS(instantiation_from_string("neumann"), ConfigError);
}

TEST_CASE("divergence equation") {
  const BoxDomain dom = BoxDomain::cube(2, 32);
  const StokesSolution zero = solve_divergence([](const double*) { return 0.0; }, dom);
  CHECK(velocity_max(dom, zero.u) == 0.0);
  const StokesSolution s =
      solve_divergence([](const double* x) { return std::cos(2 * kPi * x[0]) * std::cos(2 * kPi * x[1]); }, dom);
  CHECK(s.divergence_residual < 1e-8);
  CHECK(gradient_max(dom, s.u) > 0.0);
  CHECK_THROWS_AS(solve_divergence([](const double*) { return 1.0; }, dom), CompatibilityError);
}

TEST_CASE("truncated maximal function") {
  const BoxDomain dom = BoxDomain::cube(2, 16);
  const std::vector<std::array<double, 3>> probes = {{{0.5, 0.5, 0}}, {{0.1, 0.8, 0}}};
  const Vec one(256, 1.0);
  for (double m : truncated_maximal(dom, one, 1.0 / 16, probes)) CHECK(m == doctest::Approx(1.0));

  Vec spike(256, 0.0);
  spike[8 * 16 + 8] = -4.0;
  const auto m1 = truncated_maximal(dom, spike, 1.0 / 16, probes);
  const auto m2 = truncated_maximal(dom, spike, 2.0 / 16, probes);
  const auto m4 = truncated_maximal(dom, spike, 4.0 / 16, probes);
  for (std::size_t k = 0; k < probes.size(); ++k) {
    CHECK(m1[k] >= m2[k]);
    CHECK(m2[k] >= m4[k]);
    CHECK(m4[k] > 0.0);
  }
  Vec twice = spike;
  for (double& v : twice) v *= 2.0;
  const auto t1 = truncated_maximal(dom, twice, 1.0 / 16, probes);
  for (std::size_t k = 0; k < probes.size(); ++k) CHECK(t1[k] == doctest::Approx(2.0 * m1[k]));
  CHECK_THROWS_AS(truncated_maximal(dom, one, 0.5 / 16, probes), ConfigError);
}
