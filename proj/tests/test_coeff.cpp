#include <cmath>

#include "doctest.h"
#include "shom/coeff.hpp"

using namespace shom;

TEST_CASE("trig family matches its closed form") {
  const auto a = make_coefficient("trig", {{"rho", 0.5}}, 2);
  const double y0[2] = {0.0, 0.0};
  const double y1[2] = {0.25, 0.1};
  Tensor4 t;
  a.eval(y0, t);
  CHECK(t(0, 0, 1, 1) == doctest::Approx(1.5));
  CHECK(t(0, 1, 0, 0) == 0.0);
  a.eval(y1, t);
  CHECK(t(1, 1, 0, 0) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(a.is_scalar());
  CHECK(a.is_symmetric());
}

TEST_CASE("trig family is periodic and inside its ellipticity window") {
  for (int d : {2, 3}) {
    const auto a = make_coefficient("trig", {{"rho", 0.5}}, d);
    CHECK(periodicity_defect(a, 64) < 1e-13);
    const auto b = check_ellipticity(a, 128);
    CHECK(b.lo >= 0.5 - 1e-12);
    CHECK(b.hi <= 1.5 + 1e-12);
    CHECK(a.info().bounds.lo == doctest::Approx(0.5));
  }
}

TEST_CASE("non-elliptic and malformed inputs are rejected") {
  CHECK_THROWS_AS(make_coefficient("trig", {{"rho", 1.0}}, 2), EllipticityError);
  CHECK_THROWS_AS(make_coefficient("trig", {{"rho", -0.1}}, 2), ConfigError);
  CHECK_THROWS_AS(make_coefficient("constant", {{"tensor", {1.0, 2.0}}}, 2), ConfigError);
  CHECK_THROWS_AS(make_coefficient("nope", {}, 2), ConfigError);
  CHECK_THROWS_AS(make_coefficient("constant", {}, 4), ConfigError);
  CHECK_THROWS_AS(coefficient_from_config({{"dim", 2}}), ConfigError);
}

TEST_CASE("skew term makes the operator non-self-adjoint without changing the window") {
  const auto a = make_coefficient("trig", {{"rho", 0.5}, {"skew", 0.3}}, 2);
  CHECK_FALSE(a.is_symmetric());
  const auto at = a.transposed();
  const double y[2] = {0.2, 0.7};
  Tensor4 t, s;
  a.eval(y, t);
  at.eval(y, s);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      for (int al = 0; al < 2; ++al)
        for (int be = 0; be < 2; ++be) CHECK(s(i, j, al, be) == t(j, i, be, al));
  const auto b = check_ellipticity(a, 128);
  CHECK(b.lo >= 0.5 - 1e-12);
}

TEST_CASE("elasticity reduction gives a strongly elliptic field") {
  const auto e = ElasticityTensor::isotropic_trig(3, 1.0, 1.0, 0.3);
  CHECK(elasticity_symmetry_defect(e, 32) < 1e-14);
  const auto a = elasticity_reduce(e);
  const auto b = check_ellipticity(a, 64);
  CHECK(b.lo > 0.0);
  CHECK_THROWS_AS(ElasticityTensor::isotropic(2, 1.0, -1.0), MalformedTensorError);
}

TEST_CASE("constant field from config") {
  const auto a = coefficient_from_config({{"family", "constant"}, {"dim", 3}});
  CHECK(a.is_constant());
  CHECK(a.dim() == 3);
  CHECK(a.constant_value()(2, 2, 1, 1) == 1.0);
}
