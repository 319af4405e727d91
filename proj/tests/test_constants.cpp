#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <gtest/gtest.h>

#include "nlsob/constants.hpp"
#include "oracles.hpp"

using namespace nlsob;

namespace {

// H^{n-1}(S^{n-1}) from |S^0| = 2 and |S^m| = |S^{m-1}| * int_0^pi sin^{m-1}.
double sphere_area(int n) {
  double a = 2.0;
  for (int m = 1; m <= n - 1; ++m)
    a *= boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
        [m](double t) { return std::pow(std::sin(t), m - 1); }, 0.0, std::numbers::pi, 20, 1e-15);
  return a;
}

}  // namespace

TEST(EuclideanCnp, OneDimensionIsTwo) {
  for (double p : {1.5, 2.0, 3.0, 7.5}) {
    EXPECT_NEAR(euclidean_cnp(1, p).value, 2.0, 1e-14);
    EXPECT_NEAR(euclidean_cnp(1, p, ConstMethod::sphere_quadrature).value, 2.0, 1e-14);
  }
}

TEST(EuclideanCnp, SymmetryOracleAtPTwo) {
  // sum_i int v_i^2 = |S^{n-1}| with n equal terms.
  for (int n = 1; n <= 6; ++n) {
    const double oracle = sphere_area(n) / n;
    EXPECT_NEAR(euclidean_cnp(n, 2.0).value, oracle, 1e-12 * oracle) << n;
  }
  EXPECT_NEAR(euclidean_cnp(2, 2.0).value, std::numbers::pi, 1e-13);
  EXPECT_NEAR(euclidean_cnp(3, 2.0).value, 4.0 * std::numbers::pi / 3.0, 1e-13);
}

TEST(EuclideanCnp, QuadratureMatchesClosedForm) {
  for (int n = 1; n <= 5; ++n)
    for (double p : {1.5, 2.0, 3.0}) {
      const auto a = euclidean_cnp(n, p);
      const auto b = euclidean_cnp(n, p, ConstMethod::sphere_quadrature);
      EXPECT_FALSE(b.flagged);
      EXPECT_NEAR(a.value, b.value, 1e-8) << n << " " << p;
    }
}

TEST(EuclideanCnp, IndependentMonteCarlo) {
  // |S^{n-1}| E|v_1|^p over uniform directions drawn from normalized Gaussians.
  std::mt19937_64 gen(99);
  std::normal_distribution<double> g;
  const int n = 3;
  const double p = 3.0;
  const int N = 400000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < N; ++i) {
    double v[3] = {g(gen), g(gen), g(gen)};
    const double r = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    const double x = std::pow(std::abs(v[0] / r), p);
    s += x;
    s2 += x * x;
  }
  const double m = s / N;
  const double se = std::sqrt((s2 / N - m * m) / N);
  const double area = sphere_area(n);
  EXPECT_NEAR(euclidean_cnp(n, p).value, area * m, 3.5 * area * se);
}

TEST(EuclideanCnp, Errors) {
  EXPECT_THROW(euclidean_cnp(0, 2.0), DomainError);
  EXPECT_THROW(euclidean_cnp(2, 1.0), DomainError);
  EXPECT_THROW(euclidean_cnp(2, 0.5), DomainError);
}

TEST(LimitCoefficient, EuclideanPTwoIsHalfAndOne) {
  for (int n : {1, 2, 3, 4}) {
    const auto c = limit_coefficient(n, 2.0, Branch::euclidean);
    EXPECT_NEAR(c.i_coeff, 0.5, 1e-13) << n;
    EXPECT_NEAR(c.j_coeff, 1.0, 1e-13) << n;
    EXPECT_EQ(c.i_std_error, 0.0);
  }
}

TEST(HeisenbergCnp, MatchesProfileOracle) {
  for (double p : {1.5, 2.0, 3.0}) {
    const auto r = heisenberg_cnp(1, p);
    EXPECT_GT(r.value, 0.0);
    EXPECT_TRUE(std::isfinite(r.value));
    EXPECT_NEAR(r.value, oracle::heisenberg_constant(p), 3.0 * r.std_error) << p;
  }
}

TEST(HeisenbergCnp, KoranyiGaugeAtPTwoIsTwoPi) {
  // (Q + p) * integral over |z|^4 + t^2 <= 1 of zeta^2 = 6 * pi / 3.
  HeisenbergCnpOptions o;
  o.mode = DistanceMode::koranyi_gauge;
  const auto r = heisenberg_cnp(1, 2.0, o);
  EXPECT_NEAR(r.value, 2.0 * std::numbers::pi, 3.0 * r.std_error);
}

TEST(HeisenbergCnp, HorizontalRotationInvariance) {
  HeisenbergCnpOptions a, b;
  b.axis = 1;
  b.seed = a.seed + 1;
  const auto ra = heisenberg_cnp(1, 2.0, a);
  const auto rb = heisenberg_cnp(1, 2.0, b);
  EXPECT_NEAR(ra.value, rb.value, 3.0 * std::hypot(ra.std_error, rb.std_error));
}

TEST(HeisenbergCnp, IndependentSeedsAgreeAtTenMillion) {
  HeisenbergCnpOptions a, b;
  a.samples = b.samples = 10'000'000;
  a.seed = 1;
  b.seed = 2;
  const auto ra = heisenberg_cnp(1, 2.0, a);
  const auto rb = heisenberg_cnp(1, 2.0, b);
  EXPECT_NEAR(ra.value, rb.value, 3.0 * std::hypot(ra.std_error, rb.std_error));
  EXPECT_LT(ra.std_error / ra.value, 1e-3);
}

TEST(HeisenbergCnp, Errors) {
  HeisenbergCnpOptions o;
  o.axis = 2;
  EXPECT_THROW(heisenberg_cnp(1, 2.0, o), DomainError);
  EXPECT_THROW(heisenberg_cnp(1, 1.0), DomainError);
  o.axis = 0;
  o.batches = 5;
  EXPECT_THROW(heisenberg_cnp(1, 2.0, o), DomainError);
}

TEST(ConstantsCache, RoundTripAndReuse) {
  const auto dir = std::filesystem::temp_directory_path() / "nlsob_cache_test";
  std::filesystem::remove_all(dir);
  const ConstantsCache cache(dir / "c.json");
  HeisenbergCnpOptions o;
  o.samples = 200000;
  const auto first = heisenberg_cnp_cached(1, 2.0, o, &cache);
  ASSERT_TRUE(std::filesystem::exists(cache.path()));
  const auto hit = cache.get(heisenberg_cnp_key(1, 2.0, o));
  ASSERT_TRUE(hit.has_value());
  EXPECT_EQ(hit->value, first.value);
  EXPECT_EQ(hit->std_error, first.std_error);
  EXPECT_EQ(hit->branch, Branch::heisenberg);
  // A different budget is a different key.
  o.samples = 300000;
  EXPECT_FALSE(cache.get(heisenberg_cnp_key(1, 2.0, o)).has_value());
  const auto w = unit_ball_mass_cached(1, DistanceMode::exact_cc, &cache, 200000, 7);
  const auto w2 = unit_ball_mass_cached(1, DistanceMode::exact_cc, &cache, 200000, 7);
  EXPECT_EQ(w.value, w2.value);
  std::filesystem::remove_all(dir);
}

TEST(LimitCoefficient, HeisenbergCarriesErrors) {
  const auto c = limit_coefficient(1, 2.0, Branch::heisenberg);
  EXPECT_GT(c.i_std_error, 0.0);
  const double oracle = oracle::heisenberg_constant(2.0) / (2.0 * oracle::cc_unit_ball_volume());
  EXPECT_NEAR(c.i_coeff, oracle, 3.0 * c.i_std_error);
}
