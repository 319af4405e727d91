#include <cmath>
#include <numbers>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <gtest/gtest.h>

#include "nlsob/space.hpp"

using namespace nlsob;
using boost::math::quadrature::gauss_kronrod;

namespace {

double quad(auto f, double a, double b) { return gauss_kronrod<double, 31>::integrate(f, a, b, 15, 1e-14); }

const HeisenbergSpace& h1() {
  static const HeisenbergSpace h(1, DistanceMode::exact_cc);
  return h;
}

}  // namespace

TEST(BallMeasure, LebesguePlane) {
  const SpaceHandle s = EuclideanSpace(2);
  EXPECT_NEAR(ball_measure(s, Point{0.0, 0.0}, 2.0).value, 4.0 * std::numbers::pi, 1e-13);
  EXPECT_EQ(ball_measure(s, Point{0.0, 0.0}, 2.0).std_error, 0.0);
}

TEST(BallMeasure, HeisenbergHomogeneity) {
  const SpaceHandle s = h1();
  const Point o{0.0, 0.0, 0.0};
  EXPECT_NEAR(ball_measure(s, o, 2.0).value, 16.0 * ball_measure(s, o, 1.0).value, 1e-12);
  // Left invariance of Haar measure.
  EXPECT_NEAR(ball_measure(s, Point{0.3, -1.0, 2.0}, 0.7).value, ball_measure(s, o, 0.7).value, 1e-12);
}

TEST(BallMeasure, WeightedLineMatchesQuadrature) {
  const SpaceHandle s = EuclideanSpace(1, Weight::quadratic(1.0));
  const double oracle = quad([](double x) { return 1.0 + x * x; }, -1.0, 1.0);
  EXPECT_NEAR(oracle, 8.0 / 3.0, 1e-14);
  EXPECT_NEAR(ball_measure(s, Point{0.0}, 1.0).value, oracle, 1e-10);
  const double off = quad([](double x) { return 1.0 + x * x; }, 0.5 - 0.3, 0.5 + 0.3);
  EXPECT_NEAR(ball_measure(s, Point{0.5}, 0.3).value, off, 1e-10);
}

TEST(BallMeasure, WeightedPlaneMatchesPolarQuadrature) {
  const EuclideanSpace s(2, Weight::quadratic_bump(1.0, 2.0));
  // Centered ball: radial integral of (1 + (1 - r^2/4)) 2 pi r.
  const double oracle =
      quad([](double r) { return 2.0 * std::numbers::pi * r * (1.0 + std::max(0.0, 1.0 - r * r / 4.0)); }, 0.0, 1.5);
  const auto b = s.ball_measure(Point{0.0, 0.0}, 1.5);
  EXPECT_NEAR(b.value, oracle, 1e-6 * oracle + 3.0 * b.std_error);
}

TEST(BallMeasure, RejectsNonPositiveRadius) {
  const SpaceHandle s = EuclideanSpace(2);
  EXPECT_THROW(ball_measure(s, Point{0.0, 0.0}, 0.0), DomainError);
  EXPECT_THROW(ball_measure(s, Point{0.0, 0.0}, -1.0), DomainError);
}

TEST(Rescale, EuclideanDistancesAndNormalization) {
  const SpaceHandle s = EuclideanSpace(3);
  const Point c{0.1, 0.2, 0.3};
  const SpaceHandle r = rescale(s, c, 0.25);
  const Point u{1.0, 0.0, 0.5};
  const Point v{0.0, -1.0, 0.25};
  EXPECT_NEAR(r.distance(u, v), s.distance(u, v) / 0.25, 1e-13);
  EXPECT_NEAR(ball_measure(r, c, 1.0).value, 1.0, 1e-13);
}

TEST(Rescale, HeisenbergNormalization) {
  const SpaceHandle s = h1();
  const SpaceHandle r = rescale(s, Point{0.0, 0.0, 0.0}, 0.3);
  EXPECT_NEAR(ball_measure(r, Point{0.0, 0.0, 0.0}, 1.0).value, 1.0, 1e-12);
}

TEST(Rescale, ComposesLikeProductOfScales) {
  const SpaceHandle s = EuclideanSpace(2);
  const Point c{0.5, -0.5};
  const SpaceHandle twice = rescale(rescale(s, c, 0.5), c, 0.2);
  const SpaceHandle once = rescale(s, c, 0.1);
  const Point u{0.6, -0.4};
  EXPECT_NEAR(twice.distance(c, u), once.distance(c, u), 1e-12);
  EXPECT_NEAR(ball_measure(twice, c, 0.7).value, ball_measure(once, c, 0.7).value, 1e-12);
}

TEST(Rescale, RejectsNonPositiveScale) {
  const SpaceHandle s = EuclideanSpace(1);
  EXPECT_THROW(rescale(s, Point{0.0}, 0.0), DomainError);
}

TEST(DensityEstimate, Lebesgue) {
  const SpaceHandle s = EuclideanSpace(2);
  const std::vector<double> radii{3.0, 1.0, 0.01};
  for (double v : density_estimate(s, Point{5.0, -2.0}, radii)) EXPECT_NEAR(v, 1.0, 1e-13);
}

TEST(DensityEstimate, WeightedConvergesToWeightAtCenter) {
  const SpaceHandle s = EuclideanSpace(1, Weight::quadratic(1.0));
  const std::vector<double> radii{1.0, 0.1, 0.01, 1e-3};
  const auto d = density_estimate(s, Point{0.0}, radii);
  for (std::size_t i = 0; i < radii.size(); ++i) {
    const double r = radii[i];
    const double oracle = quad([](double x) { return 1.0 + x * x; }, -r, r) / (2.0 * r);
    EXPECT_NEAR(d[i], oracle, 1e-9);
    if (i > 0) {
      EXPECT_LT(std::abs(d[i] - 1.0), std::abs(d[i - 1] - 1.0));
    }
  }
  EXPECT_NEAR(d.back(), 1.0, 1e-6);
}

TEST(DensityEstimate, Heisenberg) {
  const SpaceHandle s = h1();
  const std::vector<double> radii{2.0, 0.5, 1e-3};
  for (double v : density_estimate(s, Point{0.2, 0.1, -0.4}, radii)) EXPECT_NEAR(v, 1.0, 1e-12);
}

TEST(DensityEstimate, Errors) {
  const SpaceHandle s = EuclideanSpace(1);
  EXPECT_THROW(density_estimate(s, Point{0.0}, std::vector<double>{}), DomainError);
  EXPECT_THROW(density_estimate(s, Point{0.0}, std::vector<double>{1.0, -1.0}), DomainError);
}

TEST(Doubling, HomogeneousSpaces) {
  EXPECT_NEAR(doubling_estimate(SpaceHandle(EuclideanSpace(2)), 500, 1), 4.0, 1e-9);
  EXPECT_NEAR(doubling_estimate(SpaceHandle(EuclideanSpace(3)), 500, 1), 8.0, 1e-9);
  EXPECT_NEAR(doubling_estimate(SpaceHandle(h1()), 500, 1), 16.0, 1e-9);
}

TEST(Doubling, BoundedWeightStaysBelowRatioBound) {
  // 0 < w_min <= w <= w_max gives C_D <= 2^n w_max / w_min.
  const SpaceHandle s = EuclideanSpace(1, Weight::quadratic_bump(1.0, 2.0));
  const double c = doubling_estimate(s, 2000, 3);
  EXPECT_GE(c, 2.0 - 1e-9);
  EXPECT_LE(c, 4.0 + 1e-9);
}

TEST(AnnulusSample, LineIsSymmetric) {
  const EuclideanSpace s(1);
  CounterRng rng(17);
  const int n = 1'000'000;
  double m = 0.0, m2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double y = s.annulus_sample(Point{0.0}, 0.0, 1.0, rng)[0];
    ASSERT_LE(std::abs(y), 1.0);
    m += y;
    m2 += y * y;
  }
  const double se = std::sqrt(m2 / n / n);
  EXPECT_NEAR(m / n, 0.0, 3.0 * se);
}

TEST(AnnulusSample, PlaneAreaRatio) {
  const EuclideanSpace s(2);
  CounterRng rng(23);
  const int n = 400000;
  int inner = 0;
  for (int i = 0; i < n; ++i) inner += norm(s.annulus_sample(Point{0.0, 0.0}, 0.0, 2.0, rng)) < 1.0;
  const double frac = static_cast<double>(inner) / n;
  EXPECT_NEAR(frac, 0.25, 3.0 * std::sqrt(0.25 * 0.75 / n));
}

TEST(AnnulusSample, WeightedLineFollowsDensity) {
  // Mean of |y| under (1 + y^2) dy on [-1, 1].
  const EuclideanSpace s(1, Weight::quadratic(1.0));
  const double oracle =
      quad([](double x) { return x * (1.0 + x * x); }, 0.0, 1.0) / quad([](double x) { return 1.0 + x * x; }, 0.0, 1.0);
  EXPECT_NEAR(oracle, 0.5625, 1e-14);
  CounterRng rng(29);
  const int n = 400000;
  double m = 0.0, m2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double a = std::abs(s.annulus_sample(Point{0.0}, 0.0, 1.0, rng)[0]);
    m += a;
    m2 += a * a;
  }
  const double mean = m / n;
  const double se = std::sqrt((m2 / n - mean * mean) / n);
  EXPECT_NEAR(mean, oracle, 3.0 * se);
}

TEST(AnnulusSample, RespectsRadiiOnHeisenberg) {
  const HeisenbergSpace& s = h1();
  CounterRng rng(31);
  const Point x{0.4, -0.2, 0.1};
  for (int i = 0; i < 2000; ++i) {
    const double d = s.distance(x, s.annulus_sample(x, 0.5, 1.0, rng));
    ASSERT_GE(d, 0.5 - 1e-9);
    ASSERT_LE(d, 1.0 + 1e-9);
  }
  EXPECT_THROW(s.annulus_sample(x, 1.0, 1.0, rng), DomainError);
}
