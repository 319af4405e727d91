#include <cmath>
#include <numbers>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <gtest/gtest.h>

#include "nlsob/fields.hpp"

using namespace nlsob;
using boost::math::quadrature::gauss_kronrod;

namespace {

double quad(auto f, double a, double b) { return gauss_kronrod<double, 61>::integrate(f, a, b, 20, 1e-13); }

const HeisenbergSpace& h1() {
  static const HeisenbergSpace h(1, DistanceMode::exact_cc);
  return h;
}

// Left-invariant horizontal derivatives by central differences.
Point horizontal_fd(const ScalarField& f, const HPoint& x, double h = 1e-6) {
  Point g(2);
  for (std::size_t j = 0; j < 2; ++j) {
    HPoint e(3);
    e[j] = h;
    g[j] = (f(group_op(x, e)) - f(group_op(x, inverse(e)))) / (2.0 * h);
  }
  return g;
}

Point euclidean_fd(const ScalarField& f, const Point& x, double h = 1e-6) {
  Point g(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) {
    Point a = x, b = x;
    a[j] += h;
    b[j] -= h;
    g[j] = (f(a) - f(b)) / (2.0 * h);
  }
  return g;
}

}  // namespace

TEST(Slope, CatalogExamples) {
  const EuclideanSpace r2(2);
  const auto lin = linear_field(Point{3.0, -4.0});
  EXPECT_DOUBLE_EQ(*lin.analytic_slope(Point{0.2, 0.7}), 5.0);
  EXPECT_DOUBLE_EQ(lip_at(lin, r2, Point{1.0, 1.0}, 1e-3, 10, 1), 5.0);
  const auto tent = tent_field(Point{0.0});
  EXPECT_DOUBLE_EQ(*tent.analytic_slope(Point{0.5}), 1.0);
  const auto hl = horizontal_linear(Point{1.0, 0.0});
  EXPECT_DOUBLE_EQ(*hl.analytic_slope(Point{0.0, 0.0, 0.0}), 1.0);
  EXPECT_DOUBLE_EQ(*hl.analytic_slope(Point{0.3, -2.0, 5.0}), 1.0);
}

TEST(Slope, FiniteDifferenceStabilizes) {
  const EuclideanSpace r1(1);
  auto fd = fd_slope(tent_field(Point{0.0}), r1, Point{0.5}, 64, 3);
  EXPECT_TRUE(fd.stabilized);
  EXPECT_NEAR(fd.estimate, 1.0, 1e-9);
  const auto b = bump_field(Point{0.0, 0.0});
  const EuclideanSpace r2(2);
  const Point x{0.3, 0.2};
  auto fb = fd_slope(b, r2, x, 4000, 5);
  EXPECT_NEAR(fb.estimate, *b.analytic_slope(x), 2e-3 * *b.analytic_slope(x));
}

TEST(Slope, HorizontalLinearOnHeisenbergByFiniteDifferences) {
  const auto hl = horizontal_linear(Point{0.6, 0.8});
  const double s = fd_slope(hl, h1(), HPoint{0.4, 0.1, -0.3}, 2000, 2).estimate;
  EXPECT_NEAR(s, 1.0, 5e-3);
}

TEST(Slope, DegenerateSamplerIsAnError) {
  const EuclideanSpace r1(1);
  EXPECT_THROW(lip_at(tent_field(Point{0.0}), r1, Point{0.5}, 0.0, 10, 1), DomainError);
  EXPECT_THROW(fd_slope_at_radius(tent_field(Point{0.0}), r1, Point{0.5}, 1e-3, 0, 1), DomainError);
}

TEST(Gradient, AnalyticMatchesFiniteDifferences) {
  CounterRng rng(11);
  const std::vector<ScalarField> fields{bump_field(Point{0.1, -0.2}, 1.3, 0.7),
                                        linear_cutoff_field(Point{1.0, 2.0}, Point{0.0, 0.0}, 0.5, 1.5),
                                        product_bump_field(Point{0.0, 0.0}, 1.0, 2.0)};
  for (const auto& f : fields)
    for (int i = 0; i < 200; ++i) {
      const Point x{rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5)};
      const Point g = *f.gradient(x);
      const Point fd = euclidean_fd(f, x);
      ASSERT_NEAR(g[0], fd[0], 1e-6) << f.name();
      ASSERT_NEAR(g[1], fd[1], 1e-6) << f.name();
    }
}

TEST(Gradient, HorizontalCutoffMatchesLeftInvariantDerivatives) {
  const auto f = horizontal_linear_cutoff(Point{0.6, 0.8}, 1, 1.0, 2.0);
  CounterRng rng(12);
  for (int i = 0; i < 300; ++i) {
    const HPoint x{rng.uniform(-1.8, 1.8), rng.uniform(-1.8, 1.8), rng.uniform(-3.0, 3.0)};
    const Point g = *f.gradient(x);
    const Point fd = horizontal_fd(f, x);
    ASSERT_NEAR(g[0], fd[0], 1e-6);
    ASSERT_NEAR(g[1], fd[1], 1e-6);
  }
}

TEST(Metadata, LipBoundDominatesDifferenceQuotients) {
  CounterRng rng(21);
  const EuclideanSpace r2(2);
  const std::vector<ScalarField> fields{tent_field(Point{0.0, 0.0}, 0.8, 1.5), bump_field(Point{0.0, 0.0}),
                                        linear_cutoff_field(Point{1.0, 0.0}, Point{0.0, 0.0}, 0.5, 1.0),
                                        mollified_step_field(Point{0.0, 0.0}, 0.5, 0.2),
                                        product_bump_field(Point{0.0, 0.0})};
  for (const auto& f : fields)
    for (int i = 0; i < 5000; ++i) {
      const Point x{rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)};
      const Point y{rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)};
      const double d = r2.distance(x, y);
      if (d == 0.0) continue;
      ASSERT_LE(std::abs(f.difference(x, y)), f.lip_bound() * d + 1e-12) << f.name();
    }
}

TEST(Metadata, HeisenbergLipBoundAndSupport) {
  CounterRng rng(22);
  const auto f = horizontal_linear_cutoff(Point{1.0, 0.0}, 1, 1.0, 2.0);
  for (int i = 0; i < 3000; ++i) {
    const HPoint x{rng.uniform(-2.5, 2.5), rng.uniform(-2.5, 2.5), rng.uniform(-5.0, 5.0)};
    HPoint y = x;
    for (auto& c : y) c += rng.uniform(-0.3, 0.3);
    ASSERT_LE(std::abs(f.difference(x, y)), f.lip_bound() * h1().distance(x, y) + 1e-12);
    if (h1().distance(HPoint{0.0, 0.0, 0.0}, x) > *f.support_radius()) {
      ASSERT_EQ(f(x), 0.0);
    }
  }
}

TEST(Metadata, SupportRadiusIsRespected) {
  CounterRng rng(23);
  const std::vector<ScalarField> fields{tent_field(Point{0.5, 0.5}, 0.8), bump_field(Point{0.0, 0.0}, 1.2),
                                        product_bump_field(Point{0.0, 0.0})};
  for (const auto& f : fields)
    for (int i = 0; i < 5000; ++i) {
      const Point x{rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0)};
      if (norm(x - f.anchor()) > *f.support_radius()) {
        ASSERT_EQ(f(x), 0.0) << f.name();
      }
    }
}

TEST(Transforms, ScaleShiftAndRescaledMetric) {
  const auto t = tent_field(Point{0.0});
  const auto u = t.scaled(3.0).shifted(2.0);
  EXPECT_DOUBLE_EQ(u(Point{0.5}), 3.5);
  EXPECT_EQ(u.difference(Point{0.1}, Point{0.4}), t.scaled(3.0).difference(Point{0.1}, Point{0.4}));
  EXPECT_DOUBLE_EQ(u.lip_bound(), 3.0);
  const auto r = t.in_rescaled_metric(0.25);
  EXPECT_DOUBLE_EQ(r.lip_bound(), 0.25);
  EXPECT_DOUBLE_EQ(*r.support_radius(), 4.0);
  EXPECT_THROW(t.in_rescaled_metric(0.0), DomainError);
}

TEST(Transforms, CombineIsConservative) {
  const auto f = tent_field(Point{0.0});
  const auto g = bump_field(Point{0.5}, 0.5);
  const auto c = combine(f, 2.0, g, -1.0);
  EXPECT_DOUBLE_EQ(c(Point{0.3}), 2.0 * f(Point{0.3}) - g(Point{0.3}));
  EXPECT_NEAR(c.lip_bound(), 2.0 * f.lip_bound() + g.lip_bound(), 1e-12);
  EXPECT_GE(*c.support_radius(), 1.0);
  EXPECT_THROW(combine(f, 1.0, bump_field(Point{0.0, 0.0}), 1.0), DomainError);
}

TEST(Cheeger, TentOnLine) {
  const EuclideanSpace r1(1);
  const auto e = cheeger_energy(tent_field(Point{0.0}), r1, 2.0);
  EXPECT_NEAR(e.value, 2.0, 1e-12);
  EXPECT_EQ(e.std_error, 0.0);
  EXPECT_NEAR(cheeger_energy(tent_field(Point{0.0}), r1, 3.0).value, 2.0, 1e-12);
}

TEST(Cheeger, BumpOnPlaneMatchesRadialQuadrature) {
  // |grad f|(r) = 2 r f(r) / (1 - r^2)^2 for the unit bump.
  const double oracle = 2.0 * std::numbers::pi * quad(
                                                      [](double r) {
                                                        if (r >= 1.0) return 0.0;
                                                        const double q = 1.0 - r * r;
                                                        const double g = 2.0 * r * std::exp(1.0 - 1.0 / q) / (q * q);
                                                        return g * g * r;
                                                      },
                                                      0.0, 1.0);
  const auto e = cheeger_energy(bump_field(Point{0.0, 0.0}), EuclideanSpace(2), 2.0);
  EXPECT_NEAR(e.value, oracle, 1e-8 * oracle);
}

TEST(Cheeger, LinearCutoffOnPlaneMatchesPolarQuadrature) {
  // The gradient is smooth in the angle and kinks only at the circles r1 and r2.
  const auto f = linear_cutoff_field(Point{1.0, 0.5}, Point{0.0, 0.0}, 0.5, 1.0);
  auto ring = [&](double r) {
    return r * quad(
                   [&](double th) {
                     const Point g = *f.gradient(Point{r * std::cos(th), r * std::sin(th)});
                     return dot(g, g);
                   },
                   0.0, 2.0 * std::numbers::pi);
  };
  const double oracle = quad(ring, 0.0, 0.5) + quad(ring, 0.5, 1.0);
  const auto e = cheeger_energy(f, EuclideanSpace(2), 2.0);
  EXPECT_NEAR(e.value, oracle, 1e-6 * oracle);
}

TEST(Cheeger, WeightedLineUsesDensity) {
  const EuclideanSpace w(1, Weight::quadratic(1.0));
  // Integral of (1 + x^2) over [-1, 1].
  EXPECT_NEAR(cheeger_energy(tent_field(Point{0.0}), w, 2.0).value, 8.0 / 3.0, 1e-10);
}

TEST(Cheeger, MonteCarloOnHeisenbergAgreesWithDeterministicScaling) {
  // Dilation: Ch_p(f o delta_{1/l}) = l^{Q - p} Ch_p(f); check via two cutoff radii.
  CheegerOptions o;
  o.samples = 400000;
  o.batches = 40;
  const auto a = cheeger_energy(horizontal_linear_cutoff(Point{1.0, 0.0}, 1, 1.0, 2.0), h1(), 2.0, o);
  const auto b = cheeger_energy(horizontal_linear_cutoff(Point{1.0, 0.0}, 1, 2.0, 4.0), h1(), 2.0, o);
  // f_2(y) = 2 f_1(delta_{1/2} y): |grad f_2|^2 integrates to 2^Q Ch(f_1).
  EXPECT_NEAR(b.value, 16.0 * a.value, 3.0 * std::hypot(b.std_error, 16.0 * a.std_error));
}

TEST(Cheeger, ConstantAndErrors) {
  EXPECT_EQ(cheeger_energy(constant_field(1, 3.0), EuclideanSpace(1), 2.0).value, 0.0);
  FieldData d;
  d.name = "opaque";
  d.fn = [](const Point& x) { return std::max(0.0, 1.0 - std::abs(x[0])); };
  d.lip_bound = 1.0;
  d.support_radius = 1.0;
  d.anchor = Point(1);
  const ScalarField opaque(d);
  EXPECT_THROW(cheeger_energy(opaque, EuclideanSpace(1), 2.0), DomainError);
  CheegerOptions o;
  o.fd_samples = 32;
  o.rel_tol = 1e-6;
  EXPECT_NEAR(cheeger_energy(opaque, EuclideanSpace(1), 2.0, o).value, 2.0, 1e-3);
  EXPECT_THROW(cheeger_energy(tent_field(Point{0.0}), EuclideanSpace(1), 1.0), DomainError);
}

TEST(MakeField, CatalogAndValidation) {
  const SpaceHandle r1 = EuclideanSpace(1);
  FieldSpec s{"tent", {{"radius", {2.0}}, {"height", {3.0}}}};
  const auto f = make_field(s, r1);
  EXPECT_DOUBLE_EQ(f(Point{1.0}), 1.5);
  try {
    make_field(FieldSpec{"tent", {{"radius", {1.0}}, {"wdith", {1.0}}}}, r1);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "field.wdith");
  }
  try {
    make_field(FieldSpec{"horizontal-linear", {}}, r1);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "field.name");
  }
  const SpaceHandle h = h1();
  EXPECT_THROW(make_field(FieldSpec{"horizontal-linear", {{"direction", {1.0, 1.0}}}}, h), DomainError);
  EXPECT_DOUBLE_EQ(make_field(FieldSpec{"horizontal-linear", {}}, h)(HPoint{3.0, 0.0, 7.0}), 3.0);
}

TEST(HorizontalLinear, GroupLinearAlongItsLine) {
  const auto f = horizontal_linear(Point{1.0, 0.0});
  for (double s : {-2.0, 0.5, 3.0}) {
    EXPECT_DOUBLE_EQ(f(HPoint{s, 0.0, 0.0}), s);
    // f(x y) = f(x) + f(y).
    const HPoint x{0.3, -0.4, 2.0};
    EXPECT_NEAR(f(group_op(x, HPoint{s, 1.0, -1.0})), f(x) + s, 1e-14);
  }
}
