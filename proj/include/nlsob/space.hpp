#pragma once

#include <cmath>
#include <concepts>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "nlsob/errors.hpp"
#include "nlsob/euclidean.hpp"
#include "nlsob/heisenberg.hpp"
#include "nlsob/point.hpp"
#include "nlsob/rng.hpp"

namespace nlsob {

/// What the estimators need from a metric measure space. Measures are
/// written in polar form around x: dm(y) = density(y) * omega' * D r^{D-1} dr
/// dmu(sigma), y = polar_point(x, r, sigma), with mu the law of
/// sample_direction and omega' = unit_ball_mass().
template <class S>
concept MetricMeasureSpace = requires(const S& s, const Point& x, CounterRng& rng) {
  { s.dim() } -> std::convertible_to<std::size_t>;
  { s.homogeneous_dimension() } -> std::convertible_to<double>;
  { s.homogeneous() } -> std::convertible_to<bool>;
  { s.distance(x, x) } -> std::convertible_to<double>;
  { s.ball_measure(x, 1.0) } -> std::same_as<BallMass>;
  { s.unit_ball_mass() } -> std::convertible_to<double>;
  { s.density(x) } -> std::convertible_to<double>;
  { s.polar_point(x, 1.0, x) } -> std::same_as<Point>;
  { s.sample_direction(rng) } -> std::same_as<Point>;
  { s.annulus_sample(x, 0.0, 1.0, rng) } -> std::same_as<Point>;
  { s.rescaled(x, 1.0) } -> std::same_as<S>;
};

static_assert(MetricMeasureSpace<EuclideanSpace>);
static_assert(MetricMeasureSpace<HeisenbergSpace>);

/// Type-erased handle over the concrete spaces. Immutable once built.
class SpaceHandle {
 public:
  using Variant = std::variant<EuclideanSpace, HeisenbergSpace>;

  SpaceHandle(EuclideanSpace s) : v_(std::move(s)) {}
  SpaceHandle(HeisenbergSpace s) : v_(std::move(s)) {}

  template <class F>
  decltype(auto) visit(F&& f) const {
    return std::visit(std::forward<F>(f), v_);
  }

  const EuclideanSpace* euclidean() const noexcept { return std::get_if<EuclideanSpace>(&v_); }
  const HeisenbergSpace* heisenberg() const noexcept { return std::get_if<HeisenbergSpace>(&v_); }

  std::size_t dim() const {
    return visit([](const auto& s) { return s.dim(); });
  }
  double homogeneous_dimension() const {
    return visit([](const auto& s) { return s.homogeneous_dimension(); });
  }
  bool homogeneous() const {
    return visit([](const auto& s) { return s.homogeneous(); });
  }
  double unit_ball_mass() const {
    return visit([](const auto& s) { return s.unit_ball_mass(); });
  }
  std::string name() const {
    return visit([](const auto& s) { return s.name(); });
  }
  double distance(const Point& x, const Point& y) const {
    return visit([&](const auto& s) { return s.distance(x, y); });
  }
  BallMass ball_measure(const Point& x, double r) const {
    return visit([&](const auto& s) { return s.ball_measure(x, r); });
  }
  Point annulus_sample(const Point& x, double r_in, double r_out, CounterRng& rng) const {
    return visit([&](const auto& s) { return s.annulus_sample(x, r_in, r_out, rng); });
  }
  SpaceHandle rescaled(const Point& x, double r) const {
    return visit([&](const auto& s) { return SpaceHandle(s.rescaled(x, r)); });
  }

 private:
  Variant v_;
};

inline BallMass ball_measure(const SpaceHandle& space, const Point& x, double r) {
  return space.ball_measure(x, r);
}

/// Pointed rescaling (X, d/r, m / m(B_r(x)), x).
inline SpaceHandle rescale(const SpaceHandle& space, const Point& x, double r) {
  return space.rescaled(x, r);
}

/// m(B_r(x)) / (omega r^D) for each radius.
template <MetricMeasureSpace S>
std::vector<double> density_estimate(const S& space, const Point& x, std::span<const double> radii) {
  if (radii.empty()) throw DomainError("density_estimate: empty radius list");
  for (std::size_t i = 0; i < radii.size(); ++i) {
    if (!(radii[i] > 0.0)) throw DomainError("density_estimate: radii must be positive");
    if (i > 0 && !(radii[i] < radii[i - 1])) throw DomainError("density_estimate: radii must be strictly decreasing");
  }
  const double D = space.homogeneous_dimension();
  const double w = space.unit_ball_mass();
  std::vector<double> out;
  out.reserve(radii.size());
  for (double r : radii) out.push_back(space.ball_measure(x, r).value / (w * std::pow(r, D)));
  return out;
}

inline std::vector<double> density_estimate(const SpaceHandle& space, const Point& x, std::span<const double> radii) {
  return space.visit([&](const auto& s) { return density_estimate(s, x, radii); });
}

inline constexpr double kDoublingRMin = 1e-3;
inline constexpr double kDoublingRMax = 1e3;

/// Largest observed m(B_{2r}(x)) / m(B_r(x)) over `trials` draws of x
/// (uniform in [-box, box]^dim) and r (log-uniform in [1e-3, 1e3]).
template <MetricMeasureSpace S>
double doubling_estimate(const S& space, std::uint64_t trials, std::uint64_t seed, double box = 10.0) {
  if (trials < 1) throw DomainError("doubling_estimate: trials must be >= 1");
  CounterRng rng(seed, 0x646f75626cULL);
  const double la = std::log(kDoublingRMin);
  const double lb = std::log(kDoublingRMax);
  double best = 0.0;
  for (std::uint64_t i = 0; i < trials; ++i) {
    Point x(space.dim());
    for (std::size_t j = 0; j < space.dim(); ++j) x[j] = rng.uniform(-box, box);
    const double r = std::exp(rng.uniform(la, lb));
    const double ratio = space.ball_measure(x, 2.0 * r).value / space.ball_measure(x, r).value;
    best = std::max(best, ratio);
  }
  return best;
}

inline double doubling_estimate(const SpaceHandle& space, std::uint64_t trials, std::uint64_t seed) {
  return space.visit([&](const auto& s) { return doubling_estimate(s, trials, seed); });
}

}  // namespace nlsob
