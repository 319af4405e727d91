#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "nlsob/errors.hpp"
#include "nlsob/point.hpp"
#include "nlsob/quadrature.hpp"
#include "nlsob/rng.hpp"

namespace nlsob {

/// Lebesgue measure of the unit ball of R^n.
inline double omega_n(int n) {
  if (n < 1) throw DomainError("omega_n: dimension must be >= 1");
  return std::pow(std::numbers::pi, 0.5 * n) / std::tgamma(0.5 * n + 1.0);
}

struct BallMass {
  double value = 0.0;
  double std_error = 0.0;
};

/// Scale data of a (possibly) rescaled space: distances are divided by
/// `length`, measures by `mass`. Points keep their base coordinates.
struct Frame {
  double length = 1.0;
  double mass = 1.0;
  std::optional<Point> center;
};

/// Continuous density w.r.t. Lebesgue measure with declared bounds.
/// `w_max` may be +inf; `local_max(c, R)` must then bound w on B_R(c).
struct Weight {
  std::string name;
  std::vector<double> params;
  std::function<double(const Point&)> fn;
  double w_min = 1.0;
  double w_max = 1.0;
  std::function<double(const Point&, double)> local_max;
  /// Antiderivative of t -> w(t) on the line, used for balls in R^1.
  std::function<double(double)> primitive;

  double operator()(const Point& x) const { return fn(x); }
  bool bounded() const noexcept { return std::isfinite(w_max); }

  static Weight constant(double c) {
    if (!(c > 0.0)) throw DomainError("constant weight must be positive");
    Weight w;
    w.name = "constant";
    w.params = {c};
    w.fn = [c](const Point&) { return c; };
    w.w_min = w.w_max = c;
    w.local_max = [c](const Point&, double) { return c; };
    w.primitive = [c](double t) { return c * t; };
    return w;
  }

  /// w(x) = 1 + a|x|^2, a >= 0; bounded below by 1, unbounded above.
  static Weight quadratic(double a) {
    if (!(a >= 0.0)) throw DomainError("quadratic weight needs a >= 0");
    Weight w;
    w.name = "quadratic";
    w.params = {a};
    w.fn = [a](const Point& x) { return 1.0 + a * dot(x, x); };
    w.w_min = 1.0;
    w.w_max = a == 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
    w.local_max = [a](const Point& c, double R) {
      const double m = norm(c) + R;
      return 1.0 + a * m * m;
    };
    w.primitive = [a](double t) { return t + a * t * t * t / 3.0; };
    return w;
  }

  /// w(x) = 1 + a (1 - |x|^2/s^2)_+, a > -1, s > 0.
  static Weight quadratic_bump(double a, double s) {
    if (!(a > -1.0) || !(s > 0.0)) throw DomainError("quadratic-bump weight needs a > -1, s > 0");
    Weight w;
    w.name = "quadratic-bump";
    w.params = {a, s};
    w.fn = [a, s](const Point& x) { return 1.0 + a * std::max(0.0, 1.0 - dot(x, x) / (s * s)); };
    w.w_min = std::min(1.0, 1.0 + a);
    w.w_max = std::max(1.0, 1.0 + a);
    const double hi = w.w_max;
    w.local_max = [hi](const Point&, double) { return hi; };
    w.primitive = [a, s](double t) {
      const double c = std::clamp(t, -s, s);
      return t + a * (c - c * c * c / (3.0 * s * s));
    };
    return w;
  }
};

/// R^n with the Euclidean distance and either Lebesgue measure or w dx.
class EuclideanSpace {
 public:
  explicit EuclideanSpace(int n) : n_(check_dim(n)), omega_(omega_n(n)) {}

  EuclideanSpace(int n, Weight w)
      : n_(check_dim(n)), omega_(omega_n(n)), weight_(std::make_shared<const Weight>(std::move(w))) {
    if (!weight_->fn) throw DomainError("EuclideanSpace: weight without function");
    if (!(weight_->w_min > 0.0) || !(weight_->w_max >= weight_->w_min))
      throw DomainError("EuclideanSpace: weight bounds must satisfy 0 < w_min <= w_max");
  }

  int n() const noexcept { return n_; }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(n_); }
  double homogeneous_dimension() const noexcept { return n_; }
  /// Number of coordinates that carry a horizontal (first-order) direction.
  std::size_t horizontal_dim() const noexcept { return dim(); }

  bool weighted() const noexcept { return static_cast<bool>(weight_); }
  const Weight* weight() const noexcept { return weight_.get(); }
  /// True when m(B_r(x)) = unit_ball_mass() * r^D exactly for all x, r.
  bool homogeneous() const noexcept { return !weight_; }
  const Frame& frame() const noexcept { return frame_; }

  std::string name() const {
    std::string s = "euclidean(n=" + std::to_string(n_);
    if (weight_) s += ", weight=" + weight_->name;
    if (frame_.center) s += ", rescaled";
    return s + ")";
  }

  double distance(const Point& x, const Point& y) const {
    check_point(x);
    check_point(y);
    return norm(y - x) / frame_.length;
  }

  /// omega' such that the reference measure of a ball of radius r is omega' r^n.
  double unit_ball_mass() const noexcept {
    return omega_ * std::pow(frame_.length, n_) / frame_.mass;
  }

  /// Density of the measure w.r.t. the reference measure (Lebesgue / mass).
  double density(const Point& y) const { return weight_ ? (*weight_)(y) : 1.0; }

  BallMass ball_measure(const Point& x, double r) const {
    if (!(r > 0.0)) throw DomainError("ball_measure: radius must be positive");
    check_point(x);
    const double R = r * frame_.length;
    if (!weight_) return {omega_ * std::pow(R, n_) / frame_.mass, 0.0};
    auto m = weighted_ball(x, R);
    return {m.value / frame_.mass, m.std_error / frame_.mass};
  }

  /// Point at distance r from x along the unit direction sigma.
  Point polar_point(const Point& x, double r, const Point& sigma) const {
    Point y = x;
    const double s = r * frame_.length;
    for (std::size_t i = 0; i < dim(); ++i) y[i] += s * sigma[i];
    return y;
  }

  /// Uniform direction on S^{n-1} (the cone measure of the unit ball).
  Point sample_direction(CounterRng& rng) const {
    Point s(dim());
    if (n_ == 1) {
      s[0] = rng.uniform() < 0.5 ? -1.0 : 1.0;
      return s;
    }
    double nn = 0.0;
    do {
      for (std::size_t i = 0; i < dim(); ++i) s[i] = rng.normal();
      nn = norm(s);
    } while (!(nn > 1e-300));
    return s * (1.0 / nn);
  }

  /// Draws y from m restricted to B_{r_out}(x) \ B_{r_in}(x).
  Point annulus_sample(const Point& x, double r_in, double r_out, CounterRng& rng) const {
    if (!(r_in >= 0.0) || !(r_out > r_in))
      throw DomainError("annulus_sample: need 0 <= r_in < r_out");
    check_point(x);
    if (!weight_) return lebesgue_annulus(x, r_in, r_out, rng);
    const double bound = weight_->local_max(x, r_out * frame_.length);
    if (!(bound >= weight_->w_min) || !std::isfinite(bound))
      throw NumericalFailure("annulus_sample: no finite weight bound on the ball");
    for (int attempt = 0; attempt < 10'000'000; ++attempt) {
      Point y = lebesgue_annulus(x, r_in, r_out, rng);
      if (rng.uniform() * bound <= (*weight_)(y)) return y;
    }
    throw NumericalFailure("annulus_sample: rejection sampler exhausted its attempts");
  }

  /// Pointed rescaled space (X, d/r, m / m(B_r(x)), x).
  EuclideanSpace rescaled(const Point& x, double r) const {
    if (!(r > 0.0)) throw DomainError("rescale: scale must be positive");
    EuclideanSpace out = *this;
    const double mass = ball_measure(x, r).value;
    out.frame_.length = frame_.length * r;
    out.frame_.mass = frame_.mass * mass;
    out.frame_.center = x;
    return out;
  }

  /// Displacement used by linear blow-up models, in base coordinates.
  Point horizontal_displacement(const Point& x, const Point& y) const { return y - x; }

  /// Samples for the n >= 3 weighted ball-measure estimator.
  void set_ball_mc_samples(std::uint64_t shells, std::uint64_t per_shell) {
    if (shells == 0 || per_shell < 2) throw DomainError("ball MC needs shells >= 1 and per_shell >= 2");
    shells_ = shells;
    per_shell_ = per_shell;
  }

 private:
  static int check_dim(int n) {
    if (n < 1 || static_cast<std::size_t>(n) > kMaxDim)
      throw DomainError("EuclideanSpace: dimension out of range");
    return n;
  }

  void check_point(const Point& x) const {
    if (x.size() != dim()) throw DomainError("EuclideanSpace: point dimension mismatch");
  }

  Point lebesgue_annulus(const Point& x, double r_in, double r_out, CounterRng& rng) const {
    const double a = std::pow(r_in, n_);
    const double b = std::pow(r_out, n_);
    const double r = std::pow(a + rng.uniform() * (b - a), 1.0 / n_);
    return polar_point(x, r, sample_direction(rng));
  }

  BallMass weighted_ball(const Point& x, double R) const {
    const Weight& w = *weight_;
    QuadOptions opt;
    opt.abs_tol = 0.0;
    opt.rel_tol = 1e-11;
    if (n_ == 1) {
      // The primitive cancels badly on balls much smaller than |x|.
      if (w.primitive && R > 1e-3 * (1.0 + std::abs(x[0])))
        return {w.primitive(x[0] + R) - w.primitive(x[0] - R), 0.0};
      // Offsets from x, so the interval keeps its exact length 2R.
      std::vector<double> pts{-R};
      if (w.name == "quadratic-bump") {
        for (double k : {-w.params[1], 0.0, w.params[1]})
          if (k - x[0] > -R && k - x[0] < R) pts.push_back(k - x[0]);
      }
      pts.push_back(R);
      auto r = integrate([&](double u) { return w(Point{x[0] + u}); }, std::span<const double>(pts), opt);
      return {r.value, 0.0};
    }
    if (n_ == 2) {
      auto ring = [&](double rho) {
        auto g = [&](double th) { return w(Point{x[0] + rho * std::cos(th), x[1] + rho * std::sin(th)}); };
        return rho * integrate(g, 0.0, 2.0 * std::numbers::pi, opt).value;
      };
      return {integrate(ring, 0.0, R, opt).value, 0.0};
    }
    // Stratified radial shells of equal Lebesgue volume; the stream is keyed
    // on (x, R) so the estimate is a deterministic function of its inputs.
    std::uint64_t key = mix64(std::bit_cast<std::uint64_t>(R));
    for (double c : x) key = mix64(key ^ std::bit_cast<std::uint64_t>(c));
    CounterRng rng(key, 0x6d617373ULL);
    const double total = omega_ * std::pow(R, n_);
    const double shell_vol = total / static_cast<double>(shells_);
    double value = 0.0;
    double var = 0.0;
    for (std::uint64_t k = 0; k < shells_; ++k) {
      const double a = static_cast<double>(k) / static_cast<double>(shells_);
      const double b = static_cast<double>(k + 1) / static_cast<double>(shells_);
      double s = 0.0;
      double s2 = 0.0;
      for (std::uint64_t i = 0; i < per_shell_; ++i) {
        const double r = R * std::pow(a + rng.uniform() * (b - a), 1.0 / n_);
        Point y = x;
        const Point dir = sample_direction(rng);
        for (std::size_t j = 0; j < dim(); ++j) y[j] += r * dir[j];
        const double v = w(y);
        s += v;
        s2 += v * v;
      }
      const double m = s / static_cast<double>(per_shell_);
      const double sv = std::max(0.0, (s2 - s * m) / static_cast<double>(per_shell_ - 1));
      value += shell_vol * m;
      var += shell_vol * shell_vol * sv / static_cast<double>(per_shell_);
    }
    return {value, std::sqrt(var)};
  }

  int n_;
  double omega_;
  std::shared_ptr<const Weight> weight_;
  Frame frame_;
  std::uint64_t shells_ = 64;
  std::uint64_t per_shell_ = 512;
};

}  // namespace nlsob
