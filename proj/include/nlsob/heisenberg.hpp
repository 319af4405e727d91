#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <tuple>

#include "nlsob/errors.hpp"
#include "nlsob/euclidean.hpp"
#include "nlsob/parallel.hpp"
#include "nlsob/point.hpp"
#include "nlsob/rng.hpp"

namespace nlsob {

/// Points of H^n are Points of dimension 2n+1 laid out as
/// (zeta_1..zeta_n, eta_1..eta_n, t), with z = zeta + i eta.
using HPoint = Point;

enum class DistanceMode { exact_cc, koranyi_gauge };

inline std::string to_string(DistanceMode m) {
  return m == DistanceMode::exact_cc ? "exact_cc" : "koranyi_gauge";
}

inline int heisenberg_n(const HPoint& x) {
  const auto d = x.size();
  if (d < 3 || d % 2 == 0) throw DomainError("HPoint: dimension must be 2n+1 with n >= 1");
  return static_cast<int>((d - 1) / 2);
}

inline HPoint make_hpoint(std::span<const double> zeta, std::span<const double> eta, double t) {
  if (zeta.size() != eta.size() || zeta.empty()) throw DomainError("make_hpoint: zeta/eta size mismatch");
  const auto n = zeta.size();
  HPoint x(2 * n + 1);
  for (std::size_t j = 0; j < n; ++j) {
    x[j] = zeta[j];
    x[n + j] = eta[j];
  }
  x[2 * n] = t;
  return x;
}

/// (z, t)(z', t') = (z + z', t + t' + 2 Im<z, conj z'>).
inline HPoint group_op(const HPoint& x, const HPoint& y) {
  if (x.size() != y.size()) throw DomainError("group_op: dimension mismatch");
  const auto n = static_cast<std::size_t>(heisenberg_n(x));
  HPoint out(x.size());
  double twist = 0.0;
  for (std::size_t j = 0; j < n; ++j) twist += x[n + j] * y[j] - x[j] * y[n + j];
  for (std::size_t j = 0; j < 2 * n; ++j) out[j] = x[j] + y[j];
  out[2 * n] = x[2 * n] + y[2 * n] + 2.0 * twist;
  return out;
}

inline HPoint inverse(const HPoint& x) {
  heisenberg_n(x);
  HPoint out = x;
  out *= -1.0;
  return out;
}

/// delta_lambda(z, t) = (lambda z, lambda^2 t).
inline HPoint dilate(double lambda, const HPoint& x) {
  if (!(lambda > 0.0)) throw DomainError("dilate: lambda must be positive");
  const auto n = static_cast<std::size_t>(heisenberg_n(x));
  HPoint out = x;
  for (std::size_t j = 0; j < 2 * n; ++j) out[j] *= lambda;
  out[2 * n] *= lambda * lambda;
  return out;
}

inline double horizontal_norm(const HPoint& x) {
  const auto n = static_cast<std::size_t>(heisenberg_n(x));
  double s = 0.0;
  for (std::size_t j = 0; j < 2 * n; ++j) s += x[j] * x[j];
  return std::sqrt(s);
}

/// Koranyi gauge (|z|^4 + t^2)^{1/4}.
inline double koranyi_gauge(const HPoint& x) {
  const double w = horizontal_norm(x);
  const double t = x[x.size() - 1];
  return std::sqrt(std::sqrt(w * w * w * w + t * t));
}

struct CcOptions {
  double rel_tol = 1e-13;
  int max_iter = 200;
};

namespace detail {

// mu(phi) = (phi - sin phi) / (1 - cos phi): ratio |t| / |z|^2 reached by the
// geodesic whose projection sweeps the angle phi.
inline double cc_mu(double phi) {
  if (phi == 0.0) return 0.0;
  const double p2 = phi * phi;
  double num;
  if (phi < 0.1)
    num = phi * p2 / 6.0 * (1.0 - p2 / 20.0 * (1.0 - p2 / 42.0 * (1.0 - p2 / 72.0)));
  else
    num = phi - std::sin(phi);
  const double s = std::sin(0.5 * phi);
  return num / (2.0 * s * s);
}

inline double cc_mu_prime(double phi, double mu) {
  if (phi == 0.0) return 1.0 / 3.0;
  return 1.0 - mu * std::cos(0.5 * phi) / std::sin(0.5 * phi);
}

// nu(psi) = 1 / mu(2 pi - psi).
inline double cc_nu(double psi) {
  const double s = std::sin(0.5 * psi);
  return 2.0 * s * s / (2.0 * std::numbers::pi - psi + std::sin(psi));
}

inline double cc_nu_prime(double psi, double nu) {
  const double e = 2.0 * std::numbers::pi - psi + std::sin(psi);
  const double s = std::sin(0.5 * psi);
  return (std::sin(psi) + nu * 2.0 * s * s) / e;
}

// Safeguarded Newton for an increasing g on [lo, hi] with g(lo) < target < g(hi).
template <class G, class DG>
double solve_increasing(G g, DG dg, double target, double lo, double hi, double x0, const CcOptions& opt) {
  double x = std::clamp(x0, lo, hi);
  for (int it = 0; it < opt.max_iter; ++it) {
    const double gx = g(x);
    const double r = gx - target;
    if (r == 0.0) return x;
    if (r < 0.0)
      lo = x;
    else
      hi = x;
    const double d = dg(x, gx);
    double next = (d > 0.0 && std::isfinite(d)) ? x - r / d : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - x) <= opt.rel_tol * std::abs(next) || hi - lo <= opt.rel_tol * std::abs(hi))
      return next;
    x = next;
  }
  throw NumericalFailure("cc_distance: geodesic shooting did not converge");
}

}  // namespace detail

/// Carnot-Caratheodory distance from the origin to a point with |z| = w and
/// |t| = tau, for the group law with the factor 2 Im<z, conj z'>.
inline double cc_norm_from(double w, double tau, const CcOptions& opt = {}) {
  w = std::abs(w);
  tau = std::abs(tau);
  constexpr double pi = std::numbers::pi;
  if (tau == 0.0) return w;
  if (w == 0.0) return std::sqrt(pi * tau);
  if (w * w < 1e-20 * tau) return std::sqrt(pi * tau) - w;  // near-vertical branch
  const double c = tau / (w * w);
  if (c < 1e-6) return w * (1.0 + 0.375 * c * c);
  if (c <= 1.0) {
    // mu(2.6) > 1, so the root lies in (0, 2.6).
    const double phi = detail::solve_increasing(detail::cc_mu, detail::cc_mu_prime, c, 0.0, 2.6, 3.0 * c, opt);
    return w * (0.5 * phi) / std::sin(0.5 * phi);
  }
  // nu(2 pi - 2.3) > 1 > 1/c, so the root lies in (0, 2 pi - 2.3).
  const double inv = 1.0 / c;
  const double psi = detail::solve_increasing(detail::cc_nu, detail::cc_nu_prime, inv, 0.0, 2.0 * pi - 2.3,
                                              std::sqrt(4.0 * pi * inv), opt);
  const double a = 2.0 * pi - psi;
  return std::sqrt(tau * a * a / (2.0 * (a + std::sin(psi))));
}

inline double cc_norm(const HPoint& x, const CcOptions& opt = {}) {
  return cc_norm_from(horizontal_norm(x), x[x.size() - 1], opt);
}

/// d(x, y) = d(0, x^{-1} y) by left invariance.
inline double cc_distance(const HPoint& x, const HPoint& y, const CcOptions& opt = {}) {
  return cc_norm(group_op(inverse(x), y), opt);
}

inline double homogeneous_norm(const HPoint& x, DistanceMode mode, const CcOptions& opt = {}) {
  return mode == DistanceMode::exact_cc ? cc_norm(x, opt) : koranyi_gauge(x);
}

/// Half-width of a box in t containing the unit ball of the chosen norm.
inline double unit_ball_t_extent(DistanceMode mode) {
  return mode == DistanceMode::exact_cc ? 2.0 / std::numbers::pi : 1.0;
}

inline constexpr std::uint64_t kUnitBallSamples = 4'000'000;
inline constexpr std::uint64_t kUnitBallSeed = 0x48616172ULL;

/// Haar measure of the unit ball by Monte Carlo over a bounding box
/// |zeta_j|, |eta_j| <= 1, |t| <= t_extent.
inline BallMass unit_ball_mass_mc(int n, DistanceMode mode, std::uint64_t samples, std::uint64_t seed,
                                  int jobs = 1) {
  if (n < 1 || static_cast<std::size_t>(2 * n + 1) > kMaxDim) throw DomainError("H^n: n out of range");
  const double te = unit_ball_t_extent(mode);
  const double box = std::pow(2.0, 2 * n) * 2.0 * te;
  BatchOptions bo;
  bo.samples = samples;
  bo.batches = 40;
  bo.jobs = jobs;
  const auto dim = static_cast<std::size_t>(2 * n + 1);
  auto r = run_batches(CounterRng(seed, 0x756e6974ULL), bo, [&](CounterRng& rng) {
    HPoint x(dim);
    for (std::size_t j = 0; j + 1 < dim; ++j) x[j] = rng.uniform(-1.0, 1.0);
    x[dim - 1] = rng.uniform(-te, te);
    return homogeneous_norm(x, mode) <= 1.0 ? 1.0 : 0.0;
  });
  return {box * r.mean, box * r.std_error};
}

/// Process-wide memo of unit_ball_mass_mc at the default budget.
inline BallMass default_unit_ball_mass(int n, DistanceMode mode) {
  static std::mutex mu;
  static std::map<std::pair<int, int>, BallMass> memo;
  std::lock_guard lock(mu);
  const auto key = std::make_pair(n, static_cast<int>(mode));
  if (auto it = memo.find(key); it != memo.end()) return it->second;
  const auto v = unit_ball_mass_mc(n, mode, kUnitBallSamples, kUnitBallSeed);
  memo.emplace(key, v);
  return v;
}

/// H^n with Haar (Lebesgue) measure and either the CC distance or the
/// Koranyi gauge distance N(x^{-1} y).
class HeisenbergSpace {
 public:
  explicit HeisenbergSpace(int n, DistanceMode mode = DistanceMode::exact_cc,
                           std::optional<BallMass> unit_ball = std::nullopt, CcOptions cc = {})
      : n_(n), mode_(mode), cc_(cc) {
    if (n < 1 || static_cast<std::size_t>(2 * n + 1) > kMaxDim) throw DomainError("H^n: n out of range");
    omega_ = unit_ball ? *unit_ball : default_unit_ball_mass(n, mode);
    if (!(omega_.value > 0.0)) throw DomainError("H^n: unit ball mass must be positive");
  }

  int n() const noexcept { return n_; }
  DistanceMode mode() const noexcept { return mode_; }
  const CcOptions& cc_options() const noexcept { return cc_; }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(2 * n_ + 1); }
  double homogeneous_dimension() const noexcept { return 2.0 * n_ + 2.0; }
  std::size_t horizontal_dim() const noexcept { return static_cast<std::size_t>(2 * n_); }
  bool weighted() const noexcept { return false; }
  bool homogeneous() const noexcept { return true; }
  const Frame& frame() const noexcept { return frame_; }
  /// Unit-ball Haar mass in the base frame, with its Monte Carlo error.
  const BallMass& base_unit_ball() const noexcept { return omega_; }

  std::string name() const {
    std::string s = "heisenberg(n=" + std::to_string(n_) + ", mode=" + to_string(mode_);
    if (frame_.center) s += ", rescaled";
    return s + ")";
  }

  double norm_of(const HPoint& x) const { return homogeneous_norm(x, mode_, cc_); }

  double distance(const HPoint& x, const HPoint& y) const {
    check_point(x);
    check_point(y);
    return norm_of(group_op(inverse(x), y)) / frame_.length;
  }

  double unit_ball_mass() const noexcept {
    return omega_.value * std::pow(frame_.length, homogeneous_dimension()) / frame_.mass;
  }

  double density(const HPoint&) const noexcept { return 1.0; }

  BallMass ball_measure(const HPoint& x, double r) const {
    if (!(r > 0.0)) throw DomainError("ball_measure: radius must be positive");
    check_point(x);
    const double s = std::pow(r * frame_.length, homogeneous_dimension()) / frame_.mass;
    return {omega_.value * s, omega_.std_error * s};
  }

  HPoint polar_point(const HPoint& x, double r, const HPoint& sigma) const {
    return group_op(x, dilate(r * frame_.length, sigma));
  }

  /// Direction on the unit sphere distributed by the cone measure of the unit ball.
  HPoint sample_direction(CounterRng& rng) const {
    const double te = unit_ball_t_extent(mode_);
    HPoint z(dim());
    for (int attempt = 0; attempt < 1'000'000; ++attempt) {
      for (std::size_t j = 0; j + 1 < dim(); ++j) z[j] = rng.uniform(-1.0, 1.0);
      z[dim() - 1] = rng.uniform(-te, te);
      const double nz = norm_of(z);
      if (nz <= 1.0 && nz > 1e-12) return dilate(1.0 / nz, z);
    }
    throw NumericalFailure("sample_direction: rejection sampler exhausted its attempts");
  }

  HPoint annulus_sample(const HPoint& x, double r_in, double r_out, CounterRng& rng) const {
    if (!(r_in >= 0.0) || !(r_out > r_in)) throw DomainError("annulus_sample: need 0 <= r_in < r_out");
    check_point(x);
    const double Q = homogeneous_dimension();
    const double a = std::pow(r_in, Q);
    const double b = std::pow(r_out, Q);
    const double r = std::pow(a + rng.uniform() * (b - a), 1.0 / Q);
    return polar_point(x, r, sample_direction(rng));
  }

  HeisenbergSpace rescaled(const HPoint& x, double r) const {
    if (!(r > 0.0)) throw DomainError("rescale: scale must be positive");
    HeisenbergSpace out = *this;
    const double mass = ball_measure(x, r).value;
    out.frame_.length = frame_.length * r;
    out.frame_.mass = frame_.mass * mass;
    out.frame_.center = x;
    return out;
  }

  /// Horizontal part of x^{-1} y (the z-coordinates add under the group law).
  Point horizontal_displacement(const HPoint& x, const HPoint& y) const {
    Point d(horizontal_dim());
    for (std::size_t j = 0; j < horizontal_dim(); ++j) d[j] = y[j] - x[j];
    return d;
  }

 private:
  void check_point(const HPoint& x) const {
    if (x.size() != dim()) throw DomainError("HeisenbergSpace: point dimension mismatch");
  }

  int n_;
  DistanceMode mode_;
  CcOptions cc_;
  BallMass omega_;
  Frame frame_;
};

struct GaugeEquivalence {
  double c_lower = 0.0;  // min of d_cc / gauge
  double c_upper = 0.0;  // max of d_cc / gauge
  std::uint64_t pairs = 0;
};

/// Fits c, C with c N(x^{-1}y) <= d_cc(x, y) <= C N(x^{-1}y) over random pairs.
inline GaugeEquivalence fit_gauge_equivalence(int n, std::uint64_t pairs, std::uint64_t seed, double scale = 2.0) {
  CounterRng rng(seed, 0x67617567ULL);
  const auto dim = static_cast<std::size_t>(2 * n + 1);
  GaugeEquivalence g{std::numeric_limits<double>::infinity(), 0.0, pairs};
  for (std::uint64_t i = 0; i < pairs; ++i) {
    HPoint x(dim), y(dim);
    for (std::size_t j = 0; j < dim; ++j) {
      x[j] = rng.uniform(-scale, scale);
      y[j] = rng.uniform(-scale, scale);
    }
    const HPoint v = group_op(inverse(x), y);
    const double N = koranyi_gauge(v);
    if (!(N > 0.0)) continue;
    const double ratio = cc_norm(v) / N;
    g.c_lower = std::min(g.c_lower, ratio);
    g.c_upper = std::max(g.c_upper, ratio);
  }
  return g;
}

}  // namespace nlsob
