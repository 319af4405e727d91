#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string>
#include <type_traits>
#include <vector>

#include "nlsob/errors.hpp"
#include "nlsob/estimate.hpp"
#include "nlsob/fields.hpp"
#include "nlsob/heisenberg.hpp"
#include "nlsob/parallel.hpp"
#include "nlsob/quadrature.hpp"
#include "nlsob/rng.hpp"
#include "nlsob/space.hpp"

namespace nlsob {

enum class Route { automatic, deterministic, monte_carlo };

struct EstimatorOptions {
  std::uint64_t samples = 1'000'000;
  int batches = 32;
  int jobs = 1;
  std::uint64_t seed = 1;
  Route route = Route::automatic;
  /// Relative tolerance of the outer (x) quadrature; the inner one is 100x tighter.
  double rel_tol = 1e-6;
  /// Flag Monte Carlo results whose std_error exceeds this (0 disables).
  double target_error = 0.0;
  /// Initial outer padding R_tail on weighted spaces (doubled until the far-field bound is small).
  double r_tail = 4.0;
  double tail_fraction = 0.01;
  int max_tail_doublings = 6;
};

namespace detail {

inline constexpr double kMaxRadius = 1e100;
inline constexpr double kLinearization = 1e-6;
inline constexpr double kNearWeight = 0.75;

enum class Near { cutoff, diagonal };

// Inner integral in polar form: prefactor * E_sigma int g(r, sigma) r^{-1-kappa} dr,
// g = h(|f(y) - f(x)|) * eta * sym.
struct KernelPlan {
  double kappa = 2.0;
  Near near = Near::cutoff;
  double r_cut = 0.0;  // cutoff: exact lower limit; diagonal: split radius r1
  double alpha = 1.0;  // diagonal: g ~ r^{kappa + alpha} near r = 0
  bool literal = false;
  bool symmetric = false;
  double support = 0.0;
  Point anchor;
  double level = 0.0;  // h jumps where |f(x) - f(y)| crosses this value (0: no jump)
};

template <class S>
bool outside_support(const S& space, const Point& a, const Point& y, double R) {
  if constexpr (std::is_same_v<S, HeisenbergSpace>) {
    const double L = space.frame().length;
    const double N = koranyi_gauge(group_op(inverse(a), y)) / L;
    if (N > R) return true;
    if (space.mode() == DistanceMode::koranyi_gauge) return false;
    if (std::sqrt(std::numbers::pi) * N <= R) return false;
  }
  return space.distance(a, y) > R;
}

template <class S, class H>
struct Pair {
  const S& space;
  const ScalarField& f;
  const H& h;
  const KernelPlan& plan;

  double prefactor() const {
    const double D = space.homogeneous_dimension();
    return plan.literal ? D * space.unit_ball_mass() : D;
  }

  double g(const Point& x, double r, const Point& sigma) const {
    r = std::min(r, kMaxRadius);
    const Point y = space.polar_point(x, r, sigma);
    const double hv = h(std::abs(f.difference(x, y)));
    if (hv == 0.0) return 0.0;
    double eta = 1.0;
    if (plan.literal) {
      eta = space.density(y);
    } else if (!space.homogeneous()) {
      const double D = space.homogeneous_dimension();
      eta = space.density(y) * space.unit_ball_mass() * std::pow(r, D) / space.ball_measure(x, r).value;
    }
    double sym = 1.0;
    if (plan.symmetric && outside_support(space, plan.anchor, y, plan.support)) sym = 2.0;
    return hv * eta * sym;
  }

  double sample(const Point& x, CounterRng& rng) const {
    const Point sigma = space.sample_direction(rng);
    const double k = plan.kappa;
    if (plan.near == Near::cutoff) {
      const double r = plan.r_cut * std::pow(rng.uniform(), -1.0 / k);
      // g r^{-1-k} over the Pareto density k r0^k r^{-1-k}.
      return prefactor() * g(x, r, sigma) / (k * std::pow(plan.r_cut, k));
    }
    const double r1 = plan.r_cut;
    const double a = plan.alpha;
    const double r_lin = kLinearization * r1;
    const double lin = g(x, r_lin, sigma) * std::pow(r_lin, -k) / a;
    const double va = std::pow(r_lin, a);
    const double vb = std::pow(r1, a);
    double val;
    if (rng.uniform() < kNearWeight) {
      const double r = std::pow(va + rng.uniform() * (vb - va), 1.0 / a);
      const double q = kNearWeight * a * std::pow(r, a - 1.0) / (vb - va);
      val = g(x, r, sigma) * std::pow(r, -1.0 - k) / q;
    } else {
      const double r = r1 * std::pow(rng.uniform(), -1.0 / k);
      val = g(x, r, sigma) / ((1.0 - kNearWeight) * k * std::pow(r1, k));
    }
    return prefactor() * (lin + val);
  }
};

struct Tally {
  long evaluations = 0;
  double error = 0.0;
  bool converged = true;
  void add(const QuadResult& r, double weight = 1.0) {
    evaluations += r.evaluations;
    error += std::abs(weight) * r.error;
    converged = converged && r.converged;
  }
};

inline std::vector<double> mapped_points(double lo, double hi, std::vector<double> pts) {
  pts.push_back(lo);
  pts.push_back(hi);
  std::sort(pts.begin(), pts.end());
  std::vector<double> out;
  for (double v : pts)
    if (v >= lo && v <= hi && (out.empty() || v > out.back())) out.push_back(v);
  return out;
}

// Radii in [a, b] near which phi changes sign, for phi Lipschitz with
// constant L. An interval is dropped once |phi(a)| + |phi(b)| > L (b - a)
// proves it free of zeros; the rest are bisected down to a relative width
// of 1e-13 and reported by their midpoints.
template <class Phi>
void level_crossings(Phi&& phi, double a, double b, double L, std::vector<double>& out, long& evals) {
  constexpr long kMaxEvals = 200000;
  struct Piece {
    double a, b, fa, fb;
  };
  std::vector<Piece> stack{{a, b, phi(a), phi(b)}};
  evals += 2;
  while (!stack.empty()) {
    const Piece c = stack.back();
    stack.pop_back();
    if (std::abs(c.fa) + std::abs(c.fb) > L * (c.b - c.a) * (1.0 + 1e-12)) continue;
    const double m = 0.5 * (c.a + c.b);
    if (c.b - c.a <= 1e-13 * std::max(1.0, std::abs(m)) || evals >= kMaxEvals) {
      if (c.fa == 0.0 || c.fb == 0.0 || (c.fa < 0.0) != (c.fb < 0.0) || evals >= kMaxEvals) out.push_back(m);
      continue;
    }
    const double fm = phi(m);
    ++evals;
    stack.push_back({m, c.b, fm, c.fb});
    stack.push_back({c.a, m, c.fa, fm});
  }
}

// Deterministic inner integral on a one-dimensional Euclidean space.
template <class H>
double inner_1d(const Pair<EuclideanSpace, H>& pr, const Point& x, double inner_tol, Tally& tally) {
  const auto& space = pr.space;
  const auto& plan = pr.plan;
  const double ell = space.frame().length;
  QuadOptions q;
  q.abs_tol = 1e-300;
  q.rel_tol = inner_tol;
  std::vector<double> edges = pr.f.kinks();
  if (plan.symmetric) {
    edges.push_back(plan.anchor[0] - plan.support * ell);
    edges.push_back(plan.anchor[0] + plan.support * ell);
  }
  const double k = plan.kappa;
  double total = 0.0;
  for (double sgn : {-1.0, 1.0}) {
    const Point sigma{sgn};
    std::vector<double> rk;
    for (double e : edges) {
      const double r = sgn * (e - x[0]) / ell;
      if (r > 0.0 && std::isfinite(r)) rk.push_back(r);
    }
    if (plan.level > 0.0 && pr.f.has_lip_bound()) {
      // h jumps on the level set; beyond the support f(y) = 0 and nothing changes.
      double r_end = 0.0;
      for (double e : {plan.anchor[0] - plan.support * ell, plan.anchor[0] + plan.support * ell})
        r_end = std::max(r_end, sgn * (e - x[0]) / ell);
      const double r_start = plan.near == Near::cutoff ? plan.r_cut : 0.0;
      if (r_end > r_start) {
        auto phi = [&](double r) {
          return std::abs(pr.f.difference(x, space.polar_point(x, r, sigma))) - plan.level;
        };
        level_crossings(phi, r_start, r_end, pr.f.lip_bound(), rk, tally.evaluations);
      }
    }
    auto tail = [&](double r_from) {
      // int_{r_from}^inf g r^{-1-k} dr = (1/k) int_0^{r_from^{-k}} g(u^{-1/k}) du
      const double umax = std::pow(r_from, -k);
      std::vector<double> uk;
      for (double r : rk)
        if (r > r_from) uk.push_back(std::pow(r, -k));
      const auto pts = mapped_points(0.0, umax, uk);
      auto res = integrate([&](double u) { return pr.g(x, std::pow(u, -1.0 / k), sigma); },
                           std::span<const double>(pts), q);
      tally.add(res, 1.0 / k);
      return res.value / k;
    };
    if (plan.near == Near::cutoff) {
      total += tail(plan.r_cut);
      continue;
    }
    const double r1 = plan.r_cut;
    const double a = plan.alpha;
    const double r_lin = kLinearization * r1;
    total += pr.g(x, r_lin, sigma) * std::pow(r_lin, -k) / a;
    std::vector<double> vk;
    for (double r : rk)
      if (r > r_lin && r < r1) vk.push_back(std::pow(r, a));
    const auto pts = mapped_points(std::pow(r_lin, a), std::pow(r1, a), vk);
    auto res = integrate(
        [&](double v) {
          const double r = std::pow(v, 1.0 / a);
          return pr.g(x, r, sigma) * std::pow(r, -k - a) / a;
        },
        std::span<const double>(pts), q);
    tally.add(res);
    total += res.value + tail(r1);
  }
  // E over sigma in S^0 = {-1, +1}.
  return pr.prefactor() * 0.5 * total;
}

// Deterministic outer integral on R^1: over the support when the symmetric
// factor is used, over the whole line otherwise.
template <class H>
double outer_1d(const Pair<EuclideanSpace, H>& pr, double rel_tol, Tally& tally) {
  const auto& space = pr.space;
  const double ell = space.frame().length;
  const double mass = space.frame().mass;
  const double a = pr.plan.anchor[0];
  const double Sb = pr.plan.support * ell;
  QuadOptions q;
  q.abs_tol = 1e-300;
  q.rel_tol = rel_tol;
  const double inner_tol = rel_tol * 1e-2;
  Tally inner;
  auto integrand = [&](double s) {
    const Point x{s};
    return inner_1d(pr, x, inner_tol, inner) * space.density(x) / mass;
  };
  std::vector<double> pts{a - Sb, a + Sb};
  for (double k : pr.f.kinks())
    if (k > a - Sb && k < a + Sb) pts.push_back(k);
  std::sort(pts.begin(), pts.end());
  double total = 0.0;
  if (Sb > 0.0) {
    auto r = integrate(integrand, std::span<const double>(pts), q);
    tally.add(r);
    total += r.value;
  }
  if (!pr.plan.symmetric) {
    auto up = integrate_upper_tail(integrand, a + Sb, q);
    auto lo = integrate_lower_tail(integrand, a - Sb, q);
    tally.add(up);
    tally.add(lo);
    total += up.value + lo.value;
  }
  // Inner integrals are nonnegative, so their relative tolerance bounds their share.
  tally.evaluations += inner.evaluations;
  tally.converged = tally.converged && inner.converged;
  tally.error += inner_tol * std::abs(total);
  return total;
}

template <class S>
bool deterministic_route(const S& space, Route route) {
  if constexpr (std::is_same_v<S, EuclideanSpace>) {
    if (space.n() == 1) return route != Route::monte_carlo;
    if (route == Route::deterministic) throw DomainError("deterministic route is only available on R^1");
    return false;
  } else {
    if (route == Route::deterministic) throw DomainError("deterministic route is only available on R^1");
    return false;
  }
}

template <class S>
void check_field(const ScalarField& f, const S& space) {
  if (f.dim() != space.dim()) throw DomainError("field and space dimensions differ");
  const bool heis = std::is_same_v<S, HeisenbergSpace>;
  if (heis != (f.geometry() == FieldGeometry::heisenberg)) throw DomainError("field geometry does not match the space");
}

inline void check_p(double p) {
  if (!(p > 1.0)) throw DomainError("p must exceed 1");
}

inline void finish_mc(FunctionalEstimate& e, const BatchResult& br, const EstimatorOptions& opt) {
  e.method = Method::monte_carlo;
  e.value = br.mean;
  e.std_error = br.std_error;
  e.n_samples = br.n_samples;
  if (opt.target_error > 0.0 && e.std_error > opt.target_error) {
    e.flagged = true;
    e.note = "std_error above target after the sample budget";
  }
}

// Double integral int int h(|f(x) - f(y)|) K(x, y) dm dm for a pair plan.
template <class S, class H>
FunctionalEstimate double_integral(const ScalarField& f, const S& space, H h, KernelPlan plan, double hmax,
                                   const EstimatorOptions& opt, FunctionalEstimate e) {
  const auto support = f.support_radius();
  plan.anchor = f.anchor();
  plan.support = *support;
  // The kernel is symmetric on homogeneous spaces and for the literal kernel.
  plan.symmetric = space.homogeneous() || plan.literal;

  if (deterministic_route(space, opt.route)) {
    if constexpr (std::is_same_v<S, EuclideanSpace>) {
      Pair<S, H> pr{space, f, h, plan};
      Tally t;
      e.method = Method::deterministic;
      e.value = outer_1d(pr, opt.rel_tol, t);
      e.quadrature_error = t.error;
      e.n_samples = static_cast<std::uint64_t>(t.evaluations);
      if (!t.converged) {
        e.flagged = true;
        e.note = "quadrature did not reach its tolerance";
      }
      return e;
    }
  }

  const double D = space.homogeneous_dimension();
  BatchOptions bo{opt.samples, opt.batches, opt.jobs};
  const CounterRng base(opt.seed, 0x70616972ULL);
  if (plan.symmetric) {
    if (plan.support == 0.0) return e;
    Pair<S, H> pr{space, f, h, plan};
    const Point& a = plan.anchor;
    const double R = plan.support;
    double mass = 0.0;
    if (space.homogeneous()) mass = space.unit_ball_mass() * std::pow(R, D);
    else mass = space.ball_measure(a, R).value;
    auto br = run_batches(base, bo, [&](CounterRng& rng) {
      Point x = space.homogeneous() ? space.polar_point(a, R * std::pow(rng.uniform(), 1.0 / D),
                                                        space.sample_direction(rng))
                                    : space.annulus_sample(a, 0.0, R, rng);
      return mass * pr.sample(x, rng);
    });
    finish_mc(e, br, opt);
    return e;
  }

  // Weighted space with the metric kernel: outer ball B_{S + R_tail}(anchor)
  // plus the far-field bound hmax m(B_S) (w_max / w_min) n / (p R_tail^p).
  const auto* w = [&]() -> const Weight* {
    if constexpr (std::is_same_v<S, EuclideanSpace>) return space.weight();
    return nullptr;
  }();
  const double ratio = w ? w->w_max / w->w_min : 1.0;
  const double m_support = plan.support > 0.0 ? space.ball_measure(plan.anchor, plan.support).value : 0.0;
  double r_tail = opt.r_tail;
  for (int round = 0;; ++round) {
    Pair<S, H> pr{space, f, h, plan};
    const double R = plan.support + r_tail;
    const double mass = space.ball_measure(plan.anchor, R).value;
    auto br = run_batches(base, bo, [&](CounterRng& rng) {
      const Point x = space.annulus_sample(plan.anchor, 0.0, R, rng);
      return mass * pr.sample(x, rng);
    });
    finish_mc(e, br, opt);
    e.truncation_bound = hmax * m_support * ratio * D / (plan.kappa * std::pow(r_tail, plan.kappa));
    if (!std::isfinite(e.truncation_bound)) {
      e.flagged = true;
      e.note = "weight unbounded above: far-field truncation bound unavailable";
      return e;
    }
    if (e.truncation_bound <= opt.tail_fraction * std::abs(e.value) || round >= opt.max_tail_doublings) {
      if (e.truncation_bound > opt.tail_fraction * std::abs(e.value)) {
        e.flagged = true;
        e.note = "far-field bound above the requested fraction";
      }
      return e;
    }
    r_tail *= 2.0;
  }
}

template <class S>
void check_double_integral_field(const ScalarField& f, const S& space) {
  check_field(f, space);
  if (!f.has_lip_bound()) throw DomainError("field needs a finite Lipschitz bound");
  if (!f.support_radius()) throw DomainError("field needs a support radius");
}

}  // namespace detail

/// I_delta(f) = int int_{|f(x) - f(y)| > delta} delta^p / (m(B_d(x)) d^p).
template <MetricMeasureSpace S>
FunctionalEstimate i_delta(const ScalarField& f, const S& space, double p, double delta,
                           const EstimatorOptions& opt = {}) {
  detail::check_p(p);
  if (!(delta > 0.0)) throw DomainError("i_delta: delta must be positive");
  detail::check_double_integral_field(f, space);
  FunctionalEstimate e;
  e.delta = delta;
  e.p = p;
  e.method = detail::deterministic_route(space, opt.route) ? Method::deterministic : Method::monte_carlo;
  const double L = f.lip_bound();
  if (L == 0.0 || *f.support_radius() == 0.0) return e;
  const double dp = std::pow(delta, p);
  auto h = [delta, dp](double a) { return a > delta ? dp : 0.0; };
  detail::KernelPlan plan;
  plan.kappa = p;
  plan.near = detail::Near::cutoff;
  plan.r_cut = delta / L;  // |f(x) - f(y)| <= L d(x, y)
  plan.level = delta;
  return detail::double_integral(f, space, h, plan, dp, opt, e);
}

/// J_delta(f) = int int_{|f(x) - f(y)| <= 1} delta |f(x) - f(y)|^{p + delta} / (m(B_d(x)) d^p).
template <MetricMeasureSpace S>
FunctionalEstimate j_delta(const ScalarField& f, const S& space, double p, double delta,
                           const EstimatorOptions& opt = {}) {
  detail::check_p(p);
  if (!(delta > 0.0)) throw DomainError("j_delta: delta must be positive");
  detail::check_double_integral_field(f, space);
  FunctionalEstimate e;
  e.delta = delta;
  e.p = p;
  e.method = detail::deterministic_route(space, opt.route) ? Method::deterministic : Method::monte_carlo;
  const double L = f.lip_bound();
  if (L == 0.0 || *f.support_radius() == 0.0) return e;
  const double q = p + delta;
  auto h = [delta, q](double a) { return a <= 1.0 ? delta * std::pow(a, q) : 0.0; };
  detail::KernelPlan plan;
  plan.kappa = p;
  plan.near = detail::Near::diagonal;
  plan.alpha = delta;
  plan.r_cut = 1.0 / L;
  plan.level = 1.0;
  return detail::double_integral(f, space, h, plan, delta, opt, e);
}

/// Inner integral of I_delta at a fixed x.
template <MetricMeasureSpace S>
FunctionalEstimate pointwise_inner(const ScalarField& f, const S& space, const Point& x, double p, double delta,
                                   const EstimatorOptions& opt = {}) {
  detail::check_p(p);
  if (!(delta > 0.0)) throw DomainError("pointwise_inner: delta must be positive");
  detail::check_field(f, space);
  if (!f.has_lip_bound()) throw DomainError("pointwise_inner: field needs a finite Lipschitz bound");
  FunctionalEstimate e;
  e.delta = delta;
  e.p = p;
  const bool det = detail::deterministic_route(space, opt.route);
  e.method = det ? Method::deterministic : Method::monte_carlo;
  const double L = f.lip_bound();
  if (L == 0.0) return e;
  const double dp = std::pow(delta, p);
  auto h = [delta, dp](double a) { return a > delta ? dp : 0.0; };
  detail::KernelPlan plan;
  plan.kappa = p;
  plan.near = detail::Near::cutoff;
  plan.r_cut = delta / L;
  if (const auto R = f.support_radius()) {
    plan.level = delta;
    plan.anchor = f.anchor();
    plan.support = *R;
  }
  detail::Pair<S, decltype(h)> pr{space, f, h, plan};
  if (det) {
    if constexpr (std::is_same_v<S, EuclideanSpace>) {
      detail::Tally t;
      e.value = detail::inner_1d(pr, x, opt.rel_tol, t);
      e.quadrature_error = t.error;
      e.n_samples = static_cast<std::uint64_t>(t.evaluations);
      e.flagged = !t.converged;
      return e;
    }
  }
  BatchOptions bo{opt.samples, opt.batches, opt.jobs};
  auto br = run_batches(CounterRng(opt.seed, 0x706f696eULL), bo, [&](CounterRng& rng) { return pr.sample(x, rng); });
  detail::finish_mc(e, br, opt);
  return e;
}

enum class TailMethod { automatic, closed_form, monte_carlo, deterministic };

/// int_{d(x, y) > R} 1 / (m(B_d(x)) d^p) dm(y). Closed form D / (p R^p) on
/// homogeneous spaces; the Monte Carlo route draws r from a Pareto law with
/// exponent p/2 and re-evaluates d(x, y) and the ball measure at each sample.
template <MetricMeasureSpace S>
FunctionalEstimate tail_integral(const S& space, const Point& x, double R, double p, const EstimatorOptions& opt = {},
                                 TailMethod method = TailMethod::automatic) {
  detail::check_p(p);
  if (!(R > 0.0)) throw DomainError("tail_integral: R must be positive");
  FunctionalEstimate e;
  e.p = p;
  const double D = space.homogeneous_dimension();
  if (method == TailMethod::automatic) {
    if (space.homogeneous()) method = TailMethod::closed_form;
    else if (detail::deterministic_route(space, opt.route)) method = TailMethod::deterministic;
    else method = TailMethod::monte_carlo;
  }
  if (method == TailMethod::closed_form) {
    if (!space.homogeneous()) throw DomainError("tail_integral: closed form needs a homogeneous space");
    e.method = Method::deterministic;
    e.value = D / (p * std::pow(R, p));
    return e;
  }
  if (method == TailMethod::deterministic) {
    if constexpr (std::is_same_v<S, EuclideanSpace>) {
      if (space.n() != 1) throw DomainError("tail_integral: deterministic route is only available on R^1");
      ScalarField zero = constant_field(1, 0.0);
      auto h = [](double) { return 1.0; };
      detail::KernelPlan plan;
      plan.kappa = p;
      plan.r_cut = R;
      detail::Pair<S, decltype(h)> pr{space, zero, h, plan};
      detail::Tally t;
      e.method = Method::deterministic;
      e.value = detail::inner_1d(pr, x, opt.rel_tol, t);
      e.quadrature_error = t.error;
      e.n_samples = static_cast<std::uint64_t>(t.evaluations);
      e.flagged = !t.converged;
      return e;
    } else {
      throw DomainError("tail_integral: deterministic route is only available on R^1");
    }
  }
  const double kp = 0.5 * p;
  const double w = space.unit_ball_mass();
  BatchOptions bo{opt.samples, opt.batches, opt.jobs};
  auto br = run_batches(CounterRng(opt.seed, 0x7461696cULL), bo, [&](CounterRng& rng) {
    const Point sigma = space.sample_direction(rng);
    const double r = std::min(R * std::pow(rng.uniform(), -1.0 / kp), detail::kMaxRadius);
    const Point y = space.polar_point(x, r, sigma);
    const double d = space.distance(x, y);
    if (!(d > R)) return 0.0;
    // dm(y) = density * omega' D r^{D-1} dr dmu; proposal kp R^kp r^{-1-kp}.
    const double dens = space.density(y) * w * D * std::pow(r, D - 1.0);
    const double kernel = 1.0 / (space.ball_measure(x, d).value * std::pow(d, p));
    const double proposal = kp * std::pow(R, kp) * std::pow(r, -1.0 - kp);
    return dens * kernel / proposal;
  });
  detail::finish_mc(e, br, opt);
  return e;
}

enum class FractionalKernel { literal, metric };

/// Gagliardo seminorm int int |f(x) - f(y)|^p / |x - y|^{n + sp} (literal,
/// Euclidean only) or the labeled metric extension with kernel m(B_d(x)) d^{sp}
/// (off unless `allow_metric` is set).
template <MetricMeasureSpace S>
FunctionalEstimate fractional_seminorm(const ScalarField& f, const S& space, double p, double s,
                                       const EstimatorOptions& opt = {},
                                       FractionalKernel kernel = FractionalKernel::literal, bool allow_metric = false) {
  detail::check_p(p);
  if (!(s > 0.0 && s < 1.0)) throw DomainError("fractional_seminorm: s must lie in (0, 1)");
  if (kernel == FractionalKernel::literal && !std::is_same_v<S, EuclideanSpace>)
    throw DomainError("fractional_seminorm: the literal kernel needs a Euclidean space");
  if (kernel == FractionalKernel::metric && !allow_metric)
    throw DomainError("fractional_seminorm: the metric-kernel extension is disabled");
  detail::check_double_integral_field(f, space);
  FunctionalEstimate e;
  e.p = p;
  e.delta = s;
  e.method = detail::deterministic_route(space, opt.route) ? Method::deterministic : Method::monte_carlo;
  const double L = f.lip_bound();
  const double Sr = *f.support_radius();
  if (L == 0.0 || Sr == 0.0) return e;
  auto h = [p](double a) { return std::pow(a, p); };
  detail::KernelPlan plan;
  plan.kappa = s * p;
  plan.near = detail::Near::diagonal;
  plan.alpha = p * (1.0 - s);
  plan.r_cut = std::min(Sr, 1.0 / L);
  plan.literal = kernel == FractionalKernel::literal;
  return detail::double_integral(f, space, h, plan, std::numeric_limits<double>::infinity(), opt, e);
}

/// (1 - s) |f|^p_{W^{s,p}}, the quantity of the s -> 1 limit.
template <MetricMeasureSpace S>
FunctionalEstimate bbm_scaled(const ScalarField& f, const S& space, double p, double s,
                              const EstimatorOptions& opt = {}) {
  auto e = fractional_seminorm(f, space, p, s, opt);
  e.value *= 1.0 - s;
  e.std_error *= 1.0 - s;
  e.quadrature_error *= 1.0 - s;
  return e;
}

/// s |f|^p_{W^{s,p}}, the quantity of the s -> 0 limit.
template <MetricMeasureSpace S>
FunctionalEstimate ms_scaled(const ScalarField& f, const S& space, double p, double s,
                             const EstimatorOptions& opt = {}) {
  auto e = fractional_seminorm(f, space, p, s, opt);
  e.value *= s;
  e.std_error *= s;
  e.quadrature_error *= s;
  return e;
}

// ---------------------------------------------------------- identities ---

inline double combined_error(const FunctionalEstimate& e) {
  return std::sqrt(e.std_error * e.std_error + e.quadrature_error * e.quadrature_error);
}

struct IdentityReport {
  double epsilon = 0.0;
  double lhs = 0.0;
  double lhs_error = 0.0;
  double rhs = 0.0;
  double rhs_error = 0.0;
  FunctionalEstimate j_eps;
  FunctionalEstimate i_one;
  double discrepancy = 0.0;
  double relative_discrepancy = 0.0;
  bool within_3sigma = false;
  bool within_tolerance = false;
  bool flagged = false;
};

/// int_0^1 eps delta^{eps-1} I_delta(f) d delta against (J_eps(f) + eps I_1(f)) / (p + eps),
/// where I_1 is the integral of the kernel over {|f(x) - f(y)| > 1}.
template <MetricMeasureSpace S>
IdentityReport verify_identity(const ScalarField& f, const S& space, double p, double eps,
                               const EstimatorOptions& opt = {}, double rel_tolerance = 1e-2) {
  detail::check_p(p);
  if (!(eps > 0.0 && eps < 1.0)) throw DomainError("verify_identity: eps must lie in (0, 1)");
  IdentityReport rep;
  rep.epsilon = eps;
  const bool det = detail::deterministic_route(space, opt.route);
  // u = delta^eps turns the left side into int_0^1 I_{u^{1/eps}} du.
  std::uint64_t node = 0;
  auto i_at = [&](double u) {
    EstimatorOptions o = opt;
    if (det) o.rel_tol = std::max(opt.rel_tol, 1e-6);
    o.seed = mix64(opt.seed + 0x1000 + node++);
    return i_delta(f, space, p, std::pow(u, 1.0 / eps), o);
  };
  if (det) {
    QuadOptions q;
    q.abs_tol = 1e-12;
    q.rel_tol = 1e-5;
    q.max_subdivisions = 200;
    double err = 0.0;
    bool ok = true;
    auto r = integrate(
        [&](double u) {
          auto e = i_at(u);
          err = std::max(err, e.quadrature_error);
          ok = ok && !e.flagged;
          return e.value;
        },
        0.0, 1.0, q);
    rep.lhs = r.value;
    rep.lhs_error = r.error + err;
    rep.flagged = !(r.converged && ok);
  } else {
    // Fixed composite 15-point Kronrod rule on 4 panels; node estimates are independent.
    double v = 0.0;
    double var = 0.0;
    for (int panel = 0; panel < 4; ++panel) {
      const double a = 0.25 * panel;
      const double c = a + 0.125;
      const double hw = 0.125;
      for (std::size_t j = 0; j < 8; ++j) {
        const double wk = detail::kKronrodWeights[j] * hw;
        for (double sgn : {-1.0, 1.0}) {
          if (j == 7 && sgn > 0.0) break;
          auto e = i_at(c + sgn * hw * detail::kKronrodNodes[j]);
          v += wk * e.value;
          var += wk * wk * e.std_error * e.std_error;
          rep.flagged = rep.flagged || e.flagged;
        }
      }
    }
    rep.lhs = v;
    rep.lhs_error = std::sqrt(var);
  }
  EstimatorOptions oj = opt;
  oj.seed = mix64(opt.seed + 0x2000);
  rep.j_eps = j_delta(f, space, p, eps, oj);
  EstimatorOptions oi = opt;
  oi.seed = mix64(opt.seed + 0x3000);
  rep.i_one = i_delta(f, space, p, 1.0, oi);
  rep.rhs = (rep.j_eps.value + eps * rep.i_one.value) / (p + eps);
  rep.rhs_error = std::hypot(combined_error(rep.j_eps), eps * combined_error(rep.i_one)) / (p + eps);
  rep.flagged = rep.flagged || rep.j_eps.flagged || rep.i_one.flagged;
  rep.discrepancy = std::abs(rep.lhs - rep.rhs);
  const double scale = std::max(std::abs(rep.lhs), std::abs(rep.rhs));
  rep.relative_discrepancy = scale > 0.0 ? rep.discrepancy / scale : 0.0;
  rep.within_3sigma = rep.discrepancy <= 3.0 * std::hypot(rep.lhs_error, rep.rhs_error) + 1e-12 * scale;
  rep.within_tolerance = rep.relative_discrepancy <= rel_tolerance;
  return rep;
}

struct SplittingReport {
  double delta = 0.0;
  double epsilon = 0.0;
  FunctionalEstimate lhs;      // I_delta(f)
  FunctionalEstimate g_term;   // I_{(1-eps) delta}(g)
  FunctionalEstimate fg_term;  // I_{eps delta}(f - g)
  double rhs = 0.0;
  double combined_sigma = 0.0;
  double margin = 0.0;  // rhs - lhs
  bool holds = false;
};

/// I_delta(f) <= (1-eps)^{-p} I_{(1-eps) delta}(g) + eps^{-p} I_{eps delta}(f - g), within 3 sigma.
template <MetricMeasureSpace S>
SplittingReport verify_splitting(const ScalarField& f, const ScalarField& g, const S& space, double p, double delta,
                                 double eps, const EstimatorOptions& opt = {}) {
  detail::check_p(p);
  if (!(delta > 0.0 && delta < 1.0)) throw DomainError("verify_splitting: delta must lie in (0, 1)");
  if (!(eps > 0.0 && eps < 1.0)) throw DomainError("verify_splitting: eps must lie in (0, 1)");
  SplittingReport rep;
  rep.delta = delta;
  rep.epsilon = eps;
  auto seeded = [&](std::uint64_t k) {
    EstimatorOptions o = opt;
    o.seed = mix64(opt.seed * 3 + k);
    return o;
  };
  const ScalarField diff = combine(f, 1.0, g, -1.0);
  rep.lhs = i_delta(f, space, p, delta, seeded(1));
  rep.g_term = i_delta(g, space, p, (1.0 - eps) * delta, seeded(2));
  rep.fg_term = i_delta(diff, space, p, eps * delta, seeded(3));
  const double cg = std::pow(1.0 - eps, -p);
  const double cf = std::pow(eps, -p);
  rep.rhs = cg * rep.g_term.value + cf * rep.fg_term.value;
  const double sl = combined_error(rep.lhs);
  const double sg = cg * combined_error(rep.g_term);
  const double sf = cf * combined_error(rep.fg_term);
  rep.combined_sigma = std::sqrt(sl * sl + sg * sg + sf * sf);
  rep.margin = rep.rhs - rep.lhs.value;
  rep.holds = rep.margin >= -3.0 * rep.combined_sigma;
  return rep;
}

// ---------------------------------------------------- handle overloads ---

inline FunctionalEstimate i_delta(const ScalarField& f, const SpaceHandle& s, double p, double delta,
                                  const EstimatorOptions& opt = {}) {
  return s.visit([&](const auto& sp) { return i_delta(f, sp, p, delta, opt); });
}
inline FunctionalEstimate j_delta(const ScalarField& f, const SpaceHandle& s, double p, double delta,
                                  const EstimatorOptions& opt = {}) {
  return s.visit([&](const auto& sp) { return j_delta(f, sp, p, delta, opt); });
}
inline FunctionalEstimate pointwise_inner(const ScalarField& f, const SpaceHandle& s, const Point& x, double p,
                                          double delta, const EstimatorOptions& opt = {}) {
  return s.visit([&](const auto& sp) { return pointwise_inner(f, sp, x, p, delta, opt); });
}
inline FunctionalEstimate tail_integral(const SpaceHandle& s, const Point& x, double R, double p,
                                        const EstimatorOptions& opt = {}, TailMethod m = TailMethod::automatic) {
  return s.visit([&](const auto& sp) { return tail_integral(sp, x, R, p, opt, m); });
}
inline FunctionalEstimate fractional_seminorm(const ScalarField& f, const SpaceHandle& s, double p, double sv,
                                              const EstimatorOptions& opt = {},
                                              FractionalKernel k = FractionalKernel::literal,
                                              bool allow_metric = false) {
  return s.visit([&](const auto& sp) { return fractional_seminorm(f, sp, p, sv, opt, k, allow_metric); });
}
inline IdentityReport verify_identity(const ScalarField& f, const SpaceHandle& s, double p, double eps,
                                      const EstimatorOptions& opt = {}, double rel_tolerance = 1e-2) {
  return s.visit([&](const auto& sp) { return verify_identity(f, sp, p, eps, opt, rel_tolerance); });
}
inline SplittingReport verify_splitting(const ScalarField& f, const ScalarField& g, const SpaceHandle& s, double p,
                                        double delta, double eps, const EstimatorOptions& opt = {}) {
  return s.visit([&](const auto& sp) { return verify_splitting(f, g, sp, p, delta, eps, opt); });
}

}  // namespace nlsob
