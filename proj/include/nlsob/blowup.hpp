#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <type_traits>
#include <vector>

#include "nlsob/constants.hpp"
#include "nlsob/errors.hpp"
#include "nlsob/fields.hpp"
#include "nlsob/functionals.hpp"
#include "nlsob/space.hpp"
#include "nlsob/sweep.hpp"

namespace nlsob {

/// L_x(y) = slope * <direction, h>, h the horizontal displacement of y from x
/// in the rescaled metric.
struct LinearModel {
  double slope = 0.0;
  Point direction;

  double operator()(const Point& h) const { return slope * dot(direction, h); }
};

/// Blow-ups f_k = (f - f(x)) / delta_k on (X, d / delta_k, m / m(B_{delta_k}(x)), x).
template <MetricMeasureSpace S>
class BlowupSequence {
 public:
  BlowupSequence(S base, ScalarField f, Point center, std::vector<double> scales)
      : base_(std::move(base)), f_(std::move(f)), x_(center), scales_(std::move(scales)) {
    check_schedule(scales_);
    auto g = f_.gradient(x_);
    if (!g) throw DomainError("blowup: no analytic blow-up direction for this field at x");
    const double s = norm(*g);
    model_.slope = s;
    model_.direction = s > 0.0 ? *g * (1.0 / s) : *g;
  }

  const S& base() const { return base_; }
  const Point& center() const { return x_; }
  const std::vector<double>& scales() const { return scales_; }
  const LinearModel& model() const { return model_; }
  std::size_t size() const { return scales_.size(); }

  S space(std::size_t k) const { return base_.rescaled(x_, scales_.at(k)); }

  ScalarField field(std::size_t k) const {
    const double d = scales_.at(k);
    return f_.shifted(-f_(x_)).scaled(1.0 / d).in_rescaled_metric(d);
  }

  /// Horizontal displacement of y from x measured in the k-th rescaled metric.
  Point displacement(std::size_t k, const Point& y) const {
    return base_.horizontal_displacement(x_, y) * (1.0 / scales_.at(k));
  }

 private:
  S base_;
  ScalarField f_;
  Point x_;
  std::vector<double> scales_;
  LinearModel model_;
};

/// Largest |f_k(y) - L_x(y)| over `samples` points y of the rescaled ball
/// B_R(x). Every k draws the same stream, so the points are the same up to
/// dilation.
template <MetricMeasureSpace S>
double blowup_discrepancy(const ScalarField& f, const S& space, const Point& x, double delta_k, double R,
                          std::uint64_t samples, std::uint64_t seed) {
  if (!(delta_k > 0.0)) throw DomainError("blowup_discrepancy: delta_k must be positive");
  if (!(R > 0.0)) throw DomainError("blowup_discrepancy: R must be positive");
  if (samples < 1) throw DomainError("blowup_discrepancy: samples must be >= 1");
  const std::vector<double> scales{delta_k};
  BlowupSequence<S> seq(space, f, x, scales);
  const S sk = seq.space(0);
  const ScalarField fk = seq.field(0);
  CounterRng rng(seed, 0x626c6f77ULL);
  double worst = 0.0;
  for (std::uint64_t i = 0; i < samples; ++i) {
    const Point y = sk.annulus_sample(x, 0.0, R, rng);
    worst = std::max(worst, std::abs(fk(y) - seq.model()(seq.displacement(0, y))));
  }
  return worst;
}

template <MetricMeasureSpace S>
Branch branch_of(const S&) {
  return std::is_same_v<S, HeisenbergSpace> ? Branch::heisenberg : Branch::euclidean;
}

/// Target (C / (p omega)) lip(f)(x)^p of the pointwise limit, with its 1-sigma.
template <MetricMeasureSpace S>
std::pair<double, double> pointwise_target(const ScalarField& f, const S& space, const Point& x, double p,
                                           const HeisenbergCnpOptions& hopt = {},
                                           const ConstantsCache* cache = nullptr) {
  auto slope = f.analytic_slope(x);
  if (!slope) throw DomainError("pointwise target: no analytic slope for this field at x");
  HeisenbergCnpOptions o = hopt;
  if constexpr (std::is_same_v<S, HeisenbergSpace>) o.mode = space.mode();
  const auto lc = limit_coefficient(space.n(), p, branch_of(space), o, cache);
  const double lp = std::pow(*slope, p);
  return {lc.i_coeff * lp, lc.i_std_error * lp};
}

/// Sweep of pointwise_inner at x with the analytic target attached.
template <MetricMeasureSpace S>
DeltaSweep pointwise_limit_experiment(const ScalarField& f, const S& space, const Point& x, double p,
                                      std::span<const double> deltas, const EstimatorOptions& opt,
                                      const HeisenbergCnpOptions& hopt = {}, const ConstantsCache* cache = nullptr) {
  const auto [target, target_error] = pointwise_target(f, space, x, p, hopt, cache);
  return run_sweep(
      deltas, opt.seed,
      [&](double d, std::uint64_t s) {
        EstimatorOptions o = opt;
        o.seed = s;
        return pointwise_inner(f, space, x, p, d, o);
      },
      target, target_error);
}

/// Discrepancies at delta_k = delta0 2^{-k}, k = 0..k_max, all with the same seed.
template <MetricMeasureSpace S>
std::vector<double> blowup_profile(const ScalarField& f, const S& space, const Point& x, std::span<const double> deltas,
                                   double R, std::uint64_t samples, std::uint64_t seed) {
  check_schedule(deltas);
  std::vector<double> out;
  for (double d : deltas) out.push_back(blowup_discrepancy(f, space, x, d, R, samples, seed));
  return out;
}

inline double blowup_discrepancy(const ScalarField& f, const SpaceHandle& s, const Point& x, double delta_k, double R,
                                 std::uint64_t samples, std::uint64_t seed) {
  return s.visit([&](const auto& sp) { return blowup_discrepancy(f, sp, x, delta_k, R, samples, seed); });
}

inline DeltaSweep pointwise_limit_experiment(const ScalarField& f, const SpaceHandle& s, const Point& x, double p,
                                             std::span<const double> deltas, const EstimatorOptions& opt,
                                             const HeisenbergCnpOptions& hopt = {},
                                             const ConstantsCache* cache = nullptr) {
  return s.visit([&](const auto& sp) { return pointwise_limit_experiment(f, sp, x, p, deltas, opt, hopt, cache); });
}

}  // namespace nlsob
