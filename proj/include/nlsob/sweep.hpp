#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "nlsob/errors.hpp"
#include "nlsob/estimate.hpp"
#include "nlsob/functionals.hpp"
#include "nlsob/rng.hpp"

namespace nlsob {

struct SweepRow {
  double delta = 0.0;
  double value = 0.0;
  double std_error = 0.0;
  std::uint64_t n_samples = 0;
  Method method = Method::deterministic;
  double quadrature_error = 0.0;
  bool flagged = false;

  double sigma() const { return std::hypot(std_error, quadrature_error); }
};

/// Least-squares line value = a + b delta through the three smallest deltas.
struct SweepFit {
  double intercept = 0.0;
  double slope = 0.0;
  double residual = 0.0;
  double intercept_error = 0.0;
};

struct DeltaSweep {
  std::vector<SweepRow> rows;  // delta descending
  std::optional<SweepFit> fit;
  std::optional<double> target;
  double target_error = 0.0;

  /// Largest row value (the sup profile); 0 for an empty sweep.
  double max_value() const {
    double m = 0.0;
    for (const auto& r : rows) m = std::max(m, r.value);
    return m;
  }

  double deviation() const { return fit && target ? std::abs(fit->intercept - *target) : 0.0; }

  /// Combined 1-sigma of the extrapolated limit and the target.
  double combined_sigma() const { return fit ? std::hypot(fit->intercept_error, target_error) : 0.0; }

  /// PASS against the target: relative tolerance when positive, otherwise 3 sigma.
  bool passes(double rel_tolerance = 0.0) const {
    if (!fit || !target) return false;
    if (rel_tolerance > 0.0) return deviation() <= rel_tolerance * std::abs(*target);
    return deviation() <= 3.0 * combined_sigma() + 1e-12 * std::abs(*target);
  }
};

/// delta0 * 2^{-k}, k = 0..k_max.
inline std::vector<double> geometric_schedule(double delta0, int k_max) {
  if (!(delta0 > 0.0)) throw DomainError("schedule: delta0 must be positive");
  if (k_max < 0) throw DomainError("schedule: k_max must be >= 0");
  std::vector<double> out;
  for (int k = 0; k <= k_max; ++k) out.push_back(std::ldexp(delta0, -k));
  return out;
}

inline void check_schedule(std::span<const double> deltas) {
  if (deltas.empty()) throw DomainError("schedule: empty");
  for (std::size_t i = 0; i < deltas.size(); ++i) {
    if (!(deltas[i] > 0.0)) throw DomainError("schedule: values must be positive");
    if (i > 0 && !(deltas[i] < deltas[i - 1])) throw DomainError("schedule: values must be strictly decreasing");
  }
}

inline SweepFit fit_sweep(std::span<const SweepRow> rows) {
  if (rows.size() < 3) throw DomainError("fit_sweep: needs at least three rows");
  std::vector<SweepRow> sorted(rows.begin(), rows.end());
  std::sort(sorted.begin(), sorted.end(), [](const SweepRow& a, const SweepRow& b) { return a.delta < b.delta; });
  const std::span<const SweepRow> use(sorted.data(), 3);
  double mx = 0.0;
  double my = 0.0;
  for (const auto& r : use) {
    mx += r.delta / 3.0;
    my += r.value / 3.0;
  }
  double sxx = 0.0;
  double sxy = 0.0;
  for (const auto& r : use) {
    sxx += (r.delta - mx) * (r.delta - mx);
    sxy += (r.delta - mx) * (r.value - my);
  }
  SweepFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double ssr = 0.0;
  double var = 0.0;
  for (const auto& r : use) {
    const double e = r.value - fit.intercept - fit.slope * r.delta;
    ssr += e * e;
    // Intercept weight of this row in the least-squares solution.
    const double c = 1.0 / 3.0 - mx * (r.delta - mx) / sxx;
    var += c * c * r.sigma() * r.sigma();
  }
  fit.residual = std::sqrt(ssr);
  fit.intercept_error = std::sqrt(var);
  return fit;
}

inline SweepRow to_row(const FunctionalEstimate& e, double delta) {
  return {delta, e.value, e.std_error, e.n_samples, e.method, e.quadrature_error, e.flagged};
}

/// Seed of schedule entry k; entries draw independent streams.
inline std::uint64_t entry_seed(std::uint64_t seed, std::size_t k) { return mix64(seed ^ mix64(0x73776565ULL + k)); }

/// Evaluates `estimate(delta, seed_k)` over the schedule and fits the limit.
inline DeltaSweep run_sweep(std::span<const double> deltas, std::uint64_t seed,
                            const std::function<FunctionalEstimate(double, std::uint64_t)>& estimate,
                            std::optional<double> target = std::nullopt, double target_error = 0.0) {
  check_schedule(deltas);
  DeltaSweep sw;
  sw.target = target;
  sw.target_error = target_error;
  for (std::size_t k = 0; k < deltas.size(); ++k) sw.rows.push_back(to_row(estimate(deltas[k], entry_seed(seed, k)), deltas[k]));
  if (sw.rows.size() >= 3) sw.fit = fit_sweep(sw.rows);
  return sw;
}

enum class SweepFunctional { i_delta, j_delta };

template <class Space>
DeltaSweep functional_sweep(const ScalarField& f, const Space& space, double p, SweepFunctional which,
                            std::span<const double> deltas, const EstimatorOptions& opt,
                            std::optional<double> target = std::nullopt, double target_error = 0.0) {
  return run_sweep(
      deltas, opt.seed,
      [&](double d, std::uint64_t s) {
        EstimatorOptions o = opt;
        o.seed = s;
        return which == SweepFunctional::i_delta ? i_delta(f, space, p, d, o) : j_delta(f, space, p, d, o);
      },
      target, target_error);
}

/// I_delta over a grid in (0, 1) and its maximum (the sup-norm profile).
template <class Space>
DeltaSweep sup_profile(const ScalarField& f, const Space& space, double p, std::span<const double> grid,
                       const EstimatorOptions& opt) {
  for (double d : grid)
    if (!(d > 0.0 && d < 1.0)) throw DomainError("sup_profile: grid must lie in (0, 1)");
  return functional_sweep(f, space, p, SweepFunctional::i_delta, grid, opt);
}

}  // namespace nlsob
