#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>

#include <json.hpp>

#include "nlsob/errors.hpp"
#include "nlsob/euclidean.hpp"
#include "nlsob/heisenberg.hpp"
#include "nlsob/parallel.hpp"
#include "nlsob/quadrature.hpp"
#include "nlsob/rng.hpp"

namespace nlsob {

enum class Branch { euclidean, heisenberg };
enum class ConstMethod { closed_form, sphere_quadrature, volume_monte_carlo };

inline std::string to_string(Branch b) { return b == Branch::euclidean ? "euclidean" : "heisenberg"; }
inline std::string to_string(ConstMethod m) {
  switch (m) {
    case ConstMethod::closed_form: return "closed_form";
    case ConstMethod::sphere_quadrature: return "sphere_quadrature";
    default: return "volume_monte_carlo";
  }
}

struct ConstantsResult {
  double value = 0.0;
  double std_error = 0.0;
  ConstMethod method = ConstMethod::closed_form;
  int n = 1;
  double p = 2.0;
  Branch branch = Branch::euclidean;
  DistanceMode mode = DistanceMode::exact_cc;
  std::uint64_t n_samples = 0;
  double quadrature_error = 0.0;
  bool flagged = false;
};

namespace detail {

inline void check_np(int n, double p) {
  if (n < 1) throw DomainError("C_{n,p}: n must be >= 1");
  if (!(p > 1.0)) throw DomainError("C_{n,p}: p must exceed 1");
}

inline QuadOptions tight_quad() {
  QuadOptions q;
  q.abs_tol = 0.0;
  q.rel_tol = 1e-14;
  q.max_subdivisions = 20000;
  return q;
}

}  // namespace detail

/// H^m(S^m), built from sine-power integrals: |S^0| = 2 and
/// |S^m| = |S^{m-1}| * int_0^pi sin^{m-1}.
inline double sphere_area_quadrature(int m) {
  if (m < 0) throw DomainError("sphere_area: m must be >= 0");
  double a = 2.0;
  for (int k = 1; k <= m; ++k) {
    const int e = k - 1;
    a *= integrate([e](double th) { return std::pow(std::sin(th), e); }, 0.0, std::numbers::pi, detail::tight_quad())
             .value;
  }
  return a;
}

/// C_{n,p} = integral over S^{n-1} of |e . v|^p.
inline ConstantsResult euclidean_cnp(int n, double p, ConstMethod method = ConstMethod::closed_form) {
  detail::check_np(n, p);
  ConstantsResult r;
  r.n = n;
  r.p = p;
  r.branch = Branch::euclidean;
  r.method = method;
  if (method == ConstMethod::closed_form) {
    r.value = 2.0 * std::pow(std::numbers::pi, 0.5 * (n - 1)) * std::tgamma(0.5 * (p + 1.0)) /
              std::tgamma(0.5 * (n + p));
    return r;
  }
  if (method != ConstMethod::sphere_quadrature) throw DomainError("euclidean_cnp: unsupported method");
  if (n == 1) {
    r.value = 2.0;  // S^0 = {-1, +1} with counting measure
    return r;
  }
  // v = (cos th, sin th * w), w in S^{n-2}: dH^{n-1} = sin^{n-2} th dth dH^{n-2}(w).
  const std::array<double, 3> pts{0.0, 0.5 * std::numbers::pi, std::numbers::pi};
  const int e = n - 2;
  auto q = integrate([p, e](double th) { return std::pow(std::abs(std::cos(th)), p) * std::pow(std::sin(th), e); },
                     std::span<const double>(pts), detail::tight_quad());
  r.value = sphere_area_quadrature(n - 2) * q.value;
  r.quadrature_error = sphere_area_quadrature(n - 2) * q.error;
  r.flagged = !q.converged;
  return r;
}

struct HeisenbergCnpOptions {
  std::uint64_t samples = 4'000'000;
  int batches = 40;
  int jobs = 1;
  std::uint64_t seed = 0x436e70ULL;
  DistanceMode mode = DistanceMode::exact_cc;
  /// Horizontal axis zeta = e_{axis+1}, axis in [0, 2n).
  int axis = 0;
  double threshold = 1.0;
};

/// Integral of ||z||^{-(Q+p)} over {|z . zeta| >= threshold} in H^n by
/// Monte Carlo: a = z . zeta is Pareto(threshold, p) with a random sign, the
/// other horizontal coordinates are |a| times Cauchy, and t is a^2 times Cauchy.
inline ConstantsResult heisenberg_threshold_integral(int n, double p, const HeisenbergCnpOptions& opt = {}) {
  detail::check_np(n, p);
  if (static_cast<std::size_t>(2 * n + 1) > kMaxDim) throw DomainError("heisenberg_cnp: n out of range");
  if (opt.axis < 0 || opt.axis >= 2 * n) throw DomainError("heisenberg_cnp: axis must be horizontal");
  if (!(opt.threshold > 0.0)) throw DomainError("heisenberg_cnp: threshold must be positive");
  const auto dim = static_cast<std::size_t>(2 * n + 1);
  const double Q = 2.0 * n + 2.0;
  const double thr = opt.threshold;
  const double log_pareto = std::log(0.5 * p) + p * std::log(thr);
  const double log_pi = std::log(std::numbers::pi);
  BatchOptions bo{opt.samples, opt.batches, opt.jobs};
  auto br = run_batches(CounterRng(opt.seed, 0x68636e70ULL), bo, [&](CounterRng& rng) {
    const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
    const double a = thr * std::pow(rng.uniform(), -1.0 / p);
    const double la = std::log(a);
    HPoint z(dim);
    double log_density = log_pareto - (1.0 + p) * la;
    for (std::size_t k = 0; k + 1 < dim; ++k) {
      if (static_cast<int>(k) == opt.axis) {
        z[k] = sign * a;
        continue;
      }
      const double u = std::tan(std::numbers::pi * (rng.uniform() - 0.5));
      z[k] = a * u;
      log_density += -log_pi - std::log1p(u * u) - la;
    }
    const double s = std::tan(std::numbers::pi * (rng.uniform() - 0.5));
    z[dim - 1] = a * a * s;
    log_density += -log_pi - std::log1p(s * s) - 2.0 * la;
    const double nz = homogeneous_norm(z, opt.mode);
    return std::exp(-(Q + p) * std::log(nz) - log_density);
  });
  ConstantsResult r;
  r.value = br.mean;
  r.std_error = br.std_error;
  r.method = ConstMethod::volume_monte_carlo;
  r.n = n;
  r.p = p;
  r.branch = Branch::heisenberg;
  r.mode = opt.mode;
  r.n_samples = br.n_samples;
  return r;
}

/// C^H_{n,p} = p * integral of ||z||^{-(Q+p)} over {|z . zeta| >= 1}.
inline ConstantsResult heisenberg_cnp(int n, double p, HeisenbergCnpOptions opt = {}) {
  opt.threshold = 1.0;
  auto r = heisenberg_threshold_integral(n, p, opt);
  r.value *= p;
  r.std_error *= p;
  return r;
}

/// JSON table of expensive constants, rewritten atomically (temp file + rename).
class ConstantsCache {
 public:
  explicit ConstantsCache(std::filesystem::path path) : path_(std::move(path)) {}

  const std::filesystem::path& path() const noexcept { return path_; }

  std::optional<ConstantsResult> get(const std::string& key) const {
    std::lock_guard lock(mu_);
    const auto table = load();
    if (!table.contains(key)) return std::nullopt;
    const auto& j = table.at(key);
    ConstantsResult r;
    r.value = j.at("value").get<double>();
    r.std_error = j.at("std_error").get<double>();
    r.n_samples = j.at("n_samples").get<std::uint64_t>();
    r.n = j.at("n").get<int>();
    r.p = j.at("p").get<double>();
    r.branch = j.at("branch").get<std::string>() == "euclidean" ? Branch::euclidean : Branch::heisenberg;
    r.mode = j.at("mode").get<std::string>() == "exact_cc" ? DistanceMode::exact_cc : DistanceMode::koranyi_gauge;
    const auto m = j.at("method").get<std::string>();
    r.method = m == "closed_form"         ? ConstMethod::closed_form
               : m == "sphere_quadrature" ? ConstMethod::sphere_quadrature
                                          : ConstMethod::volume_monte_carlo;
    return r;
  }

  void put(const std::string& key, const ConstantsResult& r) const {
    std::lock_guard lock(mu_);
    auto table = load();
    table[key] = {{"value", r.value},         {"std_error", r.std_error},      {"n_samples", r.n_samples},
                  {"n", r.n},                 {"p", r.p},                      {"branch", to_string(r.branch)},
                  {"mode", to_string(r.mode)}, {"method", to_string(r.method)}};
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    auto tmp = path_;
    tmp += ".tmp." + std::to_string(std::hash<std::string>{}(key) ^ reinterpret_cast<std::uintptr_t>(this));
    {
      std::ofstream out(tmp, std::ios::trunc);
      if (!out) throw NumericalFailure("constants cache: cannot write " + tmp.string());
      out << table.dump(2) << '\n';
      if (!out) throw NumericalFailure("constants cache: write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path_);
  }

 private:
  nlohmann::json load() const {
    std::ifstream in(path_);
    if (!in) return nlohmann::json::object();
    try {
      auto j = nlohmann::json::parse(in);
      return j.is_object() ? j : nlohmann::json::object();
    } catch (const nlohmann::json::exception&) {
      return nlohmann::json::object();
    }
  }

  std::filesystem::path path_;
  mutable std::mutex mu_;
};

inline std::string format_key_number(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

inline std::string heisenberg_cnp_key(int n, double p, const HeisenbergCnpOptions& o) {
  return "cnp|heisenberg|n=" + std::to_string(n) + "|p=" + format_key_number(p) + "|mode=" + to_string(o.mode) +
         "|axis=" + std::to_string(o.axis) + "|samples=" + std::to_string(o.samples) +
         "|batches=" + std::to_string(o.batches) + "|seed=" + std::to_string(o.seed);
}

inline std::string unit_ball_key(int n, DistanceMode mode, std::uint64_t samples, std::uint64_t seed) {
  return "omega|heisenberg|n=" + std::to_string(n) + "|mode=" + to_string(mode) + "|samples=" + std::to_string(samples) +
         "|seed=" + std::to_string(seed);
}

inline ConstantsResult heisenberg_cnp_cached(int n, double p, const HeisenbergCnpOptions& o,
                                            const ConstantsCache* cache) {
  const auto key = heisenberg_cnp_key(n, p, o);
  if (cache)
    if (auto hit = cache->get(key)) return *hit;
  auto r = heisenberg_cnp(n, p, o);
  if (cache) cache->put(key, r);
  return r;
}

inline BallMass unit_ball_mass_cached(int n, DistanceMode mode, const ConstantsCache* cache,
                                      std::uint64_t samples = kUnitBallSamples, std::uint64_t seed = kUnitBallSeed) {
  const auto key = unit_ball_key(n, mode, samples, seed);
  if (cache)
    if (auto hit = cache->get(key)) return {hit->value, hit->std_error};
  const BallMass m = (samples == kUnitBallSamples && seed == kUnitBallSeed) ? default_unit_ball_mass(n, mode)
                                                                           : unit_ball_mass_mc(n, mode, samples, seed);
  if (cache) {
    ConstantsResult r;
    r.value = m.value;
    r.std_error = m.std_error;
    r.n = n;
    r.branch = Branch::heisenberg;
    r.mode = mode;
    r.method = ConstMethod::volume_monte_carlo;
    r.n_samples = samples;
    cache->put(key, r);
  }
  return m;
}

struct LimitCoefficient {
  double i_coeff = 0.0;  // C / (p omega)
  double j_coeff = 0.0;  // C / omega
  double i_std_error = 0.0;
  double j_std_error = 0.0;
  ConstantsResult constant;
  BallMass omega;
};

/// (C_{n,p} / (p omega), C_{n,p} / omega) with the branch's unit-ball mass.
inline LimitCoefficient limit_coefficient(int n, double p, Branch branch, const HeisenbergCnpOptions& hopt = {},
                                          const ConstantsCache* cache = nullptr) {
  detail::check_np(n, p);
  LimitCoefficient lc;
  if (branch == Branch::euclidean) {
    lc.constant = euclidean_cnp(n, p);
    lc.omega = {omega_n(n), 0.0};
  } else {
    lc.constant = heisenberg_cnp_cached(n, p, hopt, cache);
    lc.omega = unit_ball_mass_cached(n, hopt.mode, cache);
  }
  lc.j_coeff = lc.constant.value / lc.omega.value;
  lc.i_coeff = lc.j_coeff / p;
  const double rc = lc.constant.std_error / lc.constant.value;
  const double rw = lc.omega.std_error / lc.omega.value;
  lc.j_std_error = lc.j_coeff * std::sqrt(rc * rc + rw * rw);
  lc.i_std_error = lc.j_std_error / p;
  return lc;
}

}  // namespace nlsob
