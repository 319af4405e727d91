#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <memory>
#include <optional>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "nlsob/errors.hpp"
#include "nlsob/estimate.hpp"
#include "nlsob/heisenberg.hpp"
#include "nlsob/parallel.hpp"
#include "nlsob/quadrature.hpp"
#include "nlsob/point.hpp"
#include "nlsob/space.hpp"

namespace nlsob {

enum class FieldGeometry { euclidean, heisenberg };

/// Immutable description of a test function. Metadata (Lipschitz bound,
/// support radius, slope) refers to the metric of the space the field was
/// built for.
struct FieldData {
  std::string name;
  std::map<std::string, std::vector<double>> params;
  FieldGeometry geometry = FieldGeometry::euclidean;
  std::size_t dim = 1;
  std::function<double(const Point&)> fn;
  /// Horizontal gradient (Euclidean gradient on R^n, (X_j f, Y_j f) on H^n);
  /// empty optional where f is not differentiable.
  std::function<std::optional<Point>(const Point&)> gradient;
  /// Pointwise slope lip(f)(x); defaults to |gradient| when absent.
  std::function<double(const Point&)> slope;
  double lip_bound = std::numeric_limits<double>::infinity();
  std::optional<double> support_radius;
  Point anchor;
  /// Non-smooth coordinates of a one-dimensional field.
  std::vector<double> kinks;
  /// Radii (around the anchor) where a radial field is non-smooth.
  std::vector<double> radial_kinks;
};

class ScalarField {
 public:
  ScalarField() = default;
  explicit ScalarField(FieldData d) : d_(std::make_shared<const FieldData>(std::move(d))) {}

  double operator()(const Point& x) const { return scale_ * d_->fn(x) + offset_; }

  /// f(y) - f(x). Independent of the additive offset bit for bit.
  double difference(const Point& x, const Point& y) const { return scale_ * (d_->fn(y) - d_->fn(x)); }

  const std::string& name() const { return d_->name; }
  const FieldData& data() const { return *d_; }
  FieldGeometry geometry() const { return d_->geometry; }
  std::size_t dim() const { return d_->dim; }
  double scale() const noexcept { return scale_; }
  double offset() const noexcept { return offset_; }

  double lip_bound() const { return std::abs(scale_) * d_->lip_bound * metric_factor_; }
  bool has_lip_bound() const { return std::isfinite(lip_bound()); }

  std::optional<double> support_radius() const {
    if (!d_->support_radius) return std::nullopt;
    return *d_->support_radius / metric_factor_;
  }
  const Point& anchor() const { return d_->anchor; }
  const std::vector<double>& kinks() const { return d_->kinks; }
  std::vector<double> radial_kinks() const {
    std::vector<double> out;
    for (double r : d_->radial_kinks) out.push_back(r / metric_factor_);
    return out;
  }

  bool has_analytic_slope() const { return static_cast<bool>(d_->slope) || static_cast<bool>(d_->gradient); }

  std::optional<double> analytic_slope(const Point& x) const {
    if (d_->slope) return std::abs(scale_) * metric_factor_ * d_->slope(x);
    if (d_->gradient) {
      auto g = d_->gradient(x);
      if (g) return std::abs(scale_) * metric_factor_ * norm(*g);
    }
    return std::nullopt;
  }

  /// Gradient of f in base coordinates (not rescaled).
  std::optional<Point> gradient(const Point& x) const {
    if (!d_->gradient) return std::nullopt;
    auto g = d_->gradient(x);
    if (g) *g *= scale_;
    return g;
  }

  ScalarField scaled(double lambda) const {
    ScalarField out = *this;
    out.scale_ *= lambda;
    out.offset_ *= lambda;
    return out;
  }

  ScalarField shifted(double c) const {
    ScalarField out = *this;
    out.offset_ += c;
    return out;
  }

  /// The same function seen in the metric d / r: slopes and the Lipschitz
  /// bound multiply by r, the support radius divides by r.
  ScalarField in_rescaled_metric(double r) const {
    if (!(r > 0.0)) throw DomainError("in_rescaled_metric: r must be positive");
    ScalarField out = *this;
    out.metric_factor_ *= r;
    return out;
  }

  double metric_factor() const noexcept { return metric_factor_; }

 private:
  std::shared_ptr<const FieldData> d_;
  double scale_ = 1.0;
  double offset_ = 0.0;
  double metric_factor_ = 1.0;
};

namespace detail {

// Smoothstep cutoff: 1 on [0, r1], 1 - (3u^2 - 2u^3) on [r1, r2], 0 beyond.
inline double cutoff(double rho, double r1, double r2) {
  if (rho <= r1) return 1.0;
  if (rho >= r2) return 0.0;
  const double u = (rho - r1) / (r2 - r1);
  return 1.0 - u * u * (3.0 - 2.0 * u);
}

inline double cutoff_prime(double rho, double r1, double r2) {
  if (rho <= r1 || rho >= r2) return 0.0;
  const double u = (rho - r1) / (r2 - r1);
  return -6.0 * u * (1.0 - u) / (r2 - r1);
}

// Maximum of a smooth g on [a, b]: dense scan, then golden-section refinement.
template <class G>
double maximize(G g, double a, double b) {
  constexpr int kGrid = 20000;
  double best = g(a);
  int arg = 0;
  for (int i = 1; i <= kGrid; ++i) {
    const double v = g(a + (b - a) * i / kGrid);
    if (v > best) {
      best = v;
      arg = i;
    }
  }
  double lo = a + (b - a) * std::max(0, arg - 1) / kGrid;
  double hi = a + (b - a) * std::min(kGrid, arg + 1) / kGrid;
  const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
  for (int it = 0; it < 100; ++it) {
    const double m1 = hi - gr * (hi - lo);
    const double m2 = lo + gr * (hi - lo);
    if (g(m1) > g(m2))
      hi = m2;
    else
      lo = m1;
  }
  return std::max(best, g(0.5 * (lo + hi)));
}

// Normalized one-dimensional bump b(u) = exp(1 + 1/(u^2 - 1)) on |u| < 1.
inline double bump1(double u) {
  const double s = u * u;
  return s < 1.0 ? std::exp(1.0 + 1.0 / (s - 1.0)) : 0.0;
}

inline double bump1_prime(double u) {
  const double s = u * u;
  if (s >= 1.0) return 0.0;
  const double q = 1.0 - s;
  return -2.0 * u * std::exp(1.0 + 1.0 / (s - 1.0)) / (q * q);
}

inline constexpr double kLipSafety = 1.0 + 1e-9;

inline Point vec_param(const std::map<std::string, std::vector<double>>& p, const std::string& key, std::size_t dim,
                       const Point& fallback) {
  auto it = p.find(key);
  if (it == p.end()) return fallback;
  if (it->second.size() == 1 && dim > 1 && key == "center") {
    Point c(dim);
    for (auto& v : c) v = it->second[0];
    return c;
  }
  if (it->second.size() != dim) throw ConfigError("field." + key, "expected " + std::to_string(dim) + " components");
  return Point(std::span<const double>(it->second));
}

inline double scalar_param(const std::map<std::string, std::vector<double>>& p, const std::string& key, double fallback) {
  auto it = p.find(key);
  if (it == p.end()) return fallback;
  if (it->second.size() != 1) throw ConfigError("field." + key, "expected a single number");
  return it->second[0];
}

}  // namespace detail

// ---------------------------------------------------------------- catalog ---

inline ScalarField constant_field(std::size_t dim, double c, FieldGeometry geo = FieldGeometry::euclidean) {
  FieldData d;
  d.name = "constant";
  d.params["value"] = {c};
  d.geometry = geo;
  d.dim = dim;
  d.fn = [c](const Point&) { return c; };
  d.gradient = [dim, geo](const Point&) {
    return std::optional<Point>(Point(geo == FieldGeometry::heisenberg ? dim - 1 : dim));
  };
  d.lip_bound = 0.0;
  d.support_radius = 0.0;
  d.anchor = Point(dim);
  return ScalarField(std::move(d));
}

/// f(x) = a . x + b on R^n.
inline ScalarField linear_field(const Point& a, double b = 0.0) {
  FieldData d;
  d.name = "linear";
  d.params["slope"] = {a.begin(), a.end()};
  d.params["offset"] = {b};
  d.dim = a.size();
  d.fn = [a, b](const Point& x) { return dot(a, x) + b; };
  d.gradient = [a](const Point&) { return std::optional<Point>(a); };
  d.lip_bound = norm(a);
  d.anchor = Point(a.size());
  return ScalarField(std::move(d));
}

/// f(x) = h max(0, 1 - |x - c| / rho).
inline ScalarField tent_field(const Point& c, double rho = 1.0, double h = 1.0) {
  if (!(rho > 0.0)) throw DomainError("tent: radius must be positive");
  FieldData d;
  d.name = "tent";
  d.params["center"] = {c.begin(), c.end()};
  d.params["radius"] = {rho};
  d.params["height"] = {h};
  d.dim = c.size();
  d.fn = [c, rho, h](const Point& x) { return h * std::max(0.0, 1.0 - norm(x - c) / rho); };
  d.gradient = [c, rho, h](const Point& x) -> std::optional<Point> {
    const Point v = x - c;
    const double r = norm(v);
    if (r == 0.0 || r == rho) return std::nullopt;
    if (r > rho) return Point(c.size());
    return v * (-h / (rho * r));
  };
  d.slope = [c, rho, h](const Point& x) { return norm(x - c) <= rho ? std::abs(h) / rho : 0.0; };
  d.lip_bound = std::abs(h) / rho;
  d.support_radius = rho;
  d.anchor = c;
  if (c.size() == 1) d.kinks = {c[0] - rho, c[0], c[0] + rho};
  d.radial_kinks = {rho};
  return ScalarField(std::move(d));
}

/// f(x) = h exp(1 + 1/(|x - c|^2 / rho^2 - 1)), peak value h at the center.
inline ScalarField bump_field(const Point& c, double rho = 1.0, double h = 1.0) {
  if (!(rho > 0.0)) throw DomainError("bump: radius must be positive");
  FieldData d;
  d.name = "bump";
  d.params["center"] = {c.begin(), c.end()};
  d.params["radius"] = {rho};
  d.params["height"] = {h};
  d.dim = c.size();
  d.fn = [c, rho, h](const Point& x) { return h * detail::bump1(norm(x - c) / rho); };
  d.gradient = [c, rho, h](const Point& x) -> std::optional<Point> {
    const Point v = x - c;
    const double s = dot(v, v) / (rho * rho);
    if (s >= 1.0) return Point(c.size());
    const double q = 1.0 - s;
    const double g = h * std::exp(1.0 + 1.0 / (s - 1.0));
    return v * (-2.0 * g / (q * q * rho * rho));
  };
  const double peak = detail::maximize([](double u) { return std::abs(detail::bump1_prime(u)); }, 0.0, 1.0);
  d.lip_bound = std::abs(h) * peak / rho * detail::kLipSafety;
  d.support_radius = rho;
  d.anchor = c;
  return ScalarField(std::move(d));
}

/// f(x) = (a . (x - c)) chi(|x - c|) with a C^1 smoothstep cutoff chi from r1 to r2.
inline ScalarField linear_cutoff_field(const Point& a, const Point& c, double r1, double r2) {
  if (!(r1 > 0.0) || !(r2 > r1)) throw DomainError("linear-cutoff: need 0 < r1 < r2");
  if (a.size() != c.size()) throw DomainError("linear-cutoff: slope/center dimension mismatch");
  FieldData d;
  d.name = "linear-cutoff";
  d.params["slope"] = {a.begin(), a.end()};
  d.params["center"] = {c.begin(), c.end()};
  d.params["r1"] = {r1};
  d.params["r2"] = {r2};
  d.dim = c.size();
  d.fn = [a, c, r1, r2](const Point& x) {
    const Point v = x - c;
    return dot(a, v) * detail::cutoff(norm(v), r1, r2);
  };
  d.gradient = [a, c, r1, r2](const Point& x) -> std::optional<Point> {
    const Point v = x - c;
    const double r = norm(v);
    Point g = a * detail::cutoff(r, r1, r2);
    if (r > r1 && r < r2) g += v * (dot(a, v) * detail::cutoff_prime(r, r1, r2) / r);
    return g;
  };
  const double m = detail::maximize(
      [r1, r2](double r) { return detail::cutoff(r, r1, r2) + r * std::abs(detail::cutoff_prime(r, r1, r2)); }, 0.0,
      r2);
  d.lip_bound = norm(a) * m * detail::kLipSafety;
  d.support_radius = r2;
  d.anchor = c;
  return ScalarField(std::move(d));
}

/// Radial plateau of height h on |x - c| <= l - w/2 with linear ramps of width w.
inline ScalarField mollified_step_field(const Point& c, double half_length, double width, double h = 1.0) {
  if (!(width > 0.0) || !(half_length >= 0.5 * width))
    throw DomainError("mollified-step: need 0 < width <= 2 half_length");
  FieldData d;
  d.name = "mollified-step";
  d.params["center"] = {c.begin(), c.end()};
  d.params["half_length"] = {half_length};
  d.params["width"] = {width};
  d.params["height"] = {h};
  d.dim = c.size();
  const double outer = half_length + 0.5 * width;
  d.fn = [c, outer, width, h](const Point& x) {
    return h * std::clamp((outer - norm(x - c)) / width, 0.0, 1.0);
  };
  const double inner = outer - width;
  d.gradient = [c, inner, outer, width, h](const Point& x) -> std::optional<Point> {
    const Point v = x - c;
    const double r = norm(v);
    if (r == inner || r == outer || (r == 0.0 && inner <= 0.0)) return std::nullopt;
    if (r < inner || r > outer) return Point(c.size());
    return v * (-h / (width * r));
  };
  d.slope = [c, inner, outer, width, h](const Point& x) {
    const double r = norm(x - c);
    return (r >= inner && r <= outer) ? std::abs(h) / width : 0.0;
  };
  d.lip_bound = std::abs(h) / width;
  d.support_radius = outer;
  d.anchor = c;
  if (c.size() == 1) {
    d.kinks = {c[0] - outer, c[0] - inner, c[0] + inner, c[0] + outer};
    if (inner == 0.0) d.kinks = {c[0] - outer, c[0], c[0] + outer};
  }
  d.radial_kinks = {inner, outer};
  return ScalarField(std::move(d));
}

/// f(x) = h prod_i b((x_i - c_i) / rho) with the normalized 1D bump b.
inline ScalarField product_bump_field(const Point& c, double rho = 1.0, double h = 1.0) {
  if (!(rho > 0.0)) throw DomainError("product-bump: radius must be positive");
  FieldData d;
  d.name = "product-bump";
  d.params["center"] = {c.begin(), c.end()};
  d.params["radius"] = {rho};
  d.params["height"] = {h};
  d.dim = c.size();
  d.fn = [c, rho, h](const Point& x) {
    double v = h;
    for (std::size_t i = 0; i < c.size(); ++i) v *= detail::bump1((x[i] - c[i]) / rho);
    return v;
  };
  d.gradient = [c, rho, h](const Point& x) -> std::optional<Point> {
    const auto n = c.size();
    Point g(n);
    for (std::size_t i = 0; i < n; ++i) {
      double v = h * detail::bump1_prime((x[i] - c[i]) / rho) / rho;
      for (std::size_t j = 0; j < n; ++j)
        if (j != i) v *= detail::bump1((x[j] - c[j]) / rho);
      g[i] = v;
    }
    return g;
  };
  const double peak = detail::maximize([](double u) { return std::abs(detail::bump1_prime(u)); }, 0.0, 1.0);
  d.lip_bound = std::abs(h) * std::sqrt(static_cast<double>(c.size())) * peak / rho * detail::kLipSafety;
  d.support_radius = rho * std::sqrt(static_cast<double>(c.size()));
  d.anchor = c;
  return ScalarField(std::move(d));
}

namespace detail {

inline Point check_horizontal_direction(const Point& zeta0, int n) {
  const auto h = static_cast<std::size_t>(2 * n);
  if (zeta0.size() != h && zeta0.size() != h + 1)
    throw DomainError("horizontal direction must have 2n (or 2n+1) components");
  if (zeta0.size() == h + 1 && zeta0[h] != 0.0) throw DomainError("horizontal direction has a vertical component");
  Point z = head(zeta0, h);
  if (std::abs(norm(z) - 1.0) > 1e-12) throw DomainError("horizontal direction must be a unit vector");
  return z;
}

}  // namespace detail

/// y -> zeta0 . z(y) on H^n: group-linear with horizontal slope 1.
inline ScalarField horizontal_linear(const Point& zeta0, int n) {
  const Point z0 = detail::check_horizontal_direction(zeta0, n);
  FieldData d;
  d.name = "horizontal-linear";
  d.params["direction"] = {z0.begin(), z0.end()};
  d.geometry = FieldGeometry::heisenberg;
  d.dim = static_cast<std::size_t>(2 * n + 1);
  d.fn = [z0](const Point& y) {
    double s = 0.0;
    for (std::size_t j = 0; j < z0.size(); ++j) s += z0[j] * y[j];
    return s;
  };
  d.gradient = [z0](const Point&) { return std::optional<Point>(z0); };
  // |zeta0 . z(x^{-1}y)| <= |z(x^{-1}y)| bounds both the CC and the gauge distance.
  d.lip_bound = 1.0;
  d.anchor = Point(d.dim);
  return ScalarField(std::move(d));
}

inline ScalarField horizontal_linear(const Point& zeta0) {
  if (zeta0.size() < 2) throw DomainError("horizontal direction must have 2n components");
  return horizontal_linear(zeta0, static_cast<int>(zeta0.size() / 2));
}

/// (zeta0 . z) chi(N(y)) with chi the smoothstep cutoff on the Koranyi gauge.
inline ScalarField horizontal_linear_cutoff(const Point& zeta0, int n, double r1, double r2,
                                            DistanceMode mode = DistanceMode::exact_cc) {
  if (!(r1 > 0.0) || !(r2 > r1)) throw DomainError("horizontal-linear-cutoff: need 0 < r1 < r2");
  const Point z0 = detail::check_horizontal_direction(zeta0, n);
  const auto nn = static_cast<std::size_t>(n);
  FieldData d;
  d.name = "horizontal-linear-cutoff";
  d.params["direction"] = {z0.begin(), z0.end()};
  d.params["r1"] = {r1};
  d.params["r2"] = {r2};
  d.geometry = FieldGeometry::heisenberg;
  d.dim = 2 * nn + 1;
  d.fn = [z0, r1, r2](const Point& y) {
    double s = 0.0;
    for (std::size_t j = 0; j < z0.size(); ++j) s += z0[j] * y[j];
    return s * detail::cutoff(koranyi_gauge(y), r1, r2);
  };
  d.gradient = [z0, r1, r2, nn](const Point& y) -> std::optional<Point> {
    double s = 0.0;
    double w2 = 0.0;
    for (std::size_t j = 0; j < 2 * nn; ++j) {
      s += z0[j] * y[j];
      w2 += y[j] * y[j];
    }
    const double t = y[2 * nn];
    const double N = std::sqrt(std::sqrt(w2 * w2 + t * t));
    Point g = z0 * detail::cutoff(N, r1, r2);
    if (N > r1 && N < r2) {
      const double c = s * detail::cutoff_prime(N, r1, r2) / (N * N * N);
      for (std::size_t j = 0; j < nn; ++j) {
        const double zeta = y[j];
        const double eta = y[nn + j];
        g[j] += c * (w2 * zeta + t * eta);       // X_j N
        g[nn + j] += c * (w2 * eta - t * zeta);  // Y_j N
      }
    }
    return g;
  };
  // |grad_H N| = |z| / N <= 1 and |zeta0 . z| <= N.
  const double m = detail::maximize(
      [r1, r2](double r) { return detail::cutoff(r, r1, r2) + r * std::abs(detail::cutoff_prime(r, r1, r2)); }, 0.0,
      r2);
  const double sqrt_pi = std::sqrt(std::numbers::pi);
  if (mode == DistanceMode::exact_cc) {
    d.lip_bound = m * detail::kLipSafety;
    d.support_radius = sqrt_pi * r2;  // N <= d_cc(0, .) <= sqrt(pi) N
  } else {
    d.lip_bound = sqrt_pi * m * detail::kLipSafety;
    d.support_radius = r2;
  }
  d.anchor = Point(d.dim);
  return ScalarField(std::move(d));
}

/// a f + b g. Metadata is combined conservatively.
inline ScalarField combine(const ScalarField& f, double a, const ScalarField& g, double b) {
  if (f.dim() != g.dim() || f.geometry() != g.geometry()) throw DomainError("combine: incompatible fields");
  if (f.metric_factor() != g.metric_factor()) throw DomainError("combine: fields expressed in different metrics");
  FieldData d;
  d.name = "combination";
  d.geometry = f.geometry();
  d.dim = f.dim();
  d.fn = [f, a, g, b](const Point& x) { return a * f(x) + b * g(x); };
  if (f.data().gradient && g.data().gradient) {
    d.gradient = [f, a, g, b](const Point& x) -> std::optional<Point> {
      auto gf = f.gradient(x);
      auto gg = g.gradient(x);
      if (!gf || !gg) return std::nullopt;
      return (*gf) * a + (*gg) * b;
    };
  }
  d.lip_bound = (std::abs(a) * f.lip_bound() + std::abs(b) * g.lip_bound()) / f.metric_factor();
  d.anchor = f.anchor();
  if (f.support_radius() && g.support_radius()) {
    // Base-metric radii; the anchor distance is only known for Euclidean anchors.
    const double sf = *f.data().support_radius;
    const double sg = *g.data().support_radius;
    double gap = 0.0;
    if (!(f.anchor() == g.anchor())) {
      if (f.geometry() != FieldGeometry::euclidean)
        throw DomainError("combine: Heisenberg fields must share their anchor");
      gap = norm(g.anchor() - f.anchor());
    }
    d.support_radius = std::max(sf, sg + gap);
  }
  d.kinks = f.kinks();
  d.kinks.insert(d.kinks.end(), g.kinks().begin(), g.kinks().end());
  std::sort(d.kinks.begin(), d.kinks.end());
  d.kinks.erase(std::unique(d.kinks.begin(), d.kinks.end()), d.kinks.end());
  if (f.anchor() == g.anchor()) {
    d.radial_kinks = f.data().radial_kinks;
    d.radial_kinks.insert(d.radial_kinks.end(), g.data().radial_kinks.begin(), g.data().radial_kinks.end());
  }
  return ScalarField(std::move(d)).in_rescaled_metric(f.metric_factor());
}

// ------------------------------------------------------- config catalog ---

struct FieldSpec {
  std::string name;
  std::map<std::string, std::vector<double>> params;
};

namespace detail {

inline void check_keys(const FieldSpec& spec, std::initializer_list<const char*> allowed) {
  for (const auto& [k, v] : spec.params) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || k == a;
    if (!ok) throw ConfigError("field." + k, "unknown parameter for field '" + spec.name + "'");
  }
}

}  // namespace detail

/// Builds a catalog field by name for the given space.
inline ScalarField make_field(const FieldSpec& spec, const SpaceHandle& space) {
  const auto dim = space.dim();
  const auto& p = spec.params;
  const Point zero(dim);
  ScalarField f;
  double length = 1.0;
  space.visit([&](const auto& s) { length = s.frame().length; });

  if (const auto* hs = space.heisenberg()) {
    const int n = hs->n();
    Point e1 = Point::unit(2 * static_cast<std::size_t>(n), 0);
    if (spec.name == "constant") {
      detail::check_keys(spec, {"value"});
      f = constant_field(dim, detail::scalar_param(p, "value", 0.0), FieldGeometry::heisenberg);
    } else if (spec.name == "horizontal-linear") {
      detail::check_keys(spec, {"direction"});
      f = horizontal_linear(detail::vec_param(p, "direction", e1.size(), e1), n);
    } else if (spec.name == "horizontal-linear-cutoff") {
      detail::check_keys(spec, {"direction", "r1", "r2"});
      f = horizontal_linear_cutoff(detail::vec_param(p, "direction", e1.size(), e1), n,
                                   detail::scalar_param(p, "r1", 1.0), detail::scalar_param(p, "r2", 2.0),
                                   hs->mode());
    } else {
      throw ConfigError("field.name", "unknown Heisenberg field '" + spec.name + "'");
    }
  } else {
    const Point center = detail::vec_param(p, "center", dim, zero);
    const Point e1 = Point::unit(dim, 0);
    if (spec.name == "constant") {
      detail::check_keys(spec, {"value"});
      f = constant_field(dim, detail::scalar_param(p, "value", 0.0));
    } else if (spec.name == "linear") {
      detail::check_keys(spec, {"slope", "offset"});
      f = linear_field(detail::vec_param(p, "slope", dim, e1), detail::scalar_param(p, "offset", 0.0));
    } else if (spec.name == "tent") {
      detail::check_keys(spec, {"center", "radius", "height"});
      f = tent_field(center, detail::scalar_param(p, "radius", 1.0), detail::scalar_param(p, "height", 1.0));
    } else if (spec.name == "bump") {
      detail::check_keys(spec, {"center", "radius", "height"});
      f = bump_field(center, detail::scalar_param(p, "radius", 1.0), detail::scalar_param(p, "height", 1.0));
    } else if (spec.name == "linear-cutoff") {
      detail::check_keys(spec, {"slope", "center", "r1", "r2"});
      f = linear_cutoff_field(detail::vec_param(p, "slope", dim, e1), center, detail::scalar_param(p, "r1", 1.0),
                              detail::scalar_param(p, "r2", 2.0));
    } else if (spec.name == "mollified-step") {
      detail::check_keys(spec, {"center", "half_length", "width", "height"});
      f = mollified_step_field(center, detail::scalar_param(p, "half_length", 1.0),
                               detail::scalar_param(p, "width", 0.1), detail::scalar_param(p, "height", 1.0));
    } else if (spec.name == "product-bump") {
      detail::check_keys(spec, {"center", "radius", "height"});
      f = product_bump_field(center, detail::scalar_param(p, "radius", 1.0), detail::scalar_param(p, "height", 1.0));
    } else {
      throw ConfigError("field.name", "unknown Euclidean field '" + spec.name + "'");
    }
  }
  return length == 1.0 ? f : f.in_rescaled_metric(length);
}

// ------------------------------------------------------------- slopes ---

struct SlopeEstimate {
  std::vector<double> radii;
  std::vector<double> values;
  double estimate = 0.0;
  bool stabilized = false;
};

/// Finite-difference slope max |f(y) - f(x)| / d(x, y) over sampled y with
/// d(x, y) in [h/2, h].
template <MetricMeasureSpace S>
double fd_slope_at_radius(const ScalarField& f, const S& space, const Point& x, double h, std::uint64_t samples,
                          std::uint64_t seed) {
  if (!(h > 0.0)) throw DomainError("lip_at: h must be positive");
  if (samples < 1) throw DomainError("lip_at: samples must be >= 1");
  CounterRng rng(seed, 0x6c6970ULL);
  double best = 0.0;
  for (std::uint64_t i = 0; i < samples; ++i) {
    const Point y = space.annulus_sample(x, 0.5 * h, h, rng);
    const double d = space.distance(x, y);
    if (!(d > 0.0)) throw NumericalFailure("lip_at: degenerate sample at zero distance");
    best = std::max(best, std::abs(f.difference(x, y)) / d);
  }
  return best;
}

/// Shrinking-radius slope h in {1e-2, 1e-3, 1e-4} with a stabilization check:
/// successive values must differ by less than `rel_tol` (relative, or
/// absolute below 1e-12) at the last step.
template <MetricMeasureSpace S>
SlopeEstimate fd_slope(const ScalarField& f, const S& space, const Point& x, std::uint64_t samples,
                       std::uint64_t seed, double rel_tol = 1e-2) {
  SlopeEstimate e;
  e.radii = {1e-2, 1e-3, 1e-4};
  for (double h : e.radii) e.values.push_back(fd_slope_at_radius(f, space, x, h, samples, seed));
  const double a = e.values[1];
  const double b = e.values[2];
  // First-order extrapolation in h with ratio 10.
  e.estimate = std::max(0.0, b + (b - a) / 9.0);
  const double scale = std::max(std::abs(b), 1e-12);
  const double last = std::abs(b - a);
  const double first = std::abs(a - e.values[0]);
  e.stabilized = last <= rel_tol * scale && last <= first + 1e-12 * scale;
  return e;
}

/// lip(f)(x): the analytic slope when present, else the finite-difference value at radius h.
template <MetricMeasureSpace S>
double lip_at(const ScalarField& f, const S& space, const Point& x, double h, std::uint64_t samples,
              std::uint64_t seed) {
  if (!(h > 0.0)) throw DomainError("lip_at: h must be positive");
  if (samples < 1) throw DomainError("lip_at: samples must be >= 1");
  if (auto s = f.analytic_slope(x)) return *s;
  return fd_slope_at_radius(f, space, x, h, samples, seed);
}

inline double lip_at(const ScalarField& f, const SpaceHandle& space, const Point& x, double h, std::uint64_t samples,
                     std::uint64_t seed) {
  return space.visit([&](const auto& s) { return lip_at(f, s, x, h, samples, seed); });
}

// ------------------------------------------------------------ Cheeger ---

struct CheegerOptions {
  std::uint64_t samples = 1'000'000;
  int batches = 32;
  int jobs = 1;
  std::uint64_t seed = 1;
  /// Per-point sample count for the finite-difference slope; 0 disables it.
  std::uint64_t fd_samples = 0;
  double rel_tol = 1e-10;
};

/// Ch_p(f) = integral of lip(f)^p dm, using the identification |D_p f| = lip f
/// for Lipschitz f. Deterministic quadrature on unscaled R^1 and R^2,
/// batch-means Monte Carlo otherwise.
template <MetricMeasureSpace S>
FunctionalEstimate cheeger_energy(const ScalarField& f, const S& space, double p, const CheegerOptions& opt = {}) {
  if (!(p > 1.0)) throw DomainError("cheeger_energy: p must exceed 1");
  const auto support = f.support_radius();
  if (!support) throw DomainError("cheeger_energy: field has no support radius");
  if (!f.has_analytic_slope() && opt.fd_samples == 0)
    throw DomainError("cheeger_energy: no analytic slope and no finite-difference budget");
  FunctionalEstimate e;
  e.p = p;
  e.method = Method::deterministic;
  const double R = *support;
  if (R == 0.0 || f.lip_bound() == 0.0) return e;

  auto slope = [&](const Point& x) {
    if (auto s = f.analytic_slope(x)) return *s;
    return fd_slope(f, space, x, opt.fd_samples, opt.seed).estimate;
  };
  const Point& a = f.anchor();
  const bool unit_frame = space.frame().length == 1.0 && space.frame().mass == 1.0;
  QuadOptions qo;
  qo.abs_tol = 0.0;
  qo.rel_tol = opt.rel_tol;
  if constexpr (std::is_same_v<S, EuclideanSpace>) {
    if (unit_frame && space.n() == 1) {
      std::vector<double> pts{a[0] - R};
      for (double k : f.kinks())
        if (k > a[0] - R && k < a[0] + R) pts.push_back(k);
      pts.push_back(a[0] + R);
      std::sort(pts.begin(), pts.end());
      auto r = integrate(
          [&](double s) {
            const Point x{s};
            return std::pow(slope(x), p) * space.density(x);
          },
          std::span<const double>(pts), qo);
      e.value = r.value;
      e.quadrature_error = r.error;
      e.n_samples = static_cast<std::uint64_t>(r.evaluations);
      e.flagged = !r.converged;
      return e;
    }
    if (unit_frame && space.n() == 2) {
      std::vector<double> pts{0.0};
      for (double k : f.radial_kinks())
        if (k > 0.0 && k < R) pts.push_back(k);
      pts.push_back(R);
      std::sort(pts.begin(), pts.end());
      long evals = 0;
      bool ok = true;
      double err = 0.0;
      auto ring = [&](double rho) {
        auto g = [&](double th) {
          const Point x{a[0] + rho * std::cos(th), a[1] + rho * std::sin(th)};
          return std::pow(slope(x), p) * space.density(x);
        };
        auto r = integrate(g, 0.0, 2.0 * std::numbers::pi, qo);
        evals += r.evaluations;
        ok = ok && r.converged;
        err += rho * r.error;
        return rho * r.value;
      };
      auto r = integrate(ring, std::span<const double>(pts), qo);
      e.value = r.value;
      e.quadrature_error = r.error;
      e.n_samples = static_cast<std::uint64_t>(evals);
      e.flagged = !(ok && r.converged);
      return e;
    }
  }
  // Monte Carlo over the support ball in polar form around the anchor.
  const double D = space.homogeneous_dimension();
  const double mass = space.unit_ball_mass() * std::pow(R, D);
  BatchOptions bo{opt.samples, opt.batches, opt.jobs};
  auto br = run_batches(CounterRng(opt.seed, 0x636865656772ULL), bo, [&](CounterRng& rng) {
    const double r = R * std::pow(rng.uniform(), 1.0 / D);
    const Point x = space.polar_point(a, r, space.sample_direction(rng));
    return mass * std::pow(slope(x), p) * space.density(x);
  });
  e.method = Method::monte_carlo;
  e.value = br.mean;
  e.std_error = br.std_error;
  e.n_samples = br.n_samples;
  return e;
}

inline FunctionalEstimate cheeger_energy(const ScalarField& f, const SpaceHandle& space, double p,
                                         const CheegerOptions& opt = {}) {
  return space.visit([&](const auto& s) { return cheeger_energy(f, s, p, opt); });
}

}  // namespace nlsob
