#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

namespace nlsob {

struct QuadOptions {
  double abs_tol = 1e-12;
  double rel_tol = 1e-10;
  int max_subdivisions = 5000;
};

struct QuadResult {
  double value = 0.0;
  double error = 0.0;
  long evaluations = 0;
  bool converged = true;
};

namespace detail {

// 7-point Gauss / 15-point Kronrod pair on [-1, 1].
inline constexpr std::array<double, 8> kKronrodNodes = {
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.0};
inline constexpr std::array<double, 8> kKronrodWeights = {
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
inline constexpr std::array<double, 4> kGaussWeights = {
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

struct Segment {
  double a, b, value, error;
  bool operator<(const Segment& o) const noexcept { return error < o.error; }
};

template <class F>
Segment gauss_kronrod15(F& f, double a, double b) {
  const double c = 0.5 * (a + b);
  const double h = 0.5 * (b - a);
  const double fc = f(c);
  double kronrod = fc * kKronrodWeights[7];
  double gauss = fc * kGaussWeights[3];
  for (int j = 0; j < 7; ++j) {
    const double dx = h * kKronrodNodes[j];
    const double s = f(c - dx) + f(c + dx);
    kronrod += kKronrodWeights[j] * s;
    if (j % 2 == 1) gauss += kGaussWeights[j / 2] * s;
  }
  return {a, b, kronrod * h, std::abs((kronrod - gauss) * h)};
}

}  // namespace detail

/// Globally adaptive Gauss-Kronrod quadrature over the consecutive pieces
/// [pts[0], pts[1]], [pts[1], pts[2]], ... . Breakpoints should sit on known
/// kinks or jumps of the integrand; pieces of zero length are skipped.
template <class F>
QuadResult integrate(F&& f, std::span<const double> pts, const QuadOptions& opt = {}) {
  QuadResult out;
  if (pts.size() < 2) return out;
  std::vector<detail::Segment> heap;
  heap.reserve(64);
  double total = 0.0;
  double total_err = 0.0;
  double scale = 0.0;
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    if (!(pts[i + 1] > pts[i])) continue;
    auto s = detail::gauss_kronrod15(f, pts[i], pts[i + 1]);
    out.evaluations += 15;
    total += s.value;
    total_err += s.error;
    scale = std::max(scale, std::abs(pts[i + 1] - pts[i]));
    heap.push_back(s);
  }
  std::make_heap(heap.begin(), heap.end());
  std::vector<detail::Segment> frozen;
  int splits = 0;
  while (!heap.empty() && total_err > std::max(opt.abs_tol, opt.rel_tol * std::abs(total))) {
    if (splits >= opt.max_subdivisions) {
      out.converged = false;
      break;
    }
    std::pop_heap(heap.begin(), heap.end());
    const auto worst = heap.back();
    heap.pop_back();
    const double mid = 0.5 * (worst.a + worst.b);
    if (!(mid > worst.a && mid < worst.b) ||
        (worst.b - worst.a) < 1e-15 * std::max(scale, std::abs(mid))) {
      // Cannot refine further; keep its contribution and error as they are.
      frozen.push_back(worst);
      continue;
    }
    auto left = detail::gauss_kronrod15(f, worst.a, mid);
    auto right = detail::gauss_kronrod15(f, mid, worst.b);
    out.evaluations += 30;
    ++splits;
    total += left.value + right.value - worst.value;
    total_err += left.error + right.error - worst.error;
    heap.push_back(left);
    std::push_heap(heap.begin(), heap.end());
    heap.push_back(right);
    std::push_heap(heap.begin(), heap.end());
  }
  // Re-sum from the pieces so that the reported value carries no drift from
  // the incremental updates above.
  double value = 0.0;
  double err = 0.0;
  for (const auto& s : heap) {
    value += s.value;
    err += s.error;
  }
  for (const auto& s : frozen) {
    value += s.value;
    err += s.error;
  }
  out.value = value;
  out.error = err;
  if (!frozen.empty() && err > std::max(opt.abs_tol, opt.rel_tol * std::abs(value)))
    out.converged = false;
  return out;
}

template <class F>
QuadResult integrate(F&& f, double a, double b, const QuadOptions& opt = {}) {
  if (a == b) return {};
  if (a > b) {
    auto r = integrate(std::forward<F>(f), b, a, opt);
    r.value = -r.value;
    return r;
  }
  const std::array<double, 2> pts{a, b};
  return integrate(std::forward<F>(f), std::span<const double>(pts), opt);
}

/// Integral over [a, inf) through the map x = a + s / (1 - s), s in [0, 1).
template <class F>
QuadResult integrate_upper_tail(F&& f, double a, const QuadOptions& opt = {}) {
  auto g = [&](double s) {
    const double one_minus = 1.0 - s;
    const double x = a + s / one_minus;
    const double v = f(x) / (one_minus * one_minus);
    return std::isfinite(v) ? v : 0.0;
  };
  return integrate(g, 0.0, 1.0, opt);
}

/// Integral over (-inf, b].
template <class F>
QuadResult integrate_lower_tail(F&& f, double b, const QuadOptions& opt = {}) {
  return integrate_upper_tail([&](double x) { return f(2.0 * b - x); }, b, opt);
}

}  // namespace nlsob
