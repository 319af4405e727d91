#pragma once

// Independent reference computations used by the tests. Nothing here calls
// into the library's estimators.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <tuple>
#include <utility>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

namespace oracle {

/// Shortest closed horizontal polygon through the origin of H^1 whose
/// endpoint lies on the t axis, measured as perimeter / sqrt(|t|), found by
/// gradient descent over the vertices. For the group law with the factor
/// 2 Im<z, conj z'> the endpoint is (0, 0, -4 A) with A the signed area.
struct PolygonResult {
  double ratio = 0.0;
  int iterations = 0;
};

inline PolygonResult polygon_vertical_distance(int segments, std::uint64_t seed, int max_iter = 20000) {
  const int N = segments;
  const int M = 2 * N;
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> jitter(-0.05, 0.05);
  // v = (x_0..x_{N-1}, y_0..y_{N-1}); start from a perturbed, positively oriented ellipse.
  std::vector<double> v(M);
  for (int k = 0; k < N; ++k) {
    const double th = 2.0 * std::numbers::pi * k / N;
    v[k] = 1.6 * std::cos(th) + jitter(gen);
    v[N + k] = 0.6 * std::sin(th) + jitter(gen);
  }
  auto eval = [&](const std::vector<double>& w, std::vector<double>* g) {
    const double* X = w.data();
    const double* Y = w.data() + N;
    double P = 0.0, A = 0.0;
    for (int k = 0; k < N; ++k) {
      const int j = (k + 1) % N;
      P += std::hypot(X[j] - X[k], Y[j] - Y[k]);
      A += 0.5 * (X[k] * Y[j] - X[j] * Y[k]);
    }
    const double T = 4.0 * A;
    if (!(T > 0.0)) return std::numeric_limits<double>::infinity();
    const double F = P / std::sqrt(T);
    if (g) {
      for (int k = 0; k < N; ++k) {
        const int j = (k + 1) % N;
        const int i = (k + N - 1) % N;
        const double lj = std::hypot(X[j] - X[k], Y[j] - Y[k]);
        const double li = std::hypot(X[k] - X[i], Y[k] - Y[i]);
        const double dPx = (X[k] - X[j]) / lj + (X[k] - X[i]) / li;
        const double dPy = (Y[k] - Y[j]) / lj + (Y[k] - Y[i]) / li;
        (*g)[k] = dPx / std::sqrt(T) - F * (Y[j] - Y[i]) / T;
        (*g)[N + k] = dPy / std::sqrt(T) - F * (X[i] - X[j]) / T;
      }
    }
    return F;
  };
  auto dotv = [&](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (int i = 0; i < M; ++i) s += a[i] * b[i];
    return s;
  };
  // Limited-memory BFGS with Armijo backtracking.
  const int mem = 12;
  std::vector<std::vector<double>> S, Yh;
  std::vector<double> rho_h;
  std::vector<double> g(M), gn(M), d(M), vn(M);
  double F = eval(v, &g);
  PolygonResult res;
  int stall = 0;
  for (int it = 0; it < max_iter; ++it) {
    if (std::sqrt(dotv(g, g)) < 1e-11) break;
    d = g;
    std::vector<double> alpha(S.size());
    for (int m = static_cast<int>(S.size()) - 1; m >= 0; --m) {
      alpha[m] = rho_h[m] * dotv(S[m], d);
      for (int i = 0; i < M; ++i) d[i] -= alpha[m] * Yh[m][i];
    }
    if (!S.empty()) {
      const double gamma = dotv(S.back(), Yh.back()) / dotv(Yh.back(), Yh.back());
      for (double& e : d) e *= gamma;
    } else {
      for (double& e : d) e *= 1e-3;
    }
    for (std::size_t m = 0; m < S.size(); ++m) {
      const double b = rho_h[m] * dotv(Yh[m], d);
      for (int i = 0; i < M; ++i) d[i] += S[m][i] * (alpha[m] - b);
    }
    double slope = dotv(g, d);
    if (!(slope > 0.0)) {
      S.clear();
      Yh.clear();
      rho_h.clear();
      d = g;
      for (double& e : d) e *= 1e-3;
      slope = dotv(g, d);
    }
    double step = 1.0;
    double Fn = 0.0;
    for (;;) {
      for (int i = 0; i < M; ++i) vn[i] = v[i] - step * d[i];
      Fn = eval(vn, &gn);
      if (Fn <= F - 1e-4 * step * slope) break;
      step *= 0.5;
      if (step < 1e-20) {
        res.ratio = F;
        return res;
      }
    }
    std::vector<double> s(M), y(M);
    for (int i = 0; i < M; ++i) {
      s[i] = vn[i] - v[i];
      y[i] = gn[i] - g[i];
    }
    const double sy = dotv(s, y);
    if (sy > 1e-300) {
      S.push_back(std::move(s));
      Yh.push_back(std::move(y));
      rho_h.push_back(1.0 / sy);
      if (static_cast<int>(S.size()) > mem) {
        S.erase(S.begin());
        Yh.erase(Yh.begin());
        rho_h.erase(rho_h.begin());
      }
    }
    stall = F - Fn <= 1e-15 * F ? stall + 1 : 0;
    v = vn;
    g = gn;
    F = Fn;
    if (stall >= 20) break;
    res.iterations = it + 1;
  }
  res.ratio = F;
  return res;
}

/// Endpoint of the unit-speed horizontal arc of length L from the origin of
/// H^1 whose projection turns by the total angle phi, with t obtained by
/// quadrature of 2 (eta zeta' - zeta eta').
inline std::array<double, 3> arc_endpoint(double L, double phi) {
  using C = std::complex<double>;
  const double k = phi / L;
  auto z = [&](double s) { return k == 0.0 ? C(s, 0.0) : (std::exp(C(0.0, k * s)) - 1.0) / C(0.0, k); };
  auto dz = [&](double s) { return std::exp(C(0.0, k * s)); };
  auto integrand = [&](double s) {
    const C a = z(s), b = dz(s);
    return 2.0 * (a.imag() * b.real() - a.real() * b.imag());
  };
  const double t = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(integrand, 0.0, L, 20, 1e-14);
  const C e = z(L);
  return {e.real(), e.imag(), t};
}

/// Integral of F(|z|) over the CC unit ball of H^1, from its profile: the
/// unit sphere is swept by |z| = 2 sin(phi/2)/phi, |t| = 2 (phi - sin phi)/phi^2
/// for phi in [0, 2 pi], so the ball is the union over t of discs of radius
/// |z|(t). `disc(rho)` is the integral of F over a disc of radius rho.
template <class Disc>
double cc_ball_profile_integral(Disc disc) {
  auto rho = [](double p) { return p == 0.0 ? 1.0 : 2.0 * std::sin(0.5 * p) / p; };
  auto dtau = [](double p) {
    if (p < 1e-4) return 1.0 / 3.0 - p * p / 20.0;
    return 2.0 * ((1.0 - std::cos(p)) * p * p - 2.0 * p * (p - std::sin(p))) / (p * p * p * p);
  };
  auto f = [&](double p) { return disc(rho(p)) * dtau(p); };
  return 2.0 * boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, 0.0, 2.0 * std::numbers::pi, 25, 1e-14);
}

inline double cc_unit_ball_volume() {
  return cc_ball_profile_integral([](double r) { return std::numbers::pi * r * r; });
}

/// Integral of |zeta|^p over the CC unit ball of H^1.
inline double cc_unit_ball_moment(double p) {
  const double angular = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
      [p](double th) { return std::pow(std::abs(std::cos(th)), p); }, 0.0, 2.0 * std::numbers::pi, 25, 1e-14);
  return cc_ball_profile_integral([&](double r) { return angular * std::pow(r, p + 2.0) / (p + 2.0); });
}

/// C^H_{1,p} = p * integral of ||z||^{-(Q+p)} over {|zeta| >= 1}. In polar
/// coordinates this equals (Q + p) times the |zeta|^p moment of the unit ball.
inline double heisenberg_constant(double p) { return (4.0 + p) * cc_unit_ball_moment(p); }

/// I_delta of the unit tent max(0, 1 - |x|) on R^1 with Lebesgue measure.
/// For fixed x the set {y : |f(y) - f(x)| > delta} is a union of intervals
/// known in closed form, and the kernel delta^p / (2 |x - y|^{1+p}) integrates
/// to powers of the distance; only the outer integral is numerical.
inline double tent_i_delta(double p, double delta) {
  using boost::math::quadrature::gauss_kronrod;
  auto inner = [=](double x) {
    const double ax = std::abs(x);
    const double fx = std::max(0.0, 1.0 - ax);
    double s = 0.0;
    const double a = 1.0 - fx - delta;  // f(y) > f(x) + delta  <=>  |y| < a
    if (a > 0.0) s += (std::pow(ax - a, -p) - std::pow(ax + a, -p)) / p;
    if (fx - delta > 0.0) {
      const double b = 1.0 - fx + delta;  // f(y) < f(x) - delta  <=>  |y| > b
      s += (std::pow(b - x, -p) + std::pow(b + x, -p)) / p;
    }
    return 0.5 * std::pow(delta, p) * s;
  };
  double total = 0.0;
  // Kinks at |x| = delta, jumps at |x| = 1 - delta.
  std::vector<double> pts{-1.0, -delta, 0.0, delta, 1.0, -(1.0 - delta), 1.0 - delta};
  std::sort(pts.begin(), pts.end());
  for (std::size_t i = 0; i + 1 < pts.size(); ++i)
    if (pts[i + 1] > pts[i]) total += gauss_kronrod<double, 61>::integrate(inner, pts[i], pts[i + 1], 15, 1e-12);
  // |x| > 1: substitute x = 1 / v.
  auto far = [&](double v) { return v == 0.0 ? 0.0 : inner(1.0 / v) / (v * v); };
  total += 2.0 * gauss_kronrod<double, 61>::integrate(far, 0.0, 1.0, 15, 1e-12);
  return total;
}

/// Koranyi unit ball of H^1: integral over |t| <= 1 of pi sqrt(1 - t^2).
inline double koranyi_unit_ball_volume() { return std::numbers::pi * std::numbers::pi / 2.0; }

}  // namespace oracle
