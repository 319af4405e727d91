#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>

#include "nlsob/errors.hpp"

namespace nlsob {

inline constexpr std::size_t kMaxDim = 16;

/// Fixed-capacity coordinate vector. Every space interprets the coordinates
/// of a Point in its own way (Cartesian for R^n, (zeta, eta, t) for H^n).
class Point {
 public:
  Point() = default;

  explicit Point(std::size_t dim) : dim_(dim) {
    if (dim > kMaxDim) throw DomainError("Point: dimension exceeds kMaxDim");
  }

  Point(std::initializer_list<double> coords) : Point(coords.size()) {
    std::copy(coords.begin(), coords.end(), c_.begin());
  }

  explicit Point(std::span<const double> coords) : Point(coords.size()) {
    std::copy(coords.begin(), coords.end(), c_.begin());
  }

  static Point zeros(std::size_t dim) { return Point(dim); }

  static Point unit(std::size_t dim, std::size_t axis) {
    Point p(dim);
    p[axis] = 1.0;
    return p;
  }

  std::size_t size() const noexcept { return dim_; }

  double& operator[](std::size_t i) noexcept { return c_[i]; }
  double operator[](std::size_t i) const noexcept { return c_[i]; }

  double* begin() noexcept { return c_.data(); }
  double* end() noexcept { return c_.data() + dim_; }
  const double* begin() const noexcept { return c_.data(); }
  const double* end() const noexcept { return c_.data() + dim_; }

  std::span<const double> coords() const noexcept { return {c_.data(), dim_}; }

  Point& operator+=(const Point& o) noexcept {
    for (std::size_t i = 0; i < dim_; ++i) c_[i] += o.c_[i];
    return *this;
  }
  Point& operator-=(const Point& o) noexcept {
    for (std::size_t i = 0; i < dim_; ++i) c_[i] -= o.c_[i];
    return *this;
  }
  Point& operator*=(double s) noexcept {
    for (std::size_t i = 0; i < dim_; ++i) c_[i] *= s;
    return *this;
  }

  friend Point operator+(Point a, const Point& b) noexcept { return a += b; }
  friend Point operator-(Point a, const Point& b) noexcept { return a -= b; }
  friend Point operator*(double s, Point a) noexcept { return a *= s; }
  friend Point operator*(Point a, double s) noexcept { return a *= s; }

  friend bool operator==(const Point& a, const Point& b) noexcept {
    return a.dim_ == b.dim_ && std::equal(a.begin(), a.end(), b.begin());
  }

 private:
  std::array<double, kMaxDim> c_{};
  std::size_t dim_ = 0;
};

inline double dot(const Point& a, const Point& b) noexcept {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(const Point& a) noexcept { return std::sqrt(dot(a, a)); }

/// First `k` coordinates of `a`.
inline Point head(const Point& a, std::size_t k) {
  Point h(k);
  for (std::size_t i = 0; i < k; ++i) h[i] = a[i];
  return h;
}

}  // namespace nlsob
