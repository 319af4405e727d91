#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>

namespace nlsob {

/// SplitMix64 finalizer; a bijective avalanche mix on 64-bit words.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Counter-based generator: the i-th draw is two keyed rounds of mix64 over
/// key + i * golden, a pure function of (seed, stream, i). Streams derived with split() are
/// independent for practical purposes, so workers never share state.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0) noexcept
      : key_(mix64(seed ^ mix64(stream + kGolden))), key2_(mix64(key_ ^ kSecond)) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() noexcept { return mix64(mix64(key_ + (++counter_) * kGolden) ^ key2_); }

  /// Uniform on the open interval (0, 1).
  double uniform() noexcept {
    return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(double a, double b) noexcept { return a + (b - a) * uniform(); }

  /// Standard normal via Box-Muller (second variate discarded).
  double normal() noexcept {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  CounterRng split(std::uint64_t stream) const noexcept { return CounterRng(key_, stream); }

  std::uint64_t counter() const noexcept { return counter_; }

 private:
  static constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;
  static constexpr std::uint64_t kSecond = 0xd1b54a32d192ed03ULL;
  std::uint64_t key_;
  std::uint64_t key2_;
  std::uint64_t counter_ = 0;
};

}  // namespace nlsob
