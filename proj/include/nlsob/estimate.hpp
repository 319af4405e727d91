#pragma once

#include <cstdint>
#include <string>

namespace nlsob {

enum class Method { deterministic, monte_carlo };

inline std::string to_string(Method m) { return m == Method::deterministic ? "deterministic" : "monte_carlo"; }

/// One functional evaluation. std_error is 0 exactly when the method is
/// deterministic; quadrature and truncation errors are carried separately.
struct FunctionalEstimate {
  double value = 0.0;
  double std_error = 0.0;
  std::uint64_t n_samples = 0;
  Method method = Method::deterministic;
  double delta = 0.0;
  double p = 0.0;
  double quadrature_error = 0.0;
  double truncation_bound = 0.0;
  /// Set when a budget or tolerance target was not met.
  bool flagged = false;
  std::string note;
};

}  // namespace nlsob
