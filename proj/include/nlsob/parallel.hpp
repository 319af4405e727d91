#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

#include "nlsob/errors.hpp"
#include "nlsob/rng.hpp"

namespace nlsob {

inline constexpr int kMinBatches = 30;

struct BatchOptions {
  std::uint64_t samples = 1'000'000;
  int batches = 32;
  int jobs = 1;  // 0 selects std::thread::hardware_concurrency()
};

struct BatchResult {
  double mean = 0.0;
  double std_error = 0.0;
  std::uint64_t n_samples = 0;
  std::vector<double> batch_means;
};

/// Compensated (Neumaier) running sum.
class KahanSum {
 public:
  void add(double v) noexcept {
    const double t = sum_ + v;
    if (std::abs(sum_) >= std::abs(v))
      comp_ += (sum_ - t) + v;
    else
      comp_ += (v - t) + sum_;
    sum_ = t;
  }
  double value() const noexcept { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

/// Mean and standard error of the mean from a list of independent batch means.
inline BatchResult summarize_batches(std::vector<double> means, std::uint64_t per_batch) {
  BatchResult r;
  const auto b = means.size();
  r.n_samples = per_batch * b;
  if (b == 0) return r;
  KahanSum s;
  for (double m : means) s.add(m);
  r.mean = s.value() / static_cast<double>(b);
  if (b > 1) {
    KahanSum ss;
    for (double m : means) ss.add((m - r.mean) * (m - r.mean));
    r.std_error = std::sqrt(ss.value() / static_cast<double>(b - 1) / static_cast<double>(b));
  }
  r.batch_means = std::move(means);
  return r;
}

/// Batch-means Monte Carlo driver. Batch b draws from base.split(b) and the
/// batch means are reduced in index order, so the result is bit-identical
/// for any number of worker threads.
template <class Kernel>
BatchResult run_batches(const CounterRng& base, const BatchOptions& opt, Kernel&& kernel) {
  if (opt.batches < kMinBatches) throw DomainError("run_batches: at least 30 batches required");
  if (opt.samples == 0) throw DomainError("run_batches: sample budget must be positive");
  const auto nb = static_cast<std::uint64_t>(opt.batches);
  const std::uint64_t per_batch = std::max<std::uint64_t>(1, (opt.samples + nb - 1) / nb);
  std::vector<double> means(nb, 0.0);

  auto do_batch = [&](std::uint64_t b) {
    CounterRng rng = base.split(b);
    KahanSum s;
    for (std::uint64_t i = 0; i < per_batch; ++i) s.add(kernel(rng));
    means[b] = s.value() / static_cast<double>(per_batch);
  };

  int jobs = opt.jobs > 0 ? opt.jobs : static_cast<int>(std::thread::hardware_concurrency());
  jobs = std::clamp(jobs, 1, opt.batches);
  if (jobs == 1) {
    for (std::uint64_t b = 0; b < nb; ++b) do_batch(b);
  } else {
    std::atomic<std::uint64_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(jobs));
    for (int w = 0; w < jobs; ++w) {
      pool.emplace_back([&] {
        for (;;) {
          const auto b = next.fetch_add(1);
          if (b >= nb) return;
          try {
            do_batch(b);
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
            next.store(nb);
            return;
          }
        }
      });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
  }
  return summarize_batches(std::move(means), per_batch);
}

/// Applies fn(i) for i in [0, n) on up to `jobs` threads; results land in index order.
template <class T, class Fn>
std::vector<T> parallel_map(std::size_t n, int jobs, Fn&& fn) {
  std::vector<T> out(n);
  jobs = jobs > 0 ? jobs : static_cast<int>(std::thread::hardware_concurrency());
  jobs = std::clamp(jobs, 1, static_cast<int>(std::max<std::size_t>(n, 1)));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) out[i] = fn(i);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (int w = 0; w < jobs; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const auto i = next.fetch_add(1);
        if (i >= n) return;
        try {
          out[i] = fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          next.store(n);
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return out;
}

}  // namespace nlsob
