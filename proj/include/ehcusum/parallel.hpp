// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <span>
#include <thread>
#include <vector>

namespace ehcusum {

struct ParallelOptions {
  std::uint64_t seed = 1;
  unsigned workers = 1;
};

inline unsigned default_workers() {
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Evaluates fn(i) for i in [0, n) on `workers` threads and returns the
/// results in index order. Work is split into contiguous blocks; since
/// each replication seeds its own stream from its index, the output does
/// not depend on the worker count.
template <class Result, class Fn>
std::vector<Result> parallel_map(std::size_t n, unsigned workers, Fn&& fn) {
  std::vector<Result> out(n);
  workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) out[i] = fn(i);
    return out;
  }
  std::vector<std::exception_ptr> errors(workers);
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
      const std::size_t begin = n * w / workers;
      const std::size_t end = n * (w + 1) / workers;
      pool.emplace_back([&, w, begin, end] {
        try {
          for (std::size_t i = begin; i < end; ++i) out[i] = fn(i);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

/// Value with its Monte Carlo standard error.
struct Estimate {
  double value = 0.0;
  double std_error = 0.0;
};

/// Two-pass sample moments, accumulated in index order.
struct SampleSummary {
  std::size_t n = 0;
  double mean = 0.0;
  double variance = 0.0;  // unbiased

  double std_error() const { return n > 1 ? std::sqrt(variance / static_cast<double>(n)) : 0.0; }
  Estimate estimate() const { return {mean, std_error()}; }
};

template <class Range, class Proj>
SampleSummary summarize(const Range& values, Proj proj) {
  SampleSummary s;
  for (const auto& v : values) {
    s.mean += proj(v);
    ++s.n;
  }
  if (s.n == 0) return s;
  s.mean /= static_cast<double>(s.n);
  double ss = 0.0;
  for (const auto& v : values) {
    const double d = proj(v) - s.mean;
    ss += d * d;
  }
  s.variance = s.n > 1 ? ss / static_cast<double>(s.n - 1) : 0.0;
  return s;
}

template <class Range>
SampleSummary summarize(const Range& values) {
  return summarize(values, [](double v) { return v; });
}

/// Unbiased sample covariance of two projections.
template <class Range, class ProjA, class ProjB>
double sample_covariance(const Range& values, ProjA a, ProjB b, double mean_a, double mean_b) {
  double acc = 0.0;
  std::size_t n = 0;
  for (const auto& v : values) {
    acc += (a(v) - mean_a) * (b(v) - mean_b);
    ++n;
  }
  return n > 1 ? acc / static_cast<double>(n - 1) : 0.0;
}

}  // namespace ehcusum
