// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "ehcusum/change_model.hpp"
#include "ehcusum/error.hpp"
#include "ehcusum/harvest_battery.hpp"

namespace ehcusum {

/// Stationary battery density f_B sampled on a uniform grid over
/// [0, grid_max]. Node `es_index` sits exactly on E_s.
struct DensityGrid {
  double grid_max = 0.0;
  std::size_t n_points = 0;
  double step = 0.0;
  double e_s = 0.0;
  std::size_t es_index = 0;
  std::vector<double> values;
  std::size_t iterations = 0;
  double residual = 0.0;  // sup-norm change under one more normalized update

  double node(std::size_t i) const { return step * static_cast<double>(i); }

  /// Trapezoidal integral of f_B over nodes [first, last].
  double integral(std::size_t first, std::size_t last) const {
    double sum = 0.0;
    for (std::size_t i = first; i < last; ++i) sum += values[i] + values[i + 1];
    return 0.5 * step * sum;
  }

  double mass() const { return integral(0, n_points - 1); }

  /// P(B >= E_s) under f_B.
  double mass_above_sense_cost() const { return integral(es_index, n_points - 1) / mass(); }

  /// CDF at every node.
  std::vector<double> cdf_nodes() const {
    std::vector<double> cdf(n_points, 0.0);
    for (std::size_t i = 1; i < n_points; ++i)
      cdf[i] = cdf[i - 1] + 0.5 * step * (values[i - 1] + values[i]);
    const double total = cdf.back();
    for (auto& c : cdf) c /= total;
    return cdf;
  }
};

struct StationarySolverOptions {
  /// Defaults to E_s + 30 / theta*, theta* the Cramer root of H - E_s.
  std::optional<double> grid_max;
  std::size_t n_points = 4096;
  double tol = 1e-10;
  std::size_t max_iterations = 100'000;
};

inline double default_grid_max(const HarvestModel& harvest, double e_s) {
  return e_s + 30.0 / harvest.cramer_root(e_s);
}

namespace detail {

/// Discretized right-hand side of the stationary balance equation
///   f(z) = int_{E_s}^{z+E_s} f_H(z+E_s-b) f(b) db + int_0^{min(z,E_s)} f_H(z-b) f(b) db
/// with trapezoidal weights. Both integrals are convolutions against the
/// sampled harvest density, evaluated together with one FFT.
class BalanceOperator {
 public:
  BalanceOperator(const HarvestModel& harvest, std::size_t n, double step, std::size_t es_index)
      : n_(n), m_(es_index), step_(step), kernel_(n) {
    for (std::size_t k = 0; k < n; ++k) kernel_[k] = harvest.pdf(step * static_cast<double>(k));
    fft_size_ = 1;
    while (fft_size_ < 2 * n) fft_size_ <<= 1;
    std::vector<double> padded(fft_size_, 0.0);
    std::copy(kernel_.begin(), kernel_.end(), padded.begin());
    fft_.fwd(kernel_hat_, padded);
    buffer_.assign(fft_size_, 0.0);
  }

  void apply(const std::vector<double>& f, std::vector<double>& out) {
    std::fill(buffer_.begin(), buffer_.end(), 0.0);
    for (std::size_t j = 0; j <= m_; ++j) buffer_[j] += f[j];
    for (std::size_t j = 0; j + m_ < n_; ++j) buffer_[j] += f[j + m_];
    fft_.fwd(spectrum_, buffer_);
    for (std::size_t k = 0; k < spectrum_.size(); ++k) spectrum_[k] *= kernel_hat_[k];
    fft_.inv(conv_, spectrum_);

    out.resize(n_);
    const auto& g = kernel_;
    for (std::size_t i = 0; i < n_; ++i) {
      const std::size_t top = std::min(i, m_);
      double v = conv_[i];
      v -= 0.5 * g[i] * f[0] + 0.5 * g[i - top] * f[top];  // below E_s
      v -= 0.5 * g[i] * f[m_];                             // above E_s, lower end
      if (i + m_ < n_) v -= 0.5 * g[0] * f[i + m_];        // above E_s, upper end
      out[i] = std::max(0.0, step_ * v);
    }
  }

 private:
  std::size_t n_;
  std::size_t m_;
  double step_;
  std::vector<double> kernel_;
  std::size_t fft_size_ = 0;
  Eigen::FFT<double> fft_;
  std::vector<std::complex<double>> kernel_hat_;
  std::vector<std::complex<double>> spectrum_;
  std::vector<double> buffer_;
  std::vector<double> conv_;
};

inline double normalize(std::vector<double>& f, double step) {
  double sum = 0.0;
  for (std::size_t i = 0; i + 1 < f.size(); ++i) sum += f[i] + f[i + 1];
  const double mass = 0.5 * step * sum;
  for (auto& v : f) v /= mass;
  return mass;
}

inline double sup_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

}  // namespace detail

/// Solves for the stationary battery density in the energy-deficit regime
/// by power iteration on the normalized balance operator.
inline DensityGrid solve_stationary_density(const HarvestModel& harvest, double e_s,
                                            const StationarySolverOptions& opts = {}) {
  harvest.validate();
  if (!(e_s > 0.0)) throw std::invalid_argument("solve_stationary_density: E_s must be positive");
  if (!(harvest.mean < e_s))
    throw PreconditionError("surplus regime: stationary density undefined");
  if (opts.n_points < 8) throw std::invalid_argument("solve_stationary_density: too few grid points");

  const double requested_max = opts.grid_max.value_or(default_grid_max(harvest, e_s));
  if (!(requested_max > e_s))
    throw std::invalid_argument("solve_stationary_density: grid_max must exceed E_s");

  DensityGrid grid;
  grid.n_points = opts.n_points;
  grid.e_s = e_s;
  const double nominal_step = requested_max / static_cast<double>(opts.n_points - 1);
  grid.es_index = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(e_s / nominal_step)));
  grid.step = e_s / static_cast<double>(grid.es_index);
  grid.grid_max = grid.step * static_cast<double>(opts.n_points - 1);

  detail::BalanceOperator op(harvest, grid.n_points, grid.step, grid.es_index);
  std::vector<double> f(grid.n_points, 1.0 / grid.grid_max);
  std::vector<double> next;
  double diff = 0.0;
  for (std::size_t it = 1; it <= opts.max_iterations; ++it) {
    op.apply(f, next);
    detail::normalize(next, grid.step);
    diff = detail::sup_diff(next, f);
    f.swap(next);
    grid.iterations = it;
    if (diff < opts.tol) break;
  }
  if (!(diff < opts.tol)) {
    std::ostringstream msg;
    msg << "solve_stationary_density: no convergence after " << opts.max_iterations
        << " iterations (last change " << diff << ")";
    throw ConvergenceError(msg.str());
  }
  op.apply(f, next);
  detail::normalize(next, grid.step);
  grid.residual = detail::sup_diff(next, f);
  grid.values = std::move(f);
  return grid;
}

/// One normalized application of the balance operator to an existing grid.
inline std::vector<double> apply_balance_operator(const DensityGrid& grid,
                                                  const HarvestModel& harvest) {
  detail::BalanceOperator op(harvest, grid.n_points, grid.step, grid.es_index);
  std::vector<double> out;
  op.apply(grid.values, out);
  detail::normalize(out, grid.step);
  return out;
}

/// Two-state gate chain xi_k with alpha = P(0 -> 0), beta = P(1 -> 1).
struct XiChain {
  double alpha = 0.0;
  double beta = 0.0;
  double pi0 = 0.0;
  double pi1 = 0.0;

  static XiChain from_transitions(double alpha, double beta) {
    if (!(alpha > 0.0 && alpha < 1.0 && beta > 0.0 && beta < 1.0))
      throw PreconditionError("XiChain: transition probabilities must lie in (0, 1)");
    const double leave0 = 1.0 - alpha;
    const double leave1 = 1.0 - beta;
    return {alpha, beta, leave1 / (leave0 + leave1), leave0 / (leave0 + leave1)};
  }
};

/// alpha and beta by quadrature against the solved density.
inline XiChain transition_probs(const DensityGrid& density, const HarvestModel& harvest,
                                double e_s) {
  if (density.values.empty() || std::abs(density.e_s - e_s) > 1e-12 * e_s)
    throw std::invalid_argument("transition_probs: density solved for a different E_s");
  const auto& f = density.values;
  const std::size_t m = density.es_index;
  const std::size_t last = density.n_points - 1;
  auto trapezoid = [&](std::size_t a, std::size_t b, auto&& weight) {
    double sum = 0.0;
    for (std::size_t i = a; i < b; ++i)
      sum += weight(density.node(i)) * f[i] + weight(density.node(i + 1)) * f[i + 1];
    return 0.5 * density.step * sum;
  };
  const double below = density.integral(0, m);
  const double above = density.integral(m, last);
  if (!(below > 0.0) || !(above > 0.0))
    throw PreconditionError("transition_probs: zero mass on one side of E_s");
  const double stay0 = trapezoid(0, m, [&](double b) { return harvest.cdf(e_s - b); });
  const double stay1 =
      trapezoid(m, last, [&](double b) { return 1.0 - harvest.cdf(2.0 * e_s - b); });
  return XiChain::from_transitions(stay0 / below, stay1 / above);
}

/// Perron root of Phi(gamma) = [[alpha, (1-alpha) M], [1-beta, beta M]],
/// M = E_0[exp(gamma Z)].
inline double spectral_radius(const XiChain& chain, const ChangeModel& model, double gamma) {
  const double mgf = llr_mgf_pre(model, gamma);
  const double a = chain.alpha;
  const double b = chain.beta * mgf;
  // Discriminant written as a sum of squares to stay exact at gamma = 0, 1.
  const double half_gap = 0.5 * (a - b);
  const double disc = half_gap * half_gap + (1.0 - chain.alpha) * (1.0 - chain.beta) * mgf;
  return 0.5 * (a + b) + std::sqrt(disc);
}

/// Draws B from the stationary law conditioned on B >= E_s, which is the
/// battery level seen at sampling instants.
class StationaryBatterySampler {
 public:
  explicit StationaryBatterySampler(const DensityGrid& grid) : grid_(&grid) {
    const std::size_t m = grid.es_index;
    cdf_.assign(grid.n_points - m, 0.0);
    for (std::size_t i = m + 1; i < grid.n_points; ++i)
      cdf_[i - m] = cdf_[i - m - 1] + 0.5 * grid.step * (grid.values[i - 1] + grid.values[i]);
    const double total = cdf_.back();
    for (auto& c : cdf_) c /= total;
  }

  template <class Urbg>
  double operator()(Urbg& rng) {
    const double u = unit_(rng);
    const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    const std::size_t hi = std::min<std::size_t>(it - cdf_.begin(), cdf_.size() - 1);
    const std::size_t lo = hi == 0 ? 0 : hi - 1;
    const double span = cdf_[hi] - cdf_[lo];
    const double frac = span > 0.0 ? (u - cdf_[lo]) / span : 0.0;
    return grid_->e_s + grid_->step * (static_cast<double>(lo) + frac);
  }

 private:
  const DensityGrid* grid_;
  std::vector<double> cdf_;
  std::uniform_real_distribution<double> unit_{0.0, 1.0};
};

}  // namespace ehcusum
