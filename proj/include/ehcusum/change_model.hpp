// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

#include "ehcusum/error.hpp"

namespace ehcusum {

enum class Hypothesis { pre, post };

/// Gaussian mean shift N(m0, sigma^2) -> N(m1, sigma^2).
struct ChangeModel {
  double m0 = 0.0;
  double m1 = 0.5;
  double sigma = 1.0;

  void validate() const {
    if (!(sigma > 0.0) || !std::isfinite(sigma))
      throw std::invalid_argument("change model: sigma must be positive");
    if (!std::isfinite(m0) || !std::isfinite(m1))
      throw std::invalid_argument("change model: means must be finite");
  }

  double mean(Hypothesis hyp) const { return hyp == Hypothesis::pre ? m0 : m1; }
};

/// Moments of the log-likelihood ratio Z = log f1(X)/f0(X).
struct LlrStats {
  double i_kl = 0.0;                  // E1[Z]
  double i0 = 0.0;                    // -E0[Z]
  double z_second_moment_post = 0.0;  // E1[Z^2]
  double z_variance_post = 0.0;       // Var1[Z]
};

/// Closed form ((m1-m0)/sigma^2) * (x - (m0+m1)/2); never forms the densities.
inline double loglik_ratio(const ChangeModel& model, double x) {
  if (!std::isfinite(x))
    throw std::invalid_argument("loglik_ratio: non-finite sample");
  const double s2 = model.sigma * model.sigma;
  return (model.m1 - model.m0) / s2 * (x - 0.5 * (model.m0 + model.m1));
}

inline LlrStats llr_stats(const ChangeModel& model) {
  model.validate();
  if (model.m1 == model.m0)
    throw PreconditionError("llr_stats: m1 == m0, Kullback-Leibler divergence is zero");
  const double gap = (model.m1 - model.m0) / model.sigma;
  LlrStats out;
  out.z_variance_post = gap * gap;
  out.i_kl = 0.5 * out.z_variance_post;
  out.i0 = out.i_kl;
  out.z_second_moment_post = out.z_variance_post + out.i_kl * out.i_kl;
  return out;
}

/// E0[exp(gamma Z)] = exp(gamma (gamma - 1) I_KL) for the Gaussian family.
inline double llr_mgf_pre(const ChangeModel& model, double gamma) {
  const double gap = (model.m1 - model.m0) / model.sigma;
  return std::exp(gamma * (gamma - 1.0) * 0.5 * gap * gap);
}

/// Draws observations for one replication. Holding the normal distribution
/// keeps the polar method's cached second variate.
class ObservationSampler {
 public:
  explicit ObservationSampler(const ChangeModel& model) : model_(model) {
    model_.validate();
  }

  template <class Urbg>
  double operator()(Hypothesis hyp, Urbg& rng) {
    return model_.mean(hyp) + model_.sigma * unit_(rng);
  }

  /// Draw and map straight to the log-likelihood ratio.
  template <class Urbg>
  double llr(Hypothesis hyp, Urbg& rng) {
    return loglik_ratio(model_, (*this)(hyp, rng));
  }

  const ChangeModel& model() const { return model_; }

 private:
  ChangeModel model_;
  std::normal_distribution<double> unit_{0.0, 1.0};
};

template <class Urbg>
double sample(const ChangeModel& model, Hypothesis hyp, Urbg& rng) {
  ObservationSampler sampler(model);
  return sampler(hyp, rng);
}

}  // namespace ehcusum
