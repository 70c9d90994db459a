// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <stdexcept>
#include <string_view>

#include "ehcusum/change_model.hpp"
#include "ehcusum/error.hpp"
#include "ehcusum/renewal_constants.hpp"

namespace ehcusum {

enum class Regime { surplus, deficit };

inline std::string_view to_string(Regime r) { return r == Regime::surplus ? "surplus" : "deficit"; }

/// Surplus iff the mean harvest covers the sensing cost.
inline Regime classify_regime(double harvest_mean, double e_s) {
  return harvest_mean >= e_s ? Regime::surplus : Regime::deficit;
}

struct Prediction {
  Regime regime = Regime::surplus;
  double threshold = 0.0;
  double pi1 = 1.0;
  double expected_delay = 0.0;  // slots
  double fa_exponent = 0.0;     // beta bar or beta_MRW
  double proxy_exponent = 0.0;  // pi1 * beta bar
  double arl2fa = 0.0;          // e^h / fa_exponent
};

struct FalseAlarmLaw {
  double exponent = 0.0;
  double arl2fa = 0.0;
};

/// (1/I_KL) (h + E1[S_{T+}^2]/E1[S_{T+}] - E1[Z^2]/(2 I_KL)).
inline double predict_delay_surplus(const LlrStats& stats, const RenewalConstants& consts,
                                    double h) {
  if (!(consts.ladder_mean.value > 0.0) || !(consts.ladder_second.value > 0.0))
    throw PreconditionError("predict_delay_surplus: ladder moments missing");
  return (h + consts.ladder_second.value / consts.ladder_mean.value -
          stats.z_second_moment_post / (2.0 * stats.i_kl)) /
         stats.i_kl;
}

/// Markov nonlinear-renewal approximation for the energy-deficit regime,
///   (1/(pi1 I_KL)) (h + kappa~ - eta bar),  kappa~ = E[S~_{T+}^2] / (2 E[S~_{T+}]),
/// with the gated ladder moments and perturbation mean.
inline double predict_delay_deficit(const LlrStats& stats, const RenewalConstants& consts,
                                    double pi1, double h) {
  if (!(pi1 > 0.0 && pi1 <= 1.0))
    throw PreconditionError("predict_delay_deficit: pi1 must lie in (0, 1]");
  if (!(consts.ladder_mean.value > 0.0) || !(consts.ladder_second.value > 0.0))
    throw PreconditionError("predict_delay_deficit: gated ladder moments missing");
  const double kappa = consts.ladder_second.value / (2.0 * consts.ladder_mean.value);
  return (h + kappa - consts.perturbation_mean.value) / (pi1 * stats.i_kl);
}

/// beta bar = I_KL delta_bar^2 and E_inf[tau] = e^h / beta bar.
inline FalseAlarmLaw predict_fa_surplus(const LlrStats& stats, const RenewalConstants& consts,
                                        double h) {
  const double d = consts.delta_bar.value;
  if (!(d > 0.0 && d <= 1.0)) throw PreconditionError("predict_fa_surplus: delta bar missing");
  const double beta = stats.i_kl * d * d;
  return {beta, std::exp(h) / beta};
}

/// beta_MRW = -pi1 I0 c(inf) / E_inf[S~_{K1}], positive because the first
/// negative ladder value is negative.
inline FalseAlarmLaw predict_fa_deficit(const LlrStats& stats, const RenewalConstants& consts,
                                        double pi1, double h) {
  if (!(pi1 > 0.0 && pi1 <= 1.0))
    throw PreconditionError("predict_fa_deficit: pi1 must lie in (0, 1]");
  if (!(consts.s_k1_mean.value < 0.0))
    throw PreconditionError("predict_fa_deficit: E[S~_K1] must be negative");
  if (!(consts.c_inf.value > 0.0)) throw PreconditionError("predict_fa_deficit: c(inf) missing");
  const double beta = -pi1 * stats.i0 * consts.c_inf.value / consts.s_k1_mean.value;
  return {beta, std::exp(h) / beta};
}

/// Routes to the surplus or deficit formulas. `ungated` must be the
/// i.i.d.-walk constants; `gated` the chain-modulated ones (deficit only).
inline Prediction predict(const LlrStats& stats, Regime regime, double pi1, double h,
                          const RenewalConstants& ungated, const RenewalConstants* gated) {
  Prediction p;
  p.regime = regime;
  p.threshold = h;
  const auto surplus_fa = predict_fa_surplus(stats, ungated, h);
  if (regime == Regime::surplus) {
    p.pi1 = 1.0;
    p.expected_delay = predict_delay_surplus(stats, ungated, h);
    p.fa_exponent = surplus_fa.exponent;
    p.arl2fa = surplus_fa.arl2fa;
  } else {
    if (gated == nullptr) throw PreconditionError("predict: deficit regime needs gated constants");
    p.pi1 = pi1;
    p.expected_delay = predict_delay_deficit(stats, *gated, pi1, h);
    const auto law = predict_fa_deficit(stats, *gated, pi1, h);
    p.fa_exponent = law.exponent;
    p.arl2fa = law.arl2fa;
  }
  p.proxy_exponent = p.pi1 * surplus_fa.exponent;
  return p;
}

}  // namespace ehcusum
