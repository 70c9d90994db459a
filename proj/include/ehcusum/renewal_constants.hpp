// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "ehcusum/change_model.hpp"
#include "ehcusum/error.hpp"
#include "ehcusum/gating.hpp"
#include "ehcusum/parallel.hpp"
#include "ehcusum/random.hpp"
#include "ehcusum/stationary_solver.hpp"

namespace ehcusum {

/// Hard cap on the length of a single ladder or crossing walk.
inline constexpr std::uint64_t kWalkStepCap = 1'000'000;

namespace detail {

/// Gate for walks modulated by the stationary xi chain, started in state 1.
inline GateProcess chain_gate(const std::optional<XiChain>& chain) {
  if (!chain) return AlwaysOn{};
  return MarkovGate(chain->alpha, chain->beta, true);
}

[[noreturn]] inline void walk_cap_exceeded(const char* what) {
  std::ostringstream msg;
  msg << what << ": walk exceeded " << kWalkStepCap << " steps (check drift sign)";
  throw ConvergenceError(msg.str());
}

/// Walks the (gated) log-likelihood-ratio sum under `hyp` until `done(S)`
/// holds after an applied increment. Returns (S at stop, slots used).
template <class Done>
std::pair<double, std::uint64_t> walk_until(const ChangeModel& model, Hypothesis hyp,
                                            const std::optional<XiChain>& chain,
                                            std::uint64_t seed, std::uint64_t index, Done done,
                                            const char* what) {
  Stream obs_rng = derive_stream(seed, index, Lane::observations);
  Stream gate_rng = derive_stream(seed, index, Lane::gates);
  ObservationSampler obs(model);
  GateProcess gate = chain_gate(chain);
  return std::visit(
      [&](auto& g) -> std::pair<double, std::uint64_t> {
        double s = 0.0;
        for (std::uint64_t k = 1; k <= kWalkStepCap; ++k) {
          const double z = obs.llr(hyp, obs_rng);
          if (!g.next(gate_rng)) continue;
          s += z;
          if (done(s)) return {s, k};
        }
        walk_cap_exceeded(what);
      },
      gate);
}

}  // namespace detail

/// Moments of the first ascending ladder height S_{T+} under f1.
struct PosLadder {
  Estimate mean;       // E1[S_{T+}]
  Estimate second;     // E1[S_{T+}^2]
  Estimate kappa_inf;  // second / (2 mean), delta-method error
  Estimate epoch;      // E1[T+] in slots
};

inline PosLadder estimate_pos_ladder(const ChangeModel& model, std::size_t n_reps,
                                     const ParallelOptions& par,
                                     const std::optional<XiChain>& chain = std::nullopt) {
  llr_stats(model);
  if (n_reps < 2) throw std::invalid_argument("estimate_pos_ladder: need at least two replications");
  using Rec = std::pair<double, std::uint64_t>;
  const auto recs = parallel_map<Rec>(n_reps, par.workers, [&](std::size_t i) {
    return detail::walk_until(model, Hypothesis::post, chain, par.seed, i,
                              [](double s) { return s > 0.0; }, "estimate_pos_ladder");
  });
  auto height = [](const Rec& r) { return r.first; };
  auto height_sq = [](const Rec& r) { return r.first * r.first; };
  const auto m1 = summarize(recs, height);
  const auto m2 = summarize(recs, height_sq);
  const auto ep = summarize(recs, [](const Rec& r) { return static_cast<double>(r.second); });
  const double cov = sample_covariance(recs, height, height_sq, m1.mean, m2.mean);

  PosLadder out;
  out.mean = m1.estimate();
  out.second = m2.estimate();
  out.epoch = ep.estimate();
  const double ga = -m2.mean / (2.0 * m1.mean * m1.mean);
  const double gb = 1.0 / (2.0 * m1.mean);
  const double var = (ga * ga * m1.variance + gb * gb * m2.variance + 2.0 * ga * gb * cov) /
                     static_cast<double>(n_reps);
  out.kappa_inf = {m2.mean / (2.0 * m1.mean), std::sqrt(std::max(0.0, var))};
  return out;
}

/// Limiting mean of the CUSUM perturbation -min_{k<=n} S_k (zeta bar, or
/// eta bar for the chain-gated walk), with a half-horizon convergence check.
struct PerturbationMean {
  Estimate value;      // E[-min_{0<=k<=horizon} S_k]
  Estimate increment;  // value minus the same quantity at horizon / 2
  std::uint64_t horizon = 0;
};

inline PerturbationMean estimate_zeta_eta_bar(const ChangeModel& model,
                                              const std::optional<XiChain>& chain,
                                              std::size_t n_reps, std::uint64_t horizon,
                                              const ParallelOptions& par,
                                              bool require_convergence = true) {
  llr_stats(model);
  if (horizon == 0) throw std::invalid_argument("estimate_zeta_eta_bar: horizon must be >= 1");
  if (n_reps < 2) throw std::invalid_argument("estimate_zeta_eta_bar: need at least two replications");
  struct Rec {
    double at_half = 0.0;
    double at_end = 0.0;
  };
  const std::uint64_t half = horizon / 2;
  const auto recs = parallel_map<Rec>(n_reps, par.workers, [&](std::size_t i) {
    Stream obs_rng = derive_stream(par.seed, i, Lane::observations);
    Stream gate_rng = derive_stream(par.seed, i, Lane::gates);
    ObservationSampler obs(model);
    GateProcess gate = detail::chain_gate(chain);
    return std::visit(
        [&](auto& g) {
          double s = 0.0;
          double lo = 0.0;
          Rec r;
          for (std::uint64_t k = 1; k <= horizon; ++k) {
            const double z = obs.llr(Hypothesis::post, obs_rng);
            if (g.next(gate_rng)) {
              s += z;
              lo = std::min(lo, s);
            }
            if (k == half) r.at_half = -lo;
          }
          r.at_end = -lo;
          return r;
        },
        gate);
  });
  PerturbationMean out;
  out.horizon = horizon;
  out.value = summarize(recs, [](const Rec& r) { return r.at_end; }).estimate();
  out.increment = summarize(recs, [](const Rec& r) { return r.at_end - r.at_half; }).estimate();
  if (require_convergence && out.increment.value > 3.0 * out.increment.std_error) {
    std::ostringstream msg;
    msg << "estimate_zeta_eta_bar: running minimum still moving at horizon " << horizon
        << " (increment " << out.increment.value << " +- " << out.increment.std_error
        << "); increase the horizon";
    throw ConvergenceError(msg.str());
  }
  return out;
}

/// delta bar = lim E1[exp(-(S_{tau(h)} - h))], probed at a finite h.
inline Estimate estimate_delta_bar(const ChangeModel& model, double h_probe, std::size_t n_reps,
                                   const ParallelOptions& par) {
  const auto stats = llr_stats(model);
  if (!(h_probe >= 10.0 * stats.i_kl))
    throw PreconditionError("estimate_delta_bar: probe threshold must be >= 10 E1[Z]");
  if (n_reps < 2) throw std::invalid_argument("estimate_delta_bar: need at least two replications");
  const auto vals = parallel_map<double>(n_reps, par.workers, [&](std::size_t i) {
    const auto [s, k] = detail::walk_until(model, Hypothesis::post, std::nullopt, par.seed, i,
                                           [&](double v) { return v > h_probe; },
                                           "estimate_delta_bar");
    (void)k;
    return std::exp(-(s - h_probe));
  });
  return summarize(vals).estimate();
}

/// Descending ladder quantities of the i.i.d. walk under f0 and the
/// excursion-maximum tail constant c(inf) = (1 - E e^{S_{T-}})^2 / (I_KL E T-).
struct NegLadder {
  Estimate exp_height;  // E0[exp(S_{T-})]
  Estimate epoch;       // E0[T-]
  Estimate height;      // E0[S_{T-}]
  Estimate c_inf;
};

inline NegLadder estimate_neg_ladder(const ChangeModel& model, std::size_t n_reps,
                                     const ParallelOptions& par) {
  const auto stats = llr_stats(model);
  if (n_reps < 2) throw std::invalid_argument("estimate_neg_ladder: need at least two replications");
  using Rec = std::pair<double, std::uint64_t>;
  const auto recs = parallel_map<Rec>(n_reps, par.workers, [&](std::size_t i) {
    return detail::walk_until(model, Hypothesis::pre, std::nullopt, par.seed, i,
                              [](double s) { return s <= 0.0; }, "estimate_neg_ladder");
  });
  auto eh = [](const Rec& r) { return std::exp(r.first); };
  auto ep = [](const Rec& r) { return static_cast<double>(r.second); };
  const auto a = summarize(recs, eh);
  const auto t = summarize(recs, ep);
  const double cov = sample_covariance(recs, eh, ep, a.mean, t.mean);

  NegLadder out;
  out.exp_height = a.estimate();
  out.epoch = t.estimate();
  out.height = summarize(recs, [](const Rec& r) { return r.first; }).estimate();
  const double gap = 1.0 - a.mean;
  const double c = gap * gap / (stats.i_kl * t.mean);
  const double ga = -2.0 * gap / (stats.i_kl * t.mean);
  const double gt = -c / t.mean;
  const double var = (ga * ga * a.variance + gt * gt * t.variance + 2.0 * ga * gt * cov) /
                     static_cast<double>(n_reps);
  out.c_inf = {c, std::sqrt(std::max(0.0, var))};
  return out;
}

/// E_inf[S~_{K1}]: value of the gated walk under f0 at its first negative
/// value, gates from the xi chain started in state 1.
inline Estimate estimate_s_k1(const ChangeModel& model, const std::optional<XiChain>& chain,
                              std::size_t n_reps, const ParallelOptions& par) {
  llr_stats(model);
  if (n_reps < 2) throw std::invalid_argument("estimate_s_k1: need at least two replications");
  const auto vals = parallel_map<double>(n_reps, par.workers, [&](std::size_t i) {
    return detail::walk_until(model, Hypothesis::pre, chain, par.seed, i,
                              [](double s) { return s < 0.0; }, "estimate_s_k1")
        .first;
  });
  return summarize(vals).estimate();
}

struct RenewalOptions {
  ParallelOptions par;
  std::size_t ladder_reps = 1'000'000;
  std::size_t zeta_reps = 100'000;
  std::optional<std::uint64_t> zeta_horizon;  // default ceil(50 / (pi1 I_KL))
  std::size_t delta_reps = 100'000;
  std::optional<double> h_probe;  // default 25 I_KL
  std::size_t neg_reps = 1'000'000;
};

/// Every renewal-theoretic constant the asymptotic formulas consume. With a
/// chain the ladder moments, perturbation mean (eta bar) and S~_{K1} come
/// from the gated walk; delta bar and the descending ladder are properties
/// of the i.i.d. walk and are always ungated.
struct RenewalConstants {
  bool gated = false;
  Estimate ladder_mean;
  Estimate ladder_second;
  Estimate kappa_inf;
  Estimate kappa_inf_alt;  // E1[Z^2] / (2 E1[Z]) - perturbation mean
  Estimate perturbation_mean;
  double h_probe = 0.0;
  Estimate delta_bar;
  Estimate neg_ladder_exp;
  Estimate neg_ladder_epoch;
  Estimate neg_ladder_height;
  Estimate c_inf;
  Estimate s_k1_mean;
};

namespace detail {

// Sub-estimators draw from disjoint seed families.
inline ParallelOptions with_seed_offset(const ParallelOptions& par, std::uint64_t tag) {
  std::uint64_t mix = par.seed ^ (tag * 0x9e3779b97f4a7c15ULL);
  return {splitmix64(mix), par.workers};
}

}  // namespace detail

inline RenewalConstants estimate_renewal_constants(const ChangeModel& model,
                                                   const std::optional<XiChain>& chain,
                                                   const RenewalOptions& opts = {}) {
  const auto stats = llr_stats(model);
  const double pi1 = chain ? chain->pi1 : 1.0;
  const std::uint64_t horizon = opts.zeta_horizon.value_or(
      static_cast<std::uint64_t>(std::ceil(50.0 / (pi1 * stats.i_kl))));

  RenewalConstants c;
  c.gated = chain.has_value();
  const auto pos = estimate_pos_ladder(model, opts.ladder_reps, detail::with_seed_offset(opts.par, 1), chain);
  c.ladder_mean = pos.mean;
  c.ladder_second = pos.second;
  c.kappa_inf = pos.kappa_inf;

  const auto pert = estimate_zeta_eta_bar(model, chain, opts.zeta_reps, horizon,
                                          detail::with_seed_offset(opts.par, 2));
  c.perturbation_mean = pert.value;
  c.kappa_inf_alt = {stats.z_second_moment_post / (2.0 * stats.i_kl) - pert.value.value,
                     pert.value.std_error};

  c.h_probe = opts.h_probe.value_or(25.0 * stats.i_kl);
  c.delta_bar = estimate_delta_bar(model, c.h_probe, opts.delta_reps, detail::with_seed_offset(opts.par, 3));

  const auto neg = estimate_neg_ladder(model, opts.neg_reps, detail::with_seed_offset(opts.par, 4));
  c.neg_ladder_exp = neg.exp_height;
  c.neg_ladder_epoch = neg.epoch;
  c.neg_ladder_height = neg.height;
  c.c_inf = neg.c_inf;

  c.s_k1_mean = chain ? estimate_s_k1(model, chain, opts.neg_reps, detail::with_seed_offset(opts.par, 5))
                      : neg.height;
  return c;
}

}  // namespace ehcusum
