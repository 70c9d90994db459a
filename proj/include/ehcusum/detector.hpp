// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <variant>

#include "ehcusum/change_model.hpp"
#include "ehcusum/gating.hpp"

namespace ehcusum {

inline constexpr std::uint64_t kNever = std::numeric_limits<std::uint64_t>::max();

/// CUSUM statistic together with the unreflected walk it is built from.
/// statistic == walk - path_min up to rounding.
struct CusumState {
  double statistic = 0.0;
  std::uint64_t steps_elapsed = 0;
  double walk = 0.0;
  double path_min = 0.0;
};

/// W_k = max(0, W_{k-1} + z).
inline CusumState cusum_step(CusumState state, double z) {
  if (!std::isfinite(z)) throw std::invalid_argument("cusum_step: non-finite increment");
  state.statistic = std::max(0.0, state.statistic + z);
  state.walk += z;
  state.path_min = std::min(state.path_min, state.walk);
  ++state.steps_elapsed;
  return state;
}

/// Energy-gated CUSUM: a slot without a sample leaves the statistic alone.
inline CusumState gated_cusum_step(CusumState state, double z, bool gate) {
  if (!std::isfinite(z)) throw std::invalid_argument("gated_cusum_step: non-finite increment");
  if (gate) return cusum_step(state, z);
  ++state.steps_elapsed;
  return state;
}

struct StoppingRecord {
  std::uint64_t stop_time = 0;     // slot index of the alarm (1-based)
  double overshoot = 0.0;          // W_tau - h
  bool stopped = false;            // false: censored at max_steps
  std::uint64_t samples_taken = 0; // slots with gate = 1 up to the stop
};

struct ThresholdRule {
  double h = 10.0;
  /// First slot whose observation comes from f1 (1 = every sample is
  /// post-change, kNever = no change).
  std::uint64_t change_point = 1;
  std::uint64_t max_steps = 1'000'000;
};

/// Runs the (gated) CUSUM until the statistic strictly exceeds h.
///
/// An observation is drawn on every slot, sampled or not, so gated and
/// ungated runs on the same observation stream are coupled path by path.
template <class Gate, class Urbg>
StoppingRecord run_until_threshold(ObservationSampler& obs, Gate& gate, const ThresholdRule& rule,
                                   Urbg& obs_rng, Urbg& gate_rng) {
  if (!(rule.h > 0.0)) throw std::invalid_argument("run_until_threshold: h must be positive");
  if (rule.max_steps == 0) throw std::invalid_argument("run_until_threshold: max_steps must be >= 1");
  StoppingRecord rec;
  double w = 0.0;
  for (std::uint64_t k = 1; k <= rule.max_steps; ++k) {
    const Hypothesis hyp = k >= rule.change_point ? Hypothesis::post : Hypothesis::pre;
    const double z = obs.llr(hyp, obs_rng);
    if (gate.next(gate_rng)) {
      ++rec.samples_taken;
      w = std::max(0.0, w + z);
      if (w > rule.h) {
        rec.stop_time = k;
        rec.overshoot = w - rule.h;
        rec.stopped = true;
        return rec;
      }
    }
  }
  rec.stop_time = rule.max_steps;
  return rec;
}

/// Convenience overload over the runtime gate variant.
template <class Urbg>
StoppingRecord run_until_threshold(const ChangeModel& model, GateProcess gate,
                                   const ThresholdRule& rule, Urbg& obs_rng, Urbg& gate_rng) {
  llr_stats(model);  // rejects degenerate models
  ObservationSampler obs(model);
  return std::visit(
      [&](auto& g) { return run_until_threshold(obs, g, rule, obs_rng, gate_rng); }, gate);
}

}  // namespace ehcusum
