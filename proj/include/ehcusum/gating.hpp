// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <random>
#include <stdexcept>
#include <variant>

#include "ehcusum/harvest_battery.hpp"

namespace ehcusum {

// Gate processes produce xi_k, the "sensor can sample this slot" indicator.
// Each exposes `bool next(rng)` returning the gate of the upcoming slot.

struct AlwaysOn {
  template <class Urbg>
  bool next(Urbg&) noexcept {
    return true;
  }
};

/// Two-state chain with alpha = P(0 -> 0) and beta = P(1 -> 1). The first
/// call returns the initial state unchanged.
class MarkovGate {
 public:
  MarkovGate(double alpha, double beta, bool initial = true)
      : alpha_(alpha), beta_(beta), state_(initial) {
    if (!(alpha >= 0.0 && alpha <= 1.0 && beta >= 0.0 && beta <= 1.0))
      throw std::invalid_argument("MarkovGate: transition probabilities must lie in [0, 1]");
  }

  template <class Urbg>
  bool next(Urbg& rng) {
    if (started_) {
      const double u = unit_(rng);
      state_ = state_ ? (u < beta_) : !(u < alpha_);
    }
    started_ = true;
    return state_;
  }

 private:
  double alpha_;
  double beta_;
  bool state_;
  bool started_ = false;
  std::uniform_real_distribution<double> unit_{0.0, 1.0};
};

/// Full battery recursion driven by i.i.d. harvests.
class BatteryGate {
 public:
  BatteryGate(const HarvestModel& harvest, BatteryState initial)
      : harvest_(harvest), state_(initial) {}

  template <class Urbg>
  bool next(Urbg& rng) {
    const auto step = battery_step(state_, harvest_(rng));
    state_ = step.next;
    return step.gate;
  }

  const BatteryState& state() const { return state_; }

 private:
  HarvestSampler harvest_;
  BatteryState state_;
};

using GateProcess = std::variant<AlwaysOn, MarkovGate, BatteryGate>;

}  // namespace ehcusum
