// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ehcusum/error.hpp"

namespace ehcusum {

enum class HarvestFamily { exponential, uniform, truncated_gaussian };

inline std::string_view to_string(HarvestFamily family) {
  switch (family) {
    case HarvestFamily::exponential: return "exponential";
    case HarvestFamily::uniform: return "uniform";
    case HarvestFamily::truncated_gaussian: return "truncated-gaussian";
  }
  return "?";
}

inline HarvestFamily parse_harvest_family(std::string_view name) {
  if (name == "exponential") return HarvestFamily::exponential;
  if (name == "uniform") return HarvestFamily::uniform;
  if (name == "truncated-gaussian") return HarvestFamily::truncated_gaussian;
  throw ConfigError("unknown harvest family '" + std::string(name) + "'");
}

namespace detail {

inline double std_normal_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

inline double std_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

}  // namespace detail

/// Distribution of the energy harvested in one slot (mJ).
///
/// `mean` is always the mean of the harvest itself. For the truncated
/// Gaussian, `shape` is the standard deviation of the parent normal and
/// `loc` is the parent mean chosen so that the truncated mean equals `mean`.
struct HarvestModel {
  HarvestFamily family = HarvestFamily::exponential;
  double mean = 0.0;
  double shape = 0.0;
  double loc = 0.0;

  static HarvestModel exponential(double mean) {
    HarvestModel m{HarvestFamily::exponential, mean, 0.0, 0.0};
    m.validate();
    return m;
  }

  /// Uniform on [0, 2 * mean].
  static HarvestModel uniform(double mean) {
    HarvestModel m{HarvestFamily::uniform, mean, 0.0, 0.0};
    m.validate();
    return m;
  }

  static HarvestModel truncated_gaussian(double mean, double parent_sd) {
    HarvestModel m{HarvestFamily::truncated_gaussian, mean, parent_sd, 0.0};
    if (!(parent_sd > 0.0))
      throw std::invalid_argument("truncated-gaussian harvest: sd must be positive");
    m.validate();
    // Truncated mean loc + s * phi(loc/s) / Phi(loc/s) is increasing in loc.
    double lo = mean - 60.0 * parent_sd;
    double hi = mean;
    for (int i = 0; i < 200; ++i) {
      const double mid = 0.5 * (lo + hi);
      m.loc = mid;
      (m.truncated_mean() < mean ? lo : hi) = mid;
    }
    m.loc = 0.5 * (lo + hi);
    return m;
  }

  void validate() const {
    if (!(mean > 0.0) || !std::isfinite(mean))
      throw std::invalid_argument("harvest model: mean must be positive and finite");
  }

  double truncated_mean() const {
    const double a = loc / shape;
    return loc + shape * detail::std_normal_pdf(a) / detail::std_normal_cdf(a);
  }

  double pdf(double h) const {
    if (h < 0.0) return 0.0;
    switch (family) {
      case HarvestFamily::exponential: return std::exp(-h / mean) / mean;
      case HarvestFamily::uniform: return h <= 2.0 * mean ? 0.5 / mean : 0.0;
      case HarvestFamily::truncated_gaussian:
        return detail::std_normal_pdf((h - loc) / shape) /
               (shape * detail::std_normal_cdf(loc / shape));
    }
    return 0.0;
  }

  double cdf(double h) const {
    if (h <= 0.0) return 0.0;
    switch (family) {
      case HarvestFamily::exponential: return -std::expm1(-h / mean);
      case HarvestFamily::uniform: return std::min(1.0, h / (2.0 * mean));
      case HarvestFamily::truncated_gaussian: {
        const double tail0 = detail::std_normal_cdf(-loc / shape);
        return (detail::std_normal_cdf((h - loc) / shape) - tail0) / (1.0 - tail0);
      }
    }
    return 0.0;
  }

  /// log E[exp(theta H)]; +inf where the transform diverges.
  double log_mgf(double theta) const {
    switch (family) {
      case HarvestFamily::exponential:
        return theta * mean < 1.0 ? -std::log1p(-theta * mean)
                                  : std::numeric_limits<double>::infinity();
      case HarvestFamily::uniform: {
        const double x = 2.0 * mean * theta;
        if (std::abs(x) < 1e-12) return 0.0;
        return std::log(std::expm1(x) / x);
      }
      case HarvestFamily::truncated_gaussian: {
        const double a = loc / shape;
        return loc * theta + 0.5 * shape * shape * theta * theta +
               std::log(detail::std_normal_cdf(a + shape * theta) / detail::std_normal_cdf(a));
      }
    }
    return 0.0;
  }

  /// Positive root of E[exp(theta (H - e_s))] = 1. Governs the exponential
  /// tail of the stationary battery level when mean < e_s.
  double cramer_root(double e_s) const {
    if (!(mean < e_s))
      throw PreconditionError("cramer_root: requires harvest mean below sensing cost");
    auto f = [&](double t) { return log_mgf(t) - t * e_s; };
    double hi = 1.0 / e_s;
    while (f(hi) < 0.0) {
      hi *= 2.0;
      if (hi > 1e8) throw ConvergenceError("cramer_root: no sign change");
    }
    // f is convex, f(0) = 0, f'(0) < 0; bracket the positive root.
    double lo = hi;
    while (lo > 1e-14 && !(f(lo) < 0.0)) lo *= 0.5;
    for (int i = 0; i < 200; ++i) {
      const double mid = 0.5 * (lo + hi);
      (std::isfinite(f(mid)) && f(mid) < 0.0 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
  }
};

/// Per-replication harvest sampler.
class HarvestSampler {
 public:
  explicit HarvestSampler(const HarvestModel& model) : model_(model) {}

  template <class Urbg>
  double operator()(Urbg& rng) {
    switch (model_.family) {
      case HarvestFamily::exponential:
        return -model_.mean * std::log1p(-unit_(rng));
      case HarvestFamily::uniform:
        return 2.0 * model_.mean * unit_(rng);
      case HarvestFamily::truncated_gaussian:
        for (;;) {
          const double h = model_.loc + model_.shape * normal_(rng);
          if (h >= 0.0) return h;
        }
    }
    return 0.0;
  }

  const HarvestModel& model() const { return model_; }

 private:
  HarvestModel model_;
  std::uniform_real_distribution<double> unit_{0.0, 1.0};
  std::normal_distribution<double> normal_{0.0, 1.0};
};

template <class Urbg>
double sample_harvest(const HarvestModel& model, Urbg& rng) {
  HarvestSampler sampler(model);
  return sampler(rng);
}

/// Energy storage B_k with the per-sample sensing cost E_s (mJ).
struct BatteryState {
  double level = 0.0;
  double sense_cost = 0.5;
};

struct BatteryStep {
  BatteryState next;
  bool gate = false;
};

/// One slot: sense iff level >= E_s, then bank this slot's harvest for the
/// next one.
inline BatteryStep battery_step(const BatteryState& state, double harvested) {
  if (!(harvested >= 0.0))
    throw std::invalid_argument("battery_step: harvested energy must be non-negative");
  const bool gate = state.level >= state.sense_cost;
  BatteryState next = state;
  next.level = state.level + harvested - (gate ? state.sense_cost : 0.0);
  if (next.level < 0.0) next.level = 0.0;  // rounding only
  return {next, gate};
}

/// Runs the battery for `steps` slots, calling visit(level_before, gate)
/// on every slot. Returns the final state.
template <class Urbg, class Visitor>
BatteryState run_battery(const HarvestModel& model, BatteryState state, std::uint64_t steps,
                         Urbg& rng, Visitor&& visit) {
  HarvestSampler harvest(model);
  for (std::uint64_t k = 0; k < steps; ++k) {
    const auto step = battery_step(state, harvest(rng));
    visit(state.level, step.gate);
    state = step.next;
  }
  return state;
}

struct BatteryPath {
  std::vector<std::uint8_t> gates;
  BatteryState final_state;
  double pi1 = 0.0;  // fraction of slots with gate = 1
};

template <class Urbg>
BatteryPath simulate_battery_path(const HarvestModel& model, const BatteryState& initial,
                                  std::uint64_t steps, Urbg& rng) {
  if (steps == 0) throw std::invalid_argument("simulate_battery_path: steps must be >= 1");
  BatteryPath path;
  path.gates.reserve(steps);
  std::uint64_t on = 0;
  path.final_state = run_battery(model, initial, steps, rng, [&](double, bool gate) {
    path.gates.push_back(gate ? 1 : 0);
    on += gate ? 1 : 0;
  });
  path.pi1 = static_cast<double>(on) / static_cast<double>(steps);
  return path;
}

}  // namespace ehcusum
