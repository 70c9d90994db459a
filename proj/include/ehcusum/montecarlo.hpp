// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "ehcusum/change_model.hpp"
#include "ehcusum/detector.hpp"
#include "ehcusum/error.hpp"
#include "ehcusum/gating.hpp"
#include "ehcusum/harvest_battery.hpp"
#include "ehcusum/parallel.hpp"
#include "ehcusum/random.hpp"
#include "ehcusum/stationary_solver.hpp"

namespace ehcusum {

enum class GateMode { full_battery, stationary_chain, always_on };

inline std::string_view to_string(GateMode m) {
  switch (m) {
    case GateMode::full_battery: return "full-battery";
    case GateMode::stationary_chain: return "stationary-chain";
    case GateMode::always_on: return "always-on";
  }
  return "?";
}

inline GateMode parse_gate_mode(std::string_view s) {
  if (s == "full-battery") return GateMode::full_battery;
  if (s == "stationary-chain") return GateMode::stationary_chain;
  if (s == "always-on") return GateMode::always_on;
  throw ConfigError("unknown gate mode '" + std::string(s) + "'");
}

/// Battery level at slot 1 in full-battery mode.
enum class InitialBattery {
  sense_cost,  // B_0 = E_s
  stationary,  // B_0 from the stationary law conditioned on B >= E_s
};

inline std::string_view to_string(InitialBattery b) {
  return b == InitialBattery::sense_cost ? "sense-cost" : "stationary";
}

inline InitialBattery parse_initial_battery(std::string_view s) {
  if (s == "sense-cost") return InitialBattery::sense_cost;
  if (s == "stationary") return InitialBattery::stationary;
  throw ConfigError("unknown initial battery '" + std::string(s) + "'");
}

struct ExperimentConfig {
  ChangeModel model;
  std::optional<HarvestModel> harvest;
  double e_s = 0.5;
  double h = 10.0;
  std::size_t n_runs = 20'000;
  std::uint64_t master_seed = 1;
  std::uint64_t max_steps = 0;  // 0: pick a default from h and the sampling rate
  std::uint64_t change_point = 1;
  GateMode gate_mode = GateMode::stationary_chain;
  InitialBattery initial_battery = InitialBattery::sense_cost;
  unsigned workers = 1;
  /// Optional precomputed deficit-regime quantities; solved on demand.
  std::optional<XiChain> chain;
  std::shared_ptr<const DensityGrid> density;
  StationarySolverOptions solver;
  double fit_low = 0.1;
  double fit_high = 0.9;

  void validate() const {
    model.validate();
    if (n_runs < 1) throw ConfigError("experiment: n_runs must be >= 1");
    if (!(h > 0.0)) throw ConfigError("experiment: h must be positive");
    if (!(e_s > 0.0)) throw ConfigError("experiment: E_s must be positive");
    if (gate_mode == GateMode::full_battery && !harvest)
      throw ConfigError("experiment: full-battery gating needs a harvest model");
    if (change_point == 0) throw ConfigError("experiment: change_point is 1-based");
  }

  bool deficit() const { return harvest && harvest->mean < e_s; }

  /// Long-run fraction of sampled slots under this gating.
  double sampling_rate() const {
    if (gate_mode == GateMode::always_on || !harvest) return 1.0;
    return std::min(1.0, harvest->mean / e_s);
  }
};

struct TailFit {
  double exponent = 0.0;
  double r2 = 0.0;
  std::size_t points = 0;
};

struct ExperimentResult {
  std::size_t n_runs = 0;
  std::uint64_t max_steps = 0;
  double mean_stop = 0.0;
  double std_error = 0.0;
  std::size_t censored_count = 0;
  std::size_t early_alarms = 0;  // delay runs that alarmed before the change
  bool censoring_warning = false;
  std::vector<StoppingRecord> runs;
  std::optional<TailFit> tail;

  std::vector<double> run_lengths() const {
    std::vector<double> out;
    out.reserve(runs.size());
    for (const auto& r : runs)
      if (r.stopped) out.push_back(static_cast<double>(r.stop_time));
    return out;
  }
};

namespace detail {

/// Resolves the gate process for each replication once per experiment.
class GateFactory {
 public:
  explicit GateFactory(const ExperimentConfig& cfg) : cfg_(cfg) {
    if (cfg.gate_mode == GateMode::always_on || !cfg.harvest) return;
    if (!cfg.deficit()) {
      // Surplus: the stationary gate law is xi = 1; the battery still has
      // its finite start-up transient in full-battery mode.
      if (cfg.gate_mode == GateMode::full_battery) mode_ = GateMode::full_battery;
      return;
    }
    mode_ = cfg.gate_mode;
    const bool need_density = !cfg.chain || (cfg.gate_mode == GateMode::full_battery &&
                                             cfg.initial_battery == InitialBattery::stationary);
    if (need_density) {
      density_ = cfg.density ? cfg.density
                             : std::make_shared<const DensityGrid>(
                                   solve_stationary_density(*cfg.harvest, cfg.e_s, cfg.solver));
    }
    chain_ = cfg.chain ? *cfg.chain : transition_probs(*density_, *cfg.harvest, cfg.e_s);
  }

  GateProcess make(std::uint64_t run_index) const {
    switch (mode_) {
      case GateMode::always_on: return AlwaysOn{};
      case GateMode::stationary_chain: return MarkovGate(chain_->alpha, chain_->beta, true);
      case GateMode::full_battery: {
        BatteryState b{cfg_.e_s, cfg_.e_s};
        if (cfg_.initial_battery == InitialBattery::stationary && density_) {
          Stream aux = derive_stream(cfg_.master_seed, run_index, Lane::aux);
          StationaryBatterySampler draw(*density_);
          b.level = draw(aux);
        }
        return BatteryGate(*cfg_.harvest, b);
      }
    }
    return AlwaysOn{};
  }

  const std::optional<XiChain>& chain() const { return chain_; }

 private:
  const ExperimentConfig& cfg_;
  GateMode mode_ = GateMode::always_on;
  std::optional<XiChain> chain_;
  std::shared_ptr<const DensityGrid> density_;
};

inline std::vector<StoppingRecord> run_replications(const ExperimentConfig& cfg,
                                                    const ThresholdRule& rule) {
  llr_stats(cfg.model);
  const GateFactory gates(cfg);
  return parallel_map<StoppingRecord>(cfg.n_runs, cfg.workers, [&](std::size_t i) {
    Stream obs_rng = derive_stream(cfg.master_seed, i, Lane::observations);
    Stream gate_rng = derive_stream(cfg.master_seed, i, Lane::gates);
    ObservationSampler obs(cfg.model);
    GateProcess gate = gates.make(i);
    return std::visit(
        [&](auto& g) { return run_until_threshold(obs, g, rule, obs_rng, gate_rng); }, gate);
  });
}

}  // namespace detail

/// Detection-delay experiment: every run starts at slot 1 with W_0 = 0 and
/// the change at `change_point`; delay = stop - (change_point - 1).
inline ExperimentResult run_delay_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.change_point == kNever)
    throw ConfigError("delay experiment needs a finite change point");
  const auto stats = llr_stats(cfg.model);
  ThresholdRule rule;
  rule.h = cfg.h;
  rule.change_point = cfg.change_point;
  rule.max_steps = cfg.max_steps != 0
                       ? cfg.max_steps
                       : cfg.change_point + static_cast<std::uint64_t>(std::ceil(
                                                50.0 * cfg.h / (stats.i_kl * cfg.sampling_rate()))) +
                             1000;

  ExperimentResult res;
  res.n_runs = cfg.n_runs;
  res.max_steps = rule.max_steps;
  res.runs = detail::run_replications(cfg, rule);
  std::vector<double> delays;
  delays.reserve(res.runs.size());
  for (const auto& r : res.runs) {
    if (!r.stopped) {
      ++res.censored_count;
    } else if (r.stop_time < cfg.change_point) {
      ++res.early_alarms;
    } else {
      delays.push_back(static_cast<double>(r.stop_time - (cfg.change_point - 1)));
    }
  }
  const auto s = summarize(delays);
  res.mean_stop = s.mean;
  res.std_error = s.std_error();
  res.censoring_warning = res.censored_count * 100 > cfg.n_runs;
  return res;
}

/// Least-squares fit of log P(e^{-h} tau > x) = a - beta x over the
/// empirical-CDF window [low, high].
inline TailFit fit_tail_exponent(std::span<const double> run_lengths, double h, double low = 0.1,
                                 double high = 0.9) {
  if (run_lengths.size() < 500)
    throw PreconditionError("fit_tail_exponent: need at least 500 run lengths");
  std::vector<double> x(run_lengths.begin(), run_lengths.end());
  std::sort(x.begin(), x.end());
  const double scale = std::exp(-h);
  const double n = static_cast<double>(x.size());

  double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
  std::size_t m = 0;
  for (std::size_t i = 0; i < x.size();) {
    std::size_t j = i;
    while (j < x.size() && x[j] == x[i]) ++j;
    const double cdf = static_cast<double>(j) / n;
    if (cdf >= low && cdf <= high && j < x.size()) {
      const double xi = scale * x[i];
      const double yi = std::log(1.0 - cdf);
      sx += xi;
      sy += yi;
      sxx += xi * xi;
      sxy += xi * yi;
      syy += yi * yi;
      ++m;
    }
    i = j;
  }
  if (m < 3) throw PreconditionError("fit_tail_exponent: too few distinct points in the fit window");
  const double mm = static_cast<double>(m);
  const double vxx = sxx - sx * sx / mm;
  const double vyy = syy - sy * sy / mm;
  const double vxy = sxy - sx * sy / mm;
  if (!(vxx > 0.0) || !(vyy > 0.0))
    throw PreconditionError("fit_tail_exponent: degenerate run lengths");
  TailFit fit;
  fit.exponent = -vxy / vxx;
  fit.r2 = vxy * vxy / (vxx * vyy);
  fit.points = m;
  return fit;
}

/// (x, log survival) at each distinct normalized run length.
inline std::vector<std::pair<double, double>> survival_curve(std::span<const double> run_lengths,
                                                             double h) {
  std::vector<double> x(run_lengths.begin(), run_lengths.end());
  std::sort(x.begin(), x.end());
  std::vector<std::pair<double, double>> out;
  const double n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size();) {
    std::size_t j = i;
    while (j < x.size() && x[j] == x[i]) ++j;
    if (j < x.size()) out.emplace_back(std::exp(-h) * x[i], std::log(static_cast<double>(x.size() - j) / n));
    i = j;
  }
  return out;
}

/// False-alarm experiment: no change ever occurs.
inline ExperimentResult run_fa_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto stats = llr_stats(cfg.model);
  ThresholdRule rule;
  rule.h = cfg.h;
  rule.change_point = kNever;
  rule.max_steps = cfg.max_steps != 0
                       ? cfg.max_steps
                       : static_cast<std::uint64_t>(std::ceil(
                             50.0 * std::exp(cfg.h) / (stats.i_kl * cfg.sampling_rate())));

  ExperimentResult res;
  res.n_runs = cfg.n_runs;
  res.max_steps = rule.max_steps;
  res.runs = detail::run_replications(cfg, rule);
  for (const auto& r : res.runs)
    if (!r.stopped) ++res.censored_count;
  const auto lengths = res.run_lengths();
  const auto s = summarize(lengths);
  res.mean_stop = s.mean;
  res.std_error = s.std_error();
  res.censoring_warning = res.censored_count * 100 > cfg.n_runs;
  if (lengths.size() >= 500) res.tail = fit_tail_exponent(lengths, cfg.h, cfg.fit_low, cfg.fit_high);
  return res;
}

struct NormalityCheck {
  double ks = 0.0;           // sup |F_n - Phi| of the standardized delay
  double correlation = 0.0;  // corr(standardized delay, overshoot)
  std::size_t n = 0;
};

/// Standardizes delays as (tau - h/I) / sqrt(h sigma1^2 / I^3) and compares
/// with the standard normal; also reports the delay/overshoot correlation.
inline NormalityCheck normality_statistics(std::span<const StoppingRecord> runs,
                                           const LlrStats& stats, double h) {
  const double centre = h / stats.i_kl;
  const double scale = std::sqrt(h * stats.z_variance_post / std::pow(stats.i_kl, 3));
  std::vector<std::pair<double, double>> pts;
  pts.reserve(runs.size());
  for (const auto& r : runs)
    if (r.stopped) pts.emplace_back((static_cast<double>(r.stop_time) - centre) / scale, r.overshoot);
  NormalityCheck out;
  out.n = pts.size();
  if (pts.size() < 2) return out;
  std::sort(pts.begin(), pts.end());
  const double n = static_cast<double>(pts.size());
  for (std::size_t i = 0; i < pts.size();) {
    std::size_t j = i;
    while (j < pts.size() && pts[j].first == pts[i].first) ++j;
    const double phi = detail::std_normal_cdf(pts[i].first);
    out.ks = std::max({out.ks, std::abs(static_cast<double>(j) / n - phi),
                       std::abs(static_cast<double>(i) / n - phi)});
    i = j;
  }
  auto first = [](const std::pair<double, double>& p) { return p.first; };
  auto second = [](const std::pair<double, double>& p) { return p.second; };
  const auto a = summarize(pts, first);
  const auto b = summarize(pts, second);
  const double cov = sample_covariance(pts, first, second, a.mean, b.mean);
  out.correlation = cov / std::sqrt(a.variance * b.variance);
  return out;
}

inline NormalityCheck delay_distribution_check(const ExperimentConfig& cfg) {
  const auto res = run_delay_experiment(cfg);
  return normality_statistics(res.runs, llr_stats(cfg.model), cfg.h);
}

/// Ordinary least-squares slope of y on x.
inline double ols_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("ols_slope: need >= 2 pairs");
  const auto mx = summarize(x);
  const auto my = summarize(y);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx.mean) * (y[i] - my.mean);
    sxx += (x[i] - mx.mean) * (x[i] - mx.mean);
  }
  return sxy / sxx;
}

/// Sup-distance between the solved battery CDF and the empirical CDF of a
/// long simulated battery path, both taken at the grid nodes.
inline double battery_cdf_distance(const DensityGrid& grid, const HarvestModel& harvest,
                                   std::uint64_t steps, std::uint64_t seed,
                                   std::uint64_t burn_in = 10'000) {
  Stream rng = derive_stream(seed, 0, Lane::aux);
  std::vector<std::uint64_t> below(grid.n_points + 1, 0);  // counts per cell
  BatteryState state{grid.e_s, grid.e_s};
  state = run_battery(harvest, state, burn_in, rng, [](double, bool) {});
  run_battery(harvest, state, steps, rng, [&](double level, bool) {
    const double cell = std::ceil(level / grid.step);
    const std::size_t idx = cell >= static_cast<double>(grid.n_points)
                                ? grid.n_points
                                : static_cast<std::size_t>(cell);
    ++below[idx];
  });
  // below[i]: samples in (node(i-1), node(i)]; cumulative -> P(B <= node(i)).
  const auto solved = grid.cdf_nodes();
  double acc = 0.0;
  double worst = 0.0;
  for (std::size_t i = 0; i < grid.n_points; ++i) {
    acc += static_cast<double>(below[i]);
    worst = std::max(worst, std::abs(acc / static_cast<double>(steps) - solved[i]));
  }
  return worst;
}

}  // namespace ehcusum
