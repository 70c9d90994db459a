// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "ehcusum/asymptotics.hpp"
#include "ehcusum/error.hpp"
#include "ehcusum/montecarlo.hpp"

using namespace ehcusum;

namespace {

ExperimentConfig delay_cfg(double mean, std::size_t runs = 20'000) {
  ExperimentConfig c;
  c.harvest = HarvestModel::exponential(mean);
  c.n_runs = runs;
  c.master_seed = 404;
  return c;
}

}  // namespace

TEST(DelayExperiment, SurplusRow) {
  const auto r = run_delay_experiment(delay_cfg(0.7));
  EXPECT_NEAR(r.mean_stop, 76.67, 0.02 * 76.67);
  EXPECT_EQ(r.censored_count, 0u);
  EXPECT_FALSE(r.censoring_warning);
}

TEST(DelayExperiment, DeficitRow) {
  const auto r = run_delay_experiment(delay_cfg(0.3));
  EXPECT_NEAR(r.mean_stop, 127.26, 0.02 * 127.26);
}

TEST(DelayExperiment, StdErrorDefinition) {
  const auto r = run_delay_experiment(delay_cfg(0.4, 2'000));
  const auto t = r.run_lengths();
  double m = 0, v = 0;
  for (double x : t) m += x;
  m /= t.size();
  for (double x : t) v += (x - m) * (x - m);
  v /= t.size() - 1;
  EXPECT_NEAR(r.std_error, std::sqrt(v / t.size()), 1e-12);
}

TEST(DelayExperiment, WorkerCountInvariant) {
  auto c = delay_cfg(0.4, 5'000);
  const auto a = run_delay_experiment(c);
  c.workers = 4;
  const auto b = run_delay_experiment(c);
  EXPECT_EQ(a.mean_stop, b.mean_stop);
  EXPECT_EQ(a.std_error, b.std_error);
  for (std::size_t i = 0; i < a.runs.size(); ++i) ASSERT_EQ(a.runs[i].overshoot, b.runs[i].overshoot);
}

TEST(DelayExperiment, AlwaysOnIsUngatedDetector) {
  auto c = delay_cfg(0.3, 2'000);
  c.gate_mode = GateMode::always_on;
  const auto r = run_delay_experiment(c);
  ThresholdRule rule;
  rule.max_steps = r.max_steps;
  for (std::size_t i = 0; i < r.runs.size(); ++i) {
    Stream o = derive_stream(c.master_seed, i), g = derive_stream(c.master_seed, i, Lane::gates);
    const auto direct = run_until_threshold(c.model, AlwaysOn{}, rule, o, g);
    ASSERT_EQ(direct.stop_time, r.runs[i].stop_time);
    ASSERT_EQ(direct.overshoot, r.runs[i].overshoot);
  }
}

TEST(DelayExperiment, ChainAndBatteryAgreeInDeficit) {
  for (double mean : {0.2, 0.4}) {
    auto c = delay_cfg(mean);
    const auto chain = run_delay_experiment(c);
    c.gate_mode = GateMode::full_battery;
    c.initial_battery = InitialBattery::stationary;
    const auto battery = run_delay_experiment(c);
    EXPECT_NEAR(chain.mean_stop, battery.mean_stop,
                4.0 * std::hypot(chain.std_error, battery.std_error))
        << "H=" << mean;
  }
}

TEST(DelayExperiment, LateChangePoint) {
  auto c = delay_cfg(0.7, 4'000);
  c.h = 3.0;
  c.change_point = 201;
  const auto r = run_delay_experiment(c);
  EXPECT_GT(r.early_alarms, 100u);
  EXPECT_EQ(r.run_lengths().size(), c.n_runs - r.censored_count);
  // Alarms after the change are counted from the change point.
  EXPECT_GT(r.mean_stop, 1.0);
  EXPECT_LT(r.mean_stop, 3.0 / 0.125 + 20.0);
}

TEST(DelayExperiment, CensoringFlagged) {
  auto c = delay_cfg(0.7, 500);
  c.max_steps = 40;
  const auto r = run_delay_experiment(c);
  EXPECT_GT(r.censored_count, 5u);
  EXPECT_TRUE(r.censoring_warning);
}

TEST(DelayExperiment, InvalidConfigs) {
  auto c = delay_cfg(0.4, 10);
  c.n_runs = 0;
  EXPECT_THROW(run_delay_experiment(c), ConfigError);
  c = delay_cfg(0.4, 10);
  c.h = -1.0;
  EXPECT_THROW(run_delay_experiment(c), ConfigError);
  c = delay_cfg(0.4, 10);
  c.harvest.reset();
  c.gate_mode = GateMode::full_battery;
  EXPECT_THROW(run_delay_experiment(c), ConfigError);
  c = delay_cfg(0.4, 10);
  c.change_point = kNever;
  EXPECT_THROW(run_delay_experiment(c), ConfigError);
}

TEST(FalseAlarmExperiment, UngatedArlFollowsExponent) {
  ExperimentConfig c;
  c.gate_mode = GateMode::always_on;
  c.h = 5.0;
  c.n_runs = 10'000;
  c.master_seed = 9;
  const auto r = run_fa_experiment(c);
  ASSERT_TRUE(r.tail);
  const double beta_bar = 0.0699;
  EXPECT_NEAR(r.mean_stop, std::exp(5.0) / beta_bar, 0.15 * std::exp(5.0) / beta_bar);
  EXPECT_EQ(r.censored_count, 0u);
}

TEST(FalseAlarmExperiment, GatedArlFollowsExponent) {
  ExperimentConfig c;
  c.harvest = HarvestModel::exponential(0.4);
  c.h = 5.0;
  c.n_runs = 10'000;
  c.master_seed = 10;
  const auto r = run_fa_experiment(c);
  const double beta = 0.0558;
  EXPECT_NEAR(r.mean_stop, std::exp(5.0) / beta, 0.15 * std::exp(5.0) / beta);
}

TEST(FalseAlarmExperiment, TinyThreshold) {
  ExperimentConfig c;
  c.gate_mode = GateMode::always_on;
  c.h = 0.5;
  c.n_runs = 300;
  const auto r = run_fa_experiment(c);
  EXPECT_LT(r.mean_stop, 20.0);
  EXPECT_FALSE(r.tail);
}

TEST(FalseAlarmExperiment, ArlGrowsLikeExpH) {
  std::vector<double> hs = {3.0, 4.0, 5.0, 6.0};
  std::vector<double> log_arl;
  for (double h : hs) {
    ExperimentConfig c;
    c.gate_mode = GateMode::always_on;
    c.h = h;
    c.n_runs = 4'000;
    c.master_seed = 11;
    log_arl.push_back(std::log(run_fa_experiment(c).mean_stop));
  }
  EXPECT_NEAR(ols_slope(hs, log_arl), 1.0, 0.1);
}

TEST(TailFit, SyntheticExponential) {
  const double h = 6.0, beta = 0.0558;
  std::exponential_distribution<double> e(beta * std::exp(-h));
  Stream rng = derive_stream(12, 0);
  std::vector<double> t(20'000);
  for (auto& x : t) x = e(rng);
  const auto fit = fit_tail_exponent(t, h);
  EXPECT_NEAR(fit.exponent, beta, 0.03 * beta);
  EXPECT_GT(fit.r2, 0.99);
}

TEST(TailFit, Preconditions) {
  std::vector<double> few(499, 3.0);
  EXPECT_THROW(fit_tail_exponent(few, 1.0), PreconditionError);
  std::vector<double> constant(1000, 7.0);
  EXPECT_THROW(fit_tail_exponent(constant, 1.0), PreconditionError);
}

TEST(SurvivalCurve, Decreasing) {
  std::vector<double> t = {1, 2, 2, 3, 5, 8, 8, 8, 9};
  const auto c = survival_curve(t, 0.0);
  ASSERT_FALSE(c.empty());
  for (std::size_t i = 1; i < c.size(); ++i) {
    EXPECT_GT(c[i].first, c[i - 1].first);
    EXPECT_LT(c[i].second, c[i - 1].second);
  }
  EXPECT_NEAR(c.front().second, std::log(8.0 / 9.0), 1e-15);
}

TEST(Normality, SmallThresholdIsFarFromGaussian) {
  ExperimentConfig c;
  c.gate_mode = GateMode::always_on;
  c.n_runs = 20'000;
  c.h = 1.0;
  const auto small = delay_distribution_check(c);
  c.h = 10.0;
  const auto res = run_delay_experiment(c);
  for (const auto& r : res.runs) ASSERT_GE(r.overshoot, 0.0);
  const auto large = normality_statistics(res.runs, llr_stats(c.model), c.h);
  EXPECT_GT(small.ks, large.ks);
  EXPECT_EQ(large.n, 20'000u);
  EXPECT_LT(std::abs(large.correlation), 0.05);
}

TEST(Normality, KsAgainstExactGaussian) {
  // Synthetic records whose standardized stop times are exactly N(0, 1)
  // up to integer rounding at a huge scale.
  const auto s = llr_stats(ChangeModel{});
  const double h = 1e6;
  const double centre = h / s.i_kl, scale = std::sqrt(h * s.z_variance_post / std::pow(s.i_kl, 3));
  std::normal_distribution<double> n;
  Stream rng = derive_stream(13, 0);
  std::vector<StoppingRecord> runs(20'000);
  for (auto& r : runs) {
    r.stopped = true;
    r.stop_time = static_cast<std::uint64_t>(std::llround(centre + scale * n(rng)));
    r.overshoot = std::abs(n(rng));
  }
  const auto chk = normality_statistics(runs, s, h);
  EXPECT_LT(chk.ks, 0.015);
  EXPECT_LT(std::abs(chk.correlation), 0.03);
}
