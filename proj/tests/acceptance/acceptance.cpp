// SPDX-License-Identifier: Apache-2.0
// Acceptance gate: one PASS/FAIL line per criterion. Run with a criterion
// id (1..6, 7a..7f) to evaluate just that one, or with no argument for all.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ehcusum/asymptotics.hpp"
#include "ehcusum/cli.hpp"
#include "ehcusum/montecarlo.hpp"
#include "ehcusum/renewal_constants.hpp"
#include "ehcusum/stationary_solver.hpp"

using namespace ehcusum;
namespace fs = std::filesystem;

namespace {

// ----------------------------------------------------------- pinned values
constexpr double kSenseCost = 0.5;
constexpr double kThreshold = 10.0;
constexpr std::size_t kDelayRuns = 40'000;       // >= 2e4
const std::vector<double> kSurplusMeans = {0.5, 0.6, 0.7};
constexpr double kSurplusLow = 75.1;
constexpr double kSurplusHigh = 78.3;
constexpr double kTheoryTol = 0.02;
const std::map<double, double> kDeficitTable = {{0.2, 191.6}, {0.3, 127.8}, {0.4, 95.8}};
constexpr double kDeficitTol = 0.02;
constexpr double kRatioTol = 0.03;
constexpr double kPi1Tol = 0.01;
constexpr std::uint64_t kBatterySteps = 10'000'000;
constexpr double kBatteryKsTol = 0.01;
constexpr double kResidualTol = 1e-8;
constexpr double kBetaBarLow = 0.063;
constexpr double kBetaBarHigh = 0.077;
const std::map<double, double> kBetaMrw = {{0.4, 0.0558}, {0.3, 0.0417}, {0.2, 0.0283}};
constexpr double kBetaTol = 0.10;
constexpr double kProxyTol = 0.10;
const std::vector<double> kTailThresholds = {4.0, 5.0, 6.0};
constexpr std::size_t kTailRuns = 10'000;
constexpr double kTailR2 = 0.98;
constexpr double kTailTol = 0.15;
constexpr double kSlopeTol = 0.10;
constexpr double kRhoOneTol = 1e-12;
constexpr std::size_t kReflectionPaths = 1'000;
constexpr double kStderrMultiple = 4.0;
constexpr std::size_t kNormalityRuns = 100'000;
constexpr double kNormalityKs = 0.02;
constexpr double kNormalityCorr = 0.02;
constexpr std::uint64_t kSeed = 20240611;

// ------------------------------------------------------------------ output
struct Verdict {
  bool pass = true;
  std::string summary;
};

void detail_line(const std::string& s) { std::printf("      %s\n", s.c_str()); }

std::string f(double v, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

std::string g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

// ------------------------------------------------------------ shared setup
const LlrStats& stats() {
  static const LlrStats s = llr_stats(ChangeModel{});
  return s;
}

const RenewalConstants& ungated_constants() {
  static const RenewalConstants c = [] {
    RenewalOptions o;
    o.par = {kSeed, 1};
    return estimate_renewal_constants(ChangeModel{}, std::nullopt, o);
  }();
  return c;
}

struct DeficitCase {
  HarvestModel harvest;
  DensityGrid grid;
  XiChain chain;
};

const DeficitCase& deficit_case(double mean) {
  static std::map<double, DeficitCase> cache;
  auto it = cache.find(mean);
  if (it == cache.end()) {
    auto h = HarvestModel::exponential(mean);
    auto grid = solve_stationary_density(h, kSenseCost, {});
    auto chain = transition_probs(grid, h, kSenseCost);
    it = cache.emplace(mean, DeficitCase{h, std::move(grid), chain}).first;
  }
  return it->second;
}

const RenewalConstants& gated_constants(double mean) {
  static std::map<double, RenewalConstants> cache;
  auto it = cache.find(mean);
  if (it == cache.end()) {
    RenewalOptions o;
    o.par = {kSeed + 1, 1};
    it = cache.emplace(mean, estimate_renewal_constants(ChangeModel{}, deficit_case(mean).chain, o)).first;
  }
  return it->second;
}

ExperimentResult delay_run(double mean, std::size_t runs = kDelayRuns) {
  ExperimentConfig c;
  c.harvest = HarvestModel::exponential(mean);
  c.e_s = kSenseCost;
  c.h = kThreshold;
  c.n_runs = runs;
  c.master_seed = kSeed;
  c.gate_mode = GateMode::stationary_chain;
  if (mean < kSenseCost) c.chain = deficit_case(mean).chain;
  return run_delay_experiment(c);
}

// --------------------------------------------------------------- criteria

Verdict criterion_1() {
  Verdict v;
  const double theory = predict_delay_surplus(stats(), ungated_constants(), kThreshold);
  double worst = 0.0;
  for (double mean : kSurplusMeans) {
    const auto r = delay_run(mean);
    const double rel = (theory - r.mean_stop) / r.mean_stop;
    const bool in_band = r.mean_stop >= kSurplusLow && r.mean_stop <= kSurplusHigh;
    const bool close = std::abs(rel) < kTheoryTol;
    v.pass = v.pass && in_band && close && r.censored_count == 0;
    worst = std::max(worst, std::abs(rel));
    detail_line("H=" + f(mean, 1) + " simulated " + f(r.mean_stop) + " +- " + f(r.std_error) +
                " theory " + f(theory) + " rel " + f(100 * rel, 2) + "%");
  }
  v.summary = "surplus delays in [" + f(kSurplusLow, 1) + ", " + f(kSurplusHigh, 1) +
              "], theory within 2% (worst " + f(100 * worst, 2) + "%)";
  return v;
}

Verdict criterion_2() {
  Verdict v;
  const double surplus_sim = delay_run(0.7).mean_stop;
  double worst_table = 0.0, worst_theory = 0.0, worst_ratio = 0.0;
  for (const auto& [mean, table] : kDeficitTable) {
    const auto& dc = deficit_case(mean);
    const auto r = delay_run(mean);
    const double theory = predict_delay_deficit(stats(), gated_constants(mean), dc.chain.pi1, kThreshold);
    const double rel_table = (r.mean_stop - table) / table;
    const double rel_theory = (theory - r.mean_stop) / r.mean_stop;
    const double ratio = r.mean_stop * (mean / kSenseCost) / surplus_sim;
    v.pass = v.pass && std::abs(rel_table) < kDeficitTol && std::abs(rel_theory) < kTheoryTol &&
             std::abs(ratio - 1.0) < kRatioTol;
    worst_table = std::max(worst_table, std::abs(rel_table));
    worst_theory = std::max(worst_theory, std::abs(rel_theory));
    worst_ratio = std::max(worst_ratio, std::abs(ratio - 1.0));
    detail_line("H=" + f(mean, 1) + " simulated " + f(r.mean_stop) + " +- " + f(r.std_error) +
                " (table " + f(table, 1) + ") theory " + f(theory) + " ratio " + f(ratio));
  }
  v.summary = "deficit delays vs table worst " + f(100 * worst_table, 2) + "%, theory vs sim worst " +
              f(100 * worst_theory, 2) + "%, ratio worst |r-1| " + f(worst_ratio);
  return v;
}

Verdict criterion_3() {
  Verdict v;
  double worst_pi = 0.0, worst_ks = 0.0, worst_res = 0.0;
  std::uint64_t seed = kSeed;
  for (const auto& [mean, unused] : kDeficitTable) {
    const auto& dc = deficit_case(mean);
    const double pi_err = std::abs(dc.chain.pi1 - mean / kSenseCost);
    const double ks = battery_cdf_distance(dc.grid, dc.harvest, kBatterySteps, ++seed);
    const auto next = apply_balance_operator(dc.grid, dc.harvest);
    double res = 0.0;
    for (std::size_t i = 0; i < next.size(); ++i) res = std::max(res, std::abs(next[i] - dc.grid.values[i]));
    v.pass = v.pass && pi_err < kPi1Tol && ks < kBatteryKsTol && res < kResidualTol;
    worst_pi = std::max(worst_pi, pi_err);
    worst_ks = std::max(worst_ks, ks);
    worst_res = std::max(worst_res, res);
    detail_line("H=" + f(mean, 1) + " pi1 " + f(dc.chain.pi1, 5) + " mass split " +
                f(dc.grid.mass_above_sense_cost(), 5) + " KS " + f(ks, 5) + " residual " + g(res));
  }
  v.summary = "|pi1 - H/E_s| worst " + g(worst_pi) + ", KS worst " + g(worst_ks) + ", residual worst " +
              g(worst_res);
  return v;
}

Verdict criterion_4() {
  Verdict v;
  const auto surplus = predict_fa_surplus(stats(), ungated_constants(), kThreshold);
  const double beta_bar = surplus.exponent;
  v.pass = beta_bar >= kBetaBarLow && beta_bar <= kBetaBarHigh;
  detail_line("beta_bar " + f(beta_bar, 5) + " (delta_bar " + f(ungated_constants().delta_bar.value, 5) +
              ", c(inf)/E[T-] " +
              f(ungated_constants().c_inf.value / ungated_constants().neg_ladder_epoch.value, 5) + ")");
  double worst = 0.0, worst_proxy = 0.0;
  for (const auto& [mean, paper] : kBetaMrw) {
    const auto& dc = deficit_case(mean);
    const auto law = predict_fa_deficit(stats(), gated_constants(mean), dc.chain.pi1, kThreshold);
    const double rel = (law.exponent - paper) / paper;
    const double proxy = law.exponent / (dc.chain.pi1 * beta_bar);
    v.pass = v.pass && std::abs(rel) < kBetaTol && std::abs(proxy - 1.0) < kProxyTol;
    worst = std::max(worst, std::abs(rel));
    worst_proxy = std::max(worst_proxy, std::abs(proxy - 1.0));
    detail_line("H=" + f(mean, 1) + " beta_MRW " + f(law.exponent, 5) + " (paper " + f(paper, 4) +
                ") beta_MRW/(pi1 beta_bar) " + f(proxy));
  }
  v.summary = "beta_bar " + f(beta_bar, 5) + ", beta_MRW worst rel " + f(100 * worst, 2) +
              "%, proxy worst |r-1| " + f(worst_proxy);
  return v;
}

Verdict criterion_5() {
  Verdict v;
  const double beta_bar = predict_fa_surplus(stats(), ungated_constants(), kThreshold).exponent;
  const double beta_mrw =
      predict_fa_deficit(stats(), gated_constants(0.4), deficit_case(0.4).chain.pi1, kThreshold).exponent;
  struct Setting {
    std::string name;
    std::optional<double> mean;
    double predicted;
  };
  const std::vector<Setting> settings = {{"ungated", std::nullopt, beta_bar}, {"H=0.4", 0.4, beta_mrw}};
  double worst_fit = 0.0, min_r2 = 1.0, worst_slope = 0.0;
  for (const auto& s : settings) {
    std::vector<double> log_arl;
    for (double h : kTailThresholds) {
      ExperimentConfig c;
      c.e_s = kSenseCost;
      c.h = h;
      c.n_runs = kTailRuns;
      c.master_seed = kSeed + static_cast<std::uint64_t>(10 * h);
      if (s.mean) {
        c.harvest = HarvestModel::exponential(*s.mean);
        c.chain = deficit_case(*s.mean).chain;
        c.gate_mode = GateMode::stationary_chain;
      } else {
        c.gate_mode = GateMode::always_on;
      }
      const auto r = run_fa_experiment(c);
      if (!r.tail) {
        v.pass = false;
        detail_line(s.name + " h=" + f(h, 0) + " no tail fit");
        continue;
      }
      const double rel = (r.tail->exponent - s.predicted) / s.predicted;
      v.pass = v.pass && r.tail->r2 > kTailR2 && std::abs(rel) < kTailTol && r.censored_count == 0;
      worst_fit = std::max(worst_fit, std::abs(rel));
      min_r2 = std::min(min_r2, r.tail->r2);
      log_arl.push_back(std::log(r.mean_stop));
      detail_line(s.name + " h=" + f(h, 0) + " ARL " + f(r.mean_stop, 1) + " fitted exponent " +
                  f(r.tail->exponent, 5) + " (predicted " + f(s.predicted, 5) + ", rel " +
                  f(100 * rel, 2) + "%) r2 " + f(r.tail->r2, 5));
    }
    if (log_arl.size() == kTailThresholds.size()) {
      const double slope = ols_slope(kTailThresholds, log_arl);
      v.pass = v.pass && std::abs(slope - 1.0) < kSlopeTol;
      worst_slope = std::max(worst_slope, std::abs(slope - 1.0));
      detail_line(s.name + " slope of log ARL on h " + f(slope));
    }
  }
  v.summary = "tail fits r2 min " + f(min_r2, 5) + ", exponent worst rel " + f(100 * worst_fit, 2) +
              "%, log-ARL slope worst |s-1| " + f(worst_slope);
  return v;
}

Verdict criterion_6() {
  Verdict v;
  double worst_one = 0.0, max_inner = 0.0;
  for (const auto& [mean, unused] : kDeficitTable) {
    const auto& chain = deficit_case(mean).chain;
    const double one = std::abs(spectral_radius(chain, ChangeModel{}, 1.0) - 1.0);
    double inner = 0.0;
    for (int i = 1; i < 1000; ++i)
      inner = std::max(inner, spectral_radius(chain, ChangeModel{}, i / 1000.0));
    v.pass = v.pass && one < kRhoOneTol && inner < 1.0;
    worst_one = std::max(worst_one, one);
    max_inner = std::max(max_inner, inner);
    detail_line("H=" + f(mean, 1) + " |rho(1) - 1| " + g(one) + " max rho on (0,1) " + f(inner, 8));
  }
  v.summary = "|rho(1) - 1| worst " + g(worst_one) + ", max rho(gamma) on (0,1) " + f(max_inner, 8);
  return v;
}

Verdict criterion_7a() {
  Verdict v;
  std::normal_distribution<double> n(-0.05, 1.0);
  std::bernoulli_distribution coin(0.7);
  double worst = 0.0;
  for (std::size_t p = 0; p < kReflectionPaths; ++p) {
    Stream rng = derive_stream(kSeed, p);
    CusumState s;
    for (int k = 0; k < 500; ++k) {
      s = gated_cusum_step(s, n(rng), coin(rng));
      worst = std::max(worst, std::abs(s.statistic - (s.walk - s.path_min)));
    }
  }
  v.pass = worst < 1e-9;
  v.summary = "reflection identity on " + std::to_string(kReflectionPaths) + " paths, worst gap " + g(worst);
  return v;
}

Verdict criterion_7b() {
  Verdict v;
  ThresholdRule rule;
  rule.h = kThreshold;
  std::size_t mismatches = 0;
  const std::size_t n = 10'000;
  for (std::size_t i = 0; i < n; ++i) {
    Stream o1 = derive_stream(kSeed, i), g1 = derive_stream(kSeed, i, Lane::gates);
    Stream o2 = o1, g2 = g1;
    const auto a = run_until_threshold(ChangeModel{}, AlwaysOn{}, rule, o1, g1);
    const auto b = run_until_threshold(ChangeModel{}, MarkovGate(0.0, 1.0, true), rule, o2, g2);
    mismatches += a.stop_time != b.stop_time || a.overshoot != b.overshoot;
  }
  const auto plain = estimate_zeta_eta_bar(ChangeModel{}, std::nullopt, 5'000, 800, {kSeed, 1});
  const auto gated = estimate_zeta_eta_bar(ChangeModel{}, XiChain{0.5, 1.0, 0.0, 1.0}, 5'000, 800, {kSeed, 1});
  mismatches += plain.value.value != gated.value.value;
  v.pass = mismatches == 0;
  v.summary = "gate=1 coupling: " + std::to_string(mismatches) + " mismatches over " + std::to_string(n) +
              " runs and the perturbation estimator";
  return v;
}

Verdict criterion_7c() {
  const auto& c = ungated_constants();
  const double gap = c.kappa_inf.value - c.kappa_inf_alt.value;
  const double se = std::hypot(c.kappa_inf.std_error, c.kappa_inf_alt.std_error);
  return {std::abs(gap) < kStderrMultiple * se,
          "kappa_inf " + f(c.kappa_inf.value, 5) + " vs dual form " + f(c.kappa_inf_alt.value, 5) +
              ", |gap|/stderr " + f(std::abs(gap) / se, 2)};
}

Verdict criterion_7d() {
  const double h1 = 25.0 * stats().i_kl;
  const auto a = estimate_delta_bar(ChangeModel{}, h1, 100'000, {kSeed + 7, 1});
  const auto b = estimate_delta_bar(ChangeModel{}, 2.0 * h1, 100'000, {kSeed + 8, 1});
  const double se = std::hypot(a.std_error, b.std_error);
  return {std::abs(a.value - b.value) < kStderrMultiple * se,
          "delta_bar at h=" + f(h1, 3) + " " + f(a.value, 5) + ", at h=" + f(2 * h1, 3) + " " +
              f(b.value, 5) + ", |gap|/stderr " + f(std::abs(a.value - b.value) / se, 2)};
}

Verdict criterion_7e() {
  const auto base = fs::temp_directory_path() / "ehcusum-acceptance-determinism";
  fs::remove_all(base);
  fs::create_directories(base);
  const auto cfg_path = base / "config.ini";
  std::ofstream(cfg_path) << "[model]\nm0 = 0\nm1 = 0.5\nsigma = 1\n\n[harvest]\nfamily = exponential\n"
                             "mean = 0.4\nsense_cost = 0.5\n\n[detector]\nthreshold = 10\n\n"
                             "[experiment]\nn_runs = 20000\nsweep_means = 0.3,0.7\n";
  auto slurp = [](const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
  };
  std::vector<std::string> summaries;
  std::ostringstream sink;
  for (unsigned workers : {1u, 2u, 4u, 7u}) {
    cli::GlobalOptions g;
    g.config = cfg_path;
    g.seed = kSeed;
    g.workers = workers;
    g.out = base / ("w" + std::to_string(workers));
    if (cli::guarded([&] { return cli::cmd_simulate(g, cli::SimMode::delay, sink); }, sink) != 0)
      return {false, "simulate failed: " + sink.str()};
    summaries.push_back(slurp(g.out / "simulate-delay-summary.csv"));
  }
  bool same = true;
  for (const auto& s : summaries) same = same && s == summaries.front() && !s.empty();
  fs::remove_all(base);
  return {same, "summary CSV byte-identical across 1, 2, 4, 7 workers"};
}

Verdict criterion_7f() {
  ExperimentConfig c;
  c.gate_mode = GateMode::always_on;
  c.h = kThreshold;
  c.n_runs = kNormalityRuns;
  c.master_seed = kSeed;
  const auto chk = delay_distribution_check(c);
  return {chk.ks < kNormalityKs && std::abs(chk.correlation) < kNormalityCorr,
          "standardized delay KS " + f(chk.ks, 5) + " (limit " + f(kNormalityKs, 2) + "), corr(delay, overshoot) " +
              f(chk.correlation, 5) + " over " + std::to_string(chk.n) + " runs"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::vector<std::string> only;
  app.add_option("criteria", only, "criterion ids to run (default: all)");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Verdict()>>> all = {
      {"1", criterion_1},   {"2", criterion_2},   {"3", criterion_3},   {"4", criterion_4},
      {"5", criterion_5},   {"6", criterion_6},   {"7a", criterion_7a}, {"7b", criterion_7b},
      {"7c", criterion_7c}, {"7d", criterion_7d}, {"7e", criterion_7e}, {"7f", criterion_7f},
  };
  int failures = 0;
  int ran = 0;
  for (const auto& [id, fn] : all) {
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    ++ran;
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    std::printf("%s criterion %s: %s\n", v.pass ? "PASS" : "FAIL", id.c_str(), v.summary.c_str());
    std::fflush(stdout);
    failures += v.pass ? 0 : 1;
  }
  if (ran == 0) {
    std::fprintf(stderr, "no criterion matched\n");
    return 2;
  }
  return failures == 0 ? 0 : 1;
}
