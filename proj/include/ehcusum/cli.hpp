// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <array>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

#include "ehcusum/asymptotics.hpp"
#include "ehcusum/change_model.hpp"
#include "ehcusum/error.hpp"
#include "ehcusum/harvest_battery.hpp"
#include "ehcusum/montecarlo.hpp"
#include "ehcusum/renewal_constants.hpp"
#include "ehcusum/stationary_solver.hpp"

#ifndef EHCUSUM_VERSION
#define EHCUSUM_VERSION "0.1.0"
#endif

namespace ehcusum::cli {

namespace fs = std::filesystem;

inline constexpr std::string_view kToolVersion = EHCUSUM_VERSION;

enum ExitCode : int { ok = 0, config_error = 1, precondition_error = 2, no_convergence = 3 };

// ---------------------------------------------------------------- formatting

/// Shortest round-trip decimal; identical bytes on every run.
inline std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::array<char, 32> buf{};
  auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

inline std::string fmt(std::uint64_t v) { return std::to_string(v); }

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = s.find(sep, start);
    out.push_back(std::string(s.substr(start, pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline double parse_real(std::string_view key, std::string_view text) {
  const auto t = trim(text);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc{} || ptr != t.data() + t.size() || t.empty() || !std::isfinite(v))
    throw ConfigError(std::string(key) + ": expected a real number, got '" + t + "'");
  return v;
}

inline std::uint64_t parse_count(std::string_view key, std::string_view text) {
  const auto t = trim(text);
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc{} || ptr != t.data() + t.size() || t.empty())
    throw ConfigError(std::string(key) + ": expected a non-negative integer, got '" + t + "'");
  return v;
}

inline bool parse_bool(std::string_view key, std::string_view text) {
  const auto t = trim(text);
  if (t == "true" || t == "1" || t == "yes") return true;
  if (t == "false" || t == "0" || t == "no") return false;
  throw ConfigError(std::string(key) + ": expected true or false, got '" + t + "'");
}

inline std::vector<double> parse_real_list(std::string_view key, std::string_view text) {
  std::vector<double> out;
  if (trim(text).empty()) return out;
  for (const auto& item : split(text, ',')) out.push_back(parse_real(key, item));
  return out;
}

inline std::string join(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + fmt(v[i]);
  return out;
}

// -------------------------------------------------------------------- config

struct Config {
  // [model]
  ChangeModel model;
  // [harvest]
  HarvestFamily family = HarvestFamily::exponential;
  double harvest_mean = 0.0;
  double parent_sd = 1.0;  // truncated-gaussian only
  double sense_cost = 0.5;
  double grid_max = 0.0;   // 0: automatic
  std::uint64_t grid_points = 4096;
  // [detector]
  double threshold = 10.0;
  // [experiment]
  std::uint64_t seed = 1;
  std::uint64_t n_runs = 20'000;
  std::uint64_t max_steps = 0;
  std::uint64_t change_point = 1;
  GateMode gate_mode = GateMode::stationary_chain;
  InitialBattery initial_battery = InitialBattery::sense_cost;
  double fit_low = 0.1;
  double fit_high = 0.9;
  std::optional<std::vector<double>> sweep_means;
  std::optional<std::vector<double>> sweep_thresholds;
  std::uint64_t ladder_reps = 1'000'000;
  std::uint64_t zeta_reps = 100'000;
  std::uint64_t zeta_horizon = 0;  // 0: automatic
  std::uint64_t delta_reps = 100'000;
  double h_probe = 0.0;            // 0: automatic
  std::uint64_t neg_reps = 1'000'000;
  bool ungated_ladder = false;

  std::vector<double> harvest_means() const {
    return sweep_means ? *sweep_means : std::vector<double>{harvest_mean};
  }
  std::vector<double> thresholds() const {
    return sweep_thresholds ? *sweep_thresholds : std::vector<double>{threshold};
  }

  HarvestModel harvest(double mean) const {
    switch (family) {
      case HarvestFamily::exponential: return HarvestModel::exponential(mean);
      case HarvestFamily::uniform: return HarvestModel::uniform(mean);
      case HarvestFamily::truncated_gaussian: return HarvestModel::truncated_gaussian(mean, parent_sd);
    }
    throw ConfigError("unknown harvest family");
  }

  StationarySolverOptions solver() const {
    StationarySolverOptions o;
    if (grid_max > 0.0) o.grid_max = grid_max;
    o.n_points = grid_points;
    return o;
  }

  RenewalOptions renewal(unsigned workers) const {
    RenewalOptions o;
    o.par = {seed, workers};
    o.ladder_reps = ladder_reps;
    o.zeta_reps = zeta_reps;
    if (zeta_horizon > 0) o.zeta_horizon = zeta_horizon;
    o.delta_reps = delta_reps;
    if (h_probe > 0.0) o.h_probe = h_probe;
    o.neg_reps = neg_reps;
    return o;
  }

  /// Canonical key/value listing in section order; the manifest echo.
  std::vector<std::pair<std::string, std::string>> entries() const {
    std::vector<std::pair<std::string, std::string>> kv = {
        {"model.m0", fmt(model.m0)},
        {"model.m1", fmt(model.m1)},
        {"model.sigma", fmt(model.sigma)},
        {"harvest.family", std::string(to_string(family))},
        {"harvest.mean", fmt(harvest_mean)},
        {"harvest.parent_sd", fmt(parent_sd)},
        {"harvest.sense_cost", fmt(sense_cost)},
        {"harvest.grid_max", fmt(grid_max)},
        {"harvest.grid_points", fmt(grid_points)},
        {"detector.threshold", fmt(threshold)},
        {"experiment.seed", fmt(seed)},
        {"experiment.n_runs", fmt(n_runs)},
        {"experiment.max_steps", fmt(max_steps)},
        {"experiment.change_point", fmt(change_point)},
        {"experiment.gate_mode", std::string(to_string(gate_mode))},
        {"experiment.initial_battery", std::string(to_string(initial_battery))},
        {"experiment.fit_low", fmt(fit_low)},
        {"experiment.fit_high", fmt(fit_high)},
    };
    if (sweep_means) kv.emplace_back("experiment.sweep_means", join(*sweep_means));
    if (sweep_thresholds) kv.emplace_back("experiment.sweep_thresholds", join(*sweep_thresholds));
    kv.insert(kv.end(), {
                            {"experiment.ladder_reps", fmt(ladder_reps)},
                            {"experiment.zeta_reps", fmt(zeta_reps)},
                            {"experiment.zeta_horizon", fmt(zeta_horizon)},
                            {"experiment.delta_reps", fmt(delta_reps)},
                            {"experiment.h_probe", fmt(h_probe)},
                            {"experiment.neg_reps", fmt(neg_reps)},
                            {"experiment.ungated_ladder", ungated_ladder ? "true" : "false"},
                        });
    return kv;
  }

  void write_ini(std::ostream& os) const {
    std::string section;
    for (const auto& [key, value] : entries()) {
      const auto dot = key.find('.');
      const auto sec = key.substr(0, dot);
      if (sec != section) {
        if (!section.empty()) os << '\n';
        os << '[' << sec << "]\n";
        section = sec;
      }
      os << key.substr(dot + 1) << " = " << value << '\n';
    }
  }

  void validate() const {
    try {
      model.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    if (model.m0 == model.m1) throw ConfigError("model.m1: must differ from model.m0");
    if (!(harvest_mean > 0.0)) throw ConfigError("harvest.mean: must be positive");
    if (!(parent_sd > 0.0)) throw ConfigError("harvest.parent_sd: must be positive");
    if (!(sense_cost > 0.0)) throw ConfigError("harvest.sense_cost: must be positive");
    if (grid_max < 0.0) throw ConfigError("harvest.grid_max: must be >= 0");
    if (grid_points < 16) throw ConfigError("harvest.grid_points: must be >= 16");
    if (!(threshold > 0.0)) throw ConfigError("detector.threshold: must be positive");
    if (n_runs < 1) throw ConfigError("experiment.n_runs: must be >= 1");
    if (change_point < 1) throw ConfigError("experiment.change_point: must be >= 1");
    if (!(0.0 <= fit_low && fit_low < fit_high && fit_high <= 1.0))
      throw ConfigError("experiment.fit_low/fit_high: need 0 <= low < high <= 1");
    if (sweep_means)
      for (double m : *sweep_means)
        if (!(m > 0.0)) throw ConfigError("experiment.sweep_means: entries must be positive");
    if (sweep_thresholds)
      for (double h : *sweep_thresholds)
        if (!(h > 0.0)) throw ConfigError("experiment.sweep_thresholds: entries must be positive");
    if (ladder_reps < 2 || zeta_reps < 2 || delta_reps < 2 || neg_reps < 2)
      throw ConfigError("experiment.*_reps: need at least two replications");
    if (h_probe < 0.0) throw ConfigError("experiment.h_probe: must be >= 0");
  }
};

namespace detail {

inline const std::set<std::string>& required_keys() {
  static const std::set<std::string> keys = {
      "model.m0",         "model.m1",           "model.sigma",        "harvest.family",
      "harvest.mean",     "harvest.sense_cost", "detector.threshold",
  };
  return keys;
}

inline void assign(Config& c, const std::string& key, const std::string& value) {
  if (key == "model.m0") c.model.m0 = parse_real(key, value);
  else if (key == "model.m1") c.model.m1 = parse_real(key, value);
  else if (key == "model.sigma") c.model.sigma = parse_real(key, value);
  else if (key == "harvest.family") c.family = parse_harvest_family(trim(value));
  else if (key == "harvest.mean") c.harvest_mean = parse_real(key, value);
  else if (key == "harvest.parent_sd") c.parent_sd = parse_real(key, value);
  else if (key == "harvest.sense_cost") c.sense_cost = parse_real(key, value);
  else if (key == "harvest.grid_max") c.grid_max = parse_real(key, value);
  else if (key == "harvest.grid_points") c.grid_points = parse_count(key, value);
  else if (key == "detector.threshold") c.threshold = parse_real(key, value);
  else if (key == "experiment.seed") c.seed = parse_count(key, value);
  else if (key == "experiment.n_runs") c.n_runs = parse_count(key, value);
  else if (key == "experiment.max_steps") c.max_steps = parse_count(key, value);
  else if (key == "experiment.change_point") c.change_point = parse_count(key, value);
  else if (key == "experiment.gate_mode") c.gate_mode = parse_gate_mode(trim(value));
  else if (key == "experiment.initial_battery") c.initial_battery = parse_initial_battery(trim(value));
  else if (key == "experiment.fit_low") c.fit_low = parse_real(key, value);
  else if (key == "experiment.fit_high") c.fit_high = parse_real(key, value);
  else if (key == "experiment.sweep_means") c.sweep_means = parse_real_list(key, value);
  else if (key == "experiment.sweep_thresholds") c.sweep_thresholds = parse_real_list(key, value);
  else if (key == "experiment.ladder_reps") c.ladder_reps = parse_count(key, value);
  else if (key == "experiment.zeta_reps") c.zeta_reps = parse_count(key, value);
  else if (key == "experiment.zeta_horizon") c.zeta_horizon = parse_count(key, value);
  else if (key == "experiment.delta_reps") c.delta_reps = parse_count(key, value);
  else if (key == "experiment.h_probe") c.h_probe = parse_real(key, value);
  else if (key == "experiment.neg_reps") c.neg_reps = parse_count(key, value);
  else if (key == "experiment.ungated_ladder") c.ungated_ladder = parse_bool(key, value);
  else throw ConfigError("unknown config key '" + key + "'");
}

using KeyValues = std::map<std::string, std::string>;

/// Flattens an INI tree to section.key -> value. Only a [run] section
/// (written into manifests) is allowed besides the config sections.
inline std::pair<KeyValues, KeyValues> flatten(std::istream& is, const std::string& origin) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(is, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(origin + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  KeyValues cfg;
  KeyValues run;
  for (const auto& [section, body] : tree) {
    if (body.empty())
      throw ConfigError(origin + ": key '" + section + "' must live in a section");
    const bool is_run = section == "run";
    if (!is_run && section != "model" && section != "harvest" && section != "detector" &&
        section != "experiment")
      throw ConfigError(origin + ": unknown section [" + section + "]");
    for (const auto& [key, node] : body) {
      (is_run ? run : cfg)[is_run ? key : section + "." + key] = node.data();
    }
  }
  return {cfg, run};
}

}  // namespace detail

inline Config config_from_entries(const detail::KeyValues& kv) {
  for (const auto& key : detail::required_keys())
    if (!kv.contains(key)) throw ConfigError("missing config key '" + key + "'");
  Config c;
  for (const auto& [key, value] : kv) detail::assign(c, key, value);
  c.validate();
  return c;
}

inline Config parse_config(std::istream& is, const std::string& origin = "config") {
  return config_from_entries(detail::flatten(is, origin).first);
}

inline Config parse_config(std::string_view text) {
  std::istringstream is{std::string(text)};
  return parse_config(is);
}

inline Config load_config(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path.string());
  return parse_config(is, path.string());
}

// ------------------------------------------------------------------ manifest

struct RunManifest {
  std::string command;
  std::string tool_version{kToolVersion};
  std::uint64_t master_seed = 0;
  unsigned workers = 1;
  std::string started_at;
  std::string finished_at;
  Config config;
  std::vector<std::string> outputs;  // file names relative to the manifest
  fs::path path;

  void write(const fs::path& file) const {
    std::ofstream os(file, std::ios::binary);
    if (!os) throw ConfigError("cannot write " + file.string());
    config.write_ini(os);
    os << "\n[run]\n";
    os << "command = " << command << '\n';
    os << "tool_version = " << tool_version << '\n';
    os << "master_seed = " << master_seed << '\n';
    os << "workers = " << workers << '\n';
    os << "started_at = " << started_at << '\n';
    os << "finished_at = " << finished_at << '\n';
    std::string joined;
    for (std::size_t i = 0; i < outputs.size(); ++i) joined += (i ? "," : "") + outputs[i];
    os << "outputs = " << joined << '\n';
  }
};

inline RunManifest load_manifest(const fs::path& file) {
  std::ifstream is(file);
  if (!is) throw ConfigError("cannot open manifest " + file.string());
  auto [cfg, run] = detail::flatten(is, file.string());
  if (!run.contains("command")) throw ConfigError(file.string() + ": not a run manifest (no [run] section)");
  RunManifest m;
  m.path = file;
  m.config = config_from_entries(cfg);
  m.command = run["command"];
  m.tool_version = run["tool_version"];
  m.master_seed = m.config.seed;
  m.started_at = run["started_at"];
  m.finished_at = run["finished_at"];
  if (!trim(run["outputs"]).empty())
    for (const auto& o : split(run["outputs"], ',')) m.outputs.push_back(trim(o));
  return m;
}

inline std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

// ----------------------------------------------------------------------- csv

/// Comma separated, header row, LF endings. Every row carries the name of
/// the manifest that produced the file in its last column.
class CsvWriter {
 public:
  CsvWriter(const fs::path& file, std::vector<std::string> header, std::string manifest)
      : os_(file, std::ios::binary), manifest_(std::move(manifest)), width_(header.size()) {
    if (!os_) throw ConfigError("cannot write " + file.string());
    header.emplace_back("manifest");
    write_line(header);
  }

  void row(std::vector<std::string> fields) {
    if (fields.size() != width_) throw std::logic_error("CsvWriter: row width mismatch");
    fields.push_back(manifest_);
    write_line(fields);
  }

 private:
  void write_line(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) os_ << (i ? "," : "") << fields[i];
    os_ << '\n';
  }

  std::ofstream os_;
  std::string manifest_;
  std::size_t width_;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw ConfigError("csv: missing column '" + std::string(name) + "'");
  }
};

inline CsvTable read_csv(const fs::path& file) {
  std::ifstream is(file);
  if (!is) throw ConfigError("cannot open " + file.string());
  CsvTable t;
  std::string line;
  if (!std::getline(is, line)) throw ConfigError(file.string() + ": empty csv");
  t.header = split(line, ',');
  while (std::getline(is, line))
    if (!line.empty()) t.rows.push_back(split(line, ','));
  return t;
}

// ------------------------------------------------------------------ commands

struct GlobalOptions {
  std::optional<fs::path> config;
  std::optional<std::uint64_t> seed;
  unsigned workers = 1;
  fs::path out = ".";
};

/// Collects outputs and writes the manifest when the command finishes.
class Session {
 public:
  Session(std::string command, const Config& cfg, const GlobalOptions& g)
      : out_(g.out) {
    m_.command = std::move(command);
    m_.config = cfg;
    m_.master_seed = cfg.seed;
    m_.workers = g.workers;
    m_.started_at = utc_now();
    fs::create_directories(out_);
  }

  std::string manifest_name() const { return m_.command + ".manifest.ini"; }
  fs::path file(const std::string& name) {
    m_.outputs.push_back(name);
    return out_ / name;
  }
  CsvWriter csv(const std::string& name, std::vector<std::string> header) {
    return CsvWriter(file(name), std::move(header), manifest_name());
  }
  const fs::path& out() const { return out_; }

  fs::path finish() {
    m_.finished_at = utc_now();
    const auto path = out_ / manifest_name();
    m_.write(path);
    return path;
  }

 private:
  fs::path out_;
  RunManifest m_;
};

inline Config resolve_config(const GlobalOptions& g) {
  if (!g.config) throw ConfigError("--config is required");
  Config c = load_config(*g.config);
  if (g.seed) c.seed = *g.seed;
  return c;
}

namespace detail {

template <class Constants>
auto named(Constants& c) {
  using Ptr = decltype(&c.ladder_mean);
  return std::vector<std::pair<std::string, Ptr>>{{"ladder_mean", &c.ladder_mean},         {"ladder_second", &c.ladder_second},
          {"kappa_inf", &c.kappa_inf},             {"kappa_inf_alt", &c.kappa_inf_alt},
          {"perturbation_mean", &c.perturbation_mean}, {"delta_bar", &c.delta_bar},
          {"neg_ladder_exp", &c.neg_ladder_exp},   {"neg_ladder_epoch", &c.neg_ladder_epoch},
          {"neg_ladder_height", &c.neg_ladder_height}, {"c_inf", &c.c_inf},
          {"s_k1_mean", &c.s_k1_mean}};
}

// FNV-1a, stable across builds, for cache file names.
inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string cache_key(const Config& c, std::optional<double> gated_mean) {
  std::ostringstream k;
  k << "v1|" << fmt(c.model.m0) << '|' << fmt(c.model.m1) << '|' << fmt(c.model.sigma) << '|'
    << c.seed << '|' << c.ladder_reps << '|' << c.zeta_reps << '|' << c.zeta_horizon << '|'
    << c.delta_reps << '|' << fmt(c.h_probe) << '|' << c.neg_reps;
  if (gated_mean)
    k << "|gated|" << to_string(c.family) << '|' << fmt(*gated_mean) << '|' << fmt(c.parent_sd)
      << '|' << fmt(c.sense_cost) << '|' << fmt(c.grid_max) << '|' << c.grid_points;
  return k.str();
}

inline void write_constants_cache(const fs::path& file, const std::string& key,
                                  const RenewalConstants& c) {
  std::ofstream os(file, std::ios::binary);
  if (!os) throw ConfigError("cannot write " + file.string());
  os << "name,value,std_error\n";
  os << "key," << key << ",\n";
  os << "gated," << (c.gated ? 1 : 0) << ",0\n";
  os << "h_probe," << fmt(c.h_probe) << ",0\n";
  for (const auto& [name, e] : named(c)) os << name << ',' << fmt(e->value) << ',' << fmt(e->std_error) << '\n';
}

inline std::optional<RenewalConstants> read_constants_cache(const fs::path& file,
                                                            const std::string& key) {
  if (!fs::exists(file)) return std::nullopt;
  const auto t = read_csv(file);
  RenewalConstants c;
  std::map<std::string, std::pair<std::string, std::string>> rows;
  for (const auto& r : t.rows)
    if (r.size() == 3) rows[r[0]] = {r[1], r[2]};
  if (rows["key"].first != key) return std::nullopt;
  c.gated = rows["gated"].first == "1";
  c.h_probe = parse_real("h_probe", rows["h_probe"].first);
  for (const auto& [name, e] : named(c)) {
    if (!rows.contains(name)) return std::nullopt;
    e->value = parse_real(name, rows[name].first);
    e->std_error = parse_real(name, rows[name].second);
  }
  return c;
}

}  // namespace detail

/// Deficit-regime quantities for one mean harvest rate.
struct DeficitSetup {
  HarvestModel harvest;
  std::shared_ptr<const DensityGrid> density;
  XiChain chain;
};

inline DeficitSetup solve_deficit(const Config& cfg, double mean) {
  DeficitSetup s{cfg.harvest(mean), nullptr, {}};
  s.density = std::make_shared<const DensityGrid>(
      solve_stationary_density(s.harvest, cfg.sense_cost, cfg.solver()));
  s.chain = transition_probs(*s.density, s.harvest, cfg.sense_cost);
  return s;
}

/// Renewal constants, read from or written to a cache file in `dir`.
inline RenewalConstants cached_constants(const Config& cfg, const std::optional<XiChain>& chain,
                                         std::optional<double> gated_mean, unsigned workers,
                                         const fs::path& dir) {
  const auto key = detail::cache_key(cfg, gated_mean);
  std::ostringstream name;
  name << "constants-cache-" << std::hex << std::setw(16) << std::setfill('0')
       << detail::fnv1a(key) << ".csv";
  const auto file = dir / name.str();
  if (auto hit = detail::read_constants_cache(file, key)) return *hit;
  auto c = estimate_renewal_constants(cfg.model, chain, cfg.renewal(workers));
  fs::create_directories(dir);
  detail::write_constants_cache(file, key, c);
  return c;
}

inline int cmd_stationary(const GlobalOptions& g, std::ostream& out) {
  const Config cfg = resolve_config(g);
  if (classify_regime(cfg.harvest_mean, cfg.sense_cost) == Regime::surplus)
    throw PreconditionError("surplus regime: stationary density undefined");
  const auto setup = solve_deficit(cfg, cfg.harvest_mean);
  Session s("stationary", cfg, g);
  {
    auto csv = s.csv("stationary-density.csv", {"b", "f_B"});
    const auto& d = *setup.density;
    for (std::size_t i = 0; i < d.n_points; ++i) csv.row({fmt(d.node(i)), fmt(d.values[i])});
  }
  const auto& ch = setup.chain;
  {
    auto csv = s.csv("stationary-chain.csv", {"key", "value"});
    csv.row({"alpha", fmt(ch.alpha)});
    csv.row({"beta", fmt(ch.beta)});
    csv.row({"pi0", fmt(ch.pi0)});
    csv.row({"pi1", fmt(ch.pi1)});
    csv.row({"grid_max", fmt(setup.density->grid_max)});
    csv.row({"grid_points", fmt(static_cast<std::uint64_t>(setup.density->n_points))});
    csv.row({"iterations", fmt(static_cast<std::uint64_t>(setup.density->iterations))});
    csv.row({"residual", fmt(setup.density->residual)});
  }
  s.finish();
  out << "alpha = " << fmt(ch.alpha) << "\nbeta = " << fmt(ch.beta) << "\npi0 = " << fmt(ch.pi0)
      << "\npi1 = " << fmt(ch.pi1) << '\n';
  return ok;
}

inline int cmd_constants(const GlobalOptions& g, std::ostream& out) {
  const Config cfg = resolve_config(g);
  Session s("constants", cfg, g);
  auto csv = s.csv("constants.csv", {"scope", "harvest_mean", "name", "value", "std_error"});
  auto emit = [&](const std::string& scope, const std::string& mean, const RenewalConstants& c) {
    csv.row({scope, mean, "h_probe", fmt(c.h_probe), "0"});
    for (const auto& [name, e] : detail::named(c)) {
      csv.row({scope, mean, name, fmt(e->value), fmt(e->std_error)});
      out << scope << (mean.empty() ? "" : " H=" + mean) << ' ' << name << " = " << fmt(e->value)
          << " +- " << fmt(e->std_error) << '\n';
    }
  };
  emit("ungated", "", cached_constants(cfg, std::nullopt, std::nullopt, g.workers, s.out()));
  for (double mean : cfg.harvest_means()) {
    if (classify_regime(mean, cfg.sense_cost) == Regime::surplus) continue;
    const auto setup = solve_deficit(cfg, mean);
    emit("gated", fmt(mean), cached_constants(cfg, setup.chain, mean, g.workers, s.out()));
  }
  s.finish();
  return ok;
}

inline const std::vector<std::string>& prediction_header() {
  static const std::vector<std::string> h = {"regime",         "harvest_mean",   "sense_cost",
                                             "h",              "pi1",            "expected_delay",
                                             "fa_exponent",    "proxy_exponent", "arl2fa"};
  return h;
}

inline int cmd_predict(const GlobalOptions& g, std::ostream& out) {
  const Config cfg = resolve_config(g);
  const auto stats = llr_stats(cfg.model);
  Session s("predict", cfg, g);
  auto csv = s.csv("predictions.csv", prediction_header());
  const auto means = cfg.harvest_means();
  const auto hs = cfg.thresholds();
  std::optional<RenewalConstants> ungated;
  for (double mean : means) {
    if (!ungated) ungated = cached_constants(cfg, std::nullopt, std::nullopt, g.workers, s.out());
    const Regime regime = classify_regime(mean, cfg.sense_cost);
    std::optional<RenewalConstants> gated;
    double pi1 = 1.0;
    if (regime == Regime::deficit) {
      const auto setup = solve_deficit(cfg, mean);
      pi1 = setup.chain.pi1;
      gated = cached_constants(cfg, setup.chain, mean, g.workers, s.out());
      if (cfg.ungated_ladder) {
        gated->ladder_mean = ungated->ladder_mean;
        gated->ladder_second = ungated->ladder_second;
        gated->kappa_inf = ungated->kappa_inf;
        gated->perturbation_mean = ungated->perturbation_mean;
      }
    }
    for (double h : hs) {
      const auto p = predict(stats, regime, pi1, h, *ungated, gated ? &*gated : nullptr);
      csv.row({std::string(to_string(p.regime)), fmt(mean), fmt(cfg.sense_cost), fmt(h),
               fmt(p.pi1), fmt(p.expected_delay), fmt(p.fa_exponent), fmt(p.proxy_exponent),
               fmt(p.arl2fa)});
      out << to_string(p.regime) << " H=" << fmt(mean) << " h=" << fmt(h)
          << " delay=" << fmt(p.expected_delay) << " exponent=" << fmt(p.fa_exponent)
          << " proxy=" << fmt(p.proxy_exponent) << '\n';
    }
  }
  s.finish();
  return ok;
}

enum class SimMode { delay, fa };

inline SimMode parse_sim_mode(std::string_view s) {
  if (s == "delay") return SimMode::delay;
  if (s == "fa") return SimMode::fa;
  throw ConfigError("--mode must be delay or fa");
}

inline ExperimentConfig experiment_config(const Config& cfg, double mean, double h,
                                          unsigned workers) {
  ExperimentConfig e;
  e.model = cfg.model;
  e.harvest = cfg.harvest(mean);
  e.e_s = cfg.sense_cost;
  e.h = h;
  e.n_runs = cfg.n_runs;
  e.master_seed = cfg.seed;
  e.max_steps = cfg.max_steps;
  e.change_point = cfg.change_point;
  e.gate_mode = cfg.gate_mode;
  e.initial_battery = cfg.initial_battery;
  e.workers = workers;
  e.solver = cfg.solver();
  e.fit_low = cfg.fit_low;
  e.fit_high = cfg.fit_high;
  return e;
}

inline int cmd_simulate(const GlobalOptions& g, SimMode mode, std::ostream& out) {
  const Config cfg = resolve_config(g);
  const std::string tag = mode == SimMode::delay ? "delay" : "fa";
  Session s("simulate-" + tag, cfg, g);
  auto summary = s.csv("simulate-" + tag + "-summary.csv",
                       {"mode", "harvest_mean", "sense_cost", "h", "gate_mode", "n_runs",
                        "max_steps", "mean", "std_error", "censored", "censoring_warning",
                        "fitted_exponent", "r2"});
  for (double mean : cfg.harvest_means()) {
    for (double h : cfg.thresholds()) {
      const auto ecfg = experiment_config(cfg, mean, h, g.workers);
      const auto res = mode == SimMode::delay ? run_delay_experiment(ecfg) : run_fa_experiment(ecfg);
      const std::string stem = "simulate-" + tag + "-H" + fmt(mean) + "-h" + fmt(h);
      {
        auto runs = s.csv(stem + "-runs.csv", {"run_index", "stop_time", "overshoot", "censored"});
        for (std::size_t i = 0; i < res.runs.size(); ++i) {
          const auto& r = res.runs[i];
          runs.row({fmt(static_cast<std::uint64_t>(i)), r.stopped ? fmt(r.stop_time) : "",
                    r.stopped ? fmt(r.overshoot) : "", r.stopped ? "0" : "1"});
        }
      }
      if (mode == SimMode::fa) {
        const auto lengths = res.run_lengths();
        auto curve = s.csv(stem + "-survival.csv", {"x", "log_survival"});
        for (const auto& [x, y] : survival_curve(lengths, h)) curve.row({fmt(x), fmt(y)});
      }
      summary.row({tag, fmt(mean), fmt(cfg.sense_cost), fmt(h), std::string(to_string(cfg.gate_mode)),
                   fmt(static_cast<std::uint64_t>(res.n_runs)), fmt(res.max_steps),
                   fmt(res.mean_stop), fmt(res.std_error),
                   fmt(static_cast<std::uint64_t>(res.censored_count)),
                   res.censoring_warning ? "1" : "0", res.tail ? fmt(res.tail->exponent) : "",
                   res.tail ? fmt(res.tail->r2) : ""});
      out << tag << " H=" << fmt(mean) << " h=" << fmt(h) << " mean=" << fmt(res.mean_stop)
          << " stderr=" << fmt(res.std_error);
      if (res.tail) out << " exponent=" << fmt(res.tail->exponent) << " r2=" << fmt(res.tail->r2);
      if (res.censoring_warning)
        out << " WARNING: " << res.censored_count << " runs censored at " << res.max_steps << " steps";
      out << '\n';
    }
  }
  s.finish();
  return ok;
}

/// Config keys two manifests must agree on to be compared row by row.
inline const std::vector<std::string>& comparable_keys() {
  static const std::vector<std::string> keys = {
      "model.m0",           "model.m1",          "model.sigma",        "harvest.family",
      "harvest.parent_sd",  "harvest.sense_cost",
  };
  return keys;
}

inline std::vector<std::string> differing_keys(const Config& a, const Config& b) {
  const auto entries_a = a.entries();
  std::map<std::string, std::string> ea(entries_a.begin(), entries_a.end());
  std::vector<std::string> diff;
  for (const auto& [k, v] : b.entries())
    if (std::find(comparable_keys().begin(), comparable_keys().end(), k) != comparable_keys().end() &&
        ea[k] != v)
      diff.push_back(k);
  return diff;
}

inline int cmd_report(const GlobalOptions& g, const std::vector<fs::path>& manifests,
                      std::ostream& out) {
  if (manifests.size() < 2)
    throw PreconditionError("report needs at least one predict and one simulate-delay manifest");
  std::vector<RunManifest> loaded;
  for (const auto& p : manifests) loaded.push_back(load_manifest(p));

  std::vector<std::string> diff;
  for (std::size_t i = 1; i < loaded.size(); ++i)
    for (const auto& k : differing_keys(loaded[0].config, loaded[i].config))
      if (std::find(diff.begin(), diff.end(), k) == diff.end()) diff.push_back(k);
  if (!diff.empty()) {
    std::string msg = "manifests disagree on config keys:";
    for (const auto& k : diff) msg += " " + k;
    throw ConfigError(msg);
  }

  struct Key {
    std::string mean, h;
    auto operator<=>(const Key&) const = default;
  };
  std::map<Key, std::vector<std::string>> predicted;
  std::map<Key, std::vector<std::string>> simulated;
  std::vector<std::string> pred_header;
  std::vector<std::string> sim_header;
  for (const auto& m : loaded) {
    const auto dir = m.path.parent_path();
    if (m.command == "predict") {
      const auto t = read_csv(dir / "predictions.csv");
      pred_header = t.header;
      for (const auto& r : t.rows)
        predicted[{r[t.column("harvest_mean")], r[t.column("h")]}] = r;
    } else if (m.command == "simulate-delay") {
      const auto t = read_csv(dir / "simulate-delay-summary.csv");
      sim_header = t.header;
      for (const auto& r : t.rows) simulated[{r[t.column("harvest_mean")], r[t.column("h")]}] = r;
    }
  }
  if (predicted.empty() || simulated.empty())
    throw PreconditionError("report needs at least one predict and one simulate-delay manifest");

  auto col = [](const std::vector<std::string>& header, std::string_view name) {
    CsvTable t{header, {}};
    return t.column(name);
  };
  const Config& cfg = loaded[0].config;
  Session s("report", cfg, g);
  auto csv = s.csv("report.csv", {"harvest_mean", "h", "regime", "pi1", "theoretical", "simulated",
                                  "std_error", "relative_error", "fa_exponent", "proxy_exponent"});
  out << std::left << std::setw(8) << "H" << std::setw(8) << "h" << std::setw(9) << "regime"
      << std::setw(14) << "theoretical" << std::setw(14) << "simulated" << std::setw(11)
      << "rel.err" << std::setw(12) << "beta" << "pi1*beta_bar\n";
  std::size_t joined = 0;
  for (const auto& [key, p] : predicted) {
    const auto it = simulated.find(key);
    if (it == simulated.end()) continue;
    const auto& sim = it->second;
    const double theo = parse_real("expected_delay", p[col(pred_header, "expected_delay")]);
    const double mean = parse_real("mean", sim[col(sim_header, "mean")]);
    const double rel = (theo - mean) / mean;
    csv.row({key.mean, key.h, p[col(pred_header, "regime")], p[col(pred_header, "pi1")], fmt(theo),
             fmt(mean), sim[col(sim_header, "std_error")], fmt(rel),
             p[col(pred_header, "fa_exponent")], p[col(pred_header, "proxy_exponent")]});
    std::ostringstream r;
    r << std::fixed << std::setprecision(4);
    out << std::setw(8) << key.mean << std::setw(8) << key.h << std::setw(9)
        << p[col(pred_header, "regime")];
    r << theo;
    out << std::setw(14) << r.str();
    r.str("");
    r << mean;
    out << std::setw(14) << r.str();
    r.str("");
    r << std::showpos << 100.0 * rel << '%';
    out << std::setw(11) << r.str();
    r.str("");
    r << std::noshowpos << std::setprecision(5)
      << parse_real("fa_exponent", p[col(pred_header, "fa_exponent")]);
    out << std::setw(12) << r.str();
    if (p[col(pred_header, "regime")] == "deficit") {
      r.str("");
      r << parse_real("proxy_exponent", p[col(pred_header, "proxy_exponent")]);
      out << r.str();
    }
    out << '\n';
    ++joined;
  }
  if (joined == 0) throw ConfigError("report: no (harvest_mean, h) pair appears in both predictions and simulations");
  s.finish();
  return ok;
}

/// Runs a command body and maps the error taxonomy onto exit codes.
template <class Fn>
int guarded(Fn&& fn, std::ostream& err) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return config_error;
  } catch (const PreconditionError& e) {
    err << "error: " << e.what() << '\n';
    return precondition_error;
  } catch (const ConvergenceError& e) {
    err << "error: " << e.what() << '\n';
    return no_convergence;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return config_error;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return config_error;
  }
}

}  // namespace ehcusum::cli
