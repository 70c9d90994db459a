// SPDX-License-Identifier: Apache-2.0
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ehcusum/cli.hpp"

namespace cli = ehcusum::cli;

int main(int argc, char** argv) {
  CLI::App app{"CUSUM change detection for an energy-harvesting sensor"};
  app.set_version_flag("--version", std::string(cli::kToolVersion));
  app.require_subcommand(1);

  cli::GlobalOptions g;
  std::string config;
  std::uint64_t seed = 0;
  auto* config_opt = app.add_option("--config", config, "INI config file")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "master seed, overrides experiment.seed");
  app.add_option("--workers", g.workers, "worker threads")->check(CLI::Range(1u, 1024u));
  app.add_option("--out", g.out, "output directory");

  auto* stationary = app.add_subcommand("stationary", "solve the stationary battery density");
  auto* constants = app.add_subcommand("constants", "estimate renewal constants");
  auto* predict = app.add_subcommand("predict", "asymptotic delay and false-alarm predictions");
  auto* simulate = app.add_subcommand("simulate", "Monte Carlo delay or false-alarm runs");
  std::string mode = "delay";
  simulate->add_option("--mode", mode, "delay or fa")->check(CLI::IsMember({"delay", "fa"}));
  auto* report = app.add_subcommand("report", "compare prediction and simulation manifests");
  std::vector<std::string> manifests;
  report->add_option("manifests", manifests, "manifest files")->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return cli::config_error;
  }
  if (*config_opt) g.config = config;
  if (*seed_opt) g.seed = seed;

  return cli::guarded(
      [&] {
        if (*stationary) return cli::cmd_stationary(g, std::cout);
        if (*constants) return cli::cmd_constants(g, std::cout);
        if (*predict) return cli::cmd_predict(g, std::cout);
        if (*simulate) return cli::cmd_simulate(g, cli::parse_sim_mode(mode), std::cout);
        std::vector<cli::fs::path> paths(manifests.begin(), manifests.end());
        return cli::cmd_report(g, paths, std::cout);
      },
      std::cerr);
}
