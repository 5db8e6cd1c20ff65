#include "bsgmm/commands.hpp"
#include "bsgmm/config.hpp"

#include <CLI11.hpp>
#include <omp.h>

#include <cstdint>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<std::string> out;
};

void add_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "JSON configuration file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "Master seed (overrides the config)");
  cmd->add_option("--threads", o.threads, "OpenMP threads; 0 uses the runtime default")->check(CLI::NonNegativeNumber);
  cmd->add_option("--out", o.out, "Output directory (overrides the config)");
}

void apply(const Overrides& o, bsgmm::config::Common& c) {
  if (o.seed) {
    c.seed = *o.seed;
    c.fit.seed = *o.seed;
  }
  if (o.threads) c.threads = *o.threads;
  if (o.out) c.out = *o.out;
  if (c.threads > 0) omp_set_num_threads(c.threads);
}

}  // namespace

int main(int argc, char** argv) {
  namespace cfg = bsgmm::config;
  CLI::App app{"Bilinear-spline growth mixture models: two-step estimation, simulation and factor analysis"};
  app.require_subcommand(1);
  Overrides fit_o, sim_o, efa_o;
  auto* fit = app.add_subcommand("fit", "Fit step-1 models over a class range, select by BIC, then fit step 2");
  auto* sim = app.add_subcommand("simulate", "Run a Monte Carlo condition grid");
  auto* efa = app.add_subcommand("efa", "Exploratory factor analysis of covariate columns");
  add_flags(fit, fit_o);
  add_flags(sim, sim_o);
  add_flags(efa, efa_o);
  CLI11_PARSE(app, argc, argv);

  try {
    if (fit->parsed()) {
      const std::filesystem::path path = fit_o.config;
      auto c = cfg::parse_fit(cfg::load_json(path), path.parent_path());
      apply(fit_o, c.common);
      return bsgmm::cli::run_fit(c, std::cerr);
    }
    if (sim->parsed()) {
      const std::filesystem::path path = sim_o.config;
      auto c = cfg::parse_simulate(cfg::load_json(path), path.parent_path());
      apply(sim_o, c.common);
      return bsgmm::cli::run_simulate(c, std::cerr);
    }
    const std::filesystem::path path = efa_o.config;
    auto c = cfg::parse_efa(cfg::load_json(path), path.parent_path());
    apply(efa_o, c.common);
    return bsgmm::cli::run_efa(c, std::cerr);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return bsgmm::cli::kExitInputError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return bsgmm::cli::kExitNotConverged;
  }
}
