#pragma once

#include "bsgmm/estimation.hpp"
#include "bsgmm/simulation.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace bsgmm::config {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Common {
  std::uint64_t seed = 1;
  int threads = 0;
  std::filesystem::path out = "out";
  FitOptions fit;
};

struct EfaBlock {
  std::optional<int> factors;  // nullopt: "auto" (parallel-analysis count)
  int draws = 200;
  double percentile = 0.95;
};

struct FitConfig {
  Common common;
  std::filesystem::path data;
  std::vector<int> classes{1, 2, 3};
  double time_origin = 0.0;
  std::optional<std::vector<std::string>> covariates;  // default: every covariate column
  std::optional<EfaBlock> efa;
  bool step2 = true;
};

struct SimulateConfig {
  Common common;
  int replications = 100;
  int max_replications = 0;
  std::vector<SimCondition> cells;
};

struct EfaConfig {
  Common common;
  std::filesystem::path data;
  std::optional<std::vector<std::string>> covariates;
  EfaBlock efa;
  double time_origin = 0.0;
};

// Parse and validate; relative paths resolve against `base_dir`. Unknown keys
// and ill-typed values raise ConfigError naming the key.
FitConfig parse_fit(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
SimulateConfig parse_simulate(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
EfaConfig parse_efa(const nlohmann::json& j, const std::filesystem::path& base_dir = {});

nlohmann::json load_json(const std::filesystem::path& path);

// Expands a grid object whose entries are scalars or lists into cells, in a
// fixed key order.
std::vector<SimCondition> expand_grid(const nlohmann::json& grid);

}  // namespace bsgmm::config
