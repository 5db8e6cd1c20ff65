#include "bsgmm/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>

namespace bsgmm::config {

namespace {

using nlohmann::json;

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

std::string path_of(const std::string& where, const std::string& key) {
  return where.empty() ? key : where + "." + key;
}

long long as_int(const json& v, const std::string& name) {
  if (v.is_number_integer() || v.is_number_unsigned()) return v.get<long long>();
  if (v.is_number_float()) {
    const double d = v.get<double>();
    if (d == static_cast<double>(static_cast<long long>(d))) return static_cast<long long>(d);
  }
  throw ConfigError(name + ": expected an integer");
}

double as_double(const json& v, const std::string& name) {
  if (!v.is_number()) throw ConfigError(name + ": expected a number");
  return v.get<double>();
}

std::uint64_t as_seed(const json& v, const std::string& name) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer() && v.get<long long>() >= 0) return static_cast<std::uint64_t>(v.get<long long>());
  throw ConfigError(name + ": expected a non-negative integer");
}

std::vector<std::string> as_strings(const json& v, const std::string& name) {
  if (!v.is_array()) throw ConfigError(name + ": expected a list of strings");
  std::vector<std::string> out;
  for (const auto& e : v) {
    if (!e.is_string()) throw ConfigError(name + ": expected a list of strings");
    out.push_back(e.get<std::string>());
  }
  return out;
}

std::vector<double> as_doubles(const json& v, const std::string& name) {
  if (!v.is_array()) throw ConfigError(name + ": expected a list of numbers");
  std::vector<double> out;
  for (const auto& e : v) out.push_back(as_double(e, name));
  return out;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

const std::set<std::string> kCommonKeys{"seed",         "threads", "out", "max_attempts", "gradient_tolerance",
                                        "max_evaluations", "ci_level", "separation_limit"};

std::set<std::string> with_common(std::set<std::string> keys) {
  keys.insert(kCommonKeys.begin(), kCommonKeys.end());
  return keys;
}

Common parse_common(const json& j, const std::filesystem::path& base) {
  Common c;
  if (j.contains("seed")) c.seed = as_seed(j["seed"], "seed");
  c.fit.seed = c.seed;
  if (j.contains("threads")) {
    const auto t = as_int(j["threads"], "threads");
    if (t < 0) throw ConfigError("threads: must be >= 0");
    c.threads = static_cast<int>(t);
  }
  if (j.contains("out")) {
    if (!j["out"].is_string()) throw ConfigError("out: expected a string");
    c.out = resolve(base, j["out"].get<std::string>());
  }
  if (j.contains("max_attempts")) {
    const auto a = as_int(j["max_attempts"], "max_attempts");
    if (a < 1) throw ConfigError("max_attempts: must be >= 1");
    c.fit.max_attempts = static_cast<int>(a);
  }
  if (j.contains("gradient_tolerance")) {
    c.fit.gradient_tolerance = as_double(j["gradient_tolerance"], "gradient_tolerance");
    if (!(c.fit.gradient_tolerance > 0.0)) throw ConfigError("gradient_tolerance: must be positive");
  }
  if (j.contains("max_evaluations")) {
    const auto e = as_int(j["max_evaluations"], "max_evaluations");
    if (e < 1) throw ConfigError("max_evaluations: must be >= 1");
    c.fit.max_evaluations = static_cast<int>(e);
  }
  if (j.contains("ci_level")) {
    c.fit.ci_level = as_double(j["ci_level"], "ci_level");
    if (!(c.fit.ci_level > 0.0 && c.fit.ci_level < 1.0)) throw ConfigError("ci_level: must be in (0, 1)");
  }
  if (j.contains("separation_limit")) {
    c.fit.separation_limit = as_double(j["separation_limit"], "separation_limit");
    if (!(c.fit.separation_limit > 0.0)) throw ConfigError("separation_limit: must be positive");
  }
  return c;
}

std::optional<int> parse_factor_count(const json& v, const std::string& name) {
  if (v.is_string()) {
    if (v.get<std::string>() == "auto") return std::nullopt;
    throw ConfigError(name + ": expected a factor count or \"auto\"");
  }
  const auto m = as_int(v, name);
  if (m < 0) throw ConfigError(name + ": must be >= 0");
  return static_cast<int>(m);
}

void parse_efa_settings(const json& j, const std::string& where, EfaBlock& e) {
  if (j.contains("draws")) {
    const auto d = as_int(j["draws"], path_of(where, "draws"));
    if (d < 1) throw ConfigError(path_of(where, "draws") + ": must be >= 1");
    e.draws = static_cast<int>(d);
  }
  if (j.contains("percentile")) {
    e.percentile = as_double(j["percentile"], path_of(where, "percentile"));
    if (!(e.percentile > 0.0 && e.percentile < 1.0)) throw ConfigError(path_of(where, "percentile") + ": must be in (0, 1)");
  }
}

EfaBlock parse_efa_block(const json& v) {
  EfaBlock e;
  if (v.is_object()) {
    check_keys(v, {"factors", "draws", "percentile"}, "efa");
    if (v.contains("factors")) e.factors = parse_factor_count(v["factors"], "efa.factors");
    parse_efa_settings(v, "efa", e);
  } else {
    e.factors = parse_factor_count(v, "efa");
  }
  return e;
}

// Scalar or list -> list of json values.
std::vector<json> levels(const json& grid, const std::string& key, bool nested) {
  const json& v = grid[key];
  if (!v.is_array()) return {v};
  if (nested) {
    // A flat list of numbers is one level; a list of lists is several.
    if (!v.empty() && v.front().is_array()) return {v.begin(), v.end()};
    return {v};
  }
  return {v.begin(), v.end()};
}

}  // namespace

json load_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file '" + path.string() + "': " + e.what());
  }
}

FitConfig parse_fit(const json& j, const std::filesystem::path& base_dir) {
  check_keys(j, with_common({"data", "classes", "time_origin", "covariates", "efa", "step2"}), "fit config");
  FitConfig c;
  c.common = parse_common(j, base_dir);
  if (!j.contains("data") || !j["data"].is_string()) throw ConfigError("data: required string path");
  c.data = resolve(base_dir, j["data"].get<std::string>());
  if (j.contains("classes")) {
    const auto& v = j["classes"];
    c.classes.clear();
    if (v.is_array()) {
      for (const auto& e : v) c.classes.push_back(static_cast<int>(as_int(e, "classes")));
    } else {
      c.classes.push_back(static_cast<int>(as_int(v, "classes")));
    }
    if (c.classes.empty()) throw ConfigError("classes: must not be empty");
    for (int k : c.classes) {
      if (k < 1) throw ConfigError("classes: every class count must be >= 1");
    }
  }
  if (j.contains("time_origin")) c.time_origin = as_double(j["time_origin"], "time_origin");
  if (j.contains("covariates")) c.covariates = as_strings(j["covariates"], "covariates");
  if (j.contains("efa") && !j["efa"].is_null()) c.efa = parse_efa_block(j["efa"]);
  if (j.contains("step2")) {
    if (!j["step2"].is_boolean()) throw ConfigError("step2: expected true or false");
    c.step2 = j["step2"].get<bool>();
  }
  return c;
}

std::vector<SimCondition> expand_grid(const json& grid) {
  static const std::vector<std::string> order{"n",      "classes",      "scenario",     "distance",
                                              "ratio",  "knots",        "knot_sd",      "residual_var",
                                              "waves",  "jitter",       "covariates",   "covariate_slope"};
  check_keys(grid, {order.begin(), order.end()}, "grid");
  std::vector<SimCondition> cells{SimCondition{}};
  std::vector<bool> set_ratio{false}, set_knots{false}, set_distance{false};
  for (const auto& key : order) {
    if (!grid.contains(key)) continue;
    const bool nested = key == "ratio" || key == "knots";
    const auto values = levels(grid, key, nested);
    if (values.empty()) throw ConfigError("grid." + key + ": must not be empty");
    std::vector<SimCondition> next;
    std::vector<bool> nr, nk, nd;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      for (const auto& v : values) {
        SimCondition s = cells[c];
        const std::string name = "grid." + key;
        if (key == "n") s.n = static_cast<int>(as_int(v, name));
        else if (key == "classes") s.classes = static_cast<int>(as_int(v, name));
        else if (key == "scenario") s.scenario = static_cast<int>(as_int(v, name));
        else if (key == "distance") s.distance = as_double(v, name);
        else if (key == "ratio") s.ratio = as_doubles(v, name);
        else if (key == "knots") s.knots = as_doubles(v, name);
        else if (key == "knot_sd") s.knot_sd = as_double(v, name);
        else if (key == "residual_var") s.residual_var = as_double(v, name);
        else if (key == "waves") s.waves = static_cast<int>(as_int(v, name));
        else if (key == "jitter") s.jitter = as_double(v, name);
        else if (key == "covariates") s.covariates = static_cast<int>(as_int(v, name));
        else if (key == "covariate_slope") s.covariate_slope = as_double(v, name);
        next.push_back(s);
        nr.push_back(set_ratio[c] || key == "ratio");
        nk.push_back(set_knots[c] || key == "knots");
        nd.push_back(set_distance[c] || key == "distance");
      }
    }
    cells = std::move(next);
    set_ratio = std::move(nr);
    set_knots = std::move(nk);
    set_distance = std::move(nd);
  }
  for (std::size_t c = 0; c < cells.size(); ++c) {
    auto& s = cells[c];
    if (s.classes == 3) {
      if (!set_ratio[c]) s.ratio = {1, 1, 1};
      if (!set_knots[c]) s.knots = {3.5, 4.5, 5.5};
      if (!set_distance[c]) s.distance = 0.86;
    }
    try {
      s.validate();
    } catch (const std::exception& e) {
      throw ConfigError("grid cell " + std::to_string(c + 1) + ": " + e.what());
    }
  }
  return cells;
}

SimulateConfig parse_simulate(const json& j, const std::filesystem::path& base_dir) {
  check_keys(j, with_common({"replications", "max_replications", "grid", "design"}), "simulate config");
  SimulateConfig c;
  c.common = parse_common(j, base_dir);
  if (j.contains("replications")) {
    const auto r = as_int(j["replications"], "replications");
    if (r < 1) throw ConfigError("replications: must be >= 1");
    c.replications = static_cast<int>(r);
  }
  if (j.contains("max_replications")) {
    const auto r = as_int(j["max_replications"], "max_replications");
    if (r < 0) throw ConfigError("max_replications: must be >= 0");
    c.max_replications = static_cast<int>(r);
  }
  if (j.contains("grid") == j.contains("design")) throw ConfigError("simulate config: give exactly one of 'grid' or 'design'");
  if (j.contains("grid")) {
    c.cells = expand_grid(j["grid"]);
  } else {
    if (!j["design"].is_string()) throw ConfigError("design: expected \"fixed\" or \"random\"");
    const auto d = j["design"].get<std::string>();
    if (d == "fixed") c.cells = design_grid(0.0);
    else if (d == "random") c.cells = design_grid(0.3);
    else throw ConfigError("design: expected \"fixed\" or \"random\"");
  }
  return c;
}

EfaConfig parse_efa(const json& j, const std::filesystem::path& base_dir) {
  check_keys(j, with_common({"data", "covariates", "factors", "draws", "percentile", "time_origin"}), "efa config");
  EfaConfig c;
  c.common = parse_common(j, base_dir);
  if (!j.contains("data") || !j["data"].is_string()) throw ConfigError("data: required string path");
  c.data = resolve(base_dir, j["data"].get<std::string>());
  if (j.contains("covariates")) c.covariates = as_strings(j["covariates"], "covariates");
  if (j.contains("factors")) c.efa.factors = parse_factor_count(j["factors"], "factors");
  parse_efa_settings(j, "", c.efa);
  if (j.contains("time_origin")) c.time_origin = as_double(j["time_origin"], "time_origin");
  return c;
}

}  // namespace bsgmm::config
