#include "bsgmm/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <regex>
#include <set>
#include <sstream>

namespace bsgmm::io {

namespace {

using nlohmann::ordered_json;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<std::string> split_csv_line(const std::string& line, const std::string& where) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(ch);
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  if (quoted) throw ParseError(where + ": unterminated quoted field");
  out.push_back(cur);
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

double parse_number(const std::string& s, const std::string& where, const std::string& column) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (first != last && *first == '+') ++first;
  const auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc() || res.ptr != last || !std::isfinite(v)) {
    throw ParseError(where + ": column '" + column + "': '" + s + "' is not a finite number");
  }
  return v;
}

std::string quote_csv(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  return out + "\"";
}

ordered_json number_or_null(double v) { return std::isfinite(v) ? ordered_json(v) : ordered_json(nullptr); }

ordered_json matrix_json(const Eigen::MatrixXd& m) {
  ordered_json rows = ordered_json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    ordered_json row = ordered_json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(number_or_null(m(r, c)));
    rows.push_back(row);
  }
  return rows;
}

ordered_json vector_json(const Eigen::VectorXd& v) {
  ordered_json out = ordered_json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(number_or_null(v[i]));
  return out;
}

ordered_json params_json(const std::vector<ReportedParam>& params, bool class_from_one) {
  ordered_json out = ordered_json::array();
  for (const auto& p : params) {
    ordered_json e;
    e["class"] = p.class_index + (class_from_one ? 1 : 0);
    e["name"] = p.name;
    e["estimate"] = number_or_null(p.value);
    e["se"] = number_or_null(p.se);
    e["ci"] = p.ci.available ? ordered_json::array({p.ci.lower, p.ci.upper}) : ordered_json(nullptr);
    out.push_back(e);
  }
  return out;
}

std::vector<double> residual_variances(const FitResult& fit) {
  std::vector<double> out;
  for (const auto& c : fit.model.classes) out.push_back(c.residual_var);
  return out;
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string strip_class(const std::string& name) {
  static const std::regex prefix("^class[0-9]+\\.");
  return std::regex_replace(name, prefix, "");
}

}  // namespace

std::string format_double(double v) {
  if (std::isnan(v)) return "NA";
  if (std::isinf(v)) return v > 0 ? "Inf" : "-Inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string format_fixed(double v, int decimals) {
  if (!std::isfinite(v)) return "-";
  std::ostringstream os;
  os << std::fixed << std::setprecision(decimals) << v;
  std::string s = os.str();
  // Avoid "-0.000".
  if (s.find_first_not_of("-0.") == std::string::npos && s.front() == '-') s.erase(0, 1);
  return s;
}

LongitudinalDataset read_wide_csv(std::istream& in, const CsvOptions& options, const std::string& source) {
  std::string line;
  int line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    header = split_csv_line(line, source + ":" + std::to_string(line_no));
    for (auto& h : header) h = trim(h);
    break;
  }
  if (header.empty()) throw ParseError(source + ": file is empty");
  const std::string header_where = source + ":" + std::to_string(line_no);

  int id_col = -1;
  int label_col = -1;
  std::map<int, int> t_cols, y_cols;
  std::vector<int> cov_cols;
  std::vector<std::string> cov_names;
  std::set<std::string> seen;
  static const std::regex wave("^([ty])([0-9]+)$");
  for (int c = 0; c < static_cast<int>(header.size()); ++c) {
    const std::string& h = header[static_cast<std::size_t>(c)];
    if (h.empty()) throw ParseError(header_where + ": column " + std::to_string(c + 1) + " has an empty name");
    if (!seen.insert(h).second) throw ParseError(header_where + ": duplicate column '" + h + "'");
    std::smatch m;
    if (h == "id") {
      id_col = c;
    } else if (h == "label") {
      label_col = c;
    } else if (std::regex_match(h, m, wave)) {
      const int j = std::stoi(m[2].str());
      if (j < 1) throw ParseError(header_where + ": wave columns are numbered from 1");
      (m[1].str() == "t" ? t_cols : y_cols)[j] = c;
    } else {
      cov_cols.push_back(c);
      cov_names.push_back(h);
    }
  }
  if (id_col < 0) throw ParseError(header_where + ": missing 'id' column");
  if (t_cols.empty() && options.require_waves) throw ParseError(header_where + ": no t1..tJ columns");
  const int waves = t_cols.empty() ? 0 : t_cols.rbegin()->first;
  for (int j = 1; j <= waves; ++j) {
    if (!t_cols.count(j)) throw ParseError(header_where + ": missing column 't" + std::to_string(j) + "'");
    if (!y_cols.count(j)) throw ParseError(header_where + ": missing column 'y" + std::to_string(j) + "'");
  }
  if (!y_cols.empty() && y_cols.rbegin()->first != waves) {
    throw ParseError(header_where + ": column 'y" + std::to_string(y_cols.rbegin()->first) + "' has no matching time");
  }

  if (options.covariates) {
    std::vector<int> cols;
    for (const auto& name : *options.covariates) {
      const auto it = std::find(cov_names.begin(), cov_names.end(), name);
      if (it == cov_names.end()) throw ParseError(header_where + ": covariate column '" + name + "' not found");
      cols.push_back(cov_cols[static_cast<std::size_t>(it - cov_names.begin())]);
    }
    cov_cols = cols;
    cov_names = *options.covariates;
  }

  LongitudinalDataset data;
  data.covariate_names = cov_names;
  std::set<std::string> ids;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const std::string where = source + ":" + std::to_string(line_no);
    auto fields = split_csv_line(line, where);
    if (fields.size() != header.size()) {
      throw ParseError(where + ": expected " + std::to_string(header.size()) + " fields, found " +
                       std::to_string(fields.size()));
    }
    for (auto& f : fields) f = trim(f);
    Individual p;
    p.id = fields[static_cast<std::size_t>(id_col)];
    if (p.id.empty()) throw ParseError(where + ": empty id");
    if (!ids.insert(p.id).second) throw ParseError(where + ": duplicate id '" + p.id + "'");
    for (int j = 1; j <= waves; ++j) {
      const std::string& ts = fields[static_cast<std::size_t>(t_cols[j])];
      const std::string& ys = fields[static_cast<std::size_t>(y_cols[j])];
      if (ts.empty() || ys.empty()) continue;
      const double t = parse_number(ts, where, "t" + std::to_string(j)) - options.time_origin;
      const double y = parse_number(ys, where, "y" + std::to_string(j));
      if (!p.times.empty() && !(t > p.times.back())) {
        throw ParseError(where + ": times of individual '" + p.id + "' are not strictly increasing at t" +
                         std::to_string(j));
      }
      p.times.push_back(t);
      p.outcomes.push_back(y);
    }
    if (p.times.empty() && options.require_waves) throw ParseError(where + ": individual '" + p.id + "' has no complete (t, y) pair");
    for (std::size_t c = 0; c < cov_cols.size(); ++c) {
      const std::string& s = fields[static_cast<std::size_t>(cov_cols[c])];
      if (s.empty()) throw ParseError(where + ": missing value for covariate '" + cov_names[c] + "'");
      p.covariates.push_back(parse_number(s, where, cov_names[c]));
    }
    if (label_col >= 0 && !fields[static_cast<std::size_t>(label_col)].empty()) {
      const std::string& s = fields[static_cast<std::size_t>(label_col)];
      int label = 0;
      const auto res = std::from_chars(s.data(), s.data() + s.size(), label);
      if (res.ec != std::errc() || res.ptr != s.data() + s.size() || label < 1) {
        throw ParseError(where + ": label '" + s + "' is not a positive integer");
      }
      p.label = label - 1;
    }
    data.individuals.push_back(std::move(p));
  }
  if (data.individuals.empty()) throw ParseError(source + ": no data rows");
  return data;
}

LongitudinalDataset read_wide_csv_file(const std::filesystem::path& path, const CsvOptions& options) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open data file '" + path.string() + "'");
  return read_wide_csv(in, options, path.string());
}

void write_wide_csv(std::ostream& out, const LongitudinalDataset& data, double time_origin) {
  std::size_t waves = 0;
  for (const auto& p : data.individuals) waves = std::max(waves, p.times.size());
  out << "id";
  for (std::size_t j = 1; j <= waves; ++j) out << ",t" << j;
  for (std::size_t j = 1; j <= waves; ++j) out << ",y" << j;
  for (const auto& c : data.covariate_names) out << "," << quote_csv(c);
  const bool labels = data.has_labels();
  if (labels) out << ",label";
  out << "\n";
  for (const auto& p : data.individuals) {
    out << quote_csv(p.id);
    for (std::size_t j = 0; j < waves; ++j) out << "," << (j < p.times.size() ? format_double(p.times[j] + time_origin) : "");
    for (std::size_t j = 0; j < waves; ++j) out << "," << (j < p.outcomes.size() ? format_double(p.outcomes[j]) : "");
    for (double c : p.covariates) out << "," << format_double(c);
    if (labels) out << "," << (p.label ? std::to_string(*p.label + 1) : "");
    out << "\n";
  }
}

ordered_json step1_to_json(const FitResult& fit) {
  ordered_json j;
  j["classes"] = fit.classes;
  j["status"] = to_string(fit.status);
  j["attempts"] = fit.attempts;
  j["message"] = fit.message;
  j["loglik"] = number_or_null(fit.loglik);
  j["minus2ll"] = number_or_null(-2.0 * fit.loglik);
  j["free_params"] = fit.free_params;
  j["n"] = fit.n;
  j["aic"] = number_or_null(fit.aic);
  j["bic"] = number_or_null(fit.bic);
  j["se_available"] = fit.se_available;
  j["se_diagnostic"] = fit.se_diagnostic;
  j["ci_level"] = fit.ci_level;
  j["time_range"] = ordered_json::array({fit.time_range.first, fit.time_range.second});
  if (!fit.converged()) return j;
  ordered_json classes = ordered_json::array();
  const auto& props = fit.mixing_proportions;
  for (std::size_t k = 0; k < fit.model.classes.size(); ++k) {
    const ClassParams c = to_reparameterized(fit.model.classes[k]);
    ordered_json e;
    e["class"] = static_cast<int>(k) + 1;
    e["mean"] = vector_json(c.mean);
    e["cov"] = matrix_json(c.cov);
    e["knot"] = c.knot;
    e["residual_var"] = c.residual_var;
    e["proportion"] = props[k];
    classes.push_back(e);
  }
  j["model"] = {{"frame", "reparameterized"}, {"classes", classes}};
  j["estimates"] = {{"original", params_json(fit.original, true)},
                    {"reparameterized", params_json(fit.reparameterized, true)}};
  return j;
}

ordered_json fit_to_json(const FitArtifacts& a) {
  ordered_json j;
  j["schema"] = "bsgmm.fit";
  j["schema_version"] = kSchemaVersion;
  const auto range = a.data->time_range();
  j["data"] = {{"n", a.data->size()},
               {"time_origin", a.time_origin},
               {"time_range", ordered_json::array({range.first, range.second})},
               {"covariates", a.data->covariate_names}};
  j["settings"] = {{"classes", a.class_counts},
                   {"seed", a.options.seed},
                   {"max_attempts", a.options.max_attempts},
                   {"gradient_tolerance", a.options.gradient_tolerance},
                   {"max_evaluations", a.options.max_evaluations},
                   {"ci_level", a.options.ci_level},
                   {"separation_limit", a.options.separation_limit}};
  ordered_json table = ordered_json::array();
  for (const auto& f : a.selection->fits) {
    ordered_json row;
    row["classes"] = f.classes;
    row["status"] = to_string(f.status);
    row["attempts"] = f.attempts;
    row["free_params"] = f.free_params;
    const bool ok = f.converged();
    row["minus2ll"] = ok ? ordered_json(-2.0 * f.loglik) : ordered_json(nullptr);
    row["aic"] = ok ? ordered_json(f.aic) : ordered_json(nullptr);
    row["bic"] = ok ? ordered_json(f.bic) : ordered_json(nullptr);
    row["residual_variances"] = ok ? ordered_json(residual_variances(f)) : ordered_json(nullptr);
    row["message"] = f.message;
    table.push_back(row);
  }
  j["selection"] = table;
  if (a.selection->selected) {
    const FitResult& s = a.selection->fits[static_cast<std::size_t>(*a.selection->selected)];
    j["selected_classes"] = s.classes;
    j["step1"] = step1_to_json(s);
  } else {
    j["selected_classes"] = nullptr;
    j["step1"] = nullptr;
  }
  j["efa"] = a.efa ? *a.efa : ordered_json(nullptr);
  if (a.step2) {
    const FitResult& s2 = *a.step2;
    ordered_json e;
    e["status"] = to_string(s2.status);
    e["attempts"] = s2.attempts;
    e["message"] = s2.message;
    e["covariates"] = a.step2_covariates;
    e["loglik"] = number_or_null(s2.loglik);
    e["free_params"] = s2.free_params;
    e["aic"] = number_or_null(s2.aic);
    e["bic"] = number_or_null(s2.bic);
    e["se_available"] = s2.se_available;
    e["se_diagnostic"] = s2.se_diagnostic;
    e["mixing_proportions"] = s2.mixing_proportions;
    e["coefficients"] = params_json(s2.coefficients, true);
    ordered_json ors = ordered_json::array();
    for (const auto& o : a.odds) {
      ors.push_back({{"class", o.class_index + 1},
                     {"predictor", o.coefficient},
                     {"odds_ratio", number_or_null(o.odds_ratio)},
                     {"ci", o.ci.available ? ordered_json::array({o.ci.lower, o.ci.upper}) : ordered_json(nullptr)},
                     {"excludes_one", o.excludes_one}});
    }
    e["odds_ratios"] = ors;
    j["step2"] = e;
  } else {
    j["step2"] = nullptr;
  }
  j["step2_note"] = a.step2_note;
  return j;
}

MixtureModel model_from_fit_json(const nlohmann::json& j) {
  const auto& s1 = j.at("step1");
  if (s1.is_null() || !s1.contains("model")) throw ParseError("fit.json has no converged step-1 model");
  const auto& m = s1.at("model");
  if (m.at("frame").get<std::string>() != "reparameterized") throw ParseError("unsupported model frame");
  MixtureModel model;
  std::vector<double> props;
  for (const auto& c : m.at("classes")) {
    ClassParams p;
    p.frame = Frame::Reparameterized;
    for (int r = 0; r < 3; ++r) {
      p.mean[r] = c.at("mean").at(r).get<double>();
      for (int col = 0; col < 3; ++col) p.cov(r, col) = c.at("cov").at(r).at(col).get<double>();
    }
    p.knot = c.at("knot").get<double>();
    p.residual_var = c.at("residual_var").get<double>();
    props.push_back(c.at("proportion").get<double>());
    model.classes.push_back(p);
  }
  model.mixing = FreeMixing{props};
  return model;
}

void write_classes_csv(std::ostream& out, const LongitudinalDataset& data, const FitResult& fit) {
  out << "id";
  for (int k = 1; k <= fit.classes; ++k) out << ",post" << k;
  out << ",class\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    out << quote_csv(data.individuals[i].id);
    for (int k = 0; k < fit.classes; ++k) out << "," << format_double(fit.posterior(static_cast<Eigen::Index>(i), k));
    out << "," << fit.labels[i] + 1 << "\n";
  }
}

void write_trajectories_csv(std::ostream& out, const FitResult& fit, int points) {
  if (points < 2) throw std::invalid_argument("need at least 2 trajectory points");
  out << "class,t,value\n";
  const double lo = fit.time_range.first;
  const double hi = fit.time_range.second;
  for (std::size_t k = 0; k < fit.model.classes.size(); ++k) {
    const ClassParams c = to_original(fit.model.classes[k]);
    for (int g = 0; g < points; ++g) {
      const double t = lo + (hi - lo) * g / (points - 1);
      out << k + 1 << "," << format_double(t) << "," << format_double(trajectory_value(c, t)) << "\n";
    }
  }
}

void write_model_table(std::ostream& out, const ClassSelection& selection) {
  int max_k = 1;
  for (const auto& f : selection.fits) max_k = std::max(max_k, f.classes);
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> head{"Model", "-2LL", "AIC", "BIC", "Params"};
  for (int k = 1; k <= max_k; ++k) head.push_back("Residual " + std::to_string(k));
  head.push_back("Status");
  rows.push_back(head);
  for (std::size_t i = 0; i < selection.fits.size(); ++i) {
    const auto& f = selection.fits[i];
    const bool ok = f.converged();
    std::vector<std::string> r{std::to_string(f.classes) + "-Class", ok ? format_fixed(-2.0 * f.loglik, 2) : "-",
                               ok ? format_fixed(f.aic, 2) : "-", ok ? format_fixed(f.bic, 2) : "-",
                               std::to_string(f.free_params)};
    for (int k = 0; k < max_k; ++k) {
      r.push_back(ok && k < f.classes ? format_fixed(f.model.classes[static_cast<std::size_t>(k)].residual_var, 2)
                                      : "-");
    }
    std::string status = to_string(f.status);
    if (selection.selected && *selection.selected == static_cast<int>(i)) status += " (selected)";
    r.push_back(status);
    rows.push_back(r);
  }
  std::vector<std::size_t> width(head.size(), 0);
  for (const auto& r : rows) {
    for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
  }
  for (const auto& r : rows) {
    for (std::size_t c = 0; c < r.size(); ++c) {
      if (c + 1 == r.size()) {
        out << r[c];
      } else if (c == 0) {
        out << std::left << std::setw(static_cast<int>(width[c])) << r[c];
      } else {
        out << std::right << std::setw(static_cast<int>(width[c])) << r[c];
      }
      out << (c + 1 == r.size() ? "\n" : "  ");
    }
  }
  out << std::right;
}

ordered_json condition_to_json(const SimCondition& c) {
  ordered_json j;
  j["n"] = c.n;
  j["classes"] = c.classes;
  j["scenario"] = c.scenario;
  j["distance"] = c.distance;
  j["ratio"] = c.ratio;
  j["knots"] = c.knots;
  j["knot_sd"] = c.knot_sd;
  j["residual_var"] = c.residual_var;
  j["waves"] = c.waves;
  j["jitter"] = c.jitter;
  j["growth_cov"] = matrix_json(c.growth_cov);
  j["covariates"] = c.covariates;
  j["covariate_slope"] = c.covariate_slope;
  j["class_means"] = ordered_json::array();
  for (const auto& m : c.class_means()) j["class_means"].push_back(vector_json(m));
  j["adjacent_distances"] = adjacent_distances(c);
  return j;
}

ordered_json metrics_to_json(const MetricReport& report, int cell_index) {
  ordered_json j;
  j["schema"] = "bsgmm.metrics";
  j["schema_version"] = kSchemaVersion;
  j["cell"] = cell_index;
  j["label"] = report.condition.label();
  j["condition"] = condition_to_json(report.condition);
  j["seed"] = report.seed;
  j["replications"] = report.converged;
  j["attempted"] = report.attempted;
  j["convergence_rate"] = report.attempted > 0 ? static_cast<double>(report.converged) / report.attempted : 0.0;
  j["mean_accuracy"] = report.mean_accuracy;
  j["warnings"] = report.warnings;
  ordered_json params = ordered_json::array();
  for (const auto& p : report.parameters) {
    ordered_json e;
    e["name"] = p.name;
    e["truth"] = p.truth;
    e["mean_estimate"] = number_or_null(p.mean_estimate);
    e["bias"] = number_or_null(p.bias);
    e["relative_bias"] = number_or_null(p.relative_bias);
    e["empirical_se"] = number_or_null(p.empirical_se);
    e["rmse"] = number_or_null(p.rmse);
    e["relative_rmse"] = number_or_null(p.relative_rmse);
    e["coverage"] = number_or_null(p.coverage);
    e["intervals"] = p.intervals;
    e["mc_se"] = number_or_null(p.mc_se);
    e["relative_available"] = p.relative_available;
    params.push_back(e);
  }
  j["parameters"] = params;
  ordered_json failures = ordered_json::array();
  for (const auto& [index, message] : report.failures) failures.push_back({{"replication", index}, {"message", message}});
  j["failures"] = failures;
  return j;
}

void write_replications_csv(std::ostream& out, const MetricReport& report) {
  out << "replication,seed,step1_attempts,step2_attempts,switched,accuracy,loglik";
  for (const auto& n : report.names) out << "," << n << "," << n << ".se," << n << ".lower," << n << ".upper";
  out << "\n";
  for (const auto& r : report.replications) {
    out << r.index << "," << r.seed << "," << r.step1_attempts << "," << r.step2_attempts << ","
        << (r.switched ? 1 : 0) << "," << format_double(r.accuracy) << "," << format_double(r.loglik);
    for (Eigen::Index i = 0; i < r.estimates.size(); ++i) {
      out << "," << format_double(r.estimates[i]) << "," << format_double(r.se[i]) << "," << format_double(r.lower[i])
          << "," << format_double(r.upper[i]);
    }
    out << "\n";
  }
}

void write_summary_csv(std::ostream& out, const std::vector<MetricReport>& reports) {
  std::vector<std::pair<std::string, std::string>> keys;
  std::map<std::pair<std::string, std::string>, std::vector<double>> values;
  auto add = [&](const std::string& param, const std::string& metric, double v) {
    if (std::isnan(v)) return;
    const auto key = std::make_pair(param, metric);
    if (!values.count(key)) keys.push_back(key);
    values[key].push_back(v);
  };
  for (const auto& r : reports) {
    add("model", "mean_accuracy", r.mean_accuracy);
    add("model", "convergence_rate", r.attempted > 0 ? static_cast<double>(r.converged) / r.attempted : kNaN);
  }
  for (const auto& r : reports) {
    for (const auto& p : r.parameters) {
      const std::string g = strip_class(p.name);
      if (p.relative_available) {
        add(g, "relative_bias", p.relative_bias);
        add(g, "empirical_se", p.empirical_se);
        add(g, "relative_rmse", p.relative_rmse);
      } else {
        add(g, "bias", p.bias);
        add(g, "empirical_se", p.empirical_se);
        add(g, "rmse", p.rmse);
      }
      add(g, "coverage", p.coverage);
    }
  }
  // Keep parameter groups together in first-appearance order.
  std::vector<std::string> groups;
  for (const auto& k : keys) {
    if (std::find(groups.begin(), groups.end(), k.first) == groups.end()) groups.push_back(k.first);
  }
  out << "parameter,metric,count,median,min,max,summary\n";
  for (const auto& g : groups) {
    for (const auto& k : keys) {
      if (k.first != g) continue;
      const auto& v = values[k];
      const double med = median_of(v);
      const double lo = *std::min_element(v.begin(), v.end());
      const double hi = *std::max_element(v.begin(), v.end());
      out << k.first << "," << k.second << "," << v.size() << "," << format_double(med) << "," << format_double(lo)
          << "," << format_double(hi) << ",\"" << format_fixed(med, 3) << " (" << format_fixed(lo, 3) << ", "
          << format_fixed(hi, 3) << ")\"\n";
    }
  }
}

void write_matrix_csv(std::ostream& out, const std::vector<std::string>& names, const Eigen::MatrixXd& m) {
  out << "variable";
  for (const auto& n : names) out << "," << quote_csv(n);
  out << "\n";
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    out << quote_csv(names[static_cast<std::size_t>(r)]);
    for (Eigen::Index c = 0; c < m.cols(); ++c) out << "," << format_double(m(r, c));
    out << "\n";
  }
}

void write_retention_csv(std::ostream& out, const efa::Retention& r) {
  out << "position,eigenvalue,parallel_threshold,above_one,above_threshold\n";
  for (Eigen::Index j = 0; j < r.eigenvalues.size(); ++j) {
    out << j + 1 << "," << format_double(r.eigenvalues[j]) << "," << format_double(r.parallel_threshold[j]) << ","
        << (r.eigenvalues[j] > 1.0 ? 1 : 0) << "," << (r.eigenvalues[j] > r.parallel_threshold[j] ? 1 : 0) << "\n";
  }
}

void write_loadings_table(std::ostream& out, const std::vector<std::string>& names, const efa::EfaResult& efa) {
  const auto m = efa.loadings.cols();
  std::size_t w = std::string("Cumulative Var").size();
  for (const auto& n : names) w = std::max(w, n.size());
  const int cw = 10;
  out << std::left << std::setw(static_cast<int>(w)) << "Variable" << std::right;
  for (Eigen::Index j = 0; j < m; ++j) out << std::setw(cw) << ("Factor " + std::to_string(j + 1));
  out << std::setw(cw + 2) << "Uniqueness" << "\n";
  for (Eigen::Index i = 0; i < efa.loadings.rows(); ++i) {
    out << std::left << std::setw(static_cast<int>(w)) << names[static_cast<std::size_t>(i)] << std::right;
    for (Eigen::Index j = 0; j < m; ++j) out << std::setw(cw) << format_fixed(efa.loadings(i, j), 3);
    out << std::setw(cw + 2) << format_fixed(efa.uniquenesses[i], 3) << "\n";
  }
  const std::pair<const char*, const Eigen::VectorXd*> rows[] = {{"SS Loadings", &efa.ss_loadings},
                                                                 {"Proportion Var", &efa.proportion_variance},
                                                                 {"Cumulative Var", &efa.cumulative_variance}};
  for (const auto& [label, v] : rows) {
    out << std::left << std::setw(static_cast<int>(w)) << label << std::right;
    for (Eigen::Index j = 0; j < m; ++j) out << std::setw(cw) << format_fixed((*v)[j], 3);
    out << "\n";
  }
}

void write_scores_csv(std::ostream& out, const LongitudinalDataset& data, const Eigen::MatrixXd& scores) {
  out << "id";
  for (Eigen::Index j = 0; j < scores.cols(); ++j) out << ",factor" << j + 1;
  out << "\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    out << quote_csv(data.individuals[i].id);
    for (Eigen::Index j = 0; j < scores.cols(); ++j) out << "," << format_double(scores(static_cast<Eigen::Index>(i), j));
    out << "\n";
  }
}

ordered_json efa_to_json(const std::vector<std::string>& names, const efa::Retention& retention,
                         const efa::EfaResult& efa, const std::string& selection_rule) {
  ordered_json j;
  j["schema"] = "bsgmm.efa";
  j["schema_version"] = kSchemaVersion;
  j["variables"] = names;
  j["n"] = efa.n;
  j["retention"] = {{"eigenvalues", vector_json(retention.eigenvalues)},
                    {"parallel_threshold", vector_json(retention.parallel_threshold)},
                    {"evg1", retention.evg1},
                    {"parallel", retention.parallel}};
  j["factor_rule"] = selection_rule;
  j["factors"] = efa.factors;
  j["converged"] = efa.converged;
  j["heywood"] = efa.heywood;
  j["iterations"] = efa.iterations;
  j["objective"] = efa.objective;
  j["rotation"] = efa.rotated ? "varimax" : "none";
  j["loadings"] = matrix_json(efa.loadings);
  j["uniquenesses"] = vector_json(efa.uniquenesses);
  j["rotation_matrix"] = matrix_json(efa.rotation);
  j["ss_loadings"] = vector_json(efa.ss_loadings);
  j["proportion_variance"] = vector_json(efa.proportion_variance);
  j["cumulative_variance"] = vector_json(efa.cumulative_variance);
  return j;
}

}  // namespace bsgmm::io
