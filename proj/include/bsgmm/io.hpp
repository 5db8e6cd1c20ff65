#pragma once

#include "bsgmm/dataset.hpp"
#include "bsgmm/efa.hpp"
#include "bsgmm/estimation.hpp"
#include "bsgmm/simulation.hpp"

#include <json.hpp>

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace bsgmm::io {

inline constexpr int kSchemaVersion = 1;

class ParseError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct CsvOptions {
  double time_origin = 0.0;  // subtracted from every time
  // Covariate columns to keep, in this order; default: every non-reserved column.
  std::optional<std::vector<std::string>> covariates;
  // When false, t/y columns are optional (covariate-only files).
  bool require_waves = true;
};

// Wide format: id, t1..tJ, y1..yJ, covariates..., optional label (1-based).
// An empty t or y cell drops that wave for the individual. Errors carry the
// source name and line number.
LongitudinalDataset read_wide_csv(std::istream& in, const CsvOptions& options = {},
                                  const std::string& source = "<input>");
LongitudinalDataset read_wide_csv_file(const std::filesystem::path& path, const CsvOptions& options = {});
void write_wide_csv(std::ostream& out, const LongitudinalDataset& data, double time_origin = 0.0);

// Shortest round-trip decimal form; "NA" for NaN.
std::string format_double(double v);

// Fixed-decimals form used by the text tables; "-" for NaN.
std::string format_fixed(double v, int decimals);

// --- fit artifacts ---------------------------------------------------------

struct FitArtifacts {
  const LongitudinalDataset* data = nullptr;
  double time_origin = 0.0;
  std::vector<int> class_counts;
  FitOptions options;
  const ClassSelection* selection = nullptr;
  std::optional<FitResult> step2;
  std::vector<OddsRatio> odds;
  std::optional<nlohmann::ordered_json> efa;
  std::vector<std::string> step2_covariates;
  std::string step2_note;
};

nlohmann::ordered_json fit_to_json(const FitArtifacts& a);
nlohmann::ordered_json step1_to_json(const FitResult& fit);

// Rebuilds the step-1 model recorded in fit.json.
MixtureModel model_from_fit_json(const nlohmann::json& j);

void write_classes_csv(std::ostream& out, const LongitudinalDataset& data, const FitResult& fit);
void write_trajectories_csv(std::ostream& out, const FitResult& fit, int points = 200);
void write_model_table(std::ostream& out, const ClassSelection& selection);

// --- simulation artifacts --------------------------------------------------

nlohmann::ordered_json condition_to_json(const SimCondition& c);
nlohmann::ordered_json metrics_to_json(const MetricReport& report, int cell_index);
void write_replications_csv(std::ostream& out, const MetricReport& report);
// Median (range) of each metric across cells, grouped by parameter type
// (class prefix removed).
void write_summary_csv(std::ostream& out, const std::vector<MetricReport>& reports);

// --- EFA artifacts ---------------------------------------------------------

void write_matrix_csv(std::ostream& out, const std::vector<std::string>& names, const Eigen::MatrixXd& m);
void write_retention_csv(std::ostream& out, const efa::Retention& r);
void write_loadings_table(std::ostream& out, const std::vector<std::string>& names, const efa::EfaResult& efa);
void write_scores_csv(std::ostream& out, const LongitudinalDataset& data, const Eigen::MatrixXd& scores);
nlohmann::ordered_json efa_to_json(const std::vector<std::string>& names, const efa::Retention& retention,
                                   const efa::EfaResult& efa, const std::string& selection_rule);

}  // namespace bsgmm::io
