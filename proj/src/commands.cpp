#include "bsgmm/commands.hpp"

#include "bsgmm/efa.hpp"
#include "bsgmm/estimation.hpp"
#include "bsgmm/io.hpp"
#include "bsgmm/rng.hpp"
#include "bsgmm/simulation.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <ostream>
#include <stdexcept>

namespace bsgmm::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

constexpr std::uint64_t kEfaStream = 0xefa;

void write_file(const fs::path& path, const std::function<void(std::ostream&)>& body) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  body(out);
  out.flush();
  if (!out) throw std::runtime_error("error while writing '" + path.string() + "'");
}

void write_json(const fs::path& path, const ordered_json& j) {
  write_file(path, [&](std::ostream& out) { out << j.dump(2) << "\n"; });
}

Eigen::MatrixXd covariate_matrix(const LongitudinalDataset& data) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(data.size()), static_cast<Eigen::Index>(data.covariate_count()));
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& c = data.individuals[i].covariates;
    for (std::size_t j = 0; j < c.size(); ++j) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = c[j];
  }
  return x;
}

struct EfaRun {
  std::vector<std::string> names;
  Eigen::MatrixXd correlation;
  efa::Retention retention;
  efa::EfaResult result;
  Eigen::MatrixXd scores;
  std::string rule;
};

EfaRun run_efa_core(const LongitudinalDataset& data, const config::EfaBlock& block, std::uint64_t seed) {
  EfaRun run;
  run.names = data.covariate_names;
  if (run.names.size() < 2) throw std::invalid_argument("factor analysis needs at least 2 covariate columns");
  const Eigen::MatrixXd x = covariate_matrix(data);
  const Eigen::MatrixXd z = efa::standardize(x, run.names);
  run.correlation = efa::correlation_matrix(x, run.names);
  const int n = static_cast<int>(data.size());
  run.retention = efa::retention_criteria(run.correlation, n, derive_seed(seed, kEfaStream), block.draws,
                                          block.percentile);
  int m = 0;
  if (block.factors) {
    m = *block.factors;
    run.rule = "fixed";
  } else {
    m = run.retention.parallel;
    run.rule = "parallel_analysis";
    // Keep the automatic count identifiable.
    const int p = static_cast<int>(run.names.size());
    while (m > 0 && (p - m) * (p - m) < p + m) --m;
    if (m < run.retention.parallel) run.rule = "parallel_analysis_df_capped";
  }
  run.result = efa::fit_efa_ml(run.correlation, n, m);
  if (m >= 2) run.result = efa::varimax_rotate(run.result);
  run.scores = m > 0 ? efa::bartlett_scores(z, run.result) : Eigen::MatrixXd(n, 0);
  return run;
}

void write_efa_artifacts(const fs::path& dir, const LongitudinalDataset& data, const EfaRun& run) {
  write_file(dir / "correlation.csv", [&](std::ostream& o) { io::write_matrix_csv(o, run.names, run.correlation); });
  write_file(dir / "retention.csv", [&](std::ostream& o) { io::write_retention_csv(o, run.retention); });
  write_file(dir / "loadings.txt", [&](std::ostream& o) { io::write_loadings_table(o, run.names, run.result); });
  write_file(dir / "scores.csv", [&](std::ostream& o) { io::write_scores_csv(o, data, run.scores); });
  write_json(dir / "efa.json", io::efa_to_json(run.names, run.retention, run.result, run.rule));
}

void log_efa(std::ostream& log, const EfaRun& run) {
  log << "efa: eigenvalues > 1: " << run.retention.evg1 << ", parallel analysis: " << run.retention.parallel
      << ", extracted " << run.result.factors << " factor(s) (" << run.rule << ")"
      << (run.result.heywood ? ", Heywood case" : "") << (run.result.converged ? "" : ", NOT converged") << "\n";
}

std::string cell_directory(int index, const SimCondition& cond) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%03d_", index);
  return buf + cond.label();
}

}  // namespace

int run_fit(const config::FitConfig& cfg, std::ostream& log) {
  const fs::path& out = cfg.common.out;
  io::CsvOptions csv;
  csv.time_origin = cfg.time_origin;
  csv.covariates = cfg.covariates;
  const LongitudinalDataset data = io::read_wide_csv_file(cfg.data, csv);
  data.validate();
  log << "fit: " << data.size() << " individuals, " << data.covariate_count() << " covariate(s)\n";

  const FitOptions& options = cfg.common.fit;
  const ClassSelection selection = select_classes(data, cfg.classes, options);
  bool all_ok = true;
  for (const auto& f : selection.fits) {
    log << "  K=" << f.classes << ": " << to_string(f.status) << " (" << f.message << ")";
    if (f.converged()) log << ", BIC " << io::format_fixed(f.bic, 2);
    log << "\n";
    all_ok = all_ok && f.converged();
  }

  io::FitArtifacts art;
  art.data = &data;
  art.time_origin = cfg.time_origin;
  art.class_counts = cfg.classes;
  art.options = options;
  art.selection = &selection;

  if (!selection.selected) {
    art.step2_note = "no class count converged";
  } else if (!cfg.step2) {
    art.step2_note = "step 2 disabled";
  } else {
    const FitResult& s1 = selection.fits[static_cast<std::size_t>(*selection.selected)];
    if (s1.classes < 2) {
      art.step2_note = "selected model has one class; step 2 skipped";
    } else if (data.covariate_count() == 0) {
      art.step2_note = "no covariates; step 2 skipped";
    } else {
      LongitudinalDataset step2_data = data;
      bool run_step2 = true;
      if (cfg.efa) {
        const EfaRun run = run_efa_core(data, *cfg.efa, options.seed);
        log_efa(log, run);
        all_ok = all_ok && run.result.converged;
        write_efa_artifacts(out / "efa", data, run);
        art.efa = io::efa_to_json(run.names, run.retention, run.result, run.rule);
        const auto m = run.scores.cols();
        if (m == 0) {
          art.step2_note = "no factors retained; step 2 skipped";
          run_step2 = false;
        } else {
          step2_data.covariate_names.clear();
          for (Eigen::Index j = 0; j < m; ++j) step2_data.covariate_names.push_back("factor" + std::to_string(j + 1));
          for (std::size_t i = 0; i < step2_data.size(); ++i) {
            auto& c = step2_data.individuals[i].covariates;
            c.assign(static_cast<std::size_t>(m), 0.0);
            for (Eigen::Index j = 0; j < m; ++j) c[static_cast<std::size_t>(j)] = run.scores(static_cast<Eigen::Index>(i), j);
          }
        }
      }
      if (run_step2) {
        art.step2 = fit_step2(step2_data, s1, options);
        art.step2_covariates = step2_data.covariate_names;
        log << "  step 2: " << to_string(art.step2->status) << " (" << art.step2->message << ")\n";
        all_ok = all_ok && art.step2->converged();
        if (art.step2->converged()) art.odds = odds_ratios(*art.step2, options.ci_level);
      }
    }
  }

  write_json(out / "fit.json", io::fit_to_json(art));
  write_file(out / "model_table.txt", [&](std::ostream& o) { io::write_model_table(o, selection); });
  if (selection.selected) {
    const FitResult& s1 = selection.fits[static_cast<std::size_t>(*selection.selected)];
    write_file(out / "classes.csv", [&](std::ostream& o) { io::write_classes_csv(o, data, s1); });
    write_file(out / "trajectories.csv", [&](std::ostream& o) { io::write_trajectories_csv(o, s1, 200); });
    log << "selected K=" << s1.classes << "\n";
  }
  return all_ok ? kExitOk : kExitNotConverged;
}

int run_simulate(const config::SimulateConfig& cfg, std::ostream& log) {
  const fs::path& out = cfg.common.out;
  std::vector<MetricReport> reports;
  ordered_json cells = ordered_json::array();
  bool all_ok = true;
  for (std::size_t c = 0; c < cfg.cells.size(); ++c) {
    const SimCondition& cond = cfg.cells[c];
    const int index = static_cast<int>(c);
    const std::string dir_name = cell_directory(index, cond);
    const fs::path dir = out / "cells" / dir_name;
    RunOptions ro;
    ro.replications = cfg.replications;
    ro.max_replications = cfg.max_replications;
    ro.seed = derive_seed(cfg.common.seed, static_cast<std::uint64_t>(c));
    ro.threads = cfg.common.threads;
    ro.fit = cfg.common.fit;
    log << "cell " << index + 1 << "/" << cfg.cells.size() << " " << cond.label() << "\n";
    ordered_json entry = {{"cell", index}, {"label", cond.label()}, {"directory", "cells/" + dir_name}};
    try {
      MetricReport report = run_condition(cond, ro);
      write_json(dir / "metrics.json", io::metrics_to_json(report, index));
      write_file(dir / "replications.csv", [&](std::ostream& o) { io::write_replications_csv(o, report); });
      log << "  " << report.converged << " converged of " << report.attempted << ", accuracy "
          << io::format_fixed(report.mean_accuracy, 3) << "\n";
      entry["status"] = "completed";
      entry["message"] = "";
      reports.push_back(std::move(report));
    } catch (const std::runtime_error& e) {
      const std::string msg = "cell " + std::to_string(index) + " (" + cond.label() + "): " + e.what();
      log << "  aborted: " << msg << "\n";
      write_json(dir / "metrics.json", {{"schema", "bsgmm.metrics"},
                                        {"schema_version", io::kSchemaVersion},
                                        {"cell", index},
                                        {"label", cond.label()},
                                        {"condition", io::condition_to_json(cond)},
                                        {"status", "aborted"},
                                        {"message", msg}});
      entry["status"] = "aborted";
      entry["message"] = msg;
      all_ok = false;
    }
    cells.push_back(entry);
  }
  write_json(out / "design.json", {{"schema", "bsgmm.design"},
                                   {"schema_version", io::kSchemaVersion},
                                   {"seed", cfg.common.seed},
                                   {"replications", cfg.replications},
                                   {"cells", cells}});
  write_file(out / "summary.csv", [&](std::ostream& o) { io::write_summary_csv(o, reports); });
  return all_ok ? kExitOk : kExitNotConverged;
}

int run_efa(const config::EfaConfig& cfg, std::ostream& log) {
  io::CsvOptions csv;
  csv.time_origin = cfg.time_origin;
  csv.covariates = cfg.covariates;
  csv.require_waves = false;
  const LongitudinalDataset data = io::read_wide_csv_file(cfg.data, csv);
  const EfaRun run = run_efa_core(data, cfg.efa, cfg.common.seed);
  log_efa(log, run);
  write_efa_artifacts(cfg.common.out, data, run);
  return run.result.converged ? kExitOk : kExitNotConverged;
}

}  // namespace bsgmm::cli
