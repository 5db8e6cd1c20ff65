#pragma once

#include "bsgmm/dataset.hpp"
#include "bsgmm/estimation.hpp"
#include "bsgmm/likelihood.hpp"
#include "bsgmm/model_core.hpp"
#include "bsgmm/rng.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace bsgmm {

// One cell of the simulation design. Class mean vectors follow from the
// scenario, class count and distance label.
struct SimCondition {
  int n = 1000;
  int classes = 2;
  int scenario = 1;                      // 1: intercepts differ, 2: slope 1, 3: slope 2
  double distance = 1.72;                // Mahalanobis-distance label, 0.86 or 1.72
  std::vector<double> ratio{1.0, 1.0};   // class-size ratio
  std::vector<double> knots{3.5, 5.5};   // class knot means, strictly increasing
  double knot_sd = 0.0;                  // between-person knot SD (knot is an extra, independent factor)
  double residual_var = 1.0;
  int waves = 10;                        // t_j = 0, 1, ..., waves - 1
  double jitter = 0.25;                  // t_ij ~ U(t_j - jitter, t_j + jitter)
  Matrix3 growth_cov = default_growth_cov();  // original frame, common to all classes
  int covariates = 2;                    // standard-normal covariates
  double covariate_slope = 1.0;          // every covariate coefficient of every non-reference class

  static Matrix3 default_growth_cov();

  // Original-frame growth-factor means per class; throws for combinations
  // outside the design.
  std::vector<Vector3> class_means() const;
  std::vector<double> target_shares() const;
  std::string label() const;
  // Throws std::invalid_argument when the condition is malformed.
  void validate() const;
};

// Distance between adjacent classes' growth-factor means under growth_cov.
std::vector<double> adjacent_distances(const SimCondition& cond);

// Warnings about the condition, e.g. a distance label that disagrees with the
// computed distance by more than 5%.
std::vector<std::string> check_condition(const SimCondition& cond);

// All cells of the published design for one knot SD (0 or 0.3).
std::vector<SimCondition> design_grid(double knot_sd);

// True logistic coefficients ((K-1) x (1+q)): slopes fixed, intercepts chosen
// so that the marginal class shares match the target ratio. Balanced
// two-class designs use zero intercepts directly; otherwise a fixed-point
// search over `draws` Monte Carlo covariate vectors is used.
LogisticMixing calibrate_coefficients(const SimCondition& cond, std::uint64_t seed, int draws = 200000);

struct LabelDraw {
  Eigen::MatrixXd covariates;  // n x q
  std::vector<int> labels;     // zero-based
};

LabelDraw generate_labels(int n, int covariates, const LogisticMixing& beta, Rng& rng);

LongitudinalDataset generate_dataset(const SimCondition& cond, const LogisticMixing& beta, Rng& rng);

// cross_tab(r, c): individuals of true class r assigned to fitted class c.
Eigen::MatrixXi cross_tabulate(const std::vector<int>& truth, const std::vector<int>& assigned, int classes);

// perm[c] = true class matched to fitted class c. Uses each column's maximum;
// when that map is not a permutation, the permutation maximizing the matched
// diagonal sum is used instead.
std::vector<int> column_maxima_permutation(const Eigen::MatrixXi& cross_tab);
std::vector<int> best_diagonal_permutation(const Eigen::MatrixXi& cross_tab);

// Reindexes every class-indexed quantity of a fit: fitted class c becomes
// class perm[c]. Step-2 coefficients are re-referenced to the new class 1.
FitResult apply_permutation(const FitResult& fit, const std::vector<int>& perm);

struct Relabeling {
  FitResult fit;
  std::vector<int> permutation;
  bool switched = false;
};

Relabeling detect_and_relabel(const FitResult& fit, const std::vector<int>& truth);

struct ParameterMetrics {
  std::string name;
  double truth = 0.0;
  double mean_estimate = 0.0;
  double bias = 0.0;           // mean(est - truth)
  double relative_bias = 0.0;  // NaN when truth is 0
  double empirical_se = 0.0;   // SD of estimates, S-1 denominator
  double rmse = 0.0;
  double relative_rmse = 0.0;  // NaN when truth is 0
  double coverage = 0.0;       // NaN when no interval was available
  int intervals = 0;
  double mc_se = 0.0;          // Monte Carlo SE of the bias
  bool relative_available = true;
};

// estimates, lower, upper: S x P. NaN bounds mark missing intervals.
std::vector<ParameterMetrics> performance_metrics(const Eigen::MatrixXd& estimates, const Eigen::VectorXd& truth,
                                                  const Eigen::MatrixXd& lower, const Eigen::MatrixXd& upper,
                                                  const std::vector<std::string>& names);

double monte_carlo_se(double variance, int replications);

struct ReplicationRecord {
  int index = 0;
  std::uint64_t seed = 0;
  bool converged = false;
  FitStatus step1_status = FitStatus::Failed;
  FitStatus step2_status = FitStatus::Failed;
  int step1_attempts = 0;
  int step2_attempts = 0;
  std::string message;
  bool switched = false;
  double accuracy = 0.0;
  double loglik = 0.0;
  Eigen::VectorXd estimates;
  Eigen::VectorXd se;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
};

struct MetricReport {
  SimCondition condition;
  std::uint64_t seed = 0;
  std::vector<std::string> names;
  Eigen::VectorXd truth;
  std::vector<ParameterMetrics> parameters;
  double mean_accuracy = 0.0;
  int converged = 0;
  int attempted = 0;
  std::vector<ReplicationRecord> replications;  // the converged records used, in index order
  std::vector<std::string> warnings;
  std::vector<std::pair<int, std::string>> failures;  // non-converged replications among the attempted ones
};

struct RunOptions {
  int replications = 100;
  std::uint64_t seed = 1;
  int threads = 0;  // 0: OpenMP default
  FitOptions fit;
  int max_replications = 0;  // 0: 20 * replications + 50
};

// Parameter names and true values aligned with ReplicationRecord::estimates.
std::pair<std::vector<std::string>, Eigen::VectorXd> true_parameters(const SimCondition& cond,
                                                                    const LogisticMixing& beta);

ReplicationRecord run_replication(const SimCondition& cond, const LogisticMixing& beta, int index,
                                  std::uint64_t seed, const FitOptions& fit);

// Runs replications until `replications` have both steps converged. The
// records used are the first converged ones in index order, so the report
// does not depend on the thread count.
MetricReport run_condition(const SimCondition& cond, const RunOptions& options);

}  // namespace bsgmm
