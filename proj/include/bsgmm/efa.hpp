#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace bsgmm::efa {

inline constexpr double kUniquenessFloor = 0.005;

// Column z-scores (n-1 denominator). Throws std::invalid_argument naming a
// constant column.
Eigen::MatrixXd standardize(const Eigen::MatrixXd& x, const std::vector<std::string>& names = {});

// Pearson correlation matrix of the columns of x.
Eigen::MatrixXd correlation_matrix(const Eigen::MatrixXd& x, const std::vector<std::string>& names = {});

struct Retention {
  Eigen::VectorXd eigenvalues;          // descending (scree data)
  Eigen::VectorXd parallel_threshold;   // per-position percentile of random-data eigenvalues
  int evg1 = 0;                         // eigenvalues > 1
  int parallel = 0;                     // leading eigenvalues above their thresholds
};

// Eigenvalue-greater-than-one count and parallel analysis against `draws`
// standard-normal data sets of the same n x p shape.
Retention retention_criteria(const Eigen::MatrixXd& r, int n, std::uint64_t seed, int draws = 200,
                             double percentile = 0.95);

struct EfaResult {
  int factors = 0;
  int n = 0;
  Eigen::MatrixXd loadings;       // p x m
  Eigen::VectorXd uniquenesses;   // p
  bool rotated = false;
  Eigen::MatrixXd rotation;       // m x m; rotated = unrotated * rotation
  Eigen::VectorXd ss_loadings;
  Eigen::VectorXd proportion_variance;
  Eigen::VectorXd cumulative_variance;
  bool heywood = false;
  bool converged = false;
  int iterations = 0;
  double objective = 0.0;
  // max |R - (L L^T + diag(u))| after each optimizer iteration.
  std::vector<double> fit_error_trace;
};

// Maximum-likelihood factor extraction with loadings profiled out of the
// uniquenesses; uniquenesses are kept in [kUniquenessFloor, 1].
EfaResult fit_efa_ml(const Eigen::MatrixXd& r, int n, int factors);

struct Rotation {
  Eigen::MatrixXd loadings;
  Eigen::MatrixXd rotation;  // orthogonal
  int sweeps = 0;
};

// Kaiser-normalized varimax by pairwise planar rotations.
Rotation varimax(const Eigen::MatrixXd& loadings, double tolerance = 1e-8, int max_sweeps = 1000);

// Varimax applied to an extraction, followed by the column sign convention
// (largest-magnitude entry positive) and ordering by SS loadings.
EfaResult varimax_rotate(const EfaResult& efa);

// Weighted least-squares (Bartlett) scores of standardized data.
Eigen::MatrixXd bartlett_scores(const Eigen::MatrixXd& x_std, const EfaResult& efa);

}  // namespace bsgmm::efa
