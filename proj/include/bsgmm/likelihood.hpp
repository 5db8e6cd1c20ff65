#pragma once

#include "bsgmm/dataset.hpp"
#include "bsgmm/model_core.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <variant>
#include <vector>

namespace bsgmm {

// Class proportions that do not depend on covariates (step 1).
struct FreeMixing {
  std::vector<double> proportions;
};

// Multinomial logit against class 1. Row k-1 of `coefficients` holds
// [beta0, beta_1 .. beta_q] of class k+1 (k = 1..K-1).
struct LogisticMixing {
  Eigen::MatrixXd coefficients;

  int class_count() const { return static_cast<int>(coefficients.rows()) + 1; }
  int covariate_count() const { return static_cast<int>(coefficients.cols()) - 1; }
};

using MixingSpec = std::variant<FreeMixing, LogisticMixing>;

int class_count(const MixingSpec& spec);

struct MixtureModel {
  std::vector<ClassParams> classes;
  MixingSpec mixing;

  int class_count() const { return static_cast<int>(classes.size()); }
};

// Per-class log densities are clipped from below at this value.
inline constexpr double kLogDensityFloor = -1e10;

double mvn_logpdf(const Eigen::VectorXd& y, const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov);

Eigen::VectorXd mixing_probs(std::span<const double> x, const MixingSpec& spec);

// n x K matrix of log pi(z_i = k | x_i).
Eigen::MatrixXd log_mixing_matrix(const LongitudinalDataset& data, const MixingSpec& spec);

// sum_i log sum_k exp(log_mix(i,k) + log_dens(i,k)), reduced in row order.
double mixture_loglik(const Eigen::MatrixXd& log_dens, const Eigen::MatrixXd& log_mix);

namespace kernels {

// Per-class quantities shared by every individual of one evaluation.
struct ClassKernel {
  Vector3 mean;      // reparameterized growth-factor means
  Matrix3 factor;    // F with F F^T = Psi'
  double knot = 0.0;
  double residual_var = 1.0;
  double log_residual_var = 0.0;
};

ClassKernel prepare(const ClassParams& p);

// Log density of one individual's outcomes, using the rank-3 structure of
// Lambda Psi' Lambda^T + theta I; never forms the J x J covariance.
// Returns NaN when the reduced 3 x 3 system is not positive definite.
double class_log_density(const Individual& person, const ClassKernel& k);

// Fills out[i] with the clipped log density of individual i (OpenMP over i).
void class_log_density_column(const LongitudinalDataset& data, const ClassKernel& k, int class_index,
                              std::span<double> out);

Eigen::MatrixXd class_log_densities(const LongitudinalDataset& data, const std::vector<ClassParams>& classes);

}  // namespace kernels

namespace reference {

// Serial dense implementation: builds each Sigma_i and factors it.
Eigen::MatrixXd class_log_densities(const LongitudinalDataset& data, const std::vector<ClassParams>& classes);

double mixture_loglik(const LongitudinalDataset& data, const MixtureModel& model);

}  // namespace reference

double step1_loglik(const LongitudinalDataset& data, const MixtureModel& model);

double step2_loglik(const LongitudinalDataset& data, const std::vector<ClassParams>& fixed,
                    const LogisticMixing& beta);

// Posterior class probabilities under the model's own mixing specification.
Eigen::MatrixXd posterior_probs(const LongitudinalDataset& data, const MixtureModel& model);
Eigen::MatrixXd posterior_from_logs(const Eigen::MatrixXd& log_dens, const Eigen::MatrixXd& log_mix);

// Row-wise argmax. Entries equal after rounding to 12 decimals are ties and
// are broken uniformly at random with a generator seeded from (seed, row).
std::vector<int> classify(const Eigen::MatrixXd& posterior, std::uint64_t seed);

double accuracy(std::span<const int> assigned, std::span<const int> truth);

}  // namespace bsgmm
