#pragma once

#include "bsgmm/dataset.hpp"
#include "bsgmm/likelihood.hpp"
#include "bsgmm/model_core.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace bsgmm {

enum class FitStatus { Converged, Failed, NonIdentified };
enum class FitStep { Step1, Step2 };

std::string to_string(FitStatus status);

// Maps a step-1 mixture model onto an unconstrained vector. Per class, in
// order: 3 reparameterized means, the 6 lower Cholesky entries of Psi' (row
// major, diagonal on the log scale), log theta, and the logit of the knot's
// position inside the time range. The K-1 mixing logits against class 1
// follow the class blocks.
class ParamLayout {
 public:
  static constexpr int kPerClass = 11;

  ParamLayout(int classes, std::pair<double, double> time_range);

  int classes() const { return classes_; }
  int size() const { return classes_ * kPerClass + classes_ - 1; }
  int class_offset(int k) const { return k * kPerClass; }
  int mixing_offset() const { return classes_ * kPerClass; }
  std::pair<double, double> time_range() const { return range_; }

  // -1 for mixing logits.
  int slot_class(int j) const { return j < mixing_offset() ? j / kPerClass : -1; }
  std::string slot_name(int j) const;

  Eigen::VectorXd pack(const MixtureModel& model) const;
  MixtureModel unpack(const Eigen::VectorXd& x) const;
  ClassParams unpack_class(const Eigen::VectorXd& x, int k) const;
  std::vector<double> unpack_proportions(const Eigen::VectorXd& x) const;

  double knot_from_unconstrained(double u) const;
  double knot_to_unconstrained(double knot) const;

 private:
  int classes_;
  std::pair<double, double> range_;
};

struct FitOptions {
  int max_attempts = 10;
  double gradient_tolerance = 1e-5;
  int max_evaluations = 5000;
  std::uint64_t seed = 1;
  double ci_level = 0.95;
  // Step 2 is flagged non-identified when any |beta| exceeds this.
  double separation_limit = 30.0;
};

struct Interval {
  double lower = 0.0;
  double upper = 0.0;
  bool available = false;
};

// One reported quantity. se is NaN when unavailable.
struct ReportedParam {
  std::string name;
  int class_index = -1;  // zero-based; -1 when not class specific
  double value = 0.0;
  double se = 0.0;
  Interval ci;
};

struct FitResult {
  FitStep step = FitStep::Step1;
  FitStatus status = FitStatus::Failed;
  int classes = 0;
  int attempts = 0;
  std::string message;

  // Reparameterized-frame classes; FreeMixing after step 1, LogisticMixing after step 2.
  MixtureModel model;
  std::pair<double, double> time_range{0.0, 1.0};
  Eigen::VectorXd unconstrained;

  // Step 1: both parameter frames. Step 2: logistic coefficients.
  std::vector<ReportedParam> original;
  std::vector<ReportedParam> reparameterized;
  std::vector<ReportedParam> coefficients;
  Eigen::MatrixXd original_cov;
  Eigen::MatrixXd reparameterized_cov;
  Eigen::MatrixXd coefficient_cov;
  bool se_available = false;
  std::string se_diagnostic;
  double ci_level = 0.95;

  double loglik = 0.0;
  int free_params = 0;
  int n = 0;
  double aic = 0.0;
  double bic = 0.0;

  Eigen::MatrixXd posterior;
  std::vector<int> labels;
  std::vector<double> mixing_proportions;

  bool converged() const { return status == FitStatus::Converged; }
};

struct InformationCriteria {
  double aic = 0.0;
  double bic = 0.0;
};

InformationCriteria information_criteria(double loglik, int free_params, int n);

Interval wald_interval(double estimate, double se, double level = 0.95);

// Intervals for the fit's reported parameters in the requested frame
// (step 2 fits always return coefficient intervals).
std::vector<Interval> wald_ci(const FitResult& fit, double level = 0.95, Frame frame = Frame::Original);

struct CovarianceEstimate {
  Eigen::MatrixXd cov;
  bool available = false;
  std::string diagnostic;
};

// Inverse of an observed-information (negative log-likelihood Hessian) matrix.
CovarianceEstimate invert_information(const Eigen::MatrixXd& hessian);

// Data-driven start: trajectory features from per-person bilinear OLS,
// quantile split along their first principal axis, k-means refinement, then
// per-group knot grid search and moment estimates.
MixtureModel starting_values(const LongitudinalDataset& data, int classes);

// Attempts 2..10: multiplicative U(0.8, 1.2) perturbation of a start.
MixtureModel perturb_start(const MixtureModel& start, std::pair<double, double> time_range, std::uint64_t seed,
                           int attempt);

// Reorders classes by ascending knot.
std::vector<int> knot_order(const MixtureModel& model);

// Quantities reported for a step-1 model, in the given frame; names[i] and
// class indices describe entry i.
struct ReportedLayout {
  std::vector<std::string> names;
  std::vector<int> class_index;
};
ReportedLayout reported_layout(int classes, Frame frame);
Eigen::VectorXd reported_values(const MixtureModel& model, Frame frame);

// Builds a step-1 FitResult at a fixed parameter point (no optimization);
// status is Converged when the observed information is positive definite.
FitResult evaluate_step1(const LongitudinalDataset& data, const MixtureModel& model, const FitOptions& options);

FitResult fit_step1(const LongitudinalDataset& data, int classes, const FitOptions& options = {});
FitResult fit_step2(const LongitudinalDataset& data, const FitResult& step1, const FitOptions& options = {});

struct OddsRatio {
  int class_index = 0;
  std::string coefficient;
  double odds_ratio = 0.0;
  Interval ci;
  bool excludes_one = false;
};

std::vector<OddsRatio> odds_ratios(const FitResult& step2, double level = 0.95);

struct ClassSelection {
  std::vector<FitResult> fits;
  std::optional<int> selected;  // index into fits
};

ClassSelection select_classes(const LongitudinalDataset& data, const std::vector<int>& class_counts,
                              const FitOptions& options = {});

}  // namespace bsgmm
