#pragma once

#include <Eigen/Dense>

#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>

namespace bsgmm {

using Vector3 = Eigen::Vector3d;
using Matrix3 = Eigen::Matrix3d;

// Thrown when a computation cannot proceed on numerically valid input
// (non-PD covariance, singular system, ...).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Initial status and the slope of each linear stage.
struct GrowthFactorsOriginal {
  double intercept = 0.0;
  double slope1 = 0.0;
  double slope2 = 0.0;

  Vector3 as_vector() const { return {intercept, slope1, slope2}; }
  static GrowthFactorsOriginal from_vector(const Vector3& v) { return {v[0], v[1], v[2]}; }
};

// Value at the knot, mean of the two slopes, half difference of the slopes.
struct GrowthFactorsRepar {
  double at_knot = 0.0;
  double mean_slope = 0.0;
  double half_diff = 0.0;

  Vector3 as_vector() const { return {at_knot, mean_slope, half_diff}; }
  static GrowthFactorsRepar from_vector(const Vector3& v) { return {v[0], v[1], v[2]}; }
};

enum class Frame { Original, Reparameterized };

// One latent class of the bilinear-spline growth model. mean and cov are
// expressed in the frame named by `frame`.
struct ClassParams {
  Frame frame = Frame::Reparameterized;
  Vector3 mean = Vector3::Zero();
  Matrix3 cov = Matrix3::Zero();
  double knot = 0.0;
  double residual_var = 1.0;
};

enum class Direction { Forward, Inverse };

GrowthFactorsRepar reparameterize_mean(const GrowthFactorsOriginal& g, double knot);
GrowthFactorsOriginal inverse_reparameterize_mean(const GrowthFactorsRepar& g, double knot);

// Jacobians of the mean maps with respect to the growth factors.
Matrix3 forward_jacobian(double knot);
Matrix3 inverse_jacobian(double knot);

// J * cov * J^T with J the forward or inverse Jacobian.
Matrix3 transform_covariance(const Matrix3& cov, double knot, Direction direction);

ClassParams to_reparameterized(const ClassParams& p);
ClassParams to_original(const ClassParams& p);

// Symmetric with eigenvalues >= -1e-8 * trace.
bool is_symmetric_psd(const Matrix3& m, double symmetry_tol = 1e-8);

// Throws std::invalid_argument when p violates its invariants. When a time
// range is supplied the knot must lie strictly inside it.
void validate(const ClassParams& p, std::optional<std::pair<double, double>> time_range = std::nullopt);

// Row j is [1, t_j - knot, |t_j - knot|].
Eigen::MatrixX3d loading_matrix(std::span<const double> times, double knot);

struct ImpliedMoments {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

// Within-class mean and covariance of the repeated measures at `times`.
// Accepts either frame; original-frame parameters are converted first.
ImpliedMoments implied_moments(const ClassParams& p, std::span<const double> times);

// Expected outcome of the class mean curve at time t.
double trajectory_value(const ClassParams& p, double t);

// Growth-factor Mahalanobis distance sqrt(d^T cov^-1 d) between two mean vectors.
double mahalanobis_distance(const Vector3& a, const Vector3& b, const Matrix3& cov);

}  // namespace bsgmm
