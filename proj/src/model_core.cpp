#include "bsgmm/model_core.hpp"

#include <cmath>

namespace bsgmm {

namespace {

void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) {
    throw std::invalid_argument(std::string(what) + " must be finite");
  }
}

void require_finite(const Vector3& v, const char* what) {
  if (!v.allFinite()) {
    throw std::invalid_argument(std::string(what) + " must be finite");
  }
}

}  // namespace

GrowthFactorsRepar reparameterize_mean(const GrowthFactorsOriginal& g, double knot) {
  require_finite(g.as_vector(), "growth factors");
  require_finite(knot, "knot");
  return {g.intercept + knot * g.slope1, 0.5 * (g.slope1 + g.slope2), 0.5 * (g.slope2 - g.slope1)};
}

GrowthFactorsOriginal inverse_reparameterize_mean(const GrowthFactorsRepar& g, double knot) {
  require_finite(g.as_vector(), "growth factors");
  require_finite(knot, "knot");
  return {g.at_knot - knot * g.mean_slope + knot * g.half_diff, g.mean_slope - g.half_diff,
          g.mean_slope + g.half_diff};
}

Matrix3 forward_jacobian(double knot) {
  Matrix3 j;
  j << 1.0, knot, 0.0,
       0.0, 0.5, 0.5,
       0.0, -0.5, 0.5;
  return j;
}

Matrix3 inverse_jacobian(double knot) {
  Matrix3 j;
  j << 1.0, -knot, knot,
       0.0, 1.0, -1.0,
       0.0, 1.0, 1.0;
  return j;
}

Matrix3 transform_covariance(const Matrix3& cov, double knot, Direction direction) {
  require_finite(knot, "knot");
  if (!cov.allFinite()) throw std::invalid_argument("covariance must be finite");
  const double scale = std::max(1.0, cov.cwiseAbs().maxCoeff());
  if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-8 * scale) {
    throw std::invalid_argument("covariance is not symmetric");
  }
  const Matrix3 j = direction == Direction::Forward ? forward_jacobian(knot) : inverse_jacobian(knot);
  Matrix3 out = j * cov * j.transpose();
  return 0.5 * (out + out.transpose());
}

ClassParams to_reparameterized(const ClassParams& p) {
  if (p.frame == Frame::Reparameterized) return p;
  ClassParams out = p;
  out.frame = Frame::Reparameterized;
  out.mean = reparameterize_mean(GrowthFactorsOriginal::from_vector(p.mean), p.knot).as_vector();
  out.cov = transform_covariance(p.cov, p.knot, Direction::Forward);
  return out;
}

ClassParams to_original(const ClassParams& p) {
  if (p.frame == Frame::Original) return p;
  ClassParams out = p;
  out.frame = Frame::Original;
  out.mean = inverse_reparameterize_mean(GrowthFactorsRepar::from_vector(p.mean), p.knot).as_vector();
  out.cov = transform_covariance(p.cov, p.knot, Direction::Inverse);
  return out;
}

bool is_symmetric_psd(const Matrix3& m, double symmetry_tol) {
  if (!m.allFinite()) return false;
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > symmetry_tol * scale) return false;
  Eigen::SelfAdjointEigenSolver<Matrix3> es(m, Eigen::EigenvaluesOnly);
  const double floor = -1e-8 * std::max(std::abs(m.trace()), 1e-300);
  return es.eigenvalues().minCoeff() >= floor;
}

void validate(const ClassParams& p, std::optional<std::pair<double, double>> time_range) {
  require_finite(p.mean, "class mean");
  require_finite(p.knot, "knot");
  if (!(p.residual_var > 0.0) || !std::isfinite(p.residual_var)) {
    throw std::invalid_argument("residual variance must be positive");
  }
  if (!is_symmetric_psd(p.cov)) {
    throw std::invalid_argument("growth-factor covariance must be symmetric positive semidefinite");
  }
  if (time_range && !(p.knot > time_range->first && p.knot < time_range->second)) {
    throw std::invalid_argument("knot must lie strictly inside the observed time range");
  }
}

Eigen::MatrixX3d loading_matrix(std::span<const double> times, double knot) {
  Eigen::MatrixX3d l(static_cast<Eigen::Index>(times.size()), 3);
  for (std::size_t j = 0; j < times.size(); ++j) {
    const double d = times[j] - knot;
    const auto r = static_cast<Eigen::Index>(j);
    l(r, 0) = 1.0;
    l(r, 1) = d;
    l(r, 2) = std::abs(d);
  }
  return l;
}

ImpliedMoments implied_moments(const ClassParams& p, std::span<const double> times) {
  validate(p);
  const ClassParams r = to_reparameterized(p);
  const Eigen::MatrixX3d l = loading_matrix(times, r.knot);
  ImpliedMoments m;
  m.mean = l * r.mean;
  m.cov = l * r.cov * l.transpose();
  m.cov.diagonal().array() += r.residual_var;
  return m;
}

double trajectory_value(const ClassParams& p, double t) {
  const ClassParams o = to_original(p);
  if (t <= o.knot) return o.mean[0] + o.mean[1] * t;
  return o.mean[0] + o.mean[1] * o.knot + o.mean[2] * (t - o.knot);
}

double mahalanobis_distance(const Vector3& a, const Vector3& b, const Matrix3& cov) {
  Eigen::LDLT<Matrix3> ldlt(cov);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
    throw NumericalError("Mahalanobis distance needs a positive definite covariance");
  }
  const Vector3 d = a - b;
  return std::sqrt(d.dot(ldlt.solve(d)));
}

}  // namespace bsgmm
