#include "bsgmm/likelihood.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace bsgmm::kernels {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

}  // namespace

ClassKernel prepare(const ClassParams& p) {
  validate(p);
  const ClassParams r = to_reparameterized(p);
  ClassKernel k;
  k.mean = r.mean;
  k.knot = r.knot;
  k.residual_var = r.residual_var;
  k.log_residual_var = std::log(r.residual_var);
  const Matrix3 cov = 0.5 * (r.cov + r.cov.transpose());
  Eigen::LLT<Matrix3> llt(cov);
  if (llt.info() == Eigen::Success) {
    k.factor = llt.matrixL();
  } else {
    // Semidefinite: symmetric square root with clipped eigenvalues.
    Eigen::SelfAdjointEigenSolver<Matrix3> es(cov);
    const Vector3 root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    k.factor = es.eigenvectors() * root.asDiagonal();
  }
  return k;
}

double class_log_density(const Individual& person, const ClassKernel& k) {
  const std::size_t j_count = person.times.size();
  // m = Lambda^T Lambda (upper triangle), b = Lambda^T r, rr = r^T r
  double m00 = 0, m01 = 0, m02 = 0, m11 = 0, m12 = 0, m22 = 0;
  double b0 = 0, b1 = 0, b2 = 0, rr = 0;
  for (std::size_t j = 0; j < j_count; ++j) {
    const double d = person.times[j] - k.knot;
    const double a = std::abs(d);
    const double r = person.outcomes[j] - (k.mean[0] + k.mean[1] * d + k.mean[2] * a);
    m00 += 1.0;
    m01 += d;
    m02 += a;
    m11 += d * d;
    m12 += d * a;
    m22 += a * a;
    b0 += r;
    b1 += d * r;
    b2 += a * r;
    rr += r * r;
  }
  Matrix3 m;
  m << m00, m01, m02, m01, m11, m12, m02, m12, m22;
  const Matrix3& f = k.factor;
  Matrix3 g = f.transpose() * m * f;
  g.diagonal().array() += k.residual_var;
  const Vector3 c = f.transpose() * Vector3(b0, b1, b2);
  Eigen::LLT<Matrix3> llt(g);
  if (llt.info() != Eigen::Success) return std::numeric_limits<double>::quiet_NaN();
  const Vector3 z = llt.matrixL().solve(c);
  const double log_det_g = 2.0 * (std::log(llt.matrixLLT()(0, 0)) + std::log(llt.matrixLLT()(1, 1)) +
                                  std::log(llt.matrixLLT()(2, 2)));
  const double jd = static_cast<double>(j_count);
  const double log_det = (jd - 3.0) * k.log_residual_var + log_det_g;
  const double quad = (rr - z.squaredNorm()) / k.residual_var;
  return -0.5 * (jd * kLog2Pi + log_det + quad);
}

void class_log_density_column(const LongitudinalDataset& data, const ClassKernel& k, int class_index,
                              std::span<double> out) {
  const auto n = static_cast<std::ptrdiff_t>(data.size());
  std::ptrdiff_t first_bad = n;
#pragma omp parallel for schedule(static) reduction(min : first_bad)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const double v = class_log_density(data.individuals[static_cast<std::size_t>(i)], k);
    if (std::isnan(v)) {
      first_bad = std::min(first_bad, i);
      out[static_cast<std::size_t>(i)] = kLogDensityFloor;
    } else {
      out[static_cast<std::size_t>(i)] = std::max(v, kLogDensityFloor);
    }
  }
  if (first_bad < n) {
    throw NumericalError("individual '" + data.individuals[static_cast<std::size_t>(first_bad)].id + "', class " +
                         std::to_string(class_index + 1) + ": implied covariance is not positive definite");
  }
}

Eigen::MatrixXd class_log_densities(const LongitudinalDataset& data, const std::vector<ClassParams>& classes) {
  const auto n = static_cast<Eigen::Index>(data.size());
  Eigen::MatrixXd out(n, static_cast<Eigen::Index>(classes.size()));
  for (std::size_t k = 0; k < classes.size(); ++k) {
    const ClassKernel ck = prepare(classes[k]);
    class_log_density_column(data, ck, static_cast<int>(k),
                             std::span<double>(out.col(static_cast<Eigen::Index>(k)).data(), static_cast<std::size_t>(n)));
  }
  return out;
}

}  // namespace bsgmm::kernels
