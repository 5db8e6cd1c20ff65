#pragma once

// Synthetic inputs shared by unit and acceptance tests.

#include <Eigen/Dense>

#include <random>

namespace fixture {

// Nine items in two orthogonal blocks: six ability-like items on factor 1
// (one reverse-keyed) and three SES-like items on factor 2.
inline Eigen::MatrixXd planted_loadings() {
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(9, 2);
  l.col(0).head(6) << 0.85, 0.8, 0.75, -0.7, 0.8, 0.85;
  l.col(1).tail(3) << 0.85, 0.8, 0.9;
  return l;
}

struct FactorData {
  Eigen::MatrixXd x;        // n x p
  Eigen::MatrixXd factors;  // n x m
  Eigen::MatrixXd loadings;
};

inline FactorData planted_factor_data(int n, unsigned long seed, const Eigen::MatrixXd& loadings = planted_loadings()) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  const auto p = loadings.rows();
  const auto m = loadings.cols();
  FactorData d;
  d.loadings = loadings;
  d.factors.resize(n, m);
  d.x.resize(n, p);
  const Eigen::VectorXd u = (1.0 - loadings.rowwise().squaredNorm().array()).sqrt();
  for (int i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) d.factors(i, j) = z(rng);
    for (Eigen::Index j = 0; j < p; ++j) d.x(i, j) = loadings.row(j).dot(d.factors.row(i)) + u[j] * z(rng);
  }
  return d;
}

// Smallest max-abs difference between a and b over column permutations and
// sign flips (two columns).
inline double loading_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  double best = 1e300;
  for (int swap = 0; swap < 2; ++swap) {
    Eigen::MatrixXd c = a;
    if (swap) c.col(0).swap(c.col(1));
    double worst = 0.0;
    for (Eigen::Index j = 0; j < c.cols(); ++j) {
      const double plus = (c.col(j) - b.col(j)).cwiseAbs().maxCoeff();
      const double minus = (c.col(j) + b.col(j)).cwiseAbs().maxCoeff();
      worst = std::max(worst, std::min(plus, minus));
    }
    best = std::min(best, worst);
  }
  return best;
}

}  // namespace fixture
