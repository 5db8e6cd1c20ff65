#include "bsgmm/estimation.hpp"
#include "bsgmm/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace bsgmm {

namespace {

struct PersonFit {
  bool full_rank = false;
  Vector3 coef = Vector3::Zero();   // [value at pivot, mean slope, half difference]
  double sse = 0.0;
  int dof = 0;
  Matrix3 xtx_inv = Matrix3::Zero();
};

Eigen::MatrixX3d design(const std::vector<double>& times, double pivot) {
  return loading_matrix(times, pivot);
}

PersonFit fit_person(const Individual& p, double pivot) {
  PersonFit out;
  const auto j = static_cast<Eigen::Index>(p.times.size());
  const Eigen::Map<const Eigen::VectorXd> y(p.outcomes.data(), j);
  const Eigen::MatrixX3d d = design(p.times, pivot);
  if (j >= 3) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixX3d> qr(d);
    if (qr.rank() == 3) {
      out.full_rank = true;
      out.coef = qr.solve(y);
      out.sse = (y - d * out.coef).squaredNorm();
      out.dof = static_cast<int>(j) - 3;
      out.xtx_inv = (d.transpose() * d).inverse();
      return out;
    }
  }
  if (j >= 2) {
    // Straight line: equal slopes, zero half difference.
    Eigen::MatrixXd d2(j, 2);
    d2.col(0).setOnes();
    d2.col(1) = d.col(1);
    const Eigen::Vector2d c = d2.colPivHouseholderQr().solve(y);
    out.coef = {c[0], c[1], 0.0};
    out.sse = (y - d2 * c).squaredNorm();
    out.dof = static_cast<int>(j) - 2;
    return out;
  }
  out.coef = {y[0], 0.0, 0.0};
  return out;
}

double fitted(const Vector3& coef, double pivot, double t) {
  const double d = t - pivot;
  return coef[0] + coef[1] * d + coef[2] * std::abs(d);
}

// Pooled OLS of the group's stacked observations at a candidate knot.
std::pair<double, Vector3> pooled_fit(const LongitudinalDataset& data, const std::vector<int>& members, double knot) {
  Matrix3 xtx = Matrix3::Zero();
  Vector3 xty = Vector3::Zero();
  double yty = 0.0;
  for (int i : members) {
    const auto& p = data.individuals[static_cast<std::size_t>(i)];
    for (std::size_t j = 0; j < p.times.size(); ++j) {
      const double d = p.times[j] - knot;
      const Vector3 row(1.0, d, std::abs(d));
      xtx.noalias() += row * row.transpose();
      xty += row * p.outcomes[j];
      yty += p.outcomes[j] * p.outcomes[j];
    }
  }
  Eigen::LDLT<Matrix3> ldlt(xtx);
  if (ldlt.info() != Eigen::Success || ldlt.rcond() < 1e-12) {
    return {std::numeric_limits<double>::infinity(), Vector3::Zero()};
  }
  const Vector3 b = ldlt.solve(xty);
  return {yty - b.dot(xty), b};
}

ClassParams group_start(const LongitudinalDataset& data, const std::vector<int>& members,
                        std::pair<double, double> range) {
  const double span = range.second - range.first;
  constexpr int kGrid = 37;
  double best_sse = std::numeric_limits<double>::infinity();
  double best_knot = 0.5 * (range.first + range.second);
  Vector3 best_mean = Vector3::Zero();
  for (int g = 0; g < kGrid; ++g) {
    const double knot = range.first + span * (0.1 + 0.8 * g / (kGrid - 1.0));
    const auto [sse, b] = pooled_fit(data, members, knot);
    if (sse < best_sse) {
      best_sse = sse;
      best_knot = knot;
      best_mean = b;
    }
  }

  std::vector<Vector3> coefs;
  Matrix3 noise = Matrix3::Zero();
  double sse = 0.0;
  int dof = 0;
  for (int i : members) {
    const PersonFit f = fit_person(data.individuals[static_cast<std::size_t>(i)], best_knot);
    sse += f.sse;
    dof += f.dof;
    if (f.full_rank) {
      coefs.push_back(f.coef);
      noise += f.xtx_inv;
    }
  }
  double theta = dof > 0 ? sse / dof : 1.0;
  if (!(theta > 1e-6)) theta = 1e-6;

  Matrix3 psi;
  if (coefs.size() >= 5) {
    Vector3 mean = Vector3::Zero();
    for (const auto& c : coefs) mean += c;
    mean /= static_cast<double>(coefs.size());
    Matrix3 s = Matrix3::Zero();
    for (const auto& c : coefs) s += (c - mean) * (c - mean).transpose();
    s /= static_cast<double>(coefs.size() - 1);
    noise /= static_cast<double>(coefs.size());
    Eigen::SelfAdjointEigenSolver<Matrix3> es(s - theta * noise);
    const double floor = std::max(1e-4 * s.trace(), 1e-8);
    psi = es.eigenvectors() * es.eigenvalues().cwiseMax(floor).asDiagonal() * es.eigenvectors().transpose();
  } else {
    psi = Vector3(std::max(theta, 1e-2), 0.1, 0.1).asDiagonal();
  }

  ClassParams p;
  p.frame = Frame::Reparameterized;
  p.mean = best_mean;
  p.cov = 0.5 * (psi + psi.transpose());
  p.knot = best_knot;
  p.residual_var = theta;
  return p;
}

}  // namespace

MixtureModel starting_values(const LongitudinalDataset& data, int classes) {
  if (classes < 1) throw std::invalid_argument("class count must be at least 1");
  const auto n = static_cast<int>(data.size());
  if (n < classes) throw std::invalid_argument("fewer individuals than classes");
  const auto range = data.time_range();
  const double pivot = 0.5 * (range.first + range.second);

  // Trajectory features: fitted values at the start, middle and end of the range.
  Eigen::MatrixXd features(n, 3);
  for (int i = 0; i < n; ++i) {
    const PersonFit f = fit_person(data.individuals[static_cast<std::size_t>(i)], pivot);
    features(i, 0) = fitted(f.coef, pivot, range.first);
    features(i, 1) = fitted(f.coef, pivot, pivot);
    features(i, 2) = fitted(f.coef, pivot, range.second);
  }

  std::vector<int> assign(static_cast<std::size_t>(n), 0);
  if (classes > 1) {
    const Eigen::RowVector3d centre = features.colwise().mean();
    const Eigen::MatrixXd centred = features.rowwise() - centre;
    const Matrix3 cov = centred.transpose() * centred / std::max(1, n - 1);
    Eigen::SelfAdjointEigenSolver<Matrix3> es(cov);
    Vector3 axis = es.eigenvectors().col(2);
    if (axis.sum() < 0) axis = -axis;
    const Eigen::VectorXd score = centred * axis;
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return score[a] < score[b]; });
    for (int r = 0; r < n; ++r) {
      assign[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])] =
          std::min(classes - 1, static_cast<int>(static_cast<long long>(r) * classes / n));
    }

    // Lloyd refinement.
    Eigen::MatrixXd centroids(classes, 3);
    for (int iter = 0; iter < 100; ++iter) {
      centroids.setZero();
      std::vector<int> counts(static_cast<std::size_t>(classes), 0);
      for (int i = 0; i < n; ++i) {
        centroids.row(assign[static_cast<std::size_t>(i)]) += features.row(i);
        ++counts[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])];
      }
      for (int k = 0; k < classes; ++k) {
        if (counts[static_cast<std::size_t>(k)] > 0) centroids.row(k) /= counts[static_cast<std::size_t>(k)];
      }
      bool changed = false;
      std::vector<int> next = assign;
      for (int i = 0; i < n; ++i) {
        int best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (int k = 0; k < classes; ++k) {
          if (counts[static_cast<std::size_t>(k)] == 0) continue;
          const double dist = (features.row(i) - centroids.row(k)).squaredNorm();
          if (dist < best_d) {
            best_d = dist;
            best = k;
          }
        }
        if (best != next[static_cast<std::size_t>(i)]) {
          next[static_cast<std::size_t>(i)] = best;
          changed = true;
        }
      }
      // Keep every group non-empty.
      std::vector<int> next_counts(static_cast<std::size_t>(classes), 0);
      for (int a : next) ++next_counts[static_cast<std::size_t>(a)];
      if (std::any_of(next_counts.begin(), next_counts.end(), [](int c) { return c < 2; })) break;
      assign = std::move(next);
      if (!changed) break;
    }
  }

  MixtureModel model;
  std::vector<double> props;
  for (int k = 0; k < classes; ++k) {
    std::vector<int> members;
    for (int i = 0; i < n; ++i) {
      if (assign[static_cast<std::size_t>(i)] == k) members.push_back(i);
    }
    model.classes.push_back(group_start(data, members, range));
    props.push_back(std::max(static_cast<double>(members.size()), 1.0));
  }
  const double total = std::accumulate(props.begin(), props.end(), 0.0);
  for (auto& p : props) p /= total;
  model.mixing = FreeMixing{props};
  return model;
}

MixtureModel perturb_start(const MixtureModel& start, std::pair<double, double> time_range, std::uint64_t seed,
                           int attempt) {
  Rng rng = make_rng(seed, static_cast<std::uint64_t>(attempt));
  std::uniform_real_distribution<double> u(0.8, 1.2);
  const double span = time_range.second - time_range.first;
  MixtureModel out = start;
  for (auto& c : out.classes) {
    for (int j = 0; j < 3; ++j) c.mean[j] *= u(rng);
    c.knot = std::clamp(c.knot * u(rng), time_range.first + 0.02 * span, time_range.second - 0.02 * span);
    c.residual_var *= u(rng);
    const Vector3 scale(std::sqrt(u(rng)), std::sqrt(u(rng)), std::sqrt(u(rng)));
    c.cov = scale.asDiagonal() * c.cov * scale.asDiagonal();
  }
  auto& props = std::get<FreeMixing>(out.mixing).proportions;
  double total = 0.0;
  for (auto& p : props) {
    p *= u(rng);
    total += p;
  }
  for (auto& p : props) p /= total;
  return out;
}

}  // namespace bsgmm
