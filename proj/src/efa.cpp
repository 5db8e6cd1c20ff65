#include "bsgmm/efa.hpp"
#include "bsgmm/model_core.hpp"
#include "bsgmm/optimizer.hpp"
#include "bsgmm/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace bsgmm::efa {

namespace {

std::string column_name(const std::vector<std::string>& names, Eigen::Index j) {
  if (j < static_cast<Eigen::Index>(names.size())) return "'" + names[static_cast<std::size_t>(j)] + "'";
  return std::to_string(j + 1);
}

Eigen::VectorXd descending_eigenvalues(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues().reverse();
}

// Type-7 sample quantile of a sorted vector.
double quantile_sorted(const std::vector<double>& v, double prob) {
  const double h = (static_cast<double>(v.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

double sigmoid(double u) {
  if (u >= 0.0) return 1.0 / (1.0 + std::exp(-u));
  const double e = std::exp(u);
  return e / (1.0 + e);
}

struct Profile {
  Eigen::MatrixXd loadings;
  double objective = 0.0;
};

// For fixed uniquenesses, the ML loadings come from the leading eigenpairs of
// Psi^-1/2 R Psi^-1/2.
Profile profile(const Eigen::MatrixXd& r, const Eigen::VectorXd& psi, int m) {
  const auto p = r.rows();
  const Eigen::VectorXd isq = psi.cwiseSqrt().cwiseInverse();
  const Eigen::MatrixXd s = isq.asDiagonal() * r * isq.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s);
  const Eigen::VectorXd e = es.eigenvalues().reverse();
  const Eigen::MatrixXd v = es.eigenvectors().rowwise().reverse();
  Profile out;
  out.loadings.resize(p, m);
  for (int j = 0; j < m; ++j) {
    out.loadings.col(j) = psi.cwiseSqrt().asDiagonal() * v.col(j) * std::sqrt(std::max(e[j] - 1.0, 0.0));
  }
  double tail = 0.0;
  for (Eigen::Index j = m; j < p; ++j) tail += std::log(e[j]) - e[j];
  out.objective = -(tail - m + static_cast<double>(p));
  return out;
}

void summarize(EfaResult& res) {
  const auto p = static_cast<double>(res.loadings.rows());
  res.ss_loadings = res.loadings.colwise().squaredNorm().transpose();
  res.proportion_variance = res.ss_loadings / p;
  res.cumulative_variance.resize(res.ss_loadings.size());
  double cum = 0.0;
  for (Eigen::Index j = 0; j < res.ss_loadings.size(); ++j) {
    cum += res.proportion_variance[j];
    res.cumulative_variance[j] = cum;
  }
}

}  // namespace

Eigen::MatrixXd standardize(const Eigen::MatrixXd& x, const std::vector<std::string>& names) {
  const auto n = x.rows();
  if (n < 2) throw std::invalid_argument("need at least 2 rows to standardize");
  if (!x.allFinite()) throw std::invalid_argument("covariates contain non-finite values");
  Eigen::MatrixXd z(n, x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double mean = x.col(j).mean();
    const Eigen::VectorXd c = x.col(j).array() - mean;
    const double sd = std::sqrt(c.squaredNorm() / static_cast<double>(n - 1));
    const double scale = std::max(std::abs(mean), 1.0);
    if (!(sd > 1e-12 * scale)) throw std::invalid_argument("column " + column_name(names, j) + " is constant");
    z.col(j) = c / sd;
  }
  return z;
}

Eigen::MatrixXd correlation_matrix(const Eigen::MatrixXd& x, const std::vector<std::string>& names) {
  const Eigen::MatrixXd z = standardize(x, names);
  Eigen::MatrixXd r = z.transpose() * z / static_cast<double>(z.rows() - 1);
  r = 0.5 * (r + r.transpose());
  r.diagonal().setOnes();
  return r;
}

Retention retention_criteria(const Eigen::MatrixXd& r, int n, std::uint64_t seed, int draws, double percentile) {
  const auto p = r.rows();
  if (p == 0 || r.cols() != p) throw std::invalid_argument("correlation matrix must be square and non-empty");
  if (n < 2) throw std::invalid_argument("parallel analysis needs n >= 2");
  if (draws < 1) throw std::invalid_argument("parallel analysis needs at least one draw");
  if (!(percentile > 0.0 && percentile < 1.0)) throw std::invalid_argument("percentile must be in (0, 1)");
  if ((r - r.transpose()).cwiseAbs().maxCoeff() > 1e-8) throw std::invalid_argument("correlation matrix is not symmetric");
  Retention out;
  out.eigenvalues = descending_eigenvalues(r);
  if (out.eigenvalues.minCoeff() < -1e-8 * r.trace()) {
    throw NumericalError("correlation matrix is not positive semidefinite (smallest eigenvalue " +
                         std::to_string(out.eigenvalues.minCoeff()) + ")");
  }
  for (Eigen::Index j = 0; j < p; ++j) out.evg1 += out.eigenvalues[j] > 1.0 ? 1 : 0;

  Eigen::MatrixXd random_eigen(draws, p);
#pragma omp parallel for schedule(static)
  for (int d = 0; d < draws; ++d) {
    Rng rng = make_rng(seed, static_cast<std::uint64_t>(d));
    std::normal_distribution<double> normal;
    Eigen::MatrixXd x(n, p);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < p; ++j) x(i, j) = normal(rng);
    }
    random_eigen.row(d) = descending_eigenvalues(correlation_matrix(x)).transpose();
  }
  out.parallel_threshold.resize(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    std::vector<double> col(random_eigen.col(j).data(), random_eigen.col(j).data() + draws);
    std::sort(col.begin(), col.end());
    out.parallel_threshold[j] = quantile_sorted(col, percentile);
  }
  // Leading positions only: stop at the first eigenvalue below its threshold.
  while (out.parallel < p && out.eigenvalues[out.parallel] > out.parallel_threshold[out.parallel]) ++out.parallel;
  return out;
}

EfaResult fit_efa_ml(const Eigen::MatrixXd& r, int n, int factors) {
  const auto p = static_cast<int>(r.rows());
  if (r.cols() != p || p == 0) throw std::invalid_argument("correlation matrix must be square and non-empty");
  if (factors < 0 || factors >= p) throw std::invalid_argument("factor count must be in [0, p)");
  const int df2 = (p - factors) * (p - factors) - p - factors;
  if (df2 < 0) {
    throw std::invalid_argument(std::to_string(factors) + " factors leave negative degrees of freedom for " +
                                std::to_string(p) + " variables");
  }
  EfaResult res;
  res.factors = factors;
  res.n = n;
  res.rotation = Eigen::MatrixXd::Identity(factors, factors);
  if (factors == 0) {
    res.loadings.resize(p, 0);
    res.uniquenesses = Eigen::VectorXd::Ones(p);
    res.converged = true;
    res.objective = profile(r, res.uniquenesses, 0).objective;
    summarize(res);
    return res;
  }

  Eigen::LDLT<Eigen::MatrixXd> ldlt(r);
  if (ldlt.info() != Eigen::Success || !(ldlt.rcond() > 1e-14)) {
    throw NumericalError("correlation matrix is singular");
  }
  const Eigen::VectorXd rinv_diag = ldlt.solve(Eigen::MatrixXd::Identity(p, p)).diagonal();
  const double lo = kUniquenessFloor;
  auto to_psi = [&](const Eigen::VectorXd& u) {
    Eigen::VectorXd psi(u.size());
    for (Eigen::Index j = 0; j < u.size(); ++j) psi[j] = lo + (1.0 - lo) * sigmoid(u[j]);
    return psi;
  };
  Eigen::VectorXd u0(p);
  for (int j = 0; j < p; ++j) {
    const double start = std::clamp((1.0 - 0.5 * factors / p) / rinv_diag[j], lo + 0.01, 0.995);
    const double s = (start - lo) / (1.0 - lo);
    u0[j] = std::log(s / (1.0 - s));
  }
  auto fit_error = [&](const Eigen::VectorXd& psi) {
    const Profile pr = profile(r, psi, factors);
    Eigen::MatrixXd implied = pr.loadings * pr.loadings.transpose();
    implied.diagonal() += psi;
    return (r - implied).cwiseAbs().maxCoeff();
  };

  BfgsOptions opt;
  opt.gradient_tolerance = 1e-10;
  opt.max_step = 1.0;
  opt.on_iteration = [&](int, const Eigen::VectorXd& u, double) {
    res.fit_error_trace.push_back(fit_error(to_psi(u)));
  };
  const BfgsResult b = minimize_bfgs(
      [&](const Eigen::VectorXd& u) { return profile(r, to_psi(u), factors).objective; },
      [&](const Eigen::VectorXd& u) {
        const Eigen::VectorXd psi = to_psi(u);
        const Profile pr = profile(r, psi, factors);
        Eigen::MatrixXd g = pr.loadings * pr.loadings.transpose();
        g.diagonal() += psi;
        g -= r;
        Eigen::VectorXd grad(u.size());
        for (Eigen::Index j = 0; j < u.size(); ++j) {
          const double s = sigmoid(u[j]);
          grad[j] = g(j, j) / (psi[j] * psi[j]) * (1.0 - lo) * s * (1.0 - s);
        }
        return grad;
      },
      u0, opt);

  const Eigen::VectorXd psi = to_psi(b.x);
  const Profile pr = profile(r, psi, factors);
  res.loadings = pr.loadings;
  res.uniquenesses = psi;
  res.objective = pr.objective;
  res.iterations = b.iterations;
  // A stalled line search near a bound still leaves a usable stationary point.
  res.converged = b.converged || b.gradient.cwiseAbs().maxCoeff() < 1e-6;
  res.heywood = (psi.array() < lo + 1e-3).any();
  for (int j = 0; j < factors; ++j) {
    Eigen::Index at = 0;
    res.loadings.col(j).cwiseAbs().maxCoeff(&at);
    if (res.loadings(at, j) < 0.0) res.loadings.col(j) *= -1.0;
  }
  summarize(res);
  return res;
}

Rotation varimax(const Eigen::MatrixXd& loadings, double tolerance, int max_sweeps) {
  const auto p = loadings.rows();
  const auto m = loadings.cols();
  Rotation out;
  out.rotation = Eigen::MatrixXd::Identity(m, m);
  out.loadings = loadings;
  if (m < 2) return out;

  Eigen::VectorXd weight = loadings.rowwise().norm();
  for (Eigen::Index i = 0; i < p; ++i) {
    if (!(weight[i] > 0.0)) weight[i] = 1.0;
  }
  Eigen::MatrixXd a = weight.cwiseInverse().asDiagonal() * loadings;
  const double pd = static_cast<double>(p);
  auto criterion = [&](const Eigen::MatrixXd& l) {
    double v = 0.0;
    for (Eigen::Index j = 0; j < m; ++j) {
      const Eigen::ArrayXd sq = l.col(j).array().square();
      v += (pd * sq.square().sum() - sq.sum() * sq.sum()) / (pd * pd);
    }
    return v;
  };
  double value = criterion(a);
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    for (Eigen::Index j = 0; j < m - 1; ++j) {
      for (Eigen::Index k = j + 1; k < m; ++k) {
        const Eigen::ArrayXd x = a.col(j).array();
        const Eigen::ArrayXd y = a.col(k).array();
        const Eigen::ArrayXd uu = x.square() - y.square();
        const Eigen::ArrayXd vv = 2.0 * x * y;
        const double sa = uu.sum();
        const double sb = vv.sum();
        const double sc = (uu.square() - vv.square()).sum();
        const double sd = 2.0 * (uu * vv).sum();
        const double phi = 0.25 * std::atan2(sd - 2.0 * sa * sb / pd, sc - (sa * sa - sb * sb) / pd);
        const double c = std::cos(phi);
        const double s = std::sin(phi);
        const Eigen::VectorXd nx = c * a.col(j) + s * a.col(k);
        const Eigen::VectorXd ny = -s * a.col(j) + c * a.col(k);
        a.col(j) = nx;
        a.col(k) = ny;
        const Eigen::VectorXd tx = c * out.rotation.col(j) + s * out.rotation.col(k);
        const Eigen::VectorXd ty = -s * out.rotation.col(j) + c * out.rotation.col(k);
        out.rotation.col(j) = tx;
        out.rotation.col(k) = ty;
      }
    }
    out.sweeps = sweep + 1;
    const double next = criterion(a);
    const double gain = next - value;
    value = next;
    if (gain < tolerance) break;
  }
  out.loadings = loadings * out.rotation;
  return out;
}

EfaResult varimax_rotate(const EfaResult& efa) {
  EfaResult out = efa;
  const Rotation rot = varimax(efa.loadings);
  out.loadings = rot.loadings;
  out.rotation = rot.rotation;
  out.rotated = true;
  const auto m = out.loadings.cols();
  for (Eigen::Index j = 0; j < m; ++j) {
    Eigen::Index at = 0;
    out.loadings.col(j).cwiseAbs().maxCoeff(&at);
    if (out.loadings(at, j) < 0.0) {
      out.loadings.col(j) *= -1.0;
      out.rotation.col(j) *= -1.0;
    }
  }
  std::vector<Eigen::Index> order(static_cast<std::size_t>(m));
  std::iota(order.begin(), order.end(), 0);
  const Eigen::VectorXd ss = out.loadings.colwise().squaredNorm().transpose();
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return ss[a] > ss[b]; });
  const Eigen::MatrixXd l = out.loadings;
  const Eigen::MatrixXd t = out.rotation;
  for (Eigen::Index j = 0; j < m; ++j) {
    out.loadings.col(j) = l.col(order[static_cast<std::size_t>(j)]);
    out.rotation.col(j) = t.col(order[static_cast<std::size_t>(j)]);
  }
  summarize(out);
  return out;
}

Eigen::MatrixXd bartlett_scores(const Eigen::MatrixXd& x_std, const EfaResult& efa) {
  if (x_std.cols() != efa.loadings.rows()) throw std::invalid_argument("data columns do not match the loadings");
  const auto m = efa.loadings.cols();
  if (m == 0) return Eigen::MatrixXd(x_std.rows(), 0);
  const Eigen::MatrixXd wl = efa.uniquenesses.cwiseInverse().asDiagonal() * efa.loadings;  // Psi^-1 L
  const Eigen::MatrixXd info = efa.loadings.transpose() * wl;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
  if (ldlt.info() != Eigen::Success || !(ldlt.rcond() > 1e-12) || !ldlt.isPositive()) {
    throw NumericalError("L^T Psi^-1 L is singular; Bartlett scores are undefined");
  }
  const Eigen::MatrixXd w = ldlt.solve(wl.transpose()).transpose();  // p x m
  return x_std * w;
}

}  // namespace bsgmm::efa
