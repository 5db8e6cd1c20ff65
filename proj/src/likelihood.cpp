#include "bsgmm/likelihood.hpp"
#include "bsgmm/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace bsgmm {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

double log_sum_exp(const double* v, int n, int stride) {
  double m = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < n; ++k) m = std::max(m, v[k * stride]);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (int k = 0; k < n; ++k) s += std::exp(v[k * stride] - m);
  return m + std::log(s);
}

void check_free(const FreeMixing& f) {
  if (f.proportions.empty()) throw std::invalid_argument("mixing proportions are empty");
  double sum = 0.0;
  for (double p : f.proportions) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw std::invalid_argument("mixing proportions must be nonnegative");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-8) throw std::invalid_argument("mixing proportions must sum to 1");
}

}  // namespace

int class_count(const MixingSpec& spec) {
  if (const auto* f = std::get_if<FreeMixing>(&spec)) return static_cast<int>(f->proportions.size());
  return std::get<LogisticMixing>(spec).class_count();
}

double mvn_logpdf(const Eigen::VectorXd& y, const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov) {
  const Eigen::Index d = y.size();
  if (mean.size() != d || cov.rows() != d || cov.cols() != d) {
    throw std::invalid_argument("mvn_logpdf: dimension mismatch");
  }
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov, Eigen::EigenvaluesOnly);
    std::ostringstream msg;
    msg << "mvn_logpdf: covariance is not positive definite (dim " << d << ", eigenvalue range ["
        << es.eigenvalues().minCoeff() << ", " << es.eigenvalues().maxCoeff() << "])";
    throw NumericalError(msg.str());
  }
  const Eigen::VectorXd z = llt.matrixL().solve(y - mean);
  const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  return -0.5 * (static_cast<double>(d) * kLog2Pi + log_det + z.squaredNorm());
}

Eigen::VectorXd mixing_probs(std::span<const double> x, const MixingSpec& spec) {
  if (const auto* f = std::get_if<FreeMixing>(&spec)) {
    check_free(*f);
    return Eigen::Map<const Eigen::VectorXd>(f->proportions.data(), static_cast<Eigen::Index>(f->proportions.size()));
  }
  const auto& l = std::get<LogisticMixing>(spec);
  if (l.coefficients.cols() < 1) throw std::invalid_argument("logistic coefficients need an intercept column");
  if (static_cast<Eigen::Index>(x.size()) != l.coefficients.cols() - 1) {
    throw std::invalid_argument("covariate vector length does not match logistic coefficients");
  }
  const int k_count = l.class_count();
  Eigen::VectorXd eta(k_count);
  eta[0] = 0.0;
  for (int k = 1; k < k_count; ++k) {
    double v = l.coefficients(k - 1, 0);
    for (std::size_t c = 0; c < x.size(); ++c) v += l.coefficients(k - 1, static_cast<Eigen::Index>(c) + 1) * x[c];
    eta[k] = v;
  }
  const double m = eta.maxCoeff();
  Eigen::VectorXd p = (eta.array() - m).exp();
  return p / p.sum();
}

Eigen::MatrixXd log_mixing_matrix(const LongitudinalDataset& data, const MixingSpec& spec) {
  const auto n = static_cast<Eigen::Index>(data.size());
  const int k_count = class_count(spec);
  Eigen::MatrixXd out(n, k_count);
  if (const auto* f = std::get_if<FreeMixing>(&spec)) {
    check_free(*f);
    for (int k = 0; k < k_count; ++k) out.col(k).setConstant(std::log(f->proportions[static_cast<std::size_t>(k)]));
    return out;
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& x = data.individuals[static_cast<std::size_t>(i)].covariates;
    out.row(i) = mixing_probs(x, spec).array().log().transpose();
  }
  return out;
}

double mixture_loglik(const Eigen::MatrixXd& log_dens, const Eigen::MatrixXd& log_mix) {
  if (log_dens.rows() != log_mix.rows() || log_dens.cols() != log_mix.cols()) {
    throw std::invalid_argument("mixture_loglik: shape mismatch");
  }
  const Eigen::MatrixXd joint = log_dens + log_mix;
  const int k_count = static_cast<int>(joint.cols());
  const Eigen::Index n = joint.rows();
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) total += log_sum_exp(joint.data() + i, k_count, static_cast<int>(n));
  return total;
}

namespace reference {

Eigen::MatrixXd class_log_densities(const LongitudinalDataset& data, const std::vector<ClassParams>& classes) {
  const auto n = static_cast<Eigen::Index>(data.size());
  Eigen::MatrixXd out(n, static_cast<Eigen::Index>(classes.size()));
  for (std::size_t k = 0; k < classes.size(); ++k) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& person = data.individuals[static_cast<std::size_t>(i)];
      const ImpliedMoments m = implied_moments(classes[k], person.times);
      const Eigen::Map<const Eigen::VectorXd> y(person.outcomes.data(), static_cast<Eigen::Index>(person.outcomes.size()));
      double v;
      try {
        v = mvn_logpdf(y, m.mean, m.cov);
      } catch (const NumericalError& e) {
        throw NumericalError("individual '" + person.id + "', class " + std::to_string(k + 1) + ": " + e.what());
      }
      out(i, static_cast<Eigen::Index>(k)) = std::max(v, kLogDensityFloor);
    }
  }
  return out;
}

double mixture_loglik(const LongitudinalDataset& data, const MixtureModel& model) {
  return bsgmm::mixture_loglik(class_log_densities(data, model.classes), log_mixing_matrix(data, model.mixing));
}

}  // namespace reference

double step1_loglik(const LongitudinalDataset& data, const MixtureModel& model) {
  if (!std::holds_alternative<FreeMixing>(model.mixing)) {
    throw std::invalid_argument("step1_loglik expects free mixing proportions");
  }
  if (class_count(model.mixing) != model.class_count()) {
    throw std::invalid_argument("mixing proportions and class parameters disagree on K");
  }
  return mixture_loglik(kernels::class_log_densities(data, model.classes), log_mixing_matrix(data, model.mixing));
}

double step2_loglik(const LongitudinalDataset& data, const std::vector<ClassParams>& fixed, const LogisticMixing& beta) {
  if (beta.class_count() != static_cast<int>(fixed.size())) {
    throw std::invalid_argument("logistic coefficients and class parameters disagree on K");
  }
  if (static_cast<std::size_t>(beta.covariate_count()) != data.covariate_count()) {
    throw std::invalid_argument("logistic coefficients do not match the dataset's covariates");
  }
  return mixture_loglik(kernels::class_log_densities(data, fixed), log_mixing_matrix(data, beta));
}

Eigen::MatrixXd posterior_from_logs(const Eigen::MatrixXd& log_dens, const Eigen::MatrixXd& log_mix) {
  Eigen::MatrixXd joint = log_dens + log_mix;
  for (Eigen::Index i = 0; i < joint.rows(); ++i) {
    const double m = joint.row(i).maxCoeff();
    if (!std::isfinite(m)) throw NumericalError("posterior_probs: every class has zero weight for row " + std::to_string(i));
    joint.row(i) = (joint.row(i).array() - m).exp();
    joint.row(i) /= joint.row(i).sum();
  }
  return joint;
}

Eigen::MatrixXd posterior_probs(const LongitudinalDataset& data, const MixtureModel& model) {
  if (class_count(model.mixing) != model.class_count()) {
    throw std::invalid_argument("mixing specification and class parameters disagree on K");
  }
  return posterior_from_logs(kernels::class_log_densities(data, model.classes), log_mixing_matrix(data, model.mixing));
}

std::vector<int> classify(const Eigen::MatrixXd& posterior, std::uint64_t seed) {
  std::vector<int> labels(static_cast<std::size_t>(posterior.rows()));
  std::vector<int> ties;
  for (Eigen::Index i = 0; i < posterior.rows(); ++i) {
    ties.clear();
    double best = -1.0;
    for (Eigen::Index k = 0; k < posterior.cols(); ++k) {
      const double v = std::round(posterior(i, k) * 1e12) / 1e12;
      if (v > best) {
        best = v;
        ties.assign(1, static_cast<int>(k));
      } else if (v == best) {
        ties.push_back(static_cast<int>(k));
      }
    }
    int pick = ties.front();
    if (ties.size() > 1) {
      Rng rng = make_rng(seed, static_cast<std::uint64_t>(i));
      std::uniform_int_distribution<std::size_t> u(0, ties.size() - 1);
      pick = ties[u(rng)];
    }
    labels[static_cast<std::size_t>(i)] = pick;
  }
  return labels;
}

double accuracy(std::span<const int> assigned, std::span<const int> truth) {
  if (assigned.size() != truth.size()) throw std::invalid_argument("accuracy: label vectors differ in length");
  if (assigned.empty()) throw std::invalid_argument("accuracy: empty label vectors");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < assigned.size(); ++i) hits += assigned[i] == truth[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(assigned.size());
}

}  // namespace bsgmm
