#include "bsgmm/simulation.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>

namespace bsgmm {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr std::uint64_t kCalibrationStream = 0xca11b2a7eULL;
constexpr std::uint64_t kDataStream = 0;
constexpr std::uint64_t kFitStream = 1;

bool near(double a, double b) { return std::abs(a - b) < 1e-9; }

std::string compact(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

// Rows of the softmax with class 1 as reference.
Eigen::VectorXd class_probs(const Eigen::MatrixXd& coef, const double* x, int q) {
  const auto k = coef.rows() + 1;
  Eigen::VectorXd eta(k);
  eta[0] = 0.0;
  for (Eigen::Index r = 0; r < coef.rows(); ++r) {
    double s = coef(r, 0);
    for (int c = 0; c < q; ++c) s += coef(r, c + 1) * x[c];
    eta[r + 1] = s;
  }
  const double m = eta.maxCoeff();
  Eigen::VectorXd p = (eta.array() - m).exp();
  return p / p.sum();
}

}  // namespace

Matrix3 SimCondition::default_growth_cov() {
  // Intercept variance 25, slope variances 1, all correlations 0.3.
  Matrix3 m;
  m << 25.0, 1.5, 1.5, 1.5, 1.0, 0.3, 1.5, 0.3, 1.0;
  return m;
}

std::vector<Vector3> SimCondition::class_means() const {
  const bool small = near(distance, 0.86);
  const bool large = near(distance, 1.72);
  if (!small && !large) throw std::invalid_argument("distance label must be 0.86 or 1.72");
  std::vector<double> varying;
  if (classes == 2) {
    switch (scenario) {
      case 1: varying = small ? std::vector<double>{98, 102} : std::vector<double>{96, 104}; break;
      case 2: varying = small ? std::vector<double>{-4.4, -3.6} : std::vector<double>{-5.2, -3.6}; break;
      case 3: varying = small ? std::vector<double>{-2.6, -3.4} : std::vector<double>{-1.8, -3.4}; break;
      default: throw std::invalid_argument("scenario must be 1, 2 or 3");
    }
  } else if (classes == 3) {
    if (!small) throw std::invalid_argument("three-class conditions use distance 0.86 only");
    switch (scenario) {
      case 1: varying = {96, 100, 104}; break;
      case 2: varying = {-5.2, -4.4, -3.6}; break;
      case 3: varying = {-1.8, -2.6, -3.4}; break;
      default: throw std::invalid_argument("scenario must be 1, 2 or 3");
    }
  } else {
    throw std::invalid_argument("conditions have 2 or 3 classes");
  }
  std::vector<Vector3> out;
  for (double v : varying) {
    switch (scenario) {
      case 1: out.emplace_back(v, -5.0, -2.6); break;
      case 2: out.emplace_back(100.0, v, -2.0); break;
      default: out.emplace_back(100.0, -5.0, v); break;
    }
  }
  return out;
}

std::vector<double> SimCondition::target_shares() const {
  const double total = std::accumulate(ratio.begin(), ratio.end(), 0.0);
  std::vector<double> out;
  for (double r : ratio) out.push_back(r / total);
  return out;
}

std::string SimCondition::label() const {
  std::ostringstream os;
  os << "n" << n << "_K" << classes << "_s" << scenario << "_d" << compact(distance) << "_r";
  for (std::size_t k = 0; k < ratio.size(); ++k) os << (k ? "-" : "") << compact(ratio[k]);
  os << "_k";
  for (std::size_t k = 0; k < knots.size(); ++k) os << (k ? "-" : "") << compact(knots[k]);
  os << "_sd" << compact(knot_sd) << "_th" << compact(residual_var);
  return os.str();
}

void SimCondition::validate() const {
  if (n < 2) throw std::invalid_argument("condition needs n >= 2");
  if (classes < 2 || classes > 3) throw std::invalid_argument("conditions have 2 or 3 classes");
  if (static_cast<int>(ratio.size()) != classes) throw std::invalid_argument("ratio needs one entry per class");
  if (static_cast<int>(knots.size()) != classes) throw std::invalid_argument("knots need one entry per class");
  for (double r : ratio) {
    if (!(r > 0.0) || !std::isfinite(r)) throw std::invalid_argument("ratio entries must be positive");
  }
  for (std::size_t k = 1; k < knots.size(); ++k) {
    if (!(knots[k] > knots[k - 1])) throw std::invalid_argument("knot locations must be strictly increasing");
  }
  if (waves < 2) throw std::invalid_argument("need at least 2 waves");
  for (double k : knots) {
    if (!(k > 0.0 && k < waves - 1.0)) throw std::invalid_argument("knots must lie inside the wave range");
  }
  if (!(jitter >= 0.0 && jitter < 0.5)) throw std::invalid_argument("jitter must be in [0, 0.5)");
  if (!(knot_sd >= 0.0) || !std::isfinite(knot_sd)) throw std::invalid_argument("knot SD must be non-negative");
  if (!(residual_var >= 0.0) || !std::isfinite(residual_var)) {
    throw std::invalid_argument("residual variance must be non-negative");
  }
  if (!is_symmetric_psd(growth_cov)) throw std::invalid_argument("growth-factor covariance is not symmetric PSD");
  if (covariates < 0) throw std::invalid_argument("covariate count must be non-negative");
  class_means();
}

std::vector<double> adjacent_distances(const SimCondition& cond) {
  const auto means = cond.class_means();
  std::vector<double> out;
  for (std::size_t k = 1; k < means.size(); ++k) {
    out.push_back(mahalanobis_distance(means[k - 1], means[k], cond.growth_cov));
  }
  return out;
}

std::vector<std::string> check_condition(const SimCondition& cond) {
  std::vector<std::string> warnings;
  const auto d = adjacent_distances(cond);
  for (std::size_t k = 0; k < d.size(); ++k) {
    if (std::abs(d[k] - cond.distance) > 0.05 * cond.distance) {
      std::ostringstream os;
      os << cond.label() << ": distance between classes " << k + 1 << " and " << k + 2 << " is "
         << std::setprecision(4) << d[k] << ", label says " << cond.distance;
      warnings.push_back(os.str());
    }
  }
  return warnings;
}

std::vector<SimCondition> design_grid(double knot_sd) {
  std::vector<SimCondition> out;
  const std::vector<std::vector<double>> knots2{{4.0, 5.0}, {3.75, 5.25}, {3.5, 5.5}};
  const std::vector<std::vector<double>> knots3{{3.5, 4.5, 5.5}, {3.0, 4.5, 6.0}};
  const std::vector<std::vector<double>> ratios2{{1, 1}, {1, 2}};
  const std::vector<std::vector<double>> ratios3{{1, 1, 1}, {1, 1, 2}, {1, 2, 2}};
  for (int k : {2, 3}) {
    const auto& knots = k == 2 ? knots2 : knots3;
    const auto& ratios = k == 2 ? ratios2 : ratios3;
    const std::vector<double> distances = k == 2 ? std::vector<double>{0.86, 1.72} : std::vector<double>{0.86};
    for (int n : {500, 1000}) {
      for (const auto& r : ratios) {
        for (double theta : {1.0, 2.0}) {
          for (const auto& kn : knots) {
            for (double d : distances) {
              for (int s : {1, 2, 3}) {
                SimCondition c;
                c.n = n;
                c.classes = k;
                c.ratio = r;
                c.residual_var = theta;
                c.knots = kn;
                c.distance = d;
                c.scenario = s;
                c.knot_sd = knot_sd;
                out.push_back(c);
              }
            }
          }
        }
      }
    }
  }
  return out;
}

LogisticMixing calibrate_coefficients(const SimCondition& cond, std::uint64_t seed, int draws) {
  const int k = cond.classes;
  const int q = cond.covariates;
  Eigen::MatrixXd coef = Eigen::MatrixXd::Zero(k - 1, q + 1);
  coef.rightCols(q).setConstant(cond.covariate_slope);
  const auto target = cond.target_shares();
  const bool balanced = std::all_of(target.begin(), target.end(), [&](double s) { return near(s, target[0]); });
  if (k == 2 && balanced) return LogisticMixing{coef};  // symmetric covariates: zero intercept is exact
  if (q == 0 || cond.covariate_slope == 0.0) {
    for (int r = 1; r < k; ++r) coef(r - 1, 0) = std::log(target[static_cast<std::size_t>(r)] / target[0]);
    return LogisticMixing{coef};
  }
  if (draws < 1) throw std::invalid_argument("calibration needs at least one draw");

  Rng rng = make_rng(seed, kCalibrationStream);
  std::normal_distribution<double> normal;
  Eigen::MatrixXd x(draws, q);
  for (int i = 0; i < draws; ++i) {
    for (int c = 0; c < q; ++c) x(i, c) = normal(rng);
  }
  for (int r = 1; r < k; ++r) coef(r - 1, 0) = std::log(target[static_cast<std::size_t>(r)] / target[0]);
  // Fixed-point iteration on the intercepts until the Monte Carlo marginal
  // shares hit the target ratio.
  for (int iter = 0; iter < 500; ++iter) {
    Eigen::VectorXd shares = Eigen::VectorXd::Zero(k);
    const Eigen::MatrixXd xt = x.transpose();
    for (int i = 0; i < draws; ++i) shares += class_probs(coef, xt.col(i).data(), q);
    shares /= static_cast<double>(draws);
    double worst = 0.0;
    for (int r = 1; r < k; ++r) {
      const double step = std::log(target[static_cast<std::size_t>(r)] / target[0]) - std::log(shares[r] / shares[0]);
      coef(r - 1, 0) += step;
      worst = std::max(worst, std::abs(step));
    }
    if (worst < 1e-10) break;
  }
  return LogisticMixing{coef};
}

LabelDraw generate_labels(int n, int covariates, const LogisticMixing& beta, Rng& rng) {
  if (beta.covariate_count() != covariates) {
    throw std::invalid_argument("coefficient columns do not match the covariate count");
  }
  if (n < 0) throw std::invalid_argument("n must be non-negative");
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  LabelDraw out;
  out.covariates.resize(n, covariates);
  out.labels.resize(static_cast<std::size_t>(n));
  std::vector<double> x(static_cast<std::size_t>(covariates));
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < covariates; ++c) {
      x[static_cast<std::size_t>(c)] = normal(rng);
      out.covariates(i, c) = x[static_cast<std::size_t>(c)];
    }
    const Eigen::VectorXd p = class_probs(beta.coefficients, x.data(), covariates);
    const double u = unif(rng);
    int label = static_cast<int>(p.size()) - 1;
    double cum = 0.0;
    for (Eigen::Index k = 0; k < p.size(); ++k) {
      cum += p[k];
      if (u < cum) {
        label = static_cast<int>(k);
        break;
      }
    }
    out.labels[static_cast<std::size_t>(i)] = label;
  }
  return out;
}

LongitudinalDataset generate_dataset(const SimCondition& cond, const LogisticMixing& beta, Rng& rng) {
  cond.validate();
  if (beta.class_count() != cond.classes) throw std::invalid_argument("coefficients do not match the class count");
  const auto means = cond.class_means();
  Eigen::SelfAdjointEigenSolver<Matrix3> es(cond.growth_cov);
  const Matrix3 root = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();

  LabelDraw draw = generate_labels(cond.n, cond.covariates, beta, rng);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unif(-cond.jitter, cond.jitter);
  const double sigma = std::sqrt(cond.residual_var);

  LongitudinalDataset data;
  for (int c = 0; c < cond.covariates; ++c) data.covariate_names.push_back("x" + std::to_string(c + 1));
  data.individuals.reserve(static_cast<std::size_t>(cond.n));
  for (int i = 0; i < cond.n; ++i) {
    const int k = draw.labels[static_cast<std::size_t>(i)];
    Vector3 z(normal(rng), normal(rng), normal(rng));
    const Vector3 eta = means[static_cast<std::size_t>(k)] + root * z;
    double knot = cond.knots[static_cast<std::size_t>(k)];
    if (cond.knot_sd > 0.0) knot += cond.knot_sd * normal(rng);

    Individual p;
    p.id = std::to_string(i + 1);
    p.label = k;
    for (int c = 0; c < cond.covariates; ++c) p.covariates.push_back(draw.covariates(i, c));
    for (int j = 0; j < cond.waves; ++j) {
      const double t = cond.jitter > 0.0 ? j + unif(rng) : static_cast<double>(j);
      const double mean = t <= knot ? eta[0] + eta[1] * t : eta[0] + eta[1] * knot + eta[2] * (t - knot);
      p.times.push_back(t);
      p.outcomes.push_back(mean + (sigma > 0.0 ? sigma * normal(rng) : 0.0));
    }
    data.individuals.push_back(std::move(p));
  }
  return data;
}

Eigen::MatrixXi cross_tabulate(const std::vector<int>& truth, const std::vector<int>& assigned, int classes) {
  if (truth.size() != assigned.size()) throw std::invalid_argument("label vectors differ in length");
  Eigen::MatrixXi tab = Eigen::MatrixXi::Zero(classes, classes);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= classes || assigned[i] < 0 || assigned[i] >= classes) {
      throw std::invalid_argument("label out of range");
    }
    ++tab(truth[i], assigned[i]);
  }
  return tab;
}

std::vector<int> best_diagonal_permutation(const Eigen::MatrixXi& tab) {
  const auto k = static_cast<int>(tab.rows());
  std::vector<int> perm(static_cast<std::size_t>(k));
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<int> best = perm;
  long long best_score = -1;
  do {
    long long score = 0;
    for (int c = 0; c < k; ++c) score += tab(perm[static_cast<std::size_t>(c)], c);
    if (score > best_score) {
      best_score = score;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

std::vector<int> column_maxima_permutation(const Eigen::MatrixXi& tab) {
  if (tab.rows() != tab.cols() || tab.rows() == 0) throw std::invalid_argument("cross-tabulation must be square");
  const auto k = static_cast<int>(tab.rows());
  std::vector<int> perm(static_cast<std::size_t>(k));
  std::vector<bool> used(static_cast<std::size_t>(k), false);
  bool valid = true;
  for (int c = 0; c < k; ++c) {
    Eigen::Index r = 0;
    tab.col(c).maxCoeff(&r);
    perm[static_cast<std::size_t>(c)] = static_cast<int>(r);
    if (used[static_cast<std::size_t>(r)]) valid = false;
    used[static_cast<std::size_t>(r)] = true;
  }
  return valid ? perm : best_diagonal_permutation(tab);
}

FitResult apply_permutation(const FitResult& fit, const std::vector<int>& perm) {
  const int k_count = fit.classes;
  if (static_cast<int>(perm.size()) != k_count) throw std::invalid_argument("permutation has the wrong length");
  std::vector<int> inv(static_cast<std::size_t>(k_count), -1);
  for (int c = 0; c < k_count; ++c) {
    const int t = perm[static_cast<std::size_t>(c)];
    if (t < 0 || t >= k_count || inv[static_cast<std::size_t>(t)] >= 0) {
      throw std::invalid_argument("not a permutation");
    }
    inv[static_cast<std::size_t>(t)] = c;
  }
  const auto from = [&](int j) { return inv[static_cast<std::size_t>(j)]; };

  FitResult out = fit;
  for (int j = 0; j < k_count && !fit.model.classes.empty(); ++j) {
    out.model.classes[static_cast<std::size_t>(j)] = fit.model.classes[static_cast<std::size_t>(from(j))];
  }
  for (int j = 0; j < k_count && !fit.mixing_proportions.empty(); ++j) {
    out.mixing_proportions[static_cast<std::size_t>(j)] = fit.mixing_proportions[static_cast<std::size_t>(from(j))];
  }
  if (fit.posterior.cols() == k_count) {
    for (int j = 0; j < k_count; ++j) out.posterior.col(j) = fit.posterior.col(from(j));
  }
  for (auto& l : out.labels) l = perm[static_cast<std::size_t>(l)];

  if (fit.step == FitStep::Step1) {
    auto* free = std::get_if<FreeMixing>(&out.model.mixing);
    if (free != nullptr && static_cast<int>(free->proportions.size()) == k_count) {
      const auto& old = std::get<FreeMixing>(fit.model.mixing).proportions;
      for (int j = 0; j < k_count; ++j) free->proportions[static_cast<std::size_t>(j)] = old[static_cast<std::size_t>(from(j))];
    }
    // Reported blocks of 12 entries per class.
    auto permute_reported = [&](const std::vector<ReportedParam>& src, const Eigen::MatrixXd& cov,
                                std::vector<ReportedParam>& dst, Eigen::MatrixXd& dst_cov) {
      if (src.empty()) return;
      const int per = static_cast<int>(src.size()) / k_count;
      std::vector<int> idx;
      for (int j = 0; j < k_count; ++j) {
        for (int m = 0; m < per; ++m) idx.push_back(from(j) * per + m);
      }
      for (std::size_t i = 0; i < idx.size(); ++i) {
        dst[i] = src[static_cast<std::size_t>(idx[i])];
        dst[i].class_index = static_cast<int>(i) / per;
      }
      if (cov.rows() == static_cast<Eigen::Index>(idx.size())) {
        for (std::size_t a = 0; a < idx.size(); ++a) {
          for (std::size_t b = 0; b < idx.size(); ++b) dst_cov(a, b) = cov(idx[a], idx[b]);
        }
      }
    };
    permute_reported(fit.original, fit.original_cov, out.original, out.original_cov);
    permute_reported(fit.reparameterized, fit.reparameterized_cov, out.reparameterized, out.reparameterized_cov);
    const auto per = ParamLayout::kPerClass;
    if (fit.unconstrained.size() == per * k_count + k_count - 1) {
      Eigen::VectorXd logits(k_count);
      logits[0] = 0.0;
      for (int c = 1; c < k_count; ++c) logits[c] = fit.unconstrained[per * k_count + c - 1];
      for (int j = 0; j < k_count; ++j) {
        out.unconstrained.segment(per * j, per) = fit.unconstrained.segment(per * from(j), per);
      }
      for (int j = 1; j < k_count; ++j) out.unconstrained[per * k_count + j - 1] = logits[from(j)] - logits[from(0)];
    }
    return out;
  }

  // Step 2: new logit row j equals old row from(j) minus old row from(0),
  // with the reference row identically zero.
  const auto* logistic = std::get_if<LogisticMixing>(&fit.model.mixing);
  if (logistic == nullptr) return out;
  const auto width = logistic->coefficients.cols();
  const auto dim = (k_count - 1) * width;
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(dim, dim);
  for (int j = 1; j < k_count; ++j) {
    for (Eigen::Index c = 0; c < width; ++c) {
      const auto row = (j - 1) * width + c;
      if (from(j) > 0) a(row, (from(j) - 1) * width + c) += 1.0;
      if (from(0) > 0) a(row, (from(0) - 1) * width + c) -= 1.0;
    }
  }
  Eigen::VectorXd b(dim);
  for (int r = 0; r < k_count - 1; ++r) b.segment(r * width, width) = logistic->coefficients.row(r).transpose();
  const Eigen::VectorXd nb = a * b;
  Eigen::MatrixXd coef(k_count - 1, width);
  for (int r = 0; r < k_count - 1; ++r) coef.row(r) = nb.segment(r * width, width).transpose();
  out.model.mixing = LogisticMixing{coef};
  if (fit.unconstrained.size() == dim) out.unconstrained = nb;
  if (fit.coefficient_cov.rows() == dim) out.coefficient_cov = a * fit.coefficient_cov * a.transpose();
  if (static_cast<Eigen::Index>(fit.coefficients.size()) == dim) {
    for (Eigen::Index i = 0; i < dim; ++i) {
      auto& p = out.coefficients[static_cast<std::size_t>(i)];
      p.name = fit.coefficients[static_cast<std::size_t>(i % width)].name;
      p.class_index = static_cast<int>(i / width) + 1;
      p.value = nb[i];
      const double v = out.coefficient_cov.rows() == dim ? out.coefficient_cov(i, i) : kNaN;
      p.se = fit.se_available && v >= 0.0 ? std::sqrt(v) : kNaN;
      p.ci = wald_interval(p.value, p.se, fit.ci_level);
    }
  }
  return out;
}

Relabeling detect_and_relabel(const FitResult& fit, const std::vector<int>& truth) {
  Relabeling r;
  r.permutation = column_maxima_permutation(cross_tabulate(truth, fit.labels, fit.classes));
  for (std::size_t c = 0; c < r.permutation.size(); ++c) {
    if (r.permutation[c] != static_cast<int>(c)) r.switched = true;
  }
  r.fit = r.switched ? apply_permutation(fit, r.permutation) : fit;
  return r;
}

std::vector<ParameterMetrics> performance_metrics(const Eigen::MatrixXd& estimates, const Eigen::VectorXd& truth,
                                                  const Eigen::MatrixXd& lower, const Eigen::MatrixXd& upper,
                                                  const std::vector<std::string>& names) {
  const auto s = estimates.rows();
  const auto p = estimates.cols();
  if (s < 2) throw std::invalid_argument("performance metrics need at least 2 replications");
  if (truth.size() != p || lower.rows() != s || upper.rows() != s || lower.cols() != p || upper.cols() != p ||
      static_cast<Eigen::Index>(names.size()) != p) {
    throw std::invalid_argument("performance metric inputs have inconsistent shapes");
  }
  std::vector<ParameterMetrics> out;
  for (Eigen::Index j = 0; j < p; ++j) {
    ParameterMetrics m;
    m.name = names[static_cast<std::size_t>(j)];
    m.truth = truth[j];
    double sum = 0.0;
    double sq_err = 0.0;
    for (Eigen::Index r = 0; r < s; ++r) {
      sum += estimates(r, j);
      sq_err += (estimates(r, j) - m.truth) * (estimates(r, j) - m.truth);
    }
    m.mean_estimate = sum / static_cast<double>(s);
    double ss = 0.0;
    for (Eigen::Index r = 0; r < s; ++r) ss += (estimates(r, j) - m.mean_estimate) * (estimates(r, j) - m.mean_estimate);
    const double variance = ss / static_cast<double>(s - 1);
    m.bias = m.mean_estimate - m.truth;
    m.empirical_se = std::sqrt(variance);
    m.rmse = std::sqrt(sq_err / static_cast<double>(s));
    m.relative_available = m.truth != 0.0;
    m.relative_bias = m.relative_available ? m.bias / m.truth : kNaN;
    m.relative_rmse = m.relative_available ? m.rmse / m.truth : kNaN;
    int covered = 0;
    for (Eigen::Index r = 0; r < s; ++r) {
      if (std::isnan(lower(r, j)) || std::isnan(upper(r, j))) continue;
      ++m.intervals;
      if (lower(r, j) <= m.truth && m.truth <= upper(r, j)) ++covered;
    }
    m.coverage = m.intervals > 0 ? static_cast<double>(covered) / m.intervals : kNaN;
    m.mc_se = monte_carlo_se(variance, static_cast<int>(s));
    out.push_back(std::move(m));
  }
  return out;
}

double monte_carlo_se(double variance, int replications) {
  if (replications < 2) throw std::invalid_argument("Monte Carlo SE needs at least 2 replications");
  if (variance < 0.0) throw std::invalid_argument("variance must be non-negative");
  return std::sqrt(variance / replications);
}

std::pair<std::vector<std::string>, Eigen::VectorXd> true_parameters(const SimCondition& cond,
                                                                    const LogisticMixing& beta) {
  const int k = cond.classes;
  const auto means = cond.class_means();
  const auto shares = cond.target_shares();
  const ReportedLayout layout = reported_layout(k, Frame::Original);
  std::vector<std::string> names;
  std::vector<double> values;
  for (int c = 0; c < k; ++c) {
    const Vector3& m = means[static_cast<std::size_t>(c)];
    const Matrix3& g = cond.growth_cov;
    const double v[12] = {m[0],    m[1],    m[2],    cond.knots[static_cast<std::size_t>(c)],
                          g(0, 0), g(0, 1), g(0, 2), g(1, 1),
                          g(1, 2), g(2, 2), cond.residual_var, shares[static_cast<std::size_t>(c)]};
    for (int j = 0; j < 12; ++j) {
      names.push_back("class" + std::to_string(c + 1) + "." + layout.names[static_cast<std::size_t>(12 * c + j)]);
      values.push_back(v[j]);
    }
  }
  for (int r = 0; r < k - 1; ++r) {
    for (Eigen::Index c = 0; c < beta.coefficients.cols(); ++c) {
      names.push_back("class" + std::to_string(r + 2) + ".beta." + (c == 0 ? "intercept" : "x" + std::to_string(c)));
      values.push_back(beta.coefficients(r, c));
    }
  }
  return {names, Eigen::Map<Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()))};
}

ReplicationRecord run_replication(const SimCondition& cond, const LogisticMixing& beta, int index,
                                  std::uint64_t seed, const FitOptions& fit) {
  ReplicationRecord rec;
  rec.index = index;
  rec.seed = seed;
  try {
    Rng rng = make_rng(seed, kDataStream);
    const LongitudinalDataset data = generate_dataset(cond, beta, rng);
    std::vector<int> truth;
    for (const auto& p : data.individuals) truth.push_back(*p.label);

    FitOptions fo = fit;
    fo.seed = derive_seed(seed, kFitStream);
    const FitResult s1 = fit_step1(data, cond.classes, fo);
    rec.step1_status = s1.status;
    rec.step1_attempts = s1.attempts;
    if (!s1.converged()) {
      rec.message = "step 1: " + s1.message;
      return rec;
    }
    const Relabeling rel = detect_and_relabel(s1, truth);
    rec.switched = rel.switched;
    const FitResult s2 = fit_step2(data, rel.fit, fo);
    rec.step2_status = s2.status;
    rec.step2_attempts = s2.attempts;
    if (!s2.converged()) {
      rec.message = "step 2: " + s2.message;
      return rec;
    }
    rec.accuracy = accuracy(rel.fit.labels, truth);
    rec.loglik = rel.fit.loglik;
    const auto total = rel.fit.original.size() + s2.coefficients.size();
    rec.estimates.resize(static_cast<Eigen::Index>(total));
    rec.se.resize(rec.estimates.size());
    rec.lower.resize(rec.estimates.size());
    rec.upper.resize(rec.estimates.size());
    Eigen::Index i = 0;
    for (const auto* list : {&rel.fit.original, &s2.coefficients}) {
      for (const auto& p : *list) {
        rec.estimates[i] = p.value;
        rec.se[i] = p.se;
        rec.lower[i] = p.ci.available ? p.ci.lower : kNaN;
        rec.upper[i] = p.ci.available ? p.ci.upper : kNaN;
        ++i;
      }
    }
    rec.converged = true;
    rec.message = "converged";
  } catch (const std::exception& e) {
    rec.converged = false;
    rec.message = std::string("error: ") + e.what();
  }
  return rec;
}

MetricReport run_condition(const SimCondition& cond, const RunOptions& options) {
  cond.validate();
  if (options.replications < 1) throw std::invalid_argument("need at least one replication");
  MetricReport report;
  report.condition = cond;
  report.seed = options.seed;
  report.warnings = check_condition(cond);
  const LogisticMixing beta = calibrate_coefficients(cond, options.seed);
  std::tie(report.names, report.truth) = true_parameters(cond, beta);

  const int target = options.replications;
  const int cap = options.max_replications > 0 ? options.max_replications : 20 * target + 50;
  std::vector<std::optional<ReplicationRecord>> records;
  std::vector<int> used;

  while (true) {
    // Scan the computed prefix in index order.
    used.clear();
    int converged_first50 = 0;
    int last = -1;
    for (std::size_t i = 0; i < records.size() && static_cast<int>(used.size()) < target; ++i) {
      if (records[i]->converged) used.push_back(static_cast<int>(i));
      last = static_cast<int>(i);
    }
    for (std::size_t i = 0; i < records.size() && i < 50; ++i) converged_first50 += records[i]->converged ? 1 : 0;
    if (static_cast<int>(used.size()) == target) {
      report.attempted = last + 1;
      break;
    }
    if (records.size() >= 50 && converged_first50 < 5) {
      throw std::runtime_error(cond.label() + ": convergence rate below 10% after 50 attempts (" +
                               std::to_string(converged_first50) + "/50); first failure: " +
                               records[0]->message);
    }
    if (static_cast<int>(records.size()) >= cap) {
      throw std::runtime_error(cond.label() + ": only " + std::to_string(used.size()) + " of " +
                               std::to_string(target) + " replications converged in " + std::to_string(cap) +
                               " attempts");
    }
    const int start = static_cast<int>(records.size());
    int batch = target - static_cast<int>(used.size());
    if (start < 50) batch = std::max(batch, std::min(50 - start, 2 * batch));
    const int threads = options.threads > 0 ? options.threads : omp_get_max_threads();
    batch = std::max(batch, threads);
    batch = std::min(batch, cap - start);
    records.resize(static_cast<std::size_t>(start + batch));
#pragma omp parallel for schedule(dynamic, 1) num_threads(threads)
    for (int i = start; i < start + batch; ++i) {
      records[static_cast<std::size_t>(i)] =
          run_replication(cond, beta, i, derive_seed(options.seed, static_cast<std::uint64_t>(i)), options.fit);
    }
  }

  report.converged = target;
  for (int i = 0; i < report.attempted; ++i) {
    const ReplicationRecord& rec = *records[static_cast<std::size_t>(i)];
    if (!rec.converged) report.failures.emplace_back(i, rec.message);
  }
  const auto p = report.truth.size();
  Eigen::MatrixXd est(target, p), lo(target, p), hi(target, p);
  double acc = 0.0;
  for (int r = 0; r < target; ++r) {
    const ReplicationRecord& rec = *records[static_cast<std::size_t>(used[static_cast<std::size_t>(r)])];
    if (rec.estimates.size() != p) throw std::logic_error("replication estimate vector has the wrong length");
    est.row(r) = rec.estimates.transpose();
    lo.row(r) = rec.lower.transpose();
    hi.row(r) = rec.upper.transpose();
    acc += rec.accuracy;
    report.replications.push_back(rec);
  }
  report.mean_accuracy = acc / target;
  if (target >= 2) report.parameters = performance_metrics(est, report.truth, lo, hi, report.names);
  return report;
}

}  // namespace bsgmm
