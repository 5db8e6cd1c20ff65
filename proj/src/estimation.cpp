#include "bsgmm/estimation.hpp"
#include "bsgmm/optimizer.hpp"
#include "bsgmm/rng.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace bsgmm {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kGradientStep = 1e-5;
constexpr double kHessianStep = 1e-4;
constexpr double kJacobianStep = 1e-6;
constexpr std::uint64_t kLabelStream = 0x6c6162656c73ULL;

double sigmoid(double u) {
  if (u >= 0.0) return 1.0 / (1.0 + std::exp(-u));
  const double e = std::exp(u);
  return e / (1.0 + e);
}

double log_sum_exp(const double* v, int k) {
  double m = -kInf;
  for (int j = 0; j < k; ++j) m = std::max(m, v[j]);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (int j = 0; j < k; ++j) s += std::exp(v[j] - m);
  return m + std::log(s);
}

// Negative mean step-1 log-likelihood over the unconstrained layout. The
// gradient reuses the n x K density matrix at x and only recomputes the
// column affected by each perturbed class slot.
class Step1Objective {
 public:
  Step1Objective(const LongitudinalDataset& data, const ParamLayout& layout)
      : data_(data), layout_(layout), n_(static_cast<Eigen::Index>(data.size())), k_(layout.classes()) {}

  double value(const Eigen::VectorXd& x) const {
    Eigen::MatrixXd dens(n_, k_);
    if (!densities(x, dens)) return kInf;
    return objective(dens, log_props(x));
  }

  Eigen::VectorXd gradient(const Eigen::VectorXd& x) const {
    const Eigen::Index p = x.size();
    Eigen::VectorXd g = Eigen::VectorXd::Constant(p, kNaN);
    Eigen::MatrixXd dens(n_, k_);
    if (!densities(x, dens)) return g;
    const Eigen::VectorXd base_logpi = log_props(x);
    const double f0 = objective(dens, base_logpi);

    Eigen::VectorXd xp = x;
    Eigen::VectorXd column(n_);
    for (Eigen::Index j = 0; j < p; ++j) {
      const double h = kGradientStep * std::max(std::abs(x[j]), 1.0);
      const int cls = layout_.slot_class(static_cast<int>(j));
      auto eval = [&](double xj) {
        xp[j] = xj;
        double out = kInf;
        if (cls < 0) {
          out = objective(dens, log_props(xp));
        } else if (class_column(xp, cls, column)) {
          const Eigen::VectorXd saved = dens.col(cls);
          dens.col(cls) = column;
          out = objective(dens, base_logpi);
          dens.col(cls) = saved;
        }
        xp[j] = x[j];
        return out;
      };
      const double fp = eval(x[j] + h);
      const double fm = eval(x[j] - h);
      if (std::isfinite(fp) && std::isfinite(fm)) {
        g[j] = (fp - fm) / (2.0 * h);
      } else if (std::isfinite(fp)) {
        g[j] = (fp - f0) / h;
      } else if (std::isfinite(fm)) {
        g[j] = (f0 - fm) / h;
      }
    }
    return g;
  }

 private:
  bool class_column(const Eigen::VectorXd& x, int k, Eigen::VectorXd& out) const {
    try {
      const auto kernel = kernels::prepare(layout_.unpack_class(x, k));
      kernels::class_log_density_column(data_, kernel, k, std::span<double>(out.data(), static_cast<std::size_t>(n_)));
      return out.allFinite();
    } catch (const std::exception&) {
      return false;
    }
  }

  bool densities(const Eigen::VectorXd& x, Eigen::MatrixXd& dens) const {
    Eigen::VectorXd column(n_);
    for (int k = 0; k < k_; ++k) {
      if (!class_column(x, k, column)) return false;
      dens.col(k) = column;
    }
    return true;
  }

  Eigen::VectorXd log_props(const Eigen::VectorXd& x) const {
    Eigen::VectorXd logits(k_);
    logits[0] = 0.0;
    for (int k = 1; k < k_; ++k) logits[k] = x[layout_.mixing_offset() + k - 1];
    const double lse = log_sum_exp(logits.data(), k_);
    return logits.array() - lse;
  }

  double objective(const Eigen::MatrixXd& dens, const Eigen::VectorXd& logpi) const {
    double total = 0.0;
    std::vector<double> row(static_cast<std::size_t>(k_));
    for (Eigen::Index i = 0; i < n_; ++i) {
      for (int k = 0; k < k_; ++k) row[static_cast<std::size_t>(k)] = dens(i, k) + logpi[k];
      total += log_sum_exp(row.data(), k_);
    }
    const double v = -total / static_cast<double>(n_);
    return std::isfinite(v) ? v : kInf;
  }

  const LongitudinalDataset& data_;
  const ParamLayout& layout_;
  Eigen::Index n_;
  int k_;
};

// Permutes class blocks so that classes appear in ascending knot order and
// re-references the mixing logits to the new first class.
Eigen::VectorXd canonical_order(const ParamLayout& layout, const Eigen::VectorXd& x) {
  const MixtureModel m = layout.unpack(x);
  const std::vector<int> order = knot_order(m);
  const int k_count = layout.classes();
  Eigen::VectorXd out = x;
  Eigen::VectorXd logits(k_count);
  logits[0] = 0.0;
  for (int k = 1; k < k_count; ++k) logits[k] = x[layout.mixing_offset() + k - 1];
  for (int k = 0; k < k_count; ++k) {
    out.segment(layout.class_offset(k), ParamLayout::kPerClass) =
        x.segment(layout.class_offset(order[static_cast<std::size_t>(k)]), ParamLayout::kPerClass);
  }
  for (int k = 1; k < k_count; ++k) {
    out[layout.mixing_offset() + k - 1] = logits[order[static_cast<std::size_t>(k)]] - logits[order[0]];
  }
  return out;
}

std::vector<ReportedParam> make_reported(const ReportedLayout& names, const Eigen::VectorXd& values,
                                         const Eigen::MatrixXd& cov, bool have_cov, double level) {
  std::vector<ReportedParam> out;
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    ReportedParam r;
    r.name = names.names[static_cast<std::size_t>(i)];
    r.class_index = names.class_index[static_cast<std::size_t>(i)];
    r.value = values[i];
    r.se = kNaN;
    if (have_cov && cov(i, i) >= 0.0) r.se = std::sqrt(cov(i, i));
    r.ci = wald_interval(r.value, r.se, level);
    out.push_back(std::move(r));
  }
  return out;
}

// Fills a step-1 result from an unconstrained point; the Hessian of the mean
// objective is rescaled to the full-sample observed information.
void finalize_step1(const LongitudinalDataset& data, const ParamLayout& layout, const Step1Objective& obj,
                    const Eigen::VectorXd& x, const FitOptions& options, FitResult& res) {
  const auto n = static_cast<int>(data.size());
  res.step = FitStep::Step1;
  res.classes = layout.classes();
  res.time_range = layout.time_range();
  res.unconstrained = x;
  res.model = layout.unpack(x);
  res.n = n;
  res.free_params = layout.size();

  const Eigen::MatrixXd dens = kernels::class_log_densities(data, res.model.classes);
  const Eigen::MatrixXd logmix = log_mixing_matrix(data, res.model.mixing);
  res.loglik = mixture_loglik(dens, logmix);
  const auto ic = information_criteria(res.loglik, res.free_params, n);
  res.aic = ic.aic;
  res.bic = ic.bic;
  res.posterior = posterior_from_logs(dens, logmix);
  res.labels = classify(res.posterior, derive_seed(options.seed, kLabelStream));
  res.mixing_proportions = std::get<FreeMixing>(res.model.mixing).proportions;

  const Eigen::MatrixXd hess =
      hessian_from_gradient([&](const Eigen::VectorXd& u) { return obj.gradient(u); }, x, kHessianStep) *
      static_cast<double>(n);
  const CovarianceEstimate cu = invert_information(hess);
  res.se_available = cu.available;
  res.se_diagnostic = cu.diagnostic;
  res.ci_level = options.ci_level;

  for (Frame frame : {Frame::Original, Frame::Reparameterized}) {
    const Eigen::VectorXd values = reported_values(res.model, frame);
    Eigen::MatrixXd cov = Eigen::MatrixXd::Constant(values.size(), values.size(), kNaN);
    if (cu.available) {
      const Eigen::MatrixXd jac = numeric_jacobian(
          [&](const Eigen::VectorXd& u) { return reported_values(layout.unpack(u), frame); }, x, kJacobianStep);
      cov = jac * cu.cov * jac.transpose();
      cov = 0.5 * (cov + cov.transpose());
    }
    auto params = make_reported(reported_layout(res.classes, frame), values, cov, cu.available, options.ci_level);
    if (frame == Frame::Original) {
      res.original = std::move(params);
      res.original_cov = std::move(cov);
    } else {
      res.reparameterized = std::move(params);
      res.reparameterized_cov = std::move(cov);
    }
  }
}

std::string format_number(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

}  // namespace

std::string to_string(FitStatus status) {
  switch (status) {
    case FitStatus::Converged:
      return "converged";
    case FitStatus::Failed:
      return "failed";
    case FitStatus::NonIdentified:
      return "nonidentified";
  }
  return "unknown";
}

ParamLayout::ParamLayout(int classes, std::pair<double, double> time_range) : classes_(classes), range_(time_range) {
  if (classes < 1) throw std::invalid_argument("class count must be at least 1");
  if (!(time_range.first < time_range.second)) throw std::invalid_argument("time range must have positive length");
}

std::string ParamLayout::slot_name(int j) const {
  static const char* const names[kPerClass] = {"mean_at_knot", "mean_slope", "mean_half_diff", "chol_log00",
                                               "chol10",       "chol_log11", "chol20",         "chol21",
                                               "chol_log22",   "log_theta",  "knot_logit"};
  if (j < 0 || j >= size()) throw std::out_of_range("parameter slot out of range");
  const int k = slot_class(j);
  if (k < 0) return "logit" + std::to_string(j - mixing_offset() + 2);
  return "class" + std::to_string(k + 1) + "." + names[j - class_offset(k)];
}

double ParamLayout::knot_from_unconstrained(double u) const {
  return range_.first + (range_.second - range_.first) * sigmoid(u);
}

double ParamLayout::knot_to_unconstrained(double knot) const {
  const double p = (knot - range_.first) / (range_.second - range_.first);
  if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("knot must lie strictly inside the time range");
  return std::log(p / (1.0 - p));
}

Eigen::VectorXd ParamLayout::pack(const MixtureModel& model) const {
  if (model.class_count() != classes_) throw std::invalid_argument("model class count does not match the layout");
  const auto* mix = std::get_if<FreeMixing>(&model.mixing);
  if (mix == nullptr || static_cast<int>(mix->proportions.size()) != classes_) {
    throw std::invalid_argument("step-1 layout needs one free proportion per class");
  }
  Eigen::VectorXd x(size());
  for (int k = 0; k < classes_; ++k) {
    const ClassParams r = to_reparameterized(model.classes[static_cast<std::size_t>(k)]);
    validate(r, range_);
    const Matrix3 cov = 0.5 * (r.cov + r.cov.transpose());
    Eigen::LLT<Matrix3> llt(cov);
    if (llt.info() != Eigen::Success) {
      throw std::invalid_argument("class " + std::to_string(k + 1) + ": growth-factor covariance is not positive definite");
    }
    const Matrix3 l = llt.matrixL();
    const int o = class_offset(k);
    x.segment<3>(o) = r.mean;
    x[o + 3] = std::log(l(0, 0));
    x[o + 4] = l(1, 0);
    x[o + 5] = std::log(l(1, 1));
    x[o + 6] = l(2, 0);
    x[o + 7] = l(2, 1);
    x[o + 8] = std::log(l(2, 2));
    x[o + 9] = std::log(r.residual_var);
    x[o + 10] = knot_to_unconstrained(r.knot);
  }
  const double p0 = mix->proportions[0];
  for (int k = 1; k < classes_; ++k) {
    const double pk = mix->proportions[static_cast<std::size_t>(k)];
    if (!(pk > 0.0) || !(p0 > 0.0)) throw std::invalid_argument("class proportions must be positive");
    x[mixing_offset() + k - 1] = std::log(pk / p0);
  }
  return x;
}

ClassParams ParamLayout::unpack_class(const Eigen::VectorXd& x, int k) const {
  const int o = class_offset(k);
  Matrix3 l = Matrix3::Zero();
  l(0, 0) = std::exp(x[o + 3]);
  l(1, 0) = x[o + 4];
  l(1, 1) = std::exp(x[o + 5]);
  l(2, 0) = x[o + 6];
  l(2, 1) = x[o + 7];
  l(2, 2) = std::exp(x[o + 8]);
  ClassParams p;
  p.frame = Frame::Reparameterized;
  p.mean = x.segment<3>(o);
  p.cov = l * l.transpose();
  p.residual_var = std::exp(x[o + 9]);
  p.knot = knot_from_unconstrained(x[o + 10]);
  return p;
}

std::vector<double> ParamLayout::unpack_proportions(const Eigen::VectorXd& x) const {
  std::vector<double> logits(static_cast<std::size_t>(classes_), 0.0);
  for (int k = 1; k < classes_; ++k) logits[static_cast<std::size_t>(k)] = x[mixing_offset() + k - 1];
  const double lse = log_sum_exp(logits.data(), classes_);
  std::vector<double> out;
  for (double l : logits) out.push_back(std::exp(l - lse));
  return out;
}

MixtureModel ParamLayout::unpack(const Eigen::VectorXd& x) const {
  if (x.size() != size()) throw std::invalid_argument("parameter vector has the wrong length");
  MixtureModel m;
  for (int k = 0; k < classes_; ++k) m.classes.push_back(unpack_class(x, k));
  m.mixing = FreeMixing{unpack_proportions(x)};
  return m;
}

InformationCriteria information_criteria(double loglik, int free_params, int n) {
  if (n <= 0) throw std::invalid_argument("sample size must be positive");
  return {-2.0 * loglik + 2.0 * free_params, -2.0 * loglik + free_params * std::log(static_cast<double>(n))};
}

Interval wald_interval(double estimate, double se, double level) {
  if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("confidence level must be in (0, 1)");
  Interval ci;
  if (!std::isfinite(se) || se < 0.0 || !std::isfinite(estimate)) {
    ci.lower = kNaN;
    ci.upper = kNaN;
    return ci;
  }
  const double z = boost::math::quantile(boost::math::normal(), 0.5 + 0.5 * level);
  ci.lower = estimate - z * se;
  ci.upper = estimate + z * se;
  ci.available = true;
  return ci;
}

std::vector<Interval> wald_ci(const FitResult& fit, double level, Frame frame) {
  const auto& params = fit.step == FitStep::Step2 ? fit.coefficients
                       : frame == Frame::Original ? fit.original
                                                  : fit.reparameterized;
  std::vector<Interval> out;
  for (const auto& p : params) out.push_back(wald_interval(p.value, p.se, level));
  return out;
}

CovarianceEstimate invert_information(const Eigen::MatrixXd& hessian) {
  CovarianceEstimate out;
  if (hessian.rows() != hessian.cols() || hessian.size() == 0) {
    out.diagnostic = "information matrix is empty or not square";
    return out;
  }
  if (!hessian.allFinite()) {
    out.diagnostic = "information matrix has non-finite entries";
    return out;
  }
  const Eigen::MatrixXd sym = 0.5 * (hessian + hessian.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  if (es.info() != Eigen::Success) {
    out.diagnostic = "eigen decomposition of the information matrix failed";
    return out;
  }
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().cwiseAbs().maxCoeff();
  if (!(lo > 1e-10 * hi)) {
    out.diagnostic = "information matrix is not positive definite (smallest eigenvalue " + format_number(lo) +
                     ", largest " + format_number(hi) + ")";
    return out;
  }
  out.cov = es.eigenvectors() * es.eigenvalues().cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
  out.cov = 0.5 * (out.cov + out.cov.transpose());
  out.available = true;
  return out;
}

std::vector<int> knot_order(const MixtureModel& model) {
  std::vector<int> order(static_cast<std::size_t>(model.class_count()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return model.classes[static_cast<std::size_t>(a)].knot < model.classes[static_cast<std::size_t>(b)].knot;
  });
  return order;
}

ReportedLayout reported_layout(int classes, Frame /*frame*/) {
  static const char* const names[] = {"eta0",  "eta1",  "eta2",  "knot",  "psi00", "psi01",
                                      "psi02", "psi11", "psi12", "psi22", "theta", "pi"};
  ReportedLayout out;
  for (int k = 0; k < classes; ++k) {
    for (const char* n : names) {
      out.names.emplace_back(n);
      out.class_index.push_back(k);
    }
  }
  return out;
}

Eigen::VectorXd reported_values(const MixtureModel& model, Frame frame) {
  const int k_count = model.class_count();
  Eigen::VectorXd props(k_count);
  if (const auto* free = std::get_if<FreeMixing>(&model.mixing)) {
    for (int k = 0; k < k_count; ++k) props[k] = free->proportions[static_cast<std::size_t>(k)];
  } else {
    props.setConstant(kNaN);
  }
  Eigen::VectorXd out(12 * k_count);
  for (int k = 0; k < k_count; ++k) {
    const ClassParams& src = model.classes[static_cast<std::size_t>(k)];
    const ClassParams c = frame == Frame::Original ? to_original(src) : to_reparameterized(src);
    const int o = 12 * k;
    out.segment<3>(o) = c.mean;
    out[o + 3] = c.knot;
    out[o + 4] = c.cov(0, 0);
    out[o + 5] = c.cov(0, 1);
    out[o + 6] = c.cov(0, 2);
    out[o + 7] = c.cov(1, 1);
    out[o + 8] = c.cov(1, 2);
    out[o + 9] = c.cov(2, 2);
    out[o + 10] = c.residual_var;
    out[o + 11] = props[k];
  }
  return out;
}

FitResult evaluate_step1(const LongitudinalDataset& data, const MixtureModel& model, const FitOptions& options) {
  data.validate();
  const ParamLayout layout(model.class_count(), data.time_range());
  const Step1Objective obj(data, layout);
  FitResult res;
  finalize_step1(data, layout, obj, layout.pack(model), options, res);
  res.attempts = 0;
  res.status = res.se_available ? FitStatus::Converged : FitStatus::Failed;
  res.message = res.se_available ? "evaluated at the supplied parameters" : res.se_diagnostic;
  return res;
}

FitResult fit_step1(const LongitudinalDataset& data, int classes, const FitOptions& options) {
  data.validate();
  if (classes < 1) throw std::invalid_argument("class count must be at least 1");
  const auto n = static_cast<int>(data.size());
  const ParamLayout layout(classes, data.time_range());
  if (n <= layout.size()) {
    throw std::invalid_argument("need more individuals (" + std::to_string(n) + ") than free parameters (" +
                                std::to_string(layout.size()) + ")");
  }
  const Step1Objective obj(data, layout);
  const MixtureModel start = starting_values(data, classes);

  BfgsOptions bopt;
  bopt.gradient_tolerance = options.gradient_tolerance;
  bopt.max_evaluations = options.max_evaluations;

  FitResult res;
  res.step = FitStep::Step1;
  res.classes = classes;
  res.time_range = layout.time_range();
  res.n = n;
  res.free_params = layout.size();
  std::string last;
  Eigen::VectorXd last_x;
  for (int attempt = 1; attempt <= options.max_attempts; ++attempt) {
    res.attempts = attempt;
    Eigen::VectorXd x0;
    try {
      x0 = layout.pack(attempt == 1 ? start : perturb_start(start, layout.time_range(), options.seed, attempt));
    } catch (const std::exception& e) {
      last = std::string("invalid start: ") + e.what();
      continue;
    }
    const BfgsResult b = minimize_bfgs([&](const Eigen::VectorXd& u) { return obj.value(u); },
                                       [&](const Eigen::VectorXd& u) { return obj.gradient(u); }, x0, bopt);
    last_x = b.x;
    if (!b.converged) {
      last = "optimizer: " + b.message;
      continue;
    }
    const Eigen::VectorXd x = canonical_order(layout, b.x);
    FitResult trial;
    finalize_step1(data, layout, obj, x, options, trial);
    if (!trial.se_available) {
      last = trial.se_diagnostic;
      last_x = x;
      continue;
    }
    trial.status = FitStatus::Converged;
    trial.attempts = attempt;
    trial.message = "converged on attempt " + std::to_string(attempt);
    return trial;
  }
  res.status = FitStatus::Failed;
  res.message = "no attempt converged; last: " + last;
  if (last_x.size() == layout.size() && last_x.allFinite()) {
    res.unconstrained = last_x;
    res.model = layout.unpack(last_x);
  }
  return res;
}

namespace {

// Negative mean log-likelihood of the logistic mixing coefficients with the
// class densities held fixed. Coefficients are stacked class by class.
class Step2Objective {
 public:
  Step2Objective(const Eigen::MatrixXd& log_dens, const Eigen::MatrixXd& design)
      : dens_(log_dens), x_(design), k_(static_cast<int>(log_dens.cols())), c_(static_cast<int>(design.cols())) {}

  int size() const { return (k_ - 1) * c_; }

  Eigen::MatrixXd coefficients(const Eigen::VectorXd& b) const {
    Eigen::MatrixXd out(k_ - 1, c_);
    for (int k = 0; k < k_ - 1; ++k) out.row(k) = b.segment(k * c_, c_).transpose();
    return out;
  }

  // n x K log mixing probabilities.
  Eigen::MatrixXd log_mix(const Eigen::VectorXd& b) const {
    const Eigen::MatrixXd coef = coefficients(b);
    Eigen::MatrixXd eta(x_.rows(), k_);
    eta.col(0).setZero();
    eta.rightCols(k_ - 1) = x_ * coef.transpose();
    for (Eigen::Index i = 0; i < eta.rows(); ++i) {
      Eigen::RowVectorXd row = eta.row(i);
      eta.row(i).array() -= log_sum_exp(row.data(), k_);
    }
    return eta;
  }

  double value(const Eigen::VectorXd& b) const {
    const double v = -mixture_loglik(dens_, log_mix(b)) / static_cast<double>(dens_.rows());
    return std::isfinite(v) ? v : kInf;
  }

  Eigen::VectorXd gradient(const Eigen::VectorXd& b) const {
    const Eigen::MatrixXd lm = log_mix(b);
    const Eigen::MatrixXd post = posterior_from_logs(dens_, lm);
    const Eigen::MatrixXd resid = post.rightCols(k_ - 1) - lm.rightCols(k_ - 1).array().exp().matrix();
    Eigen::VectorXd g(size());
    for (int k = 0; k < k_ - 1; ++k) {
      // Serial accumulation in row order.
      for (int c = 0; c < c_; ++c) {
        double s = 0.0;
        for (Eigen::Index i = 0; i < x_.rows(); ++i) s += resid(i, k) * x_(i, c);
        g[k * c_ + c] = -s / static_cast<double>(dens_.rows());
      }
    }
    return g;
  }

 private:
  const Eigen::MatrixXd& dens_;
  const Eigen::MatrixXd& x_;
  int k_;
  int c_;
};

}  // namespace

FitResult fit_step2(const LongitudinalDataset& data, const FitResult& step1, const FitOptions& options) {
  if (step1.step != FitStep::Step1 || !step1.converged()) {
    throw std::invalid_argument("step 2 needs a converged step-1 fit");
  }
  data.validate();
  const int q = static_cast<int>(data.covariate_count());
  if (q < 1) throw std::invalid_argument("step 2 needs at least one covariate");
  const int k_count = step1.classes;
  if (k_count < 2) throw std::invalid_argument("step 2 needs at least two classes");
  const auto n = static_cast<Eigen::Index>(data.size());
  if (static_cast<int>(n) != step1.n) throw std::invalid_argument("data set differs from the step-1 sample");

  Eigen::MatrixXd design(n, q + 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    design(i, 0) = 1.0;
    const auto& cov = data.individuals[static_cast<std::size_t>(i)].covariates;
    for (int c = 0; c < q; ++c) design(i, c + 1) = cov[static_cast<std::size_t>(c)];
  }

  FitResult res;
  res.step = FitStep::Step2;
  res.classes = k_count;
  res.time_range = step1.time_range;
  res.n = static_cast<int>(n);
  res.free_params = (k_count - 1) * (q + 1);

  std::vector<std::string> coef_names{"intercept"};
  for (int c = 0; c < q; ++c) coef_names.push_back(data.covariate_names[static_cast<std::size_t>(c)]);

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  if (qr.rank() < design.cols()) {
    res.status = FitStatus::NonIdentified;
    res.message = "covariate design [1, X] is rank deficient (rank " + std::to_string(qr.rank()) + " of " +
                  std::to_string(design.cols()) + ")";
    res.model.classes = step1.model.classes;
    res.model.mixing = LogisticMixing{Eigen::MatrixXd::Constant(k_count - 1, q + 1, kNaN)};
    return res;
  }

  const Eigen::MatrixXd dens = kernels::class_log_densities(data, step1.model.classes);
  const Step2Objective obj(dens, design);

  Eigen::VectorXd start = Eigen::VectorXd::Zero(obj.size());
  const auto& props = step1.mixing_proportions;
  for (int k = 1; k < k_count; ++k) {
    start[(k - 1) * (q + 1)] = std::log(props[static_cast<std::size_t>(k)] / props[0]);
  }

  BfgsOptions bopt;
  bopt.gradient_tolerance = options.gradient_tolerance;
  bopt.max_evaluations = options.max_evaluations;

  std::string last;
  for (int attempt = 1; attempt <= options.max_attempts; ++attempt) {
    res.attempts = attempt;
    Eigen::VectorXd b0 = start;
    if (attempt > 1) {
      Rng rng = make_rng(derive_seed(options.seed, 2), static_cast<std::uint64_t>(attempt));
      std::uniform_real_distribution<double> u(-0.5, 0.5);
      for (Eigen::Index j = 0; j < b0.size(); ++j) b0[j] += u(rng);
    }
    const BfgsResult b = minimize_bfgs([&](const Eigen::VectorXd& v) { return obj.value(v); },
                                       [&](const Eigen::VectorXd& v) { return obj.gradient(v); }, b0, bopt);
    if (!b.converged) {
      last = "optimizer: " + b.message;
      continue;
    }
    const Eigen::MatrixXd coef = obj.coefficients(b.x);
    res.model.classes = step1.model.classes;
    res.model.mixing = LogisticMixing{coef};
    const Eigen::MatrixXd lm = obj.log_mix(b.x);
    res.loglik = mixture_loglik(dens, lm);
    const auto ic = information_criteria(res.loglik, res.free_params, res.n);
    res.aic = ic.aic;
    res.bic = ic.bic;
    res.posterior = posterior_from_logs(dens, lm);
    res.labels = classify(res.posterior, derive_seed(options.seed, kLabelStream));
    res.mixing_proportions.assign(static_cast<std::size_t>(k_count), 0.0);
    const Eigen::MatrixXd pis = lm.array().exp().matrix();
    for (int k = 0; k < k_count; ++k) {
      double s = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) s += pis(i, k);
      res.mixing_proportions[static_cast<std::size_t>(k)] = s / static_cast<double>(n);
    }
    res.unconstrained = b.x;

    const Eigen::MatrixXd hess =
        hessian_from_gradient([&](const Eigen::VectorXd& v) { return obj.gradient(v); }, b.x, kGradientStep) *
        static_cast<double>(n);
    const CovarianceEstimate cu = invert_information(hess);
    res.se_available = cu.available;
    res.se_diagnostic = cu.diagnostic;
    res.ci_level = options.ci_level;
    res.coefficient_cov =
        cu.available ? cu.cov : Eigen::MatrixXd::Constant(obj.size(), obj.size(), kNaN);

    ReportedLayout names;
    for (int k = 1; k < k_count; ++k) {
      for (const auto& c : coef_names) {
        names.names.push_back(c);
        names.class_index.push_back(k);
      }
    }
    res.coefficients = make_reported(names, b.x, res.coefficient_cov, cu.available, options.ci_level);

    const double largest = b.x.cwiseAbs().maxCoeff();
    if (largest > options.separation_limit) {
      res.status = FitStatus::NonIdentified;
      res.message = "coefficient magnitude " + format_number(largest) + " exceeds " +
                    format_number(options.separation_limit) + ": classes are separated by the covariates";
    } else if (!cu.available) {
      res.status = FitStatus::NonIdentified;
      res.message = cu.diagnostic;
    } else {
      res.status = FitStatus::Converged;
      res.message = "converged on attempt " + std::to_string(attempt);
    }
    return res;
  }
  res.status = FitStatus::Failed;
  res.message = "no attempt converged; last: " + last;
  res.model.classes = step1.model.classes;
  res.model.mixing = LogisticMixing{Eigen::MatrixXd::Constant(k_count - 1, q + 1, kNaN)};
  return res;
}

std::vector<OddsRatio> odds_ratios(const FitResult& step2, double level) {
  if (step2.step != FitStep::Step2) throw std::invalid_argument("odds ratios need a step-2 fit");
  std::vector<OddsRatio> out;
  for (const auto& c : step2.coefficients) {
    if (c.name == "intercept") continue;
    OddsRatio o;
    o.class_index = c.class_index;
    o.coefficient = c.name;
    o.odds_ratio = std::exp(c.value);
    const Interval ci = wald_interval(c.value, c.se, level);
    o.ci.available = ci.available;
    o.ci.lower = std::exp(ci.lower);
    o.ci.upper = std::exp(ci.upper);
    o.excludes_one = ci.available && (o.ci.lower > 1.0 || o.ci.upper < 1.0);
    out.push_back(o);
  }
  return out;
}

ClassSelection select_classes(const LongitudinalDataset& data, const std::vector<int>& class_counts,
                              const FitOptions& options) {
  ClassSelection sel;
  double best = kInf;
  for (int k : class_counts) {
    sel.fits.push_back(fit_step1(data, k, options));
    const FitResult& f = sel.fits.back();
    if (f.converged() && f.bic < best) {
      best = f.bic;
      sel.selected = static_cast<int>(sel.fits.size()) - 1;
    }
  }
  return sel;
}

}  // namespace bsgmm
