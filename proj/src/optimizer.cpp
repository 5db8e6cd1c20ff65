#include "bsgmm/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace bsgmm {

namespace {

double coordinate_step(double step, double x) { return step * std::max(std::abs(x), 1.0); }

double finite_or_inf(double v) { return std::isfinite(v) ? v : std::numeric_limits<double>::infinity(); }

}  // namespace

double scaled_gradient_norm(const Eigen::VectorXd& gradient, const Eigen::VectorXd& x) {
  double worst = 0.0;
  for (Eigen::Index j = 0; j < gradient.size(); ++j) {
    worst = std::max(worst, std::abs(gradient[j]) * std::max(std::abs(x[j]), 1.0));
  }
  return worst;
}

BfgsResult minimize_bfgs(const ValueFn& f, const GradientFn& grad, Eigen::VectorXd x0, const BfgsOptions& options) {
  constexpr double kArmijo = 1e-4;
  constexpr int kMaxBacktracks = 40;

  BfgsResult res;
  const Eigen::Index n = x0.size();
  Eigen::VectorXd x = std::move(x0);
  double fx = finite_or_inf(f(x));
  res.evaluations = 1;
  if (!std::isfinite(fx)) {
    res.x = x;
    res.value = fx;
    res.message = "objective is not finite at the starting point";
    return res;
  }
  Eigen::VectorXd g = grad(x);
  res.gradient_evaluations = 1;
  Eigen::MatrixXd h = Eigen::MatrixXd::Identity(n, n);
  bool scaled = false;
  bool reset_once = false;

  while (true) {
    if (!g.allFinite()) {
      res.message = "gradient is not finite";
      break;
    }
    if (scaled_gradient_norm(g, x) < options.gradient_tolerance) {
      res.converged = true;
      res.message = "gradient tolerance reached";
      break;
    }
    if (res.iterations >= options.max_iterations) {
      res.message = "iteration limit reached";
      break;
    }
    if (res.evaluations >= options.max_evaluations) {
      res.message = "evaluation limit reached";
      break;
    }

    Eigen::VectorXd p = -(h * g);
    double slope = g.dot(p);
    if (!(slope < 0.0)) {
      h.setIdentity();
      scaled = false;
      p = -g;
      slope = g.dot(p);
    }
    double alpha = 1.0;
    const double longest = p.cwiseAbs().maxCoeff();
    if (longest * alpha > options.max_step) alpha = options.max_step / longest;

    Eigen::VectorXd x_new;
    double f_new = std::numeric_limits<double>::infinity();
    bool accepted = false;
    for (int bt = 0; bt < kMaxBacktracks && res.evaluations < options.max_evaluations; ++bt) {
      x_new = x + alpha * p;
      f_new = finite_or_inf(f(x_new));
      ++res.evaluations;
      if (f_new <= fx + kArmijo * alpha * slope) {
        accepted = true;
        break;
      }
      // Quadratic interpolation of the step, safeguarded to [0.1, 0.5] alpha.
      double next = 0.5 * alpha;
      if (std::isfinite(f_new)) {
        const double denom = 2.0 * (f_new - fx - alpha * slope);
        if (denom > 0.0) next = std::clamp(-slope * alpha * alpha / denom, 0.1 * alpha, 0.5 * alpha);
      }
      alpha = next;
    }
    if (!accepted) {
      if (!reset_once) {
        // Retry once along steepest descent before giving up.
        reset_once = true;
        h.setIdentity();
        scaled = false;
        continue;
      }
      res.message = "line search failed to decrease the objective";
      break;
    }
    reset_once = false;

    const Eigen::VectorXd g_new = grad(x_new);
    ++res.gradient_evaluations;
    const Eigen::VectorXd s = x_new - x;
    const Eigen::VectorXd y = g_new - g;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm() && sy > 0.0) {
      if (!scaled) {
        h *= sy / y.squaredNorm();
        scaled = true;
      }
      const double rho = 1.0 / sy;
      const Eigen::VectorXd hy = h * y;
      // H+ = (I - rho s y^T) H (I - rho y s^T) + rho s s^T
      h += (rho * rho * y.dot(hy) + rho) * (s * s.transpose()) - rho * (hy * s.transpose() + s * hy.transpose());
    }
    x = x_new;
    fx = f_new;
    g = g_new;
    ++res.iterations;
    if (options.on_iteration) options.on_iteration(res.iterations, x, fx);
  }

  res.x = std::move(x);
  res.value = fx;
  res.gradient = std::move(g);
  return res;
}

Eigen::VectorXd central_difference_gradient(const ValueFn& f, const Eigen::VectorXd& x, double step) {
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd xp = x;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double h = coordinate_step(step, x[j]);
    xp[j] = x[j] + h;
    const double fp = f(xp);
    xp[j] = x[j] - h;
    const double fm = f(xp);
    xp[j] = x[j];
    g[j] = (fp - fm) / (2.0 * h);
  }
  return g;
}

Eigen::MatrixXd hessian_from_gradient(const GradientFn& grad, const Eigen::VectorXd& x, double step) {
  const Eigen::Index n = x.size();
  Eigen::MatrixXd hess(n, n);
  Eigen::VectorXd xp = x;
  for (Eigen::Index j = 0; j < n; ++j) {
    const double h = coordinate_step(step, x[j]);
    xp[j] = x[j] + h;
    const Eigen::VectorXd gp = grad(xp);
    xp[j] = x[j] - h;
    const Eigen::VectorXd gm = grad(xp);
    xp[j] = x[j];
    hess.col(j) = (gp - gm) / (2.0 * h);
  }
  return 0.5 * (hess + hess.transpose());
}

Eigen::MatrixXd numeric_jacobian(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& map,
                                 const Eigen::VectorXd& x, double step) {
  const Eigen::VectorXd base = map(x);
  Eigen::MatrixXd jac(base.size(), x.size());
  Eigen::VectorXd xp = x;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double h = coordinate_step(step, x[j]);
    xp[j] = x[j] + h;
    const Eigen::VectorXd fp = map(xp);
    xp[j] = x[j] - h;
    const Eigen::VectorXd fm = map(xp);
    xp[j] = x[j];
    jac.col(j) = (fp - fm) / (2.0 * h);
  }
  return jac;
}

}  // namespace bsgmm
