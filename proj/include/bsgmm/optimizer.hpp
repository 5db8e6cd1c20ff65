#pragma once

#include <Eigen/Dense>

#include <functional>
#include <string>

namespace bsgmm {

using ValueFn = std::function<double(const Eigen::VectorXd&)>;
using GradientFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

struct BfgsOptions {
  // Stop when max_j |g_j| * max(|x_j|, 1) falls below this.
  double gradient_tolerance = 1e-5;
  // Budget of objective-value evaluations spent in line searches.
  int max_evaluations = 5000;
  int max_iterations = 2000;
  // Largest step along any coordinate in one iteration.
  double max_step = 2.0;
  std::function<void(int, const Eigen::VectorXd&, double)> on_iteration;
};

struct BfgsResult {
  Eigen::VectorXd x;
  double value = 0.0;
  Eigen::VectorXd gradient;
  int iterations = 0;
  int evaluations = 0;
  int gradient_evaluations = 0;
  bool converged = false;
  std::string message;
};

double scaled_gradient_norm(const Eigen::VectorXd& gradient, const Eigen::VectorXd& x);

// Quasi-Newton minimization with an inverse-Hessian BFGS update and an Armijo
// backtracking line search. Non-finite trial values are treated as +inf.
BfgsResult minimize_bfgs(const ValueFn& f, const GradientFn& grad, Eigen::VectorXd x0, const BfgsOptions& options);

// (f(x + h e_j) - f(x - h e_j)) / 2h with h_j = step * max(|x_j|, 1).
Eigen::VectorXd central_difference_gradient(const ValueFn& f, const Eigen::VectorXd& x, double step);

// Central differences of the gradient, symmetrized.
Eigen::MatrixXd hessian_from_gradient(const GradientFn& grad, const Eigen::VectorXd& x, double step);

// Central-difference Jacobian of a vector map.
Eigen::MatrixXd numeric_jacobian(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& map,
                                 const Eigen::VectorXd& x, double step);

}  // namespace bsgmm
