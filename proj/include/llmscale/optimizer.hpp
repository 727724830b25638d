#pragma once

#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace llmscale {

/// Objective returning f(x) and, when `gradient` is non-null, filling it.
/// Infeasible points return +infinity.
using Objective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd* gradient)>;

struct BoundedMinimizeOptions {
  double gradient_tolerance = 1e-6;
  int max_iterations = 500;
};

struct BoundedMinimizeResult {
  Eigen::VectorXd x;
  double value = 0.0;
  Eigen::VectorXd gradient;
  double projected_gradient_norm = 0.0;  // infinity norm
  int iterations = 0;
  bool converged = false;
  std::vector<Eigen::Index> at_lower_bound;
  std::string message;
};

/// Projected BFGS for box constraints. Variables sitting on a bound with the
/// gradient pointing outward are frozen for the step; convergence is the
/// infinity norm of the projected gradient. `initial_inverse_hessian`, when
/// given, seeds the BFGS approximation (e.g. an inverse information matrix).
BoundedMinimizeResult minimize_bounded_bfgs(const Objective& objective, Eigen::VectorXd x0,
                                            const Eigen::VectorXd& lower, const Eigen::VectorXd& upper,
                                            const BoundedMinimizeOptions& options,
                                            const Eigen::MatrixXd* initial_inverse_hessian = nullptr);

Eigen::VectorXd projected_gradient(const Eigen::VectorXd& x, const Eigen::VectorXd& gradient,
                                   const Eigen::VectorXd& lower, const Eigen::VectorXd& upper);

}  // namespace llmscale
