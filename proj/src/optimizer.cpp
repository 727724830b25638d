#include "llmscale/optimizer.hpp"

#include <cmath>
#include <limits>

#include "llmscale/error.hpp"

namespace llmscale {

Eigen::VectorXd projected_gradient(const Eigen::VectorXd& x, const Eigen::VectorXd& gradient,
                                   const Eigen::VectorXd& lower, const Eigen::VectorXd& upper) {
  Eigen::VectorXd pg = gradient;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if ((x(i) <= lower(i) && gradient(i) > 0.0) || (x(i) >= upper(i) && gradient(i) < 0.0)) pg(i) = 0.0;
  }
  return pg;
}

BoundedMinimizeResult minimize_bounded_bfgs(const Objective& objective, Eigen::VectorXd x0,
                                            const Eigen::VectorXd& lower, const Eigen::VectorXd& upper,
                                            const BoundedMinimizeOptions& options,
                                            const Eigen::MatrixXd* initial_inverse_hessian) {
  const auto n = x0.size();
  auto clamp = [&](const Eigen::VectorXd& v) { return v.cwiseMax(lower).cwiseMin(upper).eval(); };

  BoundedMinimizeResult res;
  res.x = clamp(x0);
  res.gradient.resize(n);
  res.value = objective(res.x, &res.gradient);
  if (!std::isfinite(res.value)) throw DataError("optimizer start point is infeasible");

  const Eigen::MatrixXd identity = Eigen::MatrixXd::Identity(n, n);
  Eigen::MatrixXd h = initial_inverse_hessian ? *initial_inverse_hessian : identity;
  bool h_is_reset = initial_inverse_hessian == nullptr;

  Eigen::VectorXd trial_grad(n);
  for (res.iterations = 0; res.iterations < options.max_iterations; ++res.iterations) {
    const Eigen::VectorXd pg = projected_gradient(res.x, res.gradient, lower, upper);
    res.projected_gradient_norm = pg.cwiseAbs().maxCoeff();
    if (res.projected_gradient_norm <= options.gradient_tolerance) {
      res.converged = true;
      break;
    }

    // Newton-like step on the free variables only.
    Eigen::VectorXd direction = Eigen::VectorXd::Zero(n);
    std::vector<Eigen::Index> free;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (pg(i) != 0.0 || !((res.x(i) <= lower(i)) || (res.x(i) >= upper(i)))) free.push_back(i);
    }
    for (Eigen::Index a : free) {
      double s = 0.0;
      for (Eigen::Index b : free) s -= h(a, b) * res.gradient(b);
      direction(a) = s;
    }
    if (direction.dot(res.gradient) >= 0.0) {
      h = identity;
      h_is_reset = true;
      direction = -pg;
    }

    double step = 1.0;
    bool accepted = false;
    Eigen::VectorXd trial;
    double trial_value = 0.0;
    for (int ls = 0; ls < 60; ++ls) {
      trial = clamp(res.x + step * direction);
      trial_value = objective(trial, &trial_grad);
      if (std::isfinite(trial_value) && trial_value <= res.value + 1e-4 * res.gradient.dot(trial - res.x)) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      if (!h_is_reset) {
        h = identity;
        h_is_reset = true;
        continue;
      }
      res.message = "line search failed";
      break;
    }

    const Eigen::VectorXd s = trial - res.x;
    const Eigen::VectorXd y = trial_grad - res.gradient;
    res.x = trial;
    res.value = trial_value;
    res.gradient = trial_grad;

    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      const double rho = 1.0 / sy;
      const Eigen::MatrixXd left = identity - rho * s * y.transpose();
      h = left * h * left.transpose() + rho * s * s.transpose();
      h_is_reset = false;
    }
  }

  const Eigen::VectorXd pg = projected_gradient(res.x, res.gradient, lower, upper);
  res.projected_gradient_norm = pg.cwiseAbs().maxCoeff();
  if (res.projected_gradient_norm <= options.gradient_tolerance) res.converged = true;
  if (!res.converged && res.message.empty()) res.message = "iteration limit reached";
  for (Eigen::Index i = 0; i < n; ++i) {
    if (res.x(i) <= lower(i)) res.at_lower_bound.push_back(i);
  }
  return res;
}

}  // namespace llmscale
