#pragma once

#include <cmath>
#include <limits>

#include <Eigen/Dense>

namespace raildelay::optim {

struct BfgsOptions {
  int max_iterations = 200;
  double gradient_tol = 1e-6;  // infinity norm of the gradient
  double max_step = 5.0;       // cap on a single step's infinity norm
};

struct BfgsResult {
  Eigen::VectorXd x;
  double value = 0.0;
  Eigen::VectorXd gradient;
  bool converged = false;
  int iterations = 0;
};

// BFGS minimizer with backtracking Armijo line search. fg(x, grad) evaluates
// the objective and fills the gradient.
template <typename Fg>
BfgsResult minimize_bfgs(Fg&& fg, Eigen::VectorXd x0, const BfgsOptions& options = {}) {
  const Eigen::Index p = x0.size();
  BfgsResult out;
  out.x = std::move(x0);
  out.gradient.resize(p);
  out.value = fg(out.x, out.gradient);

  Eigen::MatrixXd h_inv = Eigen::MatrixXd::Identity(p, p);
  Eigen::VectorXd grad_new(p);
  int stalled = 0;

  for (out.iterations = 0; out.iterations < options.max_iterations; ++out.iterations) {
    if (out.gradient.cwiseAbs().maxCoeff() < options.gradient_tol) {
      out.converged = true;
      return out;
    }

    Eigen::VectorXd direction = -(h_inv * out.gradient);
    double slope = direction.dot(out.gradient);
    if (!(slope < 0.0)) {  // lost curvature, restart from steepest descent
      h_inv.setIdentity();
      direction = -out.gradient;
      slope = direction.dot(out.gradient);
    }
    const double direction_max = direction.cwiseAbs().maxCoeff();
    if (direction_max > options.max_step) {
      direction *= options.max_step / direction_max;
      slope = direction.dot(out.gradient);
    }

    constexpr double armijo = 1e-4;
    double step = 1.0;
    double value_new = std::numeric_limits<double>::infinity();
    Eigen::VectorXd x_new;
    bool accepted = false;
    for (int backtrack = 0; backtrack < 50; ++backtrack) {
      x_new = out.x + step * direction;
      value_new = fg(x_new, grad_new);
      if (std::isfinite(value_new) && value_new <= out.value + armijo * step * slope) {
        accepted = true;
        break;
      }
      step /= 2.0;
    }
    if (!accepted) return out;  // stalled below line-search resolution
    if (out.value - value_new < 1e-12 * (std::abs(out.value) + 1.0)) {
      if (++stalled >= 3) {
        out.x = x_new;
        out.value = value_new;
        out.gradient = grad_new;
        return out;  // improvements below objective resolution
      }
    } else {
      stalled = 0;
    }

    const Eigen::VectorXd s = x_new - out.x;
    const Eigen::VectorXd y = grad_new - out.gradient;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      const double rho = 1.0 / sy;
      const Eigen::MatrixXd outer =
          Eigen::MatrixXd::Identity(p, p) - rho * s * y.transpose();
      h_inv = outer * h_inv * outer.transpose() + rho * s * s.transpose();
    }
    out.x = x_new;
    out.value = value_new;
    out.gradient = grad_new;
  }
  out.converged = out.gradient.cwiseAbs().maxCoeff() < options.gradient_tol;
  return out;
}

}  // namespace raildelay::optim
