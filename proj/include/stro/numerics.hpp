#pragma once

#include <Eigen/Dense>

#include <functional>
#include <vector>

namespace stro {

using Eigen::VectorXd;

using LinearOperator = std::function<VectorXd(const VectorXd&)>;
using ScalarFunction = std::function<double(const VectorXd&)>;
/// Objective returning its value; fills `grad` when non-null.
using DifferentiableFunction = std::function<double(const VectorXd&, VectorXd* grad)>;

struct CgConfig {
  int max_iters = 0;           ///< 0 means 10 * dim
  double residual_tol = 1e-8;  ///< relative to ||b||
  double damping = 0.0;        ///< solves (A + damping I) x = b
};

struct CgResult {
  VectorXd x;
  int iterations = 0;
  double residual_norm = 0.0;
  bool converged = false;
  std::vector<double> residual_history;  ///< ||r_j||, j = 0..iterations
};

/// Conjugate gradient for symmetric positive definite `apply_A`.
/// Throws std::runtime_error if a non-finite value appears.
CgResult conjugate_gradient(const LinearOperator& apply_A, const VectorXd& b,
                            const CgConfig& config = {});

struct LineSearchConfig {
  double tau_armijo = 0.1;
  double backtrack_factor = 0.5;
  int max_backtracks = 20;
  double initial_step = 1.0;
};

struct LineSearchResult {
  double alpha = 0.0;  ///< 0 when no tested step satisfied both conditions
  double L = 0.0;      ///< objective at the accepted point (or at theta when alpha == 0)
  double D = 0.0;      ///< distance at the accepted point (0 when alpha == 0)
  int trials = 0;
};

/// Backtracking search along `direction` for the largest tested step with
///   L(theta + a d) >= L(theta) + tau * a * d^T g   and   D(theta + a d) <= delta.
/// Requires d^T g > 0. Trial points with non-finite values count as failures.
LineSearchResult feasible_line_search(const ScalarFunction& eval_L, const ScalarFunction& eval_D,
                                      const VectorXd& theta, const VectorXd& direction,
                                      const VectorXd& g, double delta,
                                      const LineSearchConfig& config = {});

struct ProjectedGradientConfig {
  int steps = 200;
  double initial_step = 1.0;
  double backtrack_factor = 0.5;
  int max_backtracks = 40;
  double sufficient_increase = 1e-4;
  VectorXd lower_bound;  ///< optional extra per-coordinate floor; empty for none
};

/// Projected gradient ascent on {x : ||x - center||_inf <= radius_inf}
/// (intersected with `lower_bound` when given). The objective never decreases
/// across accepted iterates; infeasible (non-finite) trial values are rejected.
VectorXd projected_gradient_box(const DifferentiableFunction& objective, const VectorXd& center,
                                double radius_inf, const VectorXd& init,
                                const ProjectedGradientConfig& config = {});

/// Central differences with per-coordinate step rel_step * (1 + |x_i|).
VectorXd central_difference_gradient(const ScalarFunction& f, const VectorXd& x,
                                     double rel_step = 1e-6);

/// Hessian-vector product by central differences of an analytic gradient.
VectorXd central_difference_hvp(const std::function<VectorXd(const VectorXd&)>& grad,
                                const VectorXd& x, const VectorXd& v, double step = 1e-5);

/// ||a - b|| / max(||b||, 1): the mixed relative error used by every gradient check.
double relative_error(const VectorXd& a, const VectorXd& b);

}  // namespace stro
