#include "stro/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace stro {

CgResult conjugate_gradient(const LinearOperator& apply_A, const VectorXd& b,
                            const CgConfig& config) {
  if (!(config.residual_tol > 0.0)) throw std::invalid_argument("CG: residual_tol must be positive");
  if (!b.allFinite()) throw std::runtime_error("CG: non-finite right-hand side");
  const auto dim = static_cast<int>(b.size());
  const int max_iters = config.max_iters > 0 ? config.max_iters : 10 * std::max(dim, 1);
  auto op = [&](const VectorXd& v) {
    VectorXd out = apply_A(v);
    if (config.damping != 0.0) out += config.damping * v;
    return out;
  };

  CgResult res;
  res.x = VectorXd::Zero(b.size());
  VectorXd r = b;
  VectorXd p = r;
  double rr = r.squaredNorm();
  const double target = config.residual_tol * b.norm();
  res.residual_history.push_back(std::sqrt(rr));
  if (std::sqrt(rr) <= target) {
    res.converged = true;
    return res;
  }
  for (int it = 0; it < max_iters; ++it) {
    const VectorXd Ap = op(p);
    const double pAp = p.dot(Ap);
    if (!std::isfinite(pAp)) throw std::runtime_error("CG: non-finite operator output");
    if (pAp <= 0.0) break;  // operator not positive definite along p
    const double alpha = rr / pAp;
    res.x += alpha * p;
    r -= alpha * Ap;
    const double rr_next = r.squaredNorm();
    res.iterations = it + 1;
    res.residual_history.push_back(std::sqrt(rr_next));
    if (std::sqrt(rr_next) <= target) {
      rr = rr_next;
      res.converged = true;
      break;
    }
    p = r + (rr_next / rr) * p;
    rr = rr_next;
  }
  if (!res.x.allFinite()) throw std::runtime_error("CG: non-finite iterate");
  res.residual_norm = std::sqrt(rr);
  return res;
}

LineSearchResult feasible_line_search(const ScalarFunction& eval_L, const ScalarFunction& eval_D,
                                      const VectorXd& theta, const VectorXd& direction,
                                      const VectorXd& g, double delta,
                                      const LineSearchConfig& config) {
  if (!(config.tau_armijo > 0.0 && config.tau_armijo < 1.0)) {
    throw std::invalid_argument("line search: tau must lie in (0, 1)");
  }
  if (!(config.backtrack_factor > 0.0 && config.backtrack_factor < 1.0)) {
    throw std::invalid_argument("line search: backtrack factor must lie in (0, 1)");
  }
  const double slope = direction.dot(g);
  if (!(slope > 0.0)) throw std::invalid_argument("line search: direction is not an ascent direction");
  const double L0 = eval_L(theta);
  if (!std::isfinite(L0)) throw std::runtime_error("line search: non-finite objective at start");

  LineSearchResult res;
  res.L = L0;
  double alpha = config.initial_step;
  for (int j = 0; j <= config.max_backtracks; ++j, alpha *= config.backtrack_factor) {
    ++res.trials;
    const VectorXd candidate = theta + alpha * direction;
    const double D = eval_D(candidate);
    if (!std::isfinite(D) || D > delta) continue;
    const double L = eval_L(candidate);
    if (!std::isfinite(L)) continue;
    if (L >= L0 + config.tau_armijo * alpha * slope) {
      res.alpha = alpha;
      res.L = L;
      res.D = D;
      return res;
    }
  }
  return res;
}

VectorXd projected_gradient_box(const DifferentiableFunction& objective, const VectorXd& center,
                                double radius_inf, const VectorXd& init,
                                const ProjectedGradientConfig& config) {
  if (!(radius_inf >= 0.0)) throw std::invalid_argument("projected gradient: radius must be nonnegative");
  if (init.size() != center.size()) throw std::invalid_argument("projected gradient: size mismatch");
  VectorXd lo = center.array() - radius_inf;
  VectorXd hi = center.array() + radius_inf;
  // Pull rounded bounds inward until |bound - center| <= radius holds in floating point.
  for (Eigen::Index i = 0; i < center.size(); ++i) {
    while (hi(i) - center(i) > radius_inf) hi(i) = std::nextafter(hi(i), center(i));
    while (center(i) - lo(i) > radius_inf) lo(i) = std::nextafter(lo(i), center(i));
  }
  if (config.lower_bound.size() == center.size()) {
    lo = lo.cwiseMax(config.lower_bound);
    hi = hi.cwiseMax(lo);
  }
  auto project = [&](const VectorXd& x) -> VectorXd { return x.cwiseMax(lo).cwiseMin(hi); };

  VectorXd x = project(init);
  VectorXd grad;
  double f = objective(x, &grad);
  if (!std::isfinite(f)) throw std::runtime_error("projected gradient: non-finite objective at start");
  double step = config.initial_step;
  for (int it = 0; it < config.steps; ++it) {
    bool moved = false;
    for (int j = 0; j <= config.max_backtracks; ++j, step *= config.backtrack_factor) {
      const VectorXd y = project(x + step * grad);
      if (y == x) break;
      const double fy = objective(y, nullptr);
      if (std::isfinite(fy) && fy >= f + config.sufficient_increase * grad.dot(y - x)) {
        x = y;
        f = objective(x, &grad);
        moved = true;
        break;
      }
    }
    if (!moved) break;
    step /= config.backtrack_factor;
  }
  return x;
}

VectorXd central_difference_gradient(const ScalarFunction& f, const VectorXd& x, double rel_step) {
  VectorXd grad(x.size());
  VectorXd probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double h = rel_step * (1.0 + std::abs(x(i)));
    probe(i) = x(i) + h;
    const double up = f(probe);
    probe(i) = x(i) - h;
    const double down = f(probe);
    probe(i) = x(i);
    grad(i) = (up - down) / (2.0 * h);
  }
  return grad;
}

VectorXd central_difference_hvp(const std::function<VectorXd(const VectorXd&)>& grad,
                                const VectorXd& x, const VectorXd& v, double step) {
  return (grad(x + step * v) - grad(x - step * v)) / (2.0 * step);
}

double relative_error(const VectorXd& a, const VectorXd& b) {
  return (a - b).norm() / std::max(b.norm(), 1.0);
}

}  // namespace stro
