#include "stro/tabular_tr.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>

namespace stro {

void TrConfig::validate() const {
  if (!(beta0 > 0.0 && beta0 < beta1)) throw std::invalid_argument("TrConfig: need 0 < beta0 < beta1");
  if (!(gamma3 > 0.0 && gamma3 < gamma2 && gamma2 <= 1.0 && gamma1 > 1.0)) {
    throw std::invalid_argument("TrConfig: need 0 < gamma3 < gamma2 <= 1 < gamma1");
  }
  if (!(delta0 > 0.0) || !std::isfinite(delta0)) throw std::invalid_argument("TrConfig: delta0 must be positive");
  if (max_iters < 0) throw std::invalid_argument("TrConfig: max_iters must be nonnegative");
  if (!(tol_Astar > 0.0)) throw std::invalid_argument("TrConfig: tol_Astar must be positive");
}

double weighted_tv(const VectorXd& visit, const TabularPolicy& a, const TabularPolicy& b) {
  const VectorXd tv = 0.5 * (a.probs() - b.probs()).cwiseAbs().rowwise().sum();
  return visit.dot(tv);
}

TabularPolicy solve_tv_subproblem(const Mdp& mdp, const TabularPolicy& base,
                                  const EvalResult& base_eval, double delta) {
  if (!std::isfinite(delta) || delta < 0.0) {
    throw std::invalid_argument("solve_tv_subproblem: delta must be a finite nonnegative number");
  }
  if (base.n_states() != mdp.n_states() || base.n_actions() != mdp.n_actions()) {
    throw std::invalid_argument("solve_tv_subproblem: shape mismatch");
  }
  if (delta == 0.0) return base;

  struct Donor {
    double rate;
    Index state;
    Index action;
    Index target;
  };
  std::vector<Donor> donors;
  const MatrixXd& adv = base_eval.adv;
  for (Index s = 0; s < mdp.n_states(); ++s) {
    const Index best = argmax_action(adv, s);
    for (Index a = 0; a < mdp.n_actions(); ++a) {
      const double rate = adv(s, best) - adv(s, a);
      if (a != best && rate > 0.0 && base(s, a) > 0.0) donors.push_back({rate, s, a, best});
    }
  }
  std::stable_sort(donors.begin(), donors.end(),
                   [](const Donor& x, const Donor& y) { return x.rate > y.rate; });

  MatrixXd probs = base.probs();
  double budget = delta;
  for (const Donor& d : donors) {
    const double weight = base_eval.visit(d.state);
    const double mass = probs(d.state, d.action);
    const double cost = weight * mass;
    const double moved = cost <= budget ? mass : budget / weight;
    probs(d.state, d.action) -= moved;
    probs(d.state, d.target) += moved;
    budget -= cost <= budget ? cost : budget;
    if (budget <= 0.0) break;
  }
  return TabularPolicy(std::move(probs));
}

std::optional<double> tr_ratio(double eta_new, double eta_old, double L_new, double L_old) {
  const double predicted = L_new - L_old;
  if (!(predicted > 0.0)) return std::nullopt;
  return (eta_new - eta_old) / predicted;
}

double radius_factor(double ratio, double beta0, double beta1, double gamma1, double gamma2,
                     double gamma3) {
  if (ratio >= beta1) return gamma1;
  if (ratio >= beta0) return gamma2;
  return gamma3;
}

double model_improvement_bound(double delta, double gamma, double Astar) {
  return std::min(1.0, (1.0 - gamma) * delta) * Astar;
}

double ratio_lower_bound(double delta, double gamma, double p0, double max_abs_adv, double Astar) {
  const double denom = p0 * p0 * (1.0 - gamma) * (1.0 - gamma) * model_improvement_bound(delta, gamma, Astar);
  if (!(denom > 0.0)) return -std::numeric_limits<double>::infinity();
  return 1.0 - 4.0 * max_abs_adv * gamma * delta * delta / denom;
}

TrTrace run(const Mdp& mdp, const TabularPolicy& init, const TrConfig& config) {
  config.validate();
  TabularPolicy policy = init;
  EvalResult eval = evaluate(mdp, policy);
  double delta = config.delta0;

  TrTrace trace{{}, policy, eval.eta, 0.0, false};
  for (int k = 0; k < config.max_iters; ++k) {
    const double astar = optimal_advantage(mdp, eval);
    if (astar <= config.tol_Astar) {
      trace.converged = true;
      break;
    }
    const TabularPolicy trial = solve_tv_subproblem(mdp, policy, eval, delta);
    const double L_old = surrogate_L(mdp, policy, eval, policy);
    // Difference form avoids cancellation against eta.
    const double improvement =
        eval.visit.dot((trial.probs() - policy.probs()).cwiseProduct(eval.adv).rowwise().sum());
    const EvalResult trial_eval = evaluate(mdp, trial);
    const auto ratio = tr_ratio(trial_eval.eta, eval.eta, L_old + improvement, L_old);
    if (!ratio) {
      trace.converged = true;
      break;
    }

    TrRecord rec;
    rec.iter = k;
    rec.eta = eval.eta;
    rec.eta_trial = trial_eval.eta;
    rec.L_improvement = improvement;
    rec.delta = delta;
    rec.ratio = *ratio;
    rec.Astar = astar;
    rec.tv_used = weighted_tv(eval.visit, policy, trial);
    rec.max_abs_adv = eval.adv.cwiseAbs().maxCoeff();
    rec.accepted = *ratio >= config.beta0;
    trace.records.push_back(rec);

    if (rec.accepted) {
      policy = trial;
      eval = trial_eval;
    }
    delta *= radius_factor(*ratio, config.beta0, config.beta1, config.gamma1, config.gamma2,
                           config.gamma3);
  }
  trace.final_policy = policy;
  trace.final_eta = eval.eta;
  trace.final_Astar = optimal_advantage(mdp, eval);
  if (trace.final_Astar <= config.tol_Astar) trace.converged = true;
  return trace;
}

void write_trace_csv(std::ostream& out, const TrTrace& trace) {
  const auto old_precision = out.precision(17);
  out << "iter,eta,delta,ratio,Astar,accepted\n";
  for (const auto& r : trace.records) {
    out << r.iter << ',' << r.eta << ',' << r.delta << ',' << r.ratio << ',' << r.Astar << ','
        << (r.accepted ? 1 : 0) << '\n';
  }
  out.precision(old_precision);
}

std::vector<LemmaCheck> check_lemmas(const Mdp& mdp, const TrTrace& trace) {
  const double gamma = mdp.discount();
  const double p0 = mdp.initial_dist().minCoeff();
  constexpr double kEps = std::numeric_limits<double>::epsilon();
  std::vector<LemmaCheck> checks;
  for (const auto& r : trace.records) {
    LemmaCheck c;
    c.iter = r.iter;
    c.improvement_slack = r.L_improvement - model_improvement_bound(r.delta, gamma, r.Astar);
    c.ratio_slack = r.ratio - ratio_lower_bound(r.delta, gamma, p0, r.max_abs_adv, r.Astar);
    c.feasibility_slack = r.delta - r.tv_used;
    // Rounding in eta_new - eta_old is amplified by 1 / L_improvement.
    const double ratio_tol =
        1e-9 + 64.0 * kEps * (std::abs(r.eta) + std::abs(r.eta_trial)) / r.L_improvement;
    c.ok = c.improvement_slack >= -1e-9 && c.ratio_slack >= -ratio_tol && c.feasibility_slack >= -1e-9;
    checks.push_back(c);
  }
  return checks;
}

}  // namespace stro
