#pragma once

#include "stro/mdp.hpp"

#include <iosfwd>
#include <optional>
#include <vector>

namespace stro {

/// Trust-region parameters for the exact tabular track.
/// Requires 0 < beta0 < beta1 and 0 < gamma3 < gamma2 <= 1 < gamma1.
struct TrConfig {
  double beta0 = 0.1;
  double beta1 = 0.75;
  double gamma1 = 2.0;
  double gamma2 = 0.8;
  double gamma3 = 0.6;
  double delta0 = 0.1;
  int max_iters = 500;
  double tol_Astar = 1e-10;

  void validate() const;
};

/// One outer iteration of the deterministic trust-region loop.
struct TrRecord {
  int iter = 0;
  double eta = 0.0;            ///< eta(pi_k)
  double eta_trial = 0.0;      ///< eta of the subproblem solution
  double L_improvement = 0.0;  ///< L(pi_trial) - L(pi_k)
  double delta = 0.0;          ///< radius used for this iteration
  double ratio = 0.0;
  double Astar = 0.0;          ///< optimal policy advantage at pi_k
  double tv_used = 0.0;        ///< rho-weighted TV distance of the trial point
  double max_abs_adv = 0.0;    ///< max_{s,a} |A_{pi_k}(s, a)|
  bool accepted = false;
};

struct TrTrace {
  std::vector<TrRecord> records;
  TabularPolicy final_policy;
  double final_eta = 0.0;
  double final_Astar = 0.0;
  bool converged = false;
};

/// sum_s rho(s) * D_TV(a(.|s), b(.|s)).
double weighted_tv(const VectorXd& visit, const TabularPolicy& a, const TabularPolicy& b);

/// Exact maximizer of L_base over the rho-weighted TV ball of radius `delta`.
///
/// The problem is a fractional knapsack: at each state the only profitable
/// move shifts mass onto the argmax-advantage action, paying rho(s) of budget
/// per unit of mass at gain rate A(s, a*) - A(s, a). Donor pairs are consumed
/// in order of decreasing rate, ties by (state, action). delta == 0 returns
/// the base policy; negative or non-finite delta throws.
TabularPolicy solve_tv_subproblem(const Mdp& mdp, const TabularPolicy& base,
                                  const EvalResult& base_eval, double delta);

/// (eta_new - eta_old) / (L_new - L_old). An empty result means the predicted
/// improvement is not positive, i.e. the base policy is already optimal.
std::optional<double> tr_ratio(double eta_new, double eta_old, double L_new, double L_old);

/// Radius multiplier branch: gamma1 if r >= beta1, gamma2 if r in [beta0, beta1),
/// gamma3 otherwise.
double radius_factor(double ratio, double beta0, double beta1, double gamma1, double gamma2,
                     double gamma3);

/// Lower bound on the ratio from the TV perturbation bound:
///   1 - 4 Abar gamma delta^2 / (p0^2 (1-gamma)^2 min(1, (1-gamma) delta) Astar).
double ratio_lower_bound(double delta, double gamma, double p0, double max_abs_adv, double Astar);

/// Guaranteed model improvement min(1, (1-gamma) delta) * Astar.
double model_improvement_bound(double delta, double gamma, double Astar);

/// Deterministic trust-region loop: solve, ratio, accept if r >= beta0,
/// radius update; stops once Astar <= tol_Astar or after max_iters.
TrTrace run(const Mdp& mdp, const TabularPolicy& init, const TrConfig& config);

/// Trace CSV: iter,eta,delta,ratio,Astar,accepted
void write_trace_csv(std::ostream& out, const TrTrace& trace);

/// Per-iteration lemma verification for a finished trace.
struct LemmaCheck {
  int iter = 0;
  double improvement_slack = 0.0;  ///< L_improvement - bound (>= -1e-9 required)
  double ratio_slack = 0.0;        ///< ratio - ratio bound
  double feasibility_slack = 0.0;  ///< delta - tv_used (>= -1e-9 required)
  bool ok = true;
};
std::vector<LemmaCheck> check_lemmas(const Mdp& mdp, const TrTrace& trace);

}  // namespace stro
