#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <utility>
#include <vector>

namespace stro {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Probability rows are accepted when they sum to one within this tolerance
/// and are then renormalized exactly.
inline constexpr double kProbabilityTolerance = 1e-12;

/// Finite discounted MDP (S, A, P, r, rho0, gamma) with exact dynamics.
///
/// Transitions are stored per action as an S x S row-stochastic matrix so that
/// `transition(a)(s, s')` is P(s' | s, a). Construction validates every
/// invariant and throws std::invalid_argument on violation.
class Mdp {
 public:
  Mdp(std::vector<MatrixXd> transitions, MatrixXd reward, VectorXd initial_dist,
      double discount);

  Index n_states() const { return reward_.rows(); }
  Index n_actions() const { return reward_.cols(); }

  const MatrixXd& transition(Index action) const { return transitions_[action]; }
  double p(Index s, Index a, Index next) const { return transitions_[a](s, next); }
  const MatrixXd& reward() const { return reward_; }
  const VectorXd& initial_dist() const { return initial_dist_; }
  double discount() const { return discount_; }

 private:
  std::vector<MatrixXd> transitions_;
  MatrixXd reward_;
  VectorXd initial_dist_;
  double discount_;
};

/// Stochastic policy table pi(a|s), rows validated and renormalized.
class TabularPolicy {
 public:
  explicit TabularPolicy(MatrixXd probs);

  static TabularPolicy uniform(Index n_states, Index n_actions);
  static TabularPolicy deterministic(const std::vector<Index>& actions, Index n_actions);
  /// Row-wise softmax of a logit table.
  static TabularPolicy softmax(const MatrixXd& logits);

  const MatrixXd& probs() const { return probs_; }
  double operator()(Index s, Index a) const { return probs_(s, a); }
  Index n_states() const { return probs_.rows(); }
  Index n_actions() const { return probs_.cols(); }

 private:
  MatrixXd probs_;
};

/// Exact evaluation of a policy on an MDP.
struct EvalResult {
  VectorXd v;      ///< V_pi(s)
  MatrixXd q;      ///< Q_pi(s, a)
  MatrixXd adv;    ///< A_pi(s, a) = Q - V
  VectorXd visit;  ///< unnormalized discounted visitation rho_pi(s), sums to 1/(1-gamma)
  double eta = 0.0;
};

/// Direct dense solve of (I - gamma P_pi) V = r_pi and rho = rho0 + gamma P_pi^T rho.
EvalResult evaluate(const Mdp& mdp, const TabularPolicy& policy);

/// Expected discounted return of the first `horizon` steps only.
double evaluate_finite_horizon(const Mdp& mdp, const TabularPolicy& policy, int horizon);

/// L_base(candidate) = eta(base) + sum_s rho_base(s) sum_a candidate(a|s) A_base(s, a).
double surrogate_L(const Mdp& mdp, const TabularPolicy& base, const EvalResult& base_eval,
                   const TabularPolicy& candidate);

/// Policy advantage of `candidate` relative to the policy that produced `base_eval`.
double policy_advantage(const Mdp& mdp, const EvalResult& base_eval,
                        const TabularPolicy& candidate);

/// sum_s rho(s) max_a A(s, a); zero exactly at optimal policies.
double optimal_advantage(const Mdp& mdp, const EvalResult& base_eval);

/// Deterministic argmax-advantage policy; ties go to the lowest action index.
TabularPolicy greedy_policy(const EvalResult& base_eval);

/// argmax_a with lowest-index tie breaking.
Index argmax_action(const MatrixXd& table, Index s);

struct ValueIterationResult {
  TabularPolicy policy;
  double eta_star;
  VectorXd v;
  int iterations;
};

/// Value iteration to `tol` in sup norm, polished by exact policy improvement
/// until the greedy policy is stable, so the returned policy is exactly optimal.
ValueIterationResult value_iteration(const Mdp& mdp, double tol = 1e-12);

/// Seeded random MDP: Dirichlet(1) transition rows, U(0,1) rewards, start
/// distribution bounded away from zero.
Mdp random_mdp(Index n_states, Index n_actions, double discount, std::uint64_t seed);

/// Random row-stochastic policy, entries bounded away from zero.
TabularPolicy random_policy(Index n_states, Index n_actions, std::uint64_t seed);

}  // namespace stro
