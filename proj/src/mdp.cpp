#include "stro/mdp.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace stro {

namespace {

void normalize_row_or_throw(Eigen::Ref<VectorXd> row, const std::string& what) {
  if (!row.allFinite()) throw std::invalid_argument(what + ": non-finite probability");
  if ((row.array() < 0.0).any()) throw std::invalid_argument(what + ": negative probability");
  const double sum = row.sum();
  if (std::abs(sum - 1.0) > kProbabilityTolerance) {
    throw std::invalid_argument(what + ": probabilities sum to " + std::to_string(sum));
  }
  row /= sum;
}

MatrixXd policy_transition(const Mdp& mdp, const TabularPolicy& policy) {
  const Index n = mdp.n_states();
  MatrixXd p_pi = MatrixXd::Zero(n, n);
  for (Index a = 0; a < mdp.n_actions(); ++a) {
    p_pi += policy.probs().col(a).asDiagonal() * mdp.transition(a);
  }
  return p_pi;
}

void check_shapes(const Mdp& mdp, const TabularPolicy& policy) {
  if (policy.n_states() != mdp.n_states() || policy.n_actions() != mdp.n_actions()) {
    throw std::invalid_argument("policy shape does not match MDP");
  }
}

}  // namespace

Mdp::Mdp(std::vector<MatrixXd> transitions, MatrixXd reward, VectorXd initial_dist,
         double discount)
    : transitions_(std::move(transitions)),
      reward_(std::move(reward)),
      initial_dist_(std::move(initial_dist)),
      discount_(discount) {
  const Index n = reward_.rows();
  const Index m = reward_.cols();
  if (n <= 0 || m <= 0) throw std::invalid_argument("MDP needs at least one state and action");
  if (static_cast<Index>(transitions_.size()) != m) {
    throw std::invalid_argument("one transition matrix per action required");
  }
  if (!(discount_ > 0.0 && discount_ < 1.0)) {
    throw std::invalid_argument("discount must lie strictly inside (0, 1)");
  }
  if (!reward_.allFinite()) throw std::invalid_argument("rewards must be finite");
  if (initial_dist_.size() != n) throw std::invalid_argument("initial distribution size mismatch");
  for (Index a = 0; a < m; ++a) {
    auto& p = transitions_[a];
    if (p.rows() != n || p.cols() != n) throw std::invalid_argument("transition shape mismatch");
    for (Index s = 0; s < n; ++s) {
      VectorXd row = p.row(s).transpose();
      normalize_row_or_throw(row, "P[" + std::to_string(s) + "][" + std::to_string(a) + "]");
      p.row(s) = row.transpose();
    }
  }
  normalize_row_or_throw(initial_dist_, "initial distribution");
  if ((initial_dist_.array() <= 0.0).any()) {
    throw std::invalid_argument("initial distribution must be strictly positive");
  }
}

TabularPolicy::TabularPolicy(MatrixXd probs) : probs_(std::move(probs)) {
  if (probs_.rows() <= 0 || probs_.cols() <= 0) throw std::invalid_argument("empty policy");
  for (Index s = 0; s < probs_.rows(); ++s) {
    VectorXd row = probs_.row(s).transpose();
    normalize_row_or_throw(row, "pi(.|" + std::to_string(s) + ")");
    probs_.row(s) = row.transpose();
  }
}

TabularPolicy TabularPolicy::uniform(Index n_states, Index n_actions) {
  return TabularPolicy(MatrixXd::Constant(n_states, n_actions, 1.0 / static_cast<double>(n_actions)));
}

TabularPolicy TabularPolicy::deterministic(const std::vector<Index>& actions, Index n_actions) {
  MatrixXd probs = MatrixXd::Zero(static_cast<Index>(actions.size()), n_actions);
  for (std::size_t s = 0; s < actions.size(); ++s) {
    if (actions[s] < 0 || actions[s] >= n_actions) throw std::invalid_argument("action out of range");
    probs(static_cast<Index>(s), actions[s]) = 1.0;
  }
  return TabularPolicy(std::move(probs));
}

TabularPolicy TabularPolicy::softmax(const MatrixXd& logits) {
  if (!logits.allFinite()) throw std::invalid_argument("logits must be finite");
  MatrixXd probs(logits.rows(), logits.cols());
  for (Index s = 0; s < logits.rows(); ++s) {
    const double shift = logits.row(s).maxCoeff();
    probs.row(s) = (logits.row(s).array() - shift).exp();
    probs.row(s) /= probs.row(s).sum();
  }
  return TabularPolicy(std::move(probs));
}

EvalResult evaluate(const Mdp& mdp, const TabularPolicy& policy) {
  check_shapes(mdp, policy);
  const Index n = mdp.n_states();
  const double gamma = mdp.discount();
  const MatrixXd p_pi = policy_transition(mdp, policy);
  const VectorXd r_pi = (policy.probs().cwiseProduct(mdp.reward())).rowwise().sum();
  const MatrixXd identity = MatrixXd::Identity(n, n);

  EvalResult out;
  Eigen::PartialPivLU<MatrixXd> forward(identity - gamma * p_pi);
  out.v = forward.solve(r_pi);
  Eigen::PartialPivLU<MatrixXd> backward(identity - gamma * p_pi.transpose());
  out.visit = backward.solve(mdp.initial_dist());
  if (!out.v.allFinite() || !out.visit.allFinite()) {
    throw std::runtime_error("evaluate: singular policy system");
  }

  out.q.resize(n, mdp.n_actions());
  for (Index a = 0; a < mdp.n_actions(); ++a) {
    out.q.col(a) = mdp.reward().col(a) + gamma * mdp.transition(a) * out.v;
  }
  out.adv = out.q.colwise() - out.v;
  out.eta = mdp.initial_dist().dot(out.v);
  return out;
}

double evaluate_finite_horizon(const Mdp& mdp, const TabularPolicy& policy, int horizon) {
  check_shapes(mdp, policy);
  if (horizon < 0) throw std::invalid_argument("horizon must be nonnegative");
  const MatrixXd p_pi = policy_transition(mdp, policy);
  const VectorXd r_pi = (policy.probs().cwiseProduct(mdp.reward())).rowwise().sum();
  VectorXd dist = mdp.initial_dist();
  double total = 0.0;
  double weight = 1.0;
  for (int t = 0; t < horizon; ++t) {
    total += weight * dist.dot(r_pi);
    dist = p_pi.transpose() * dist;
    weight *= mdp.discount();
  }
  return total;
}

double policy_advantage(const Mdp& mdp, const EvalResult& base_eval,
                        const TabularPolicy& candidate) {
  if (candidate.n_states() != mdp.n_states() || candidate.n_actions() != mdp.n_actions() ||
      base_eval.adv.rows() != mdp.n_states() || base_eval.adv.cols() != mdp.n_actions()) {
    throw std::invalid_argument("policy_advantage: shape mismatch");
  }
  const VectorXd per_state = candidate.probs().cwiseProduct(base_eval.adv).rowwise().sum();
  return base_eval.visit.dot(per_state);
}

double surrogate_L(const Mdp& mdp, const TabularPolicy& base, const EvalResult& base_eval,
                   const TabularPolicy& candidate) {
  check_shapes(mdp, base);
  return base_eval.eta + policy_advantage(mdp, base_eval, candidate);
}

Index argmax_action(const MatrixXd& table, Index s) {
  Index best = 0;
  for (Index a = 1; a < table.cols(); ++a) {
    if (table(s, a) > table(s, best)) best = a;
  }
  return best;
}

double optimal_advantage(const Mdp& mdp, const EvalResult& base_eval) {
  double total = 0.0;
  for (Index s = 0; s < mdp.n_states(); ++s) {
    total += base_eval.visit(s) * base_eval.adv(s, argmax_action(base_eval.adv, s));
  }
  return total;
}

TabularPolicy greedy_policy(const EvalResult& base_eval) {
  std::vector<Index> actions(static_cast<std::size_t>(base_eval.adv.rows()));
  for (Index s = 0; s < base_eval.adv.rows(); ++s) {
    actions[static_cast<std::size_t>(s)] = argmax_action(base_eval.adv, s);
  }
  return TabularPolicy::deterministic(actions, base_eval.adv.cols());
}

ValueIterationResult value_iteration(const Mdp& mdp, double tol) {
  const Index n = mdp.n_states();
  const double gamma = mdp.discount();
  VectorXd v = VectorXd::Zero(n);
  MatrixXd q(n, mdp.n_actions());
  int iterations = 0;
  constexpr int kMaxSweeps = 100000;
  for (; iterations < kMaxSweeps; ++iterations) {
    for (Index a = 0; a < mdp.n_actions(); ++a) {
      q.col(a) = mdp.reward().col(a) + gamma * mdp.transition(a) * v;
    }
    const VectorXd next = q.rowwise().maxCoeff();
    const double change = (next - v).cwiseAbs().maxCoeff();
    v = next;
    if (change <= tol) break;
  }

  std::vector<Index> actions(static_cast<std::size_t>(n));
  for (Index s = 0; s < n; ++s) actions[static_cast<std::size_t>(s)] = argmax_action(q, s);
  TabularPolicy policy = TabularPolicy::deterministic(actions, mdp.n_actions());
  EvalResult eval = evaluate(mdp, policy);
  // Policy improvement only switches on strict gains, so this terminates.
  for (int polish = 0; polish < 1000; ++polish) {
    bool changed = false;
    for (Index s = 0; s < n; ++s) {
      const Index best = argmax_action(eval.adv, s);
      const Index cur = actions[static_cast<std::size_t>(s)];
      if (eval.adv(s, best) > 1e-13 * (1.0 + std::abs(eval.q(s, cur))) && best != cur) {
        actions[static_cast<std::size_t>(s)] = best;
        changed = true;
      }
    }
    if (!changed) break;
    policy = TabularPolicy::deterministic(actions, mdp.n_actions());
    eval = evaluate(mdp, policy);
  }
  return {policy, eval.eta, eval.v, iterations};
}

Mdp random_mdp(Index n_states, Index n_actions, double discount, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::exponential_distribution<double> expo(1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<MatrixXd> transitions;
  for (Index a = 0; a < n_actions; ++a) {
    MatrixXd p(n_states, n_states);
    for (Index s = 0; s < n_states; ++s) {
      for (Index t = 0; t < n_states; ++t) p(s, t) = expo(rng);
      p.row(s) /= p.row(s).sum();
    }
    transitions.push_back(std::move(p));
  }
  MatrixXd reward(n_states, n_actions);
  for (Index s = 0; s < n_states; ++s)
    for (Index a = 0; a < n_actions; ++a) reward(s, a) = unit(rng);
  VectorXd rho0(n_states);
  for (Index s = 0; s < n_states; ++s) rho0(s) = 0.2 + unit(rng);
  rho0 /= rho0.sum();
  return Mdp(std::move(transitions), std::move(reward), std::move(rho0), discount);
}

TabularPolicy random_policy(Index n_states, Index n_actions, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.05, 1.0);
  MatrixXd probs(n_states, n_actions);
  for (Index s = 0; s < n_states; ++s) {
    for (Index a = 0; a < n_actions; ++a) probs(s, a) = unit(rng);
    probs.row(s) /= probs.row(s).sum();
  }
  return TabularPolicy(std::move(probs));
}

}  // namespace stro
