#pragma once

#include "stro/envs.hpp"
#include "stro/features.hpp"
#include "stro/policy.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

namespace stro {

struct Transition {
  Observation state;
  Action action;
  double reward = 0.0;
  Observation next_state;
  bool done = false;         ///< terminal state or horizon cap; bootstraps with 0
  bool segment_end = false;  ///< last transition of a contiguous run (done, or cut off by the budget)
  int episode_id = 0;
  int t = 0;
};

/// Sampled transitions plus the statistics of the episodes that completed.
/// Episodes cut off by the sample budget contribute transitions only.
struct TrajectoryBatch {
  std::vector<Transition> transitions;
  std::vector<double> episode_returns;  ///< R_i = sum_t gamma^t r_t over completed episodes
  double eta_hat = 0.0;                 ///< mean(R_i); 0 when no episode completed
  std::optional<double> sigma_eta_hat;  ///< sample std (1/(n-1)); needs >= 2 episodes

  Index count() const { return static_cast<Index>(transitions.size()); }
  void recompute_statistics();
  /// Appends `other`, renumbering its episodes after ours.
  void append(const TrajectoryBatch& other);
};

/// Algorithm-2 sampling: exactly `n_transitions` environment steps under the
/// policy. The horizon cap ends an episode like a terminal state. With several
/// workers each one owns a generator seeded from (seed, worker index) and the
/// merged order is worker order, so the result depends only on (seed, workers).
TrajectoryBatch collect(const Environment& env, const PolicyFamily& family, const VectorXd& theta,
                        Index n_transitions, std::uint64_t seed, int workers = 1);

/// Linear value model V(s) = phi^T features(s).
class ValueBaseline {
 public:
  ValueBaseline(FeatureKind kind, Index input_dim);

  const FeatureMap& features() const { return map_; }
  const VectorXd& params() const { return params_; }
  void set_params(VectorXd params);
  double operator()(const Observation& s) const { return params_.dot(map_(s)); }

 private:
  FeatureMap map_;
  VectorXd params_;
};

struct GaeConfig {
  double gamma = 0.99;
  double lambda = 0.95;
  bool normalize = false;
  /// Mutation-test hook: flips the sign of the recursive term.
  bool mutate_sign_flip = false;
};

struct AdvantageTable {
  VectorXd values;  ///< one entry per transition
  double lambda = 0.0;
  double gamma = 0.0;
};

/// A_t = delta_t + gamma lambda (1 - end_t) A_{t+1} with
/// delta_t = r_t + gamma (1 - done_t) V(s_{t+1}) - V(s_t), where end_t marks the
/// last transition of a segment. Cut-off segments bootstrap with V(s_{t+1}).
AdvantageTable gae(const TrajectoryBatch& batch, const ValueBaseline& baseline, const GaeConfig& config);
AdvantageTable gae(const TrajectoryBatch& batch, const ValueBaseline& baseline, double gamma, double lambda);

/// Sample estimates of the surrogate, its gradient, the mean KL from the
/// sampling policy, the Fisher product and the entropy. Every quantity can be
/// restricted to a subset of transition indices (a minibatch).
class SurrogateEstimator {
 public:
  SurrogateEstimator(const PolicyFamily& family, const VectorXd& theta_old, const TrajectoryBatch& batch,
                     const AdvantageTable& advantages);

  Index size() const { return static_cast<Index>(phi_.size()); }
  const VectorXd& theta_old() const { return theta_old_; }
  double eta_hat_old() const { return eta_hat_old_; }

  /// eta_hat_old + mean_i pi_theta(a_i|s_i) / pi_old(a_i|s_i) * A_i
  double L(const VectorXd& theta, std::span<const Index> subset = {}) const;
  VectorXd grad(const VectorXd& theta, std::span<const Index> subset = {}) const;
  /// Mean KL(pi_old || pi_theta) over the visited states.
  double D(const VectorXd& theta, std::span<const Index> subset = {}) const;
  /// Mean Fisher information at `theta` applied to v (no damping).
  VectorXd fim_product(const VectorXd& theta, const VectorXd& v, std::span<const Index> subset = {}) const;
  double entropy(const VectorXd& theta, std::span<const Index> subset = {}) const;

 private:
  template <class F>
  void for_each(std::span<const Index> subset, F&& f) const;
  double denom(std::span<const Index> subset) const;

  const PolicyFamily& family_;
  VectorXd theta_old_;
  double eta_hat_old_;
  std::vector<VectorXd> phi_;
  std::vector<Action> actions_;
  VectorXd logp_old_;
  VectorXd adv_;
};

struct SurrogateValues {
  double L = 0.0;
  VectorXd g;
  double D = 0.0;
};

/// (L_hat, grad L_hat, D_hat) of `theta_new` against the sampling policy `theta_old`.
SurrogateValues empirical_L_g_D(const PolicyFamily& family, const VectorXd& theta_new,
                                const VectorXd& theta_old, const TrajectoryBatch& batch,
                                const AdvantageTable& advantages);

enum class BaselineFitMethod { exact, adam };

struct BaselineFitConfig {
  BaselineFitMethod method = BaselineFitMethod::exact;
  int epochs = 200;
  double step_size = 0.05;
  double ridge = 1e-8;
};

/// Least-squares fit of V_phi to the targets V_phi_k(s) + A. The exact method
/// solves the normal equations (ridge toward the current parameters when the
/// design is rank deficient); the Adam method keeps the loss nonincreasing by
/// reverting any step that increases it and halving the step size.
ValueBaseline fit_baseline(const ValueBaseline& baseline, const TrajectoryBatch& batch,
                           const AdvantageTable& advantages, const BaselineFitConfig& config = {});

/// Mean squared error of the baseline against the targets used by fit_baseline
/// with `reference` supplying V_phi_k.
double baseline_loss(const ValueBaseline& model, const ValueBaseline& reference,
                     const TrajectoryBatch& batch, const AdvantageTable& advantages);

/// Mean over visited states of the per-state policy entropy.
double sample_entropy(const PolicyFamily& family, const VectorXd& theta, const TrajectoryBatch& batch);

/// CSV: episode_id,t,state_0..,action_0..,reward,done
void write_batch_csv(std::ostream& out, const TrajectoryBatch& batch);

}  // namespace stro
