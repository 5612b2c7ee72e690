#pragma once

#include "stro/mdp.hpp"
#include "stro/policy.hpp"

#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>

namespace stro {

enum class EnvKind { chain, gridworld, point_mass_1d, point_mass_2d, lq_scalar };

std::string to_string(EnvKind kind);
EnvKind env_kind_from_string(const std::string& name);

/// Discrete environments report n_states / n_actions in the dimension fields
/// and use observations of the form [state index].
struct EnvSpec {
  EnvKind kind = EnvKind::chain;
  bool discrete = true;
  Index observation_dim = 1;
  Index action_dim = 1;
  int horizon = 100;
  double discount = 0.9;
};

struct StepResult {
  Observation next_state;
  double reward = 0.0;
  bool done = false;  ///< true terminal state; horizon truncation is applied by the sampler
};

/// Construction parameters for every built-in environment. Unused fields are
/// ignored by the selected kind.
struct EnvConfig {
  EnvKind kind = EnvKind::chain;
  int horizon = 0;        ///< 0 selects the kind's default
  double discount = 0.0;  ///< 0 selects the kind's default

  // chain
  int chain_length = 8;
  double chain_slip = 0.1;
  bool chain_uniform_start = true;  ///< false starts every episode in state 0

  // gridworld
  int grid_size = 4;
  double grid_slip = 0.0;
  double step_penalty = 0.04;

  // linear-quadratic
  double lq_a = 1.0;
  double lq_b = 1.0;
  double lq_q = 1.0;
  double lq_c = 0.1;
};

/// Stateless environment: the caller owns the state and the generator, so one
/// instance can be shared by any number of sampling workers.
class Environment {
 public:
  virtual ~Environment() = default;

  const EnvSpec& spec() const { return spec_; }

  virtual Observation reset(Rng& rng) const = 0;
  virtual StepResult step(const Observation& state, const Action& action, Rng& rng) const = 0;

  /// Exact tabular model; throws std::logic_error for continuous environments.
  virtual Mdp exact_mdp() const { throw std::logic_error("environment has no tabular model"); }

  /// Exact eta of the policy (theta, family) when a closed form is available.
  virtual std::optional<double> exact_eta(const PolicyFamily& family, const VectorXd& theta) const = 0;
  /// Optimal eta over the environment's reference policy class.
  virtual std::optional<double> optimal_eta() const = 0;

 protected:
  explicit Environment(EnvSpec spec) : spec_(spec) {}

 private:
  EnvSpec spec_;
};

/// Length-L chain. Action 1 moves right and action 0 moves left; the intended
/// move succeeds with probability 1 - slip, otherwise the opposite move is made.
/// Moves past either end leave the state unchanged. Taking action 1 in the last
/// state pays +1; every other reward is 0.
class ChainEnv final : public Environment {
 public:
  explicit ChainEnv(const EnvConfig& config);

  Observation reset(Rng& rng) const override;
  StepResult step(const Observation& state, const Action& action, Rng& rng) const override;
  Mdp exact_mdp() const override;
  std::optional<double> exact_eta(const PolicyFamily& family, const VectorXd& theta) const override;
  std::optional<double> optimal_eta() const override;

 private:
  int length_;
  double slip_;
  bool uniform_start_;
};

/// Square gridworld, state = row * size + col, actions {up, right, down, left}.
/// The goal is the bottom-right cell and is absorbing with zero reward.
/// Every move from a non-goal cell costs `step_penalty`; entering the goal
/// additionally pays +1. Bumping a wall leaves the position unchanged. With
/// probability `slip` the move goes to one of the two perpendicular
/// directions, chosen uniformly. Episodes end on reaching the goal.
class GridworldEnv final : public Environment {
 public:
  explicit GridworldEnv(const EnvConfig& config);

  Observation reset(Rng& rng) const override;
  StepResult step(const Observation& state, const Action& action, Rng& rng) const override;
  Mdp exact_mdp() const override;
  std::optional<double> exact_eta(const PolicyFamily& family, const VectorXd& theta) const override;
  std::optional<double> optimal_eta() const override;

  Index goal() const { return static_cast<Index>(size_) * size_ - 1; }
  /// Deterministic successor of (s, a) ignoring slip.
  Index move(Index s, Index a) const;

 private:
  int size_;
  double slip_;
  double step_penalty_;
};

/// Isotropic linear-quadratic regulator: x' = a x + b u, reward
/// -(q |x|^2 + c |u|^2), x_0 ~ U(-1, 1)^d, episodes truncated at the horizon.
///   point_mass_1d: d = 1, a = b = 1
///   point_mass_2d: d = 2, a = b = 1
///   lq_scalar:     d = 1, a and b from the config
class LinearQuadraticEnv final : public Environment {
 public:
  explicit LinearQuadraticEnv(const EnvConfig& config);

  Observation reset(Rng& rng) const override;
  StepResult step(const Observation& state, const Action& action, Rng& rng) const override;
  /// Closed form for Gaussian policies with linear features, else empty.
  std::optional<double> exact_eta(const PolicyFamily& family, const VectorXd& theta) const override;
  /// Best stationary deterministic linear feedback u = k x over the horizon.
  std::optional<double> optimal_eta() const override;

  /// Finite-horizon eta of u = K x + k0 + diag(sigma) eps, by propagating the
  /// state mean and second moment. K is d x d, k0 and sigma have length d.
  double linear_gaussian_eta(const MatrixXd& K, const VectorXd& k0, const VectorXd& sigma) const;
  /// The gain k maximizing linear_gaussian_eta(k I, 0, 0), by grid scan and
  /// golden-section refinement.
  double optimal_gain() const;

  double a() const { return a_; }
  double b() const { return b_; }
  double q() const { return q_; }
  double c() const { return c_; }

 private:
  double a_, b_, q_, c_;
};

std::unique_ptr<Environment> make_env(const EnvConfig& config);

/// Draws s_0 from a generator seeded with `seed`.
Observation reset(const Environment& env, std::uint64_t seed);

/// Tabular policy induced by a categorical policy with tabular features.
TabularPolicy tabular_policy_from(const PolicyFamily& family, const VectorXd& theta, Index n_states);

}  // namespace stro
