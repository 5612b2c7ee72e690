#pragma once

#include "stro/features.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <utility>

namespace stro {

using Eigen::MatrixXd;
using Observation = VectorXd;
/// Continuous actions are vectors; discrete actions are stored as [index].
using Action = VectorXd;
using Rng = std::mt19937_64;

inline constexpr double kDefaultFimDamping = 1e-8;
inline const double kDefaultSigmaFloor = std::exp(-20.0);

/// Shape of a linear-in-features mean (or logit) model.
struct MeanModelSpec {
  FeatureKind kind = FeatureKind::linear;
  Index feature_dim = 1;  ///< length of the feature vector, bias included for linear maps
  Index action_dim = 1;   ///< action dimension (Gaussian) or number of actions (categorical)

  void validate() const;
  FeatureMap features() const;
};

/// theta = (theta_mu, theta_sigma); mu(s) = theta_mu * phi(s), sigma = exp(log_std).
struct GaussianPolicyParams {
  MeanModelSpec spec;
  MatrixXd theta_mu;  ///< action_dim x feature_dim
  VectorXd log_std;   ///< action_dim

  static GaussianPolicyParams zeros(const MeanModelSpec& spec, double log_std = 0.0);
  VectorXd flat() const;
  static GaussianPolicyParams from_flat(const MeanModelSpec& spec, const VectorXd& theta);
};

/// Logits = W * phi(s), softmax over actions.
struct CategoricalPolicyParams {
  MeanModelSpec spec;
  MatrixXd logits;  ///< n_actions x feature_dim

  static CategoricalPolicyParams zeros(const MeanModelSpec& spec);
  VectorXd flat() const;
  static CategoricalPolicyParams from_flat(const MeanModelSpec& spec, const VectorXd& theta);
};

/// Structure of a parameterized stochastic policy. Parameters travel as flat
/// vectors so the optimizer code is shared; features are precomputed by the
/// caller (see `features`).
class PolicyFamily {
 public:
  virtual ~PolicyFamily() = default;

  virtual Index num_params() const = 0;
  virtual const MeanModelSpec& spec() const = 0;
  virtual bool is_gaussian() const = 0;
  VectorXd features(const Observation& s) const { return feature_map_(s); }

  virtual Action sample(const VectorXd& theta, const VectorXd& phi, Rng& rng) const = 0;
  virtual double log_prob(const VectorXd& theta, const VectorXd& phi, const Action& a) const = 0;
  /// grad += weight * d/dtheta log pi(a|s); returns log pi(a|s).
  virtual double add_log_prob_gradient(const VectorXd& theta, const VectorXd& phi, const Action& a,
                                       double weight, VectorXd& grad) const = 0;
  /// KL(pi_old(.|s) || pi_new(.|s)).
  virtual double kl(const VectorXd& theta_old, const VectorXd& theta_new,
                    const VectorXd& phi) const = 0;
  /// out += weight * F(s) v with F the Hessian of KL(pi_theta || .) at theta.
  virtual void add_fim_product(const VectorXd& theta, const VectorXd& phi, const VectorXd& v,
                               double weight, VectorXd& out) const = 0;
  virtual double entropy(const VectorXd& theta, const VectorXd& phi) const = 0;

  /// [begin, end) of the log-std block, for families that have one.
  virtual std::optional<std::pair<Index, Index>> log_std_block() const { return std::nullopt; }

 protected:
  explicit PolicyFamily(FeatureMap feature_map) : feature_map_(std::move(feature_map)) {}

 private:
  FeatureMap feature_map_;
};

class GaussianPolicy final : public PolicyFamily {
 public:
  explicit GaussianPolicy(MeanModelSpec spec, double sigma_floor = kDefaultSigmaFloor);

  Index num_params() const override { return n_mu_ + spec_.action_dim; }
  const MeanModelSpec& spec() const override { return spec_; }
  bool is_gaussian() const override { return true; }
  double sigma_floor() const { return sigma_floor_; }
  double log_std_floor() const { return std::log(sigma_floor_); }

  Action sample(const VectorXd& theta, const VectorXd& phi, Rng& rng) const override;
  double log_prob(const VectorXd& theta, const VectorXd& phi, const Action& a) const override;
  double add_log_prob_gradient(const VectorXd& theta, const VectorXd& phi, const Action& a,
                               double weight, VectorXd& grad) const override;
  double kl(const VectorXd& theta_old, const VectorXd& theta_new, const VectorXd& phi) const override;
  void add_fim_product(const VectorXd& theta, const VectorXd& phi, const VectorXd& v, double weight,
                       VectorXd& out) const override;
  double entropy(const VectorXd& theta, const VectorXd& phi) const override;
  std::optional<std::pair<Index, Index>> log_std_block() const override {
    return std::make_pair(n_mu_, n_mu_ + spec_.action_dim);
  }

  VectorXd mean(const VectorXd& theta, const VectorXd& phi) const;

 private:
  MeanModelSpec spec_;
  double sigma_floor_;
  Index n_mu_;
};

class CategoricalPolicy final : public PolicyFamily {
 public:
  explicit CategoricalPolicy(MeanModelSpec spec);

  Index num_params() const override { return spec_.action_dim * spec_.feature_dim; }
  const MeanModelSpec& spec() const override { return spec_; }
  bool is_gaussian() const override { return false; }

  Action sample(const VectorXd& theta, const VectorXd& phi, Rng& rng) const override;
  double log_prob(const VectorXd& theta, const VectorXd& phi, const Action& a) const override;
  double add_log_prob_gradient(const VectorXd& theta, const VectorXd& phi, const Action& a,
                               double weight, VectorXd& grad) const override;
  double kl(const VectorXd& theta_old, const VectorXd& theta_new, const VectorXd& phi) const override;
  void add_fim_product(const VectorXd& theta, const VectorXd& phi, const VectorXd& v, double weight,
                       VectorXd& out) const override;
  double entropy(const VectorXd& theta, const VectorXd& phi) const override;

  VectorXd probabilities(const VectorXd& theta, const VectorXd& phi) const;

 private:
  MeanModelSpec spec_;
};

// Parameter-struct entry points.

/// a = mu(s) + exp(log_std) * noise.
Action sample_action(const GaussianPolicyParams& params, const Observation& state,
                     const VectorXd& noise);

struct GaussianLogProb {
  double value = 0.0;
  MatrixXd grad_mu;      ///< d log pi / d theta_mu
  VectorXd grad_log_std; ///< d log pi / d theta_sigma
};
GaussianLogProb log_prob(const GaussianPolicyParams& params, const Observation& state,
                         const Action& action);

double kl_divergence(const GaussianPolicyParams& old_params, const GaussianPolicyParams& new_params,
                     const Observation& state);

/// 1^T log_std + (n/2)(1 + log 2 pi); independent of the state.
double entropy(const GaussianPolicyParams& params);

/// Sample-average Fisher product over `states` plus damping * v.
/// Throws std::invalid_argument on an empty batch.
VectorXd fim_vector_product(const GaussianPolicyParams& params, std::span<const Observation> states,
                            const VectorXd& v, double damping = kDefaultFimDamping);

VectorXd action_probabilities(const CategoricalPolicyParams& params, const Observation& state);
double kl_divergence(const CategoricalPolicyParams& old_params,
                     const CategoricalPolicyParams& new_params, const Observation& state);
/// Mean per-state entropy over `states`.
double entropy(const CategoricalPolicyParams& params, std::span<const Observation> states);
VectorXd fim_vector_product(const CategoricalPolicyParams& params,
                            std::span<const Observation> states, const VectorXd& v,
                            double damping = kDefaultFimDamping);

}  // namespace stro
