#include "stro/policy.hpp"

#include <numbers>
#include <stdexcept>

namespace stro {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;  // log(2 pi)

using ConstMatMap = Eigen::Map<const MatrixXd>;
using MatMap = Eigen::Map<MatrixXd>;

VectorXd log_softmax(const VectorXd& z) {
  const double shift = z.maxCoeff();
  const double lse = shift + std::log((z.array() - shift).exp().sum());
  return z.array() - lse;
}

Index discrete_action(const Action& a, Index n_actions) {
  if (a.size() != 1) throw std::invalid_argument("discrete action must be a single index");
  const auto idx = static_cast<Index>(std::lround(a(0)));
  if (idx < 0 || idx >= n_actions) throw std::out_of_range("action index out of range");
  return idx;
}

}  // namespace

void MeanModelSpec::validate() const {
  if (feature_dim <= 0 || action_dim <= 0) throw std::invalid_argument("MeanModelSpec: dimensions must be positive");
  if (kind == FeatureKind::linear && feature_dim < 2) {
    throw std::invalid_argument("MeanModelSpec: linear features need an input and a bias entry");
  }
  if (kind == FeatureKind::quadratic) throw std::invalid_argument("MeanModelSpec: kind must be tabular or linear");
}

FeatureMap MeanModelSpec::features() const {
  validate();
  return FeatureMap(kind, kind == FeatureKind::tabular ? feature_dim : feature_dim - 1);
}

GaussianPolicyParams GaussianPolicyParams::zeros(const MeanModelSpec& spec, double log_std) {
  spec.validate();
  return {spec, MatrixXd::Zero(spec.action_dim, spec.feature_dim),
          VectorXd::Constant(spec.action_dim, log_std)};
}

VectorXd GaussianPolicyParams::flat() const {
  VectorXd theta(theta_mu.size() + log_std.size());
  theta.head(theta_mu.size()) = Eigen::Map<const VectorXd>(theta_mu.data(), theta_mu.size());
  theta.tail(log_std.size()) = log_std;
  return theta;
}

GaussianPolicyParams GaussianPolicyParams::from_flat(const MeanModelSpec& spec, const VectorXd& theta) {
  spec.validate();
  const Index n_mu = spec.action_dim * spec.feature_dim;
  if (theta.size() != n_mu + spec.action_dim) throw std::invalid_argument("Gaussian parameter size mismatch");
  return {spec, ConstMatMap(theta.data(), spec.action_dim, spec.feature_dim),
          theta.tail(spec.action_dim)};
}

CategoricalPolicyParams CategoricalPolicyParams::zeros(const MeanModelSpec& spec) {
  spec.validate();
  return {spec, MatrixXd::Zero(spec.action_dim, spec.feature_dim)};
}

VectorXd CategoricalPolicyParams::flat() const {
  return Eigen::Map<const VectorXd>(logits.data(), logits.size());
}

CategoricalPolicyParams CategoricalPolicyParams::from_flat(const MeanModelSpec& spec,
                                                           const VectorXd& theta) {
  spec.validate();
  if (theta.size() != spec.action_dim * spec.feature_dim) {
    throw std::invalid_argument("categorical parameter size mismatch");
  }
  if (!theta.allFinite()) throw std::invalid_argument("logits must be finite");
  return {spec, ConstMatMap(theta.data(), spec.action_dim, spec.feature_dim)};
}

// ---------------------------------------------------------------------------
// Gaussian

GaussianPolicy::GaussianPolicy(MeanModelSpec spec, double sigma_floor)
    : PolicyFamily(spec.features()),
      spec_(spec),
      sigma_floor_(sigma_floor),
      n_mu_(spec.action_dim * spec.feature_dim) {
  if (!(sigma_floor > 0.0)) throw std::invalid_argument("sigma floor must be positive");
}

VectorXd GaussianPolicy::mean(const VectorXd& theta, const VectorXd& phi) const {
  return ConstMatMap(theta.data(), spec_.action_dim, spec_.feature_dim) * phi;
}

Action GaussianPolicy::sample(const VectorXd& theta, const VectorXd& phi, Rng& rng) const {
  std::normal_distribution<double> normal(0.0, 1.0);
  Action a = mean(theta, phi);
  for (Index i = 0; i < spec_.action_dim; ++i) a(i) += std::exp(theta(n_mu_ + i)) * normal(rng);
  return a;
}

double GaussianPolicy::log_prob(const VectorXd& theta, const VectorXd& phi, const Action& a) const {
  const VectorXd mu = mean(theta, phi);
  double lp = 0.0;
  for (Index i = 0; i < spec_.action_dim; ++i) {
    const double ls = theta(n_mu_ + i);
    const double z = (a(i) - mu(i)) * std::exp(-ls);
    lp += -0.5 * z * z - ls - 0.5 * kLog2Pi;
  }
  return lp;
}

double GaussianPolicy::add_log_prob_gradient(const VectorXd& theta, const VectorXd& phi,
                                             const Action& a, double weight, VectorXd& grad) const {
  const VectorXd mu = mean(theta, phi);
  MatMap grad_mu(grad.data(), spec_.action_dim, spec_.feature_dim);
  double lp = 0.0;
  for (Index i = 0; i < spec_.action_dim; ++i) {
    const double ls = theta(n_mu_ + i);
    const double inv_sigma = std::exp(-ls);
    const double z = (a(i) - mu(i)) * inv_sigma;
    lp += -0.5 * z * z - ls - 0.5 * kLog2Pi;
    grad_mu.row(i) += (weight * z * inv_sigma) * phi.transpose();
    grad(n_mu_ + i) += weight * (z * z - 1.0);
  }
  return lp;
}

double GaussianPolicy::kl(const VectorXd& theta_old, const VectorXd& theta_new,
                          const VectorXd& phi) const {
  const VectorXd mu_old = mean(theta_old, phi);
  const VectorXd mu_new = mean(theta_new, phi);
  double total = 0.0;
  for (Index i = 0; i < spec_.action_dim; ++i) {
    const double ls_old = theta_old(n_mu_ + i);
    const double ls_new = theta_new(n_mu_ + i);
    const double diff = mu_old(i) - mu_new(i);
    // sigma_old^2 / sigma_new^2 written via exp of the log difference.
    const double var_ratio = std::exp(2.0 * (ls_old - ls_new));
    total += (ls_new - ls_old) + 0.5 * var_ratio + 0.5 * diff * diff * std::exp(-2.0 * ls_new) - 0.5;
  }
  return total;
}

void GaussianPolicy::add_fim_product(const VectorXd& theta, const VectorXd& phi, const VectorXd& v,
                                     double weight, VectorXd& out) const {
  const VectorXd dmu = ConstMatMap(v.data(), spec_.action_dim, spec_.feature_dim) * phi;
  MatMap out_mu(out.data(), spec_.action_dim, spec_.feature_dim);
  for (Index i = 0; i < spec_.action_dim; ++i) {
    const double inv_var = std::exp(-2.0 * theta(n_mu_ + i));
    out_mu.row(i) += (weight * inv_var * dmu(i)) * phi.transpose();
    out(n_mu_ + i) += weight * 2.0 * v(n_mu_ + i);
  }
}

double GaussianPolicy::entropy(const VectorXd& theta, const VectorXd& /*phi*/) const {
  return theta.tail(spec_.action_dim).sum() +
         0.5 * static_cast<double>(spec_.action_dim) * (1.0 + kLog2Pi);
}

// ---------------------------------------------------------------------------
// Categorical

CategoricalPolicy::CategoricalPolicy(MeanModelSpec spec) : PolicyFamily(spec.features()), spec_(spec) {
  if (spec.action_dim < 1) throw std::invalid_argument("categorical policy needs at least one action");
}

VectorXd CategoricalPolicy::probabilities(const VectorXd& theta, const VectorXd& phi) const {
  return log_softmax(ConstMatMap(theta.data(), spec_.action_dim, spec_.feature_dim) * phi).array().exp();
}

Action CategoricalPolicy::sample(const VectorXd& theta, const VectorXd& phi, Rng& rng) const {
  const VectorXd p = probabilities(theta, phi);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double u = unit(rng);
  double acc = 0.0;
  Index chosen = spec_.action_dim - 1;
  for (Index a = 0; a < spec_.action_dim; ++a) {
    acc += p(a);
    if (u < acc) {
      chosen = a;
      break;
    }
  }
  return Action::Constant(1, static_cast<double>(chosen));
}

double CategoricalPolicy::log_prob(const VectorXd& theta, const VectorXd& phi, const Action& a) const {
  const Index idx = discrete_action(a, spec_.action_dim);
  return log_softmax(ConstMatMap(theta.data(), spec_.action_dim, spec_.feature_dim) * phi)(idx);
}

double CategoricalPolicy::add_log_prob_gradient(const VectorXd& theta, const VectorXd& phi,
                                                const Action& a, double weight,
                                                VectorXd& grad) const {
  const Index idx = discrete_action(a, spec_.action_dim);
  const VectorXd logp = log_softmax(ConstMatMap(theta.data(), spec_.action_dim, spec_.feature_dim) * phi);
  VectorXd dz = -logp.array().exp();
  dz(idx) += 1.0;
  MatMap grad_w(grad.data(), spec_.action_dim, spec_.feature_dim);
  grad_w += weight * dz * phi.transpose();
  return logp(idx);
}

double CategoricalPolicy::kl(const VectorXd& theta_old, const VectorXd& theta_new,
                             const VectorXd& phi) const {
  const VectorXd lp_old = log_softmax(ConstMatMap(theta_old.data(), spec_.action_dim, spec_.feature_dim) * phi);
  const VectorXd lp_new = log_softmax(ConstMatMap(theta_new.data(), spec_.action_dim, spec_.feature_dim) * phi);
  return (lp_old.array().exp() * (lp_old - lp_new).array()).sum();
}

void CategoricalPolicy::add_fim_product(const VectorXd& theta, const VectorXd& phi, const VectorXd& v,
                                        double weight, VectorXd& out) const {
  const VectorXd p = probabilities(theta, phi);
  const VectorXd dz = ConstMatMap(v.data(), spec_.action_dim, spec_.feature_dim) * phi;
  const VectorXd h = p.cwiseProduct(dz) - p * p.dot(dz);
  MatMap out_w(out.data(), spec_.action_dim, spec_.feature_dim);
  out_w += weight * h * phi.transpose();
}

double CategoricalPolicy::entropy(const VectorXd& theta, const VectorXd& phi) const {
  const VectorXd lp = log_softmax(ConstMatMap(theta.data(), spec_.action_dim, spec_.feature_dim) * phi);
  return -(lp.array().exp() * lp.array()).sum();
}

// ---------------------------------------------------------------------------
// Parameter-struct entry points

Action sample_action(const GaussianPolicyParams& params, const Observation& state,
                     const VectorXd& noise) {
  if (noise.size() != params.spec.action_dim) throw std::invalid_argument("noise dimension mismatch");
  const VectorXd phi = params.spec.features()(state);
  return params.theta_mu * phi + params.log_std.array().exp().matrix().cwiseProduct(noise);
}

GaussianLogProb log_prob(const GaussianPolicyParams& params, const Observation& state,
                         const Action& action) {
  if (!state.allFinite() || !action.allFinite()) throw std::invalid_argument("log_prob: non-finite input");
  if (action.size() != params.spec.action_dim) throw std::invalid_argument("log_prob: action dimension mismatch");
  const GaussianPolicy family(params.spec);
  const VectorXd theta = params.flat();
  const VectorXd phi = family.features(state);
  VectorXd grad = VectorXd::Zero(theta.size());
  GaussianLogProb out;
  out.value = family.add_log_prob_gradient(theta, phi, action, 1.0, grad);
  const auto split = GaussianPolicyParams::from_flat(params.spec, grad);
  out.grad_mu = split.theta_mu;
  out.grad_log_std = split.log_std;
  return out;
}

double kl_divergence(const GaussianPolicyParams& old_params, const GaussianPolicyParams& new_params,
                     const Observation& state) {
  const GaussianPolicy family(old_params.spec);
  return family.kl(old_params.flat(), new_params.flat(), family.features(state));
}

double entropy(const GaussianPolicyParams& params) {
  return params.log_std.sum() + 0.5 * static_cast<double>(params.log_std.size()) * (1.0 + kLog2Pi);
}

VectorXd fim_vector_product(const GaussianPolicyParams& params, std::span<const Observation> states,
                            const VectorXd& v, double damping) {
  if (states.empty()) throw std::invalid_argument("fim_vector_product: empty batch");
  const GaussianPolicy family(params.spec);
  const VectorXd theta = params.flat();
  if (v.size() != theta.size()) throw std::invalid_argument("fim_vector_product: vector size mismatch");
  VectorXd out = VectorXd::Zero(theta.size());
  const double w = 1.0 / static_cast<double>(states.size());
  for (const auto& s : states) family.add_fim_product(theta, family.features(s), v, w, out);
  return out + damping * v;
}

VectorXd action_probabilities(const CategoricalPolicyParams& params, const Observation& state) {
  const CategoricalPolicy family(params.spec);
  return family.probabilities(params.flat(), family.features(state));
}

double kl_divergence(const CategoricalPolicyParams& old_params,
                     const CategoricalPolicyParams& new_params, const Observation& state) {
  const CategoricalPolicy family(old_params.spec);
  return family.kl(old_params.flat(), new_params.flat(), family.features(state));
}

double entropy(const CategoricalPolicyParams& params, std::span<const Observation> states) {
  if (states.empty()) throw std::invalid_argument("entropy: empty batch");
  const CategoricalPolicy family(params.spec);
  const VectorXd theta = params.flat();
  double total = 0.0;
  for (const auto& s : states) total += family.entropy(theta, family.features(s));
  return total / static_cast<double>(states.size());
}

VectorXd fim_vector_product(const CategoricalPolicyParams& params,
                            std::span<const Observation> states, const VectorXd& v, double damping) {
  if (states.empty()) throw std::invalid_argument("fim_vector_product: empty batch");
  const CategoricalPolicy family(params.spec);
  const VectorXd theta = params.flat();
  if (v.size() != theta.size()) throw std::invalid_argument("fim_vector_product: vector size mismatch");
  VectorXd out = VectorXd::Zero(theta.size());
  const double w = 1.0 / static_cast<double>(states.size());
  for (const auto& s : states) family.add_fim_product(theta, family.features(s), v, w, out);
  return out + damping * v;
}

}  // namespace stro
