#include "stro/envs.hpp"

#include <algorithm>
#include <cmath>

namespace stro {

namespace {

int or_default(int value, int fallback) { return value > 0 ? value : fallback; }
double or_default(double value, double fallback) { return value > 0.0 ? value : fallback; }

Index state_index(const Observation& s, Index n_states) {
  if (s.size() != 1) throw std::invalid_argument("discrete state must be a single index");
  const auto idx = static_cast<Index>(std::lround(s(0)));
  if (idx < 0 || idx >= n_states) throw std::out_of_range("state index out of range");
  return idx;
}

Index action_index(const Action& a, Index n_actions) {
  if (a.size() != 1) throw std::invalid_argument("discrete action must be a single index");
  const auto idx = static_cast<Index>(std::lround(a(0)));
  if (idx < 0 || idx >= n_actions) throw std::out_of_range("action index out of range");
  return idx;
}

Observation index_obs(Index s) { return Observation::Constant(1, static_cast<double>(s)); }

std::optional<double> categorical_eta(const Mdp& mdp, const PolicyFamily& family, const VectorXd& theta,
                                      const VectorXd& start) {
  if (family.is_gaussian() || family.spec().kind != FeatureKind::tabular) return std::nullopt;
  if (family.spec().feature_dim != mdp.n_states() || family.spec().action_dim != mdp.n_actions()) {
    throw std::invalid_argument("policy shape does not match the environment");
  }
  const EvalResult ev = evaluate(mdp, tabular_policy_from(family, theta, mdp.n_states()));
  return start.dot(ev.v);
}

}  // namespace

std::string to_string(EnvKind kind) {
  switch (kind) {
    case EnvKind::chain: return "chain";
    case EnvKind::gridworld: return "gridworld";
    case EnvKind::point_mass_1d: return "point_mass_1d";
    case EnvKind::point_mass_2d: return "point_mass_2d";
    case EnvKind::lq_scalar: return "lq_scalar";
  }
  return "unknown";
}

EnvKind env_kind_from_string(const std::string& name) {
  for (auto k : {EnvKind::chain, EnvKind::gridworld, EnvKind::point_mass_1d, EnvKind::point_mass_2d,
                 EnvKind::lq_scalar}) {
    if (to_string(k) == name) return k;
  }
  throw std::invalid_argument("unknown environment kind: " + name);
}

// ---------------------------------------------------------------------------
// Chain

ChainEnv::ChainEnv(const EnvConfig& config)
    : Environment({EnvKind::chain, true, config.chain_length, 2, or_default(config.horizon, 100),
                   or_default(config.discount, 0.9)}),
      length_(config.chain_length),
      slip_(config.chain_slip),
      uniform_start_(config.chain_uniform_start) {
  if (length_ < 2) throw std::invalid_argument("chain length must be at least 2");
  if (!(slip_ >= 0.0 && slip_ < 1.0)) throw std::invalid_argument("chain slip must lie in [0, 1)");
  if (!(spec().discount > 0.0 && spec().discount < 1.0)) throw std::invalid_argument("discount must lie in (0, 1)");
}

Observation ChainEnv::reset(Rng& rng) const {
  if (!uniform_start_) return index_obs(0);
  std::uniform_int_distribution<Index> pick(0, length_ - 1);
  return index_obs(pick(rng));
}

StepResult ChainEnv::step(const Observation& state, const Action& action, Rng& rng) const {
  const Index s = state_index(state, length_);
  const Index a = action_index(action, 2);
  std::bernoulli_distribution slipped(slip_);
  const Index dir = ((a == 1) != slipped(rng)) ? 1 : -1;
  const Index next = std::clamp<Index>(s + dir, 0, length_ - 1);
  const double reward = (s == length_ - 1 && a == 1) ? 1.0 : 0.0;
  return {index_obs(next), reward, false};
}

Mdp ChainEnv::exact_mdp() const {
  if (!uniform_start_) {
    throw std::logic_error("chain with a point-mass start violates the positive start-distribution assumption");
  }
  const Index n = length_;
  std::vector<MatrixXd> P(2, MatrixXd::Zero(n, n));
  for (Index s = 0; s < n; ++s) {
    const Index right = std::min(s + 1, n - 1);
    const Index left = std::max<Index>(s - 1, 0);
    P[1](s, right) += 1.0 - slip_;
    P[1](s, left) += slip_;
    P[0](s, left) += 1.0 - slip_;
    P[0](s, right) += slip_;
  }
  MatrixXd r = MatrixXd::Zero(n, 2);
  r(n - 1, 1) = 1.0;
  return Mdp(std::move(P), std::move(r), VectorXd::Constant(n, 1.0 / static_cast<double>(n)),
             spec().discount);
}

std::optional<double> ChainEnv::exact_eta(const PolicyFamily& family, const VectorXd& theta) const {
  const ChainEnv uniform([&] {
    EnvConfig c;
    c.chain_length = length_;
    c.chain_slip = slip_;
    c.horizon = spec().horizon;
    c.discount = spec().discount;
    return c;
  }());
  VectorXd start = VectorXd::Zero(length_);
  if (uniform_start_) {
    start.setConstant(1.0 / length_);
  } else {
    start(0) = 1.0;
  }
  return categorical_eta(uniform.exact_mdp(), family, theta, start);
}

std::optional<double> ChainEnv::optimal_eta() const {
  if (uniform_start_) return value_iteration(exact_mdp()).eta_star;
  EnvConfig c;
  c.chain_length = length_;
  c.chain_slip = slip_;
  c.discount = spec().discount;
  return value_iteration(ChainEnv(c).exact_mdp()).v(0);
}

// ---------------------------------------------------------------------------
// Gridworld

GridworldEnv::GridworldEnv(const EnvConfig& config)
    : Environment({EnvKind::gridworld, true, static_cast<Index>(config.grid_size) * config.grid_size, 4,
                   or_default(config.horizon, 100), or_default(config.discount, 0.95)}),
      size_(config.grid_size),
      slip_(config.grid_slip),
      step_penalty_(config.step_penalty) {
  if (size_ < 2) throw std::invalid_argument("grid size must be at least 2");
  if (!(slip_ >= 0.0 && slip_ < 1.0)) throw std::invalid_argument("grid slip must lie in [0, 1)");
  if (!std::isfinite(step_penalty_)) throw std::invalid_argument("step penalty must be finite");
  if (!(spec().discount > 0.0 && spec().discount < 1.0)) throw std::invalid_argument("discount must lie in (0, 1)");
}

Index GridworldEnv::move(Index s, Index a) const {
  Index row = s / size_;
  Index col = s % size_;
  switch (a) {
    case 0: row = std::max<Index>(row - 1, 0); break;
    case 1: col = std::min<Index>(col + 1, size_ - 1); break;
    case 2: row = std::min<Index>(row + 1, size_ - 1); break;
    case 3: col = std::max<Index>(col - 1, 0); break;
    default: throw std::out_of_range("gridworld action out of range");
  }
  return row * size_ + col;
}

Observation GridworldEnv::reset(Rng& rng) const {
  std::uniform_int_distribution<Index> pick(0, spec().observation_dim - 1);
  return index_obs(pick(rng));
}

StepResult GridworldEnv::step(const Observation& state, const Action& action, Rng& rng) const {
  const Index s = state_index(state, spec().observation_dim);
  const Index a = action_index(action, 4);
  if (s == goal()) return {index_obs(s), 0.0, true};
  Index dir = a;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double u = unit(rng);
  if (u < slip_) dir = (a + (u < 0.5 * slip_ ? 1 : 3)) % 4;
  const Index next = move(s, dir);
  const double reward = -step_penalty_ + (next == goal() ? 1.0 : 0.0);
  return {index_obs(next), reward, next == goal()};
}

Mdp GridworldEnv::exact_mdp() const {
  const Index n = spec().observation_dim;
  std::vector<MatrixXd> P(4, MatrixXd::Zero(n, n));
  MatrixXd r = MatrixXd::Zero(n, 4);
  for (Index s = 0; s < n; ++s) {
    for (Index a = 0; a < 4; ++a) {
      if (s == goal()) {
        P[a](s, s) = 1.0;
        continue;
      }
      P[a](s, move(s, a)) += 1.0 - slip_;
      P[a](s, move(s, (a + 1) % 4)) += 0.5 * slip_;
      P[a](s, move(s, (a + 3) % 4)) += 0.5 * slip_;
      r(s, a) = -step_penalty_ + P[a](s, goal());
    }
  }
  return Mdp(std::move(P), std::move(r), VectorXd::Constant(n, 1.0 / static_cast<double>(n)),
             spec().discount);
}

std::optional<double> GridworldEnv::exact_eta(const PolicyFamily& family, const VectorXd& theta) const {
  const Mdp mdp = exact_mdp();
  return categorical_eta(mdp, family, theta, mdp.initial_dist());
}

std::optional<double> GridworldEnv::optimal_eta() const { return value_iteration(exact_mdp()).eta_star; }

// ---------------------------------------------------------------------------
// Linear-quadratic

namespace {

EnvSpec lq_spec(const EnvConfig& config) {
  const Index dim = config.kind == EnvKind::point_mass_2d ? 2 : 1;
  return {config.kind, false, dim, dim, or_default(config.horizon, 64), or_default(config.discount, 0.99)};
}

}  // namespace

LinearQuadraticEnv::LinearQuadraticEnv(const EnvConfig& config)
    : Environment(lq_spec(config)),
      a_(config.kind == EnvKind::lq_scalar ? config.lq_a : 1.0),
      b_(config.kind == EnvKind::lq_scalar ? config.lq_b : 1.0),
      q_(config.lq_q),
      c_(config.lq_c) {
  if (config.kind != EnvKind::point_mass_1d && config.kind != EnvKind::point_mass_2d &&
      config.kind != EnvKind::lq_scalar) {
    throw std::invalid_argument("not a linear-quadratic environment kind");
  }
  if (!std::isfinite(a_) || !std::isfinite(b_) || b_ == 0.0) throw std::invalid_argument("LQ dynamics must be finite with b != 0");
  if (!(q_ > 0.0) || !(c_ > 0.0)) throw std::invalid_argument("LQ cost weights must be positive");
  if (!(spec().discount > 0.0 && spec().discount < 1.0)) throw std::invalid_argument("discount must lie in (0, 1)");
}

Observation LinearQuadraticEnv::reset(Rng& rng) const {
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  Observation x(spec().observation_dim);
  for (Index i = 0; i < x.size(); ++i) x(i) = unit(rng);
  return x;
}

StepResult LinearQuadraticEnv::step(const Observation& state, const Action& action, Rng& /*rng*/) const {
  if (state.size() != spec().observation_dim || action.size() != spec().action_dim) {
    throw std::invalid_argument("LQ step: dimension mismatch");
  }
  const double reward = -(q_ * state.squaredNorm() + c_ * action.squaredNorm());
  return {a_ * state + b_ * action, reward, false};
}

double LinearQuadraticEnv::linear_gaussian_eta(const MatrixXd& K, const VectorXd& k0,
                                               const VectorXd& sigma) const {
  const Index d = spec().observation_dim;
  const MatrixXd M = a_ * MatrixXd::Identity(d, d) + b_ * K;
  const VectorXd u = b_ * k0;
  const MatrixXd noise = (b_ * b_) * sigma.array().square().matrix().asDiagonal();
  VectorXd m = VectorXd::Zero(d);
  MatrixXd S = MatrixXd::Identity(d, d) / 3.0;
  const double gamma = spec().discount;
  double eta = 0.0;
  double disc = 1.0;
  for (int t = 0; t < spec().horizon; ++t) {
    // E|a|^2 = tr(K S K^T) + 2 k0^T K m + |k0|^2 + |sigma|^2
    const double act2 = (K * S * K.transpose()).trace() + 2.0 * k0.dot(K * m) + k0.squaredNorm() +
                        sigma.squaredNorm();
    eta += disc * -(q_ * S.trace() + c_ * act2);
    const VectorXd Mm = M * m;
    S = M * S * M.transpose() + Mm * u.transpose() + u * Mm.transpose() + u * u.transpose() + noise;
    m = Mm + u;
    disc *= gamma;
  }
  return eta;
}

std::optional<double> LinearQuadraticEnv::exact_eta(const PolicyFamily& family, const VectorXd& theta) const {
  if (!family.is_gaussian() || family.spec().kind != FeatureKind::linear) return std::nullopt;
  const Index d = spec().observation_dim;
  if (family.spec().feature_dim != d + 1 || family.spec().action_dim != d) {
    throw std::invalid_argument("policy shape does not match the environment");
  }
  const auto params = GaussianPolicyParams::from_flat(family.spec(), theta);
  return linear_gaussian_eta(params.theta_mu.leftCols(d), params.theta_mu.col(d),
                             params.log_std.array().exp().matrix());
}

double LinearQuadraticEnv::optimal_gain() const {
  const Index d = spec().observation_dim;
  const VectorXd zero = VectorXd::Zero(d);
  auto f = [&](double k) { return linear_gaussian_eta(k * MatrixXd::Identity(d, d), zero, zero); };
  // Closed-loop factor a + b k swept over [-1.5, 1.5].
  const double lo = (-1.5 - a_) / b_;
  const double hi = (1.5 - a_) / b_;
  const double k_min = std::min(lo, hi);
  const double k_max = std::max(lo, hi);
  constexpr int kGrid = 3000;
  double best_k = k_min;
  double best = f(k_min);
  for (int i = 1; i <= kGrid; ++i) {
    const double k = k_min + (k_max - k_min) * i / kGrid;
    const double v = f(k);
    if (v > best) {
      best = v;
      best_k = k;
    }
  }
  const double h = (k_max - k_min) / kGrid;
  double x0 = best_k - h;
  double x3 = best_k + h;
  const double ratio = (std::sqrt(5.0) - 1.0) / 2.0;
  double x1 = x3 - ratio * (x3 - x0);
  double x2 = x0 + ratio * (x3 - x0);
  double f1 = f(x1);
  double f2 = f(x2);
  for (int it = 0; it < 200 && x3 - x0 > 1e-13; ++it) {
    if (f1 > f2) {
      x3 = x2;
      x2 = x1;
      f2 = f1;
      x1 = x3 - ratio * (x3 - x0);
      f1 = f(x1);
    } else {
      x0 = x1;
      x1 = x2;
      f1 = f2;
      x2 = x0 + ratio * (x3 - x0);
      f2 = f(x2);
    }
  }
  return 0.5 * (x0 + x3);
}

std::optional<double> LinearQuadraticEnv::optimal_eta() const {
  const Index d = spec().observation_dim;
  const VectorXd zero = VectorXd::Zero(d);
  return linear_gaussian_eta(optimal_gain() * MatrixXd::Identity(d, d), zero, zero);
}

// ---------------------------------------------------------------------------

std::unique_ptr<Environment> make_env(const EnvConfig& config) {
  switch (config.kind) {
    case EnvKind::chain: return std::make_unique<ChainEnv>(config);
    case EnvKind::gridworld: return std::make_unique<GridworldEnv>(config);
    case EnvKind::point_mass_1d:
    case EnvKind::point_mass_2d:
    case EnvKind::lq_scalar: return std::make_unique<LinearQuadraticEnv>(config);
  }
  throw std::invalid_argument("unknown environment kind");
}

Observation reset(const Environment& env, std::uint64_t seed) {
  Rng rng(seed);
  return env.reset(rng);
}

TabularPolicy tabular_policy_from(const PolicyFamily& family, const VectorXd& theta, Index n_states) {
  const auto* cat = dynamic_cast<const CategoricalPolicy*>(&family);
  if (cat == nullptr || family.spec().kind != FeatureKind::tabular) {
    throw std::invalid_argument("tabular policy export needs a categorical policy with tabular features");
  }
  MatrixXd probs(n_states, family.spec().action_dim);
  for (Index s = 0; s < n_states; ++s) {
    probs.row(s) = cat->probabilities(theta, family.features(index_obs(s))).transpose();
  }
  return TabularPolicy(probs);
}

}  // namespace stro
