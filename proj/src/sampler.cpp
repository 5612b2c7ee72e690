#include "stro/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <stdexcept>
#include <thread>

namespace stro {

void TrajectoryBatch::recompute_statistics() {
  const auto n = static_cast<double>(episode_returns.size());
  eta_hat = 0.0;
  sigma_eta_hat.reset();
  if (episode_returns.empty()) return;
  for (double r : episode_returns) eta_hat += r;
  eta_hat /= n;
  if (episode_returns.size() < 2) return;
  double ss = 0.0;
  for (double r : episode_returns) ss += (r - eta_hat) * (r - eta_hat);
  sigma_eta_hat = std::sqrt(ss / (n - 1.0));
}

void TrajectoryBatch::append(const TrajectoryBatch& other) {
  int offset = 0;
  for (const auto& tr : transitions) offset = std::max(offset, tr.episode_id + 1);
  transitions.reserve(transitions.size() + other.transitions.size());
  for (auto tr : other.transitions) {
    tr.episode_id += offset;
    transitions.push_back(std::move(tr));
  }
  episode_returns.insert(episode_returns.end(), other.episode_returns.begin(), other.episode_returns.end());
  recompute_statistics();
}

namespace {

TrajectoryBatch collect_worker(const Environment& env, const PolicyFamily& family, const VectorXd& theta,
                               Index n, Rng rng) {
  TrajectoryBatch batch;
  batch.transitions.reserve(static_cast<std::size_t>(n));
  const double gamma = env.spec().discount;
  const int horizon = env.spec().horizon;
  int episode = 0;
  int t = 0;
  double ret = 0.0;
  double disc = 1.0;
  Observation s = env.reset(rng);
  for (Index i = 0; i < n; ++i) {
    Action a = family.sample(theta, family.features(s), rng);
    StepResult step = env.step(s, a, rng);
    if (!std::isfinite(step.reward)) throw std::runtime_error("environment returned a non-finite reward");
    ret += disc * step.reward;
    disc *= gamma;
    const bool done = step.done || t + 1 >= horizon;
    Transition tr{s, std::move(a), step.reward, step.next_state, done, done || i + 1 == n, episode, t};
    batch.transitions.push_back(std::move(tr));
    if (done) {
      batch.episode_returns.push_back(ret);
      ++episode;
      t = 0;
      ret = 0.0;
      disc = 1.0;
      s = env.reset(rng);
    } else {
      ++t;
      s = std::move(step.next_state);
    }
  }
  batch.recompute_statistics();
  return batch;
}

}  // namespace

TrajectoryBatch collect(const Environment& env, const PolicyFamily& family, const VectorXd& theta,
                        Index n_transitions, std::uint64_t seed, int workers) {
  if (n_transitions < 1) throw std::invalid_argument("collect: need at least one transition");
  if (workers < 1) throw std::invalid_argument("collect: need at least one worker");
  if (theta.size() != family.num_params() || !theta.allFinite()) {
    throw std::invalid_argument("collect: invalid policy parameters");
  }
  workers = static_cast<int>(std::min<Index>(workers, n_transitions));
  std::vector<Rng> rngs;
  for (int w = 0; w < workers; ++w) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(w)};
    rngs.emplace_back(seq);
  }
  std::vector<Index> sizes(workers, n_transitions / workers);
  for (Index w = 0; w < n_transitions % workers; ++w) ++sizes[w];

  std::vector<TrajectoryBatch> parts(workers);
  if (workers == 1) {
    parts[0] = collect_worker(env, family, theta, sizes[0], rngs[0]);
  } else {
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          parts[w] = collect_worker(env, family, theta, sizes[w], rngs[w]);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  TrajectoryBatch out = std::move(parts[0]);
  for (int w = 1; w < workers; ++w) out.append(parts[w]);
  return out;
}

// ---------------------------------------------------------------------------

ValueBaseline::ValueBaseline(FeatureKind kind, Index input_dim)
    : map_(kind, input_dim), params_(VectorXd::Zero(map_.dim())) {}

void ValueBaseline::set_params(VectorXd params) {
  if (params.size() != map_.dim()) throw std::invalid_argument("baseline parameter size mismatch");
  if (!params.allFinite()) throw std::invalid_argument("baseline parameters must be finite");
  params_ = std::move(params);
}

AdvantageTable gae(const TrajectoryBatch& batch, const ValueBaseline& baseline, const GaeConfig& config) {
  const Index n = batch.count();
  AdvantageTable out{VectorXd::Zero(n), config.lambda, config.gamma};
  const double sign = config.mutate_sign_flip ? -1.0 : 1.0;
  double next = 0.0;
  for (Index i = n - 1; i >= 0; --i) {
    const Transition& tr = batch.transitions[static_cast<std::size_t>(i)];
    const double bootstrap = tr.done ? 0.0 : baseline(tr.next_state);
    const double delta = tr.reward + config.gamma * bootstrap - baseline(tr.state);
    const double carry = tr.segment_end ? 0.0 : next;
    out.values(i) = delta + sign * config.gamma * config.lambda * carry;
    next = out.values(i);
  }
  if (config.normalize && n > 1) {
    const double mean = out.values.mean();
    const double sd = std::sqrt((out.values.array() - mean).square().sum() / static_cast<double>(n - 1));
    out.values = (out.values.array() - mean) / std::max(sd, 1e-12);
  }
  return out;
}

AdvantageTable gae(const TrajectoryBatch& batch, const ValueBaseline& baseline, double gamma, double lambda) {
  GaeConfig cfg;
  cfg.gamma = gamma;
  cfg.lambda = lambda;
  return gae(batch, baseline, cfg);
}

// ---------------------------------------------------------------------------

SurrogateEstimator::SurrogateEstimator(const PolicyFamily& family, const VectorXd& theta_old,
                                       const TrajectoryBatch& batch, const AdvantageTable& advantages)
    : family_(family), theta_old_(theta_old), eta_hat_old_(batch.eta_hat) {
  const Index n = batch.count();
  if (n == 0) throw std::invalid_argument("surrogate: empty batch");
  if (advantages.values.size() != n) throw std::invalid_argument("surrogate: advantage length mismatch");
  phi_.reserve(static_cast<std::size_t>(n));
  actions_.reserve(static_cast<std::size_t>(n));
  logp_old_.resize(n);
  for (Index i = 0; i < n; ++i) {
    const Transition& tr = batch.transitions[static_cast<std::size_t>(i)];
    phi_.push_back(family.features(tr.state));
    actions_.push_back(tr.action);
    logp_old_(i) = family.log_prob(theta_old, phi_.back(), tr.action);
    if (!std::isfinite(logp_old_(i))) throw std::runtime_error("surrogate: zero sampling density");
  }
  adv_ = advantages.values;
}

template <class F>
void SurrogateEstimator::for_each(std::span<const Index> subset, F&& f) const {
  if (subset.empty()) {
    for (Index i = 0; i < size(); ++i) f(i);
  } else {
    for (Index i : subset) f(i);
  }
}

double SurrogateEstimator::denom(std::span<const Index> subset) const {
  return static_cast<double>(subset.empty() ? size() : static_cast<Index>(subset.size()));
}

double SurrogateEstimator::L(const VectorXd& theta, std::span<const Index> subset) const {
  double acc = 0.0;
  for_each(subset, [&](Index i) {
    acc += std::exp(family_.log_prob(theta, phi_[i], actions_[i]) - logp_old_(i)) * adv_(i);
  });
  return eta_hat_old_ + acc / denom(subset);
}

VectorXd SurrogateEstimator::grad(const VectorXd& theta, std::span<const Index> subset) const {
  VectorXd g = VectorXd::Zero(theta.size());
  VectorXd scratch = VectorXd::Zero(theta.size());
  for_each(subset, [&](Index i) {
    scratch.setZero();
    const double lp = family_.add_log_prob_gradient(theta, phi_[i], actions_[i], 1.0, scratch);
    g += (std::exp(lp - logp_old_(i)) * adv_(i)) * scratch;
  });
  return g / denom(subset);
}

double SurrogateEstimator::D(const VectorXd& theta, std::span<const Index> subset) const {
  double acc = 0.0;
  for_each(subset, [&](Index i) { acc += family_.kl(theta_old_, theta, phi_[i]); });
  return acc / denom(subset);
}

VectorXd SurrogateEstimator::fim_product(const VectorXd& theta, const VectorXd& v,
                                         std::span<const Index> subset) const {
  VectorXd out = VectorXd::Zero(theta.size());
  const double w = 1.0 / denom(subset);
  for_each(subset, [&](Index i) { family_.add_fim_product(theta, phi_[i], v, w, out); });
  return out;
}

double SurrogateEstimator::entropy(const VectorXd& theta, std::span<const Index> subset) const {
  double acc = 0.0;
  for_each(subset, [&](Index i) { acc += family_.entropy(theta, phi_[i]); });
  return acc / denom(subset);
}

SurrogateValues empirical_L_g_D(const PolicyFamily& family, const VectorXd& theta_new,
                                const VectorXd& theta_old, const TrajectoryBatch& batch,
                                const AdvantageTable& advantages) {
  const SurrogateEstimator est(family, theta_old, batch, advantages);
  return {est.L(theta_new), est.grad(theta_new), est.D(theta_new)};
}

// ---------------------------------------------------------------------------

namespace {

void design_and_targets(const ValueBaseline& reference, const TrajectoryBatch& batch,
                        const AdvantageTable& advantages, MatrixXd& X, VectorXd& y) {
  const Index n = batch.count();
  if (n == 0) throw std::invalid_argument("fit_baseline: empty batch");
  if (advantages.values.size() != n) throw std::invalid_argument("fit_baseline: advantage length mismatch");
  X.resize(n, reference.features().dim());
  y.resize(n);
  for (Index i = 0; i < n; ++i) {
    const auto& s = batch.transitions[static_cast<std::size_t>(i)].state;
    X.row(i) = reference.features()(s).transpose();
    y(i) = reference.params().dot(X.row(i).transpose()) + advantages.values(i);
  }
}

}  // namespace

double baseline_loss(const ValueBaseline& model, const ValueBaseline& reference, const TrajectoryBatch& batch,
                     const AdvantageTable& advantages) {
  MatrixXd X;
  VectorXd y;
  design_and_targets(reference, batch, advantages, X, y);
  return (X * model.params() - y).squaredNorm() / static_cast<double>(y.size());
}

ValueBaseline fit_baseline(const ValueBaseline& baseline, const TrajectoryBatch& batch,
                           const AdvantageTable& advantages, const BaselineFitConfig& config) {
  MatrixXd X;
  VectorXd y;
  design_and_targets(baseline, batch, advantages, X, y);
  const double n = static_cast<double>(y.size());
  ValueBaseline out = baseline;

  if (config.method == BaselineFitMethod::exact) {
    const Eigen::ColPivHouseholderQR<MatrixXd> qr(X);
    if (qr.rank() == X.cols()) {
      out.set_params(qr.solve(y));
    } else {
      const MatrixXd G = X.transpose() * X + config.ridge * MatrixXd::Identity(X.cols(), X.cols());
      const VectorXd rhs = X.transpose() * y + config.ridge * baseline.params();
      out.set_params(G.ldlt().solve(rhs));
    }
    return out;
  }

  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kEps = 1e-8;
  VectorXd phi = baseline.params();
  VectorXd m = VectorXd::Zero(phi.size());
  VectorXd v = VectorXd::Zero(phi.size());
  double lr = config.step_size;
  auto loss = [&](const VectorXd& p) { return (X * p - y).squaredNorm() / n; };
  double current = loss(phi);
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const VectorXd g = (2.0 / n) * (X.transpose() * (X * phi - y));
    m = kBeta1 * m + (1.0 - kBeta1) * g;
    v = kBeta2 * v + (1.0 - kBeta2) * g.cwiseAbs2();
    const VectorXd m_hat = m / (1.0 - std::pow(kBeta1, epoch));
    const VectorXd v_hat = v / (1.0 - std::pow(kBeta2, epoch));
    const VectorXd candidate = phi - lr * (m_hat.array() / (v_hat.array().sqrt() + kEps)).matrix();
    const double next = loss(candidate);
    if (next <= current) {
      phi = candidate;
      current = next;
    } else {
      lr *= 0.5;
    }
  }
  out.set_params(phi);
  return out;
}

double sample_entropy(const PolicyFamily& family, const VectorXd& theta, const TrajectoryBatch& batch) {
  if (batch.transitions.empty()) throw std::invalid_argument("sample_entropy: empty batch");
  double acc = 0.0;
  for (const auto& tr : batch.transitions) acc += family.entropy(theta, family.features(tr.state));
  return acc / static_cast<double>(batch.transitions.size());
}

void write_batch_csv(std::ostream& out, const TrajectoryBatch& batch) {
  if (batch.transitions.empty()) {
    out << "episode_id,t,reward,done\n";
    return;
  }
  const auto& first = batch.transitions.front();
  out << "episode_id,t";
  for (Index i = 0; i < first.state.size(); ++i) out << ",state_" << i;
  for (Index i = 0; i < first.action.size(); ++i) out << ",action_" << i;
  out << ",reward,done\n";
  out << std::setprecision(17);
  for (const auto& tr : batch.transitions) {
    out << tr.episode_id << ',' << tr.t;
    for (Index i = 0; i < tr.state.size(); ++i) out << ',' << tr.state(i);
    for (Index i = 0; i < tr.action.size(); ++i) out << ',' << tr.action(i);
    out << ',' << tr.reward << ',' << (tr.done ? 1 : 0) << '\n';
  }
}

}  // namespace stro
