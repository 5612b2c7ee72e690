#include "stro/stro.hpp"

#include "stro/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <stdexcept>

namespace stro {

void StroConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("StroConfig: ") + what);
  };
  require(N >= 1, "N must be positive");
  require(max_rejections_before_force >= 1 || N_max > 0, "max_rejections_before_force must be positive");
  require(n_max() > N, "N_max must exceed N");
  require(mu0 > 0.0, "mu0 must be positive");
  require(mu_min > 0.0 && mu_min < mu_max, "need 0 < mu_min < mu_max");
  require(beta0 < 0.0 && 0.0 <= beta1, "need beta0 < 0 <= beta1");
  require(0.0 < gamma3 && gamma3 < gamma2 && gamma2 <= 1.0 && 1.0 < gamma1,
          "need 0 < gamma3 < gamma2 <= 1 < gamma1");
  require(inner_eps > 0.0, "inner_eps must be positive");
  require(inner_check_period >= 1, "inner_check_period must be positive");
  require(max_inner_iters >= 1, "max_inner_iters must be positive");
  require(sigma_bound_scale >= 0.0, "sigma_bound_scale must be nonnegative");
  require(sigma_steps >= 0, "sigma_steps must be nonnegative");
  require(tau_armijo > 0.0 && tau_armijo < 1.0, "tau_armijo must lie in (0, 1)");
  require(minibatch >= 1, "minibatch must be positive");
  require(fim_damping >= 0.0, "fim_damping must be nonnegative");
  require(sigma_floor > 0.0, "sigma_floor must be positive");
  require(std::isfinite(initial_log_std) && initial_log_std >= std::log(sigma_floor),
          "initial_log_std must be finite and above the sigma floor");
  require(gae_lambda >= 0.0 && gae_lambda <= 1.0, "gae_lambda must lie in [0, 1]");
  require(baseline_fit.epochs >= 0 && baseline_fit.step_size > 0.0 && baseline_fit.ridge > 0.0,
          "invalid baseline fit settings");
  require(max_env_steps >= N, "max_env_steps must allow one batch");
  require(max_iters >= 0, "max_iters must be nonnegative");
  require(workers >= 1, "workers must be positive");
}

std::string to_string(Decision d) {
  switch (d) {
    case Decision::accept: return "accept";
    case Decision::reject: return "reject";
    case Decision::force: return "force";
  }
  return "unknown";
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(seed) ^ stream) ^ index);
}

// ---------------------------------------------------------------------------

InnerResult inner_solve(const SurrogateEstimator& est, const VectorXd& theta_k, double delta_k,
                        const StroConfig& config, Rng& rng, std::optional<std::pair<Index, Index>> block) {
  if (est.size() == 0) throw std::invalid_argument("inner_solve: empty buffer");
  const Index n = theta_k.size();
  const auto [lo, hi] = block.value_or(std::make_pair(Index{0}, n));
  if (lo < 0 || hi > n || lo >= hi) throw std::invalid_argument("inner_solve: invalid parameter block");
  const Index m = hi - lo;

  InnerResult res;
  res.theta = theta_k;
  auto with_block = [&](const VectorXd& base, const VectorXd& part) {
    VectorXd full = base;
    full.segment(lo, m) = part;
    return full;
  };

  std::vector<Index> all(static_cast<std::size_t>(est.size()));
  std::iota(all.begin(), all.end(), Index{0});
  std::vector<Index> mb;
  const double ent_k = est.entropy(theta_k);

  for (int l = 1; l <= config.max_inner_iters; ++l) {
    mb.clear();
    if (est.size() > config.minibatch) {
      std::sample(all.begin(), all.end(), std::back_inserter(mb), config.minibatch, rng);
    }
    const VectorXd& theta = res.theta;
    const VectorXd g = est.grad(theta, mb).segment(lo, m);
    if (!(g.norm() > 0.0) || !g.allFinite()) break;

    const LinearOperator fim = [&](const VectorXd& v) -> VectorXd {
      VectorXd full = VectorXd::Zero(n);
      full.segment(lo, m) = v;
      return est.fim_product(theta_k, full, mb).segment(lo, m) + config.fim_damping * v;
    };
    VectorXd d;
    try {
      const CgResult cg = conjugate_gradient(fim, g);
      d = cg.x;
      if (!cg.converged || !(d.dot(g) > 0.0)) d.resize(0);
    } catch (const std::runtime_error&) {
      d.resize(0);
    }
    if (d.size() == 0) {
      d = g;
      ++res.cg_fallbacks;
    }
    const double dHd = d.dot(fim(d));
    LineSearchConfig ls;
    ls.tau_armijo = config.tau_armijo;
    ls.initial_step = (dHd > 0.0 ? std::min(1.0, std::sqrt(2.0 * delta_k / dHd)) : 1.0) * (1.0 - 1e-9);

    const ScalarFunction eval_L = [&](const VectorXd& x) { return est.L(with_block(theta, x), mb); };
    const ScalarFunction eval_D = [&](const VectorXd& x) { return est.D(with_block(theta, x)); };
    const VectorXd x0 = theta.segment(lo, m);
    const LineSearchResult step = feasible_line_search(eval_L, eval_D, x0, d, g, delta_k, ls);
    if (step.alpha == 0.0) {
      res.stopped_by_test = true;
      break;
    }
    VectorXd next = with_block(theta, x0 + step.alpha * d);
    ++res.iterations;

    if (l % config.inner_check_period == 0) {
      const double L_cur = est.L(theta);
      const double L_next = est.L(next);
      const double ent_next = est.entropy(next);
      const bool stagnant = std::abs(L_next - L_cur) / (1.0 + std::abs(L_cur)) <= config.inner_eps;
      const bool drifting = std::abs(ent_next - ent_k) / (1.0 + std::abs(ent_k)) >= config.inner_eps;
      res.theta = std::move(next);
      if (stagnant || drifting) {
        res.stopped_by_test = true;
        break;
      }
    } else {
      res.theta = std::move(next);
    }
  }
  return res;
}

AlternatingResult alternating_gaussian_step(const GaussianPolicy& family, const SurrogateEstimator& est,
                                            const VectorXd& theta_k, double delta_k,
                                            const StroConfig& config, Rng& rng) {
  const auto [ls_lo, ls_hi] = *family.log_std_block();
  const Index n_ls = ls_hi - ls_lo;

  AlternatingResult out;
  out.mean_stage = inner_solve(est, theta_k, delta_k, config, rng, std::make_pair(Index{0}, ls_lo));
  const VectorXd mean_point = out.mean_stage.theta;
  out.L_mean_stage = est.L(mean_point);

  const double ent_k = est.entropy(theta_k);
  out.sigma_bound = config.sigma_bound_scale * std::abs(ent_k);
  const VectorXd center = theta_k.segment(ls_lo, n_ls);

  auto assemble = [&](const VectorXd& log_std) {
    VectorXd full = mean_point;
    full.segment(ls_lo, n_ls) = log_std;
    return full;
  };
  const DifferentiableFunction objective = [&](const VectorXd& log_std, VectorXd* grad) {
    const VectorXd theta = assemble(log_std);
    if (est.D(theta) > delta_k) return -std::numeric_limits<double>::infinity();
    if (grad != nullptr) *grad = est.grad(theta).segment(ls_lo, n_ls);
    return est.L(theta);
  };

  VectorXd log_std = center;
  if (out.sigma_bound > 0.0 && config.sigma_steps > 0) {
    ProjectedGradientConfig pg;
    pg.steps = config.sigma_steps;
    pg.lower_bound = VectorXd::Constant(n_ls, family.log_std_floor());
    log_std = projected_gradient_box(objective, center, out.sigma_bound, center, pg);
  }
  out.theta = assemble(log_std);
  out.L_sigma_stage = est.L(out.theta);
  out.sigma_step_inf = (log_std - center).cwiseAbs().maxCoeff();
  out.floor_clamped = (log_std.array() <= family.log_std_floor()).any();
  return out;
}

double stochastic_ratio(double eta_hat_trial, double eta_hat_old, std::optional<double> sigma_eta_old,
                        double L_trial, double L_old) {
  if (!(L_trial > L_old)) return -std::numeric_limits<double>::infinity();
  return (eta_hat_trial - eta_hat_old) / (sigma_eta_old.value_or(0.0) + (L_trial - L_old));
}

double update_mu(double mu, double ratio, const StroConfig& config) {
  if (ratio >= config.beta1) return std::min(config.gamma1 * mu, config.mu_max);
  if (ratio >= config.beta0) return std::max(config.gamma2 * mu, config.mu_min);
  return std::max(config.gamma3 * mu, config.mu_min);
}

Decision accept_or_reject(TrustRegionState& state, const VectorXd& theta_trial, TrajectoryBatch trial_batch,
                          double ratio, const StroConfig& config,
                          const std::function<std::optional<TrajectoryBatch>()>& sample_fresh) {
  if (ratio >= config.beta1) {
    state.theta = theta_trial;
    state.buffer = std::move(trial_batch);
    state.history.clear();
    state.consecutive_rejections = 0;
    return Decision::accept;
  }
  if (state.buffer.count() < config.n_max()) {
    const double eta = trial_batch.eta_hat;
    state.history.push_back({theta_trial, std::move(trial_batch), eta});
    if (auto fresh = sample_fresh()) state.buffer.append(*fresh);
    ++state.consecutive_rejections;
    return Decision::reject;
  }
  if (state.history.empty()) throw std::logic_error("forced acceptance with an empty rejection set");
  auto best = std::max_element(state.history.begin(), state.history.end(),
                               [](const auto& a, const auto& b) { return a.eta_hat < b.eta_hat; });
  state.theta = best->theta;
  state.buffer = std::move(best->batch);
  state.history.erase(best);
  state.consecutive_rejections = 0;
  return Decision::force;
}

// ---------------------------------------------------------------------------

std::unique_ptr<PolicyFamily> default_policy_family(const Environment& env, const StroConfig& config) {
  const EnvSpec& spec = env.spec();
  if (spec.discrete) {
    return std::make_unique<CategoricalPolicy>(
        MeanModelSpec{FeatureKind::tabular, spec.observation_dim, spec.action_dim});
  }
  return std::make_unique<GaussianPolicy>(
      MeanModelSpec{FeatureKind::linear, spec.observation_dim + 1, spec.action_dim}, config.sigma_floor);
}

VectorXd default_initial_theta(const PolicyFamily& family, const StroConfig& config) {
  VectorXd theta = VectorXd::Zero(family.num_params());
  if (auto block = family.log_std_block()) {
    theta.segment(block->first, block->second - block->first).setConstant(config.initial_log_std);
  }
  return theta;
}

namespace {

ValueBaseline make_baseline(const Environment& env) {
  const EnvSpec& spec = env.spec();
  return spec.discrete ? ValueBaseline(FeatureKind::tabular, spec.observation_dim)
                       : ValueBaseline(FeatureKind::quadratic, spec.observation_dim);
}

void append_note(std::string& notes, const char* note) {
  if (!notes.empty()) notes += ';';
  notes += note;
}

}  // namespace

StroResult run_stro(const Environment& env, const PolicyFamily& family, const VectorXd& theta0,
                    const StroConfig& config, const IterationCallback& on_iteration) {
  config.validate();
  if (theta0.size() != family.num_params() || !theta0.allFinite()) {
    throw std::invalid_argument("run_stro: invalid initial parameters");
  }
  const auto* gaussian = dynamic_cast<const GaussianPolicy*>(&family);
  if (gaussian != nullptr) {
    const auto [lo, hi] = *gaussian->log_std_block();
    if ((theta0.segment(lo, hi - lo).array() < gaussian->log_std_floor()).any()) {
      throw std::invalid_argument("run_stro: initial log-std below the sigma floor");
    }
  }
  const double gamma = env.spec().discount;
  auto exact = [&](const VectorXd& theta) {
    return env.exact_eta(family, theta).value_or(std::numeric_limits<double>::quiet_NaN());
  };

  StroResult res;
  std::uint64_t n_collects = 0;
  auto sample = [&](const VectorXd& theta) {
    res.env_steps += config.N;
    return collect(env, family, theta, config.N, derive_seed(config.seed, 1, n_collects++), config.workers);
  };

  TrustRegionState st;
  st.theta = theta0;
  st.mu = config.mu0;
  st.buffer = sample(theta0);

  ValueBaseline baseline = make_baseline(env);
  baseline = fit_baseline(baseline, st.buffer, gae(st.buffer, baseline, gamma, 1.0), config.baseline_fit);

  GaeConfig gae_cfg;
  gae_cfg.gamma = gamma;
  gae_cfg.lambda = config.gae_lambda;
  gae_cfg.normalize = config.normalize_advantages;
  GaeConfig fit_cfg = gae_cfg;
  fit_cfg.normalize = false;

  StroConfig inner_cfg = config;
  if (config.natural_gradient_only) inner_cfg.max_inner_iters = 1;

  res.initial_exact_eta = exact(theta0);
  double eta_k = res.initial_exact_eta;

  for (int k = 0; config.max_iters == 0 || k < config.max_iters; ++k) {
    if (res.env_steps + config.N > config.max_env_steps) break;
    IterationRecord rec;
    rec.iter = k;
    rec.mu = st.mu;
    rec.buffer_size = st.buffer.count();
    rec.exact_eta = eta_k;

    const AdvantageTable adv = gae(st.buffer, baseline, gae_cfg);
    const SurrogateEstimator est(family, st.theta, st.buffer, adv);
    const VectorXd g = est.grad(st.theta);
    rec.grad_norm = g.norm();
    st.delta = st.mu * rec.grad_norm;
    rec.delta = st.delta;
    rec.entropy = est.entropy(st.theta);

    Rng rng(derive_seed(config.seed, 2, static_cast<std::uint64_t>(k)));
    VectorXd theta_trial;
    if (gaussian != nullptr && config.alternating && !config.natural_gradient_only) {
      const AlternatingResult alt = alternating_gaussian_step(*gaussian, est, st.theta, st.delta, inner_cfg, rng);
      theta_trial = alt.theta;
      rec.inner_iters = alt.mean_stage.iterations;
      rec.sigma_bound = alt.sigma_bound;
      rec.sigma_step_inf = alt.sigma_step_inf;
      rec.floor_clamped = alt.floor_clamped;
      if (alt.mean_stage.cg_fallbacks > 0) append_note(rec.notes, "cg_fallback");
    } else {
      const InnerResult inner = inner_solve(est, st.theta, st.delta, inner_cfg, rng);
      theta_trial = inner.theta;
      rec.inner_iters = inner.iterations;
      if (inner.cg_fallbacks > 0) append_note(rec.notes, "cg_fallback");
      if (gaussian != nullptr) {
        const auto [lo, hi] = *gaussian->log_std_block();
        rec.sigma_step_inf = (theta_trial.segment(lo, hi - lo) - st.theta.segment(lo, hi - lo)).cwiseAbs().maxCoeff();
      }
    }

    const double L_old = est.L(st.theta);
    const double L_trial = est.L(theta_trial);
    rec.L_improvement = L_trial - L_old;
    rec.kl_trial = est.D(theta_trial);
    rec.entropy_trial = est.entropy(theta_trial);

    TrajectoryBatch trial_batch = sample(theta_trial);
    rec.eta_hat_old = st.buffer.eta_hat;
    rec.eta_hat_trial = trial_batch.eta_hat;
    rec.sigma_eta = st.buffer.sigma_eta_hat.value_or(std::numeric_limits<double>::quiet_NaN());
    if (!st.buffer.sigma_eta_hat) append_note(rec.notes, "sigma_undefined");
    if (!(L_trial > L_old)) append_note(rec.notes, "nonpositive_prediction");
    rec.ratio = stochastic_ratio(trial_batch.eta_hat, st.buffer.eta_hat, st.buffer.sigma_eta_hat, L_trial, L_old);
    st.mu = update_mu(st.mu, rec.ratio, config);

    bool budget_hit = false;
    const VectorXd theta_k = st.theta;
    rec.decision = accept_or_reject(st, theta_trial, std::move(trial_batch), rec.ratio, config,
                                    [&]() -> std::optional<TrajectoryBatch> {
                                      if (res.env_steps + config.N > config.max_env_steps) {
                                        budget_hit = true;
                                        return std::nullopt;
                                      }
                                      return sample(theta_k);
                                    });
    if (budget_hit) append_note(rec.notes, "budget_exhausted");
    if (rec.decision == Decision::force) append_note(rec.notes, "forced");
    if (rec.decision != Decision::reject) eta_k = exact(st.theta);
    rec.exact_eta_next = eta_k;
    rec.history_size = static_cast<Index>(st.history.size());
    rec.env_steps = res.env_steps;

    baseline = fit_baseline(baseline, st.buffer, gae(st.buffer, baseline, fit_cfg), config.baseline_fit);

    res.records.push_back(rec);
    if (on_iteration) on_iteration(rec, st.theta);
    if (budget_hit) break;
  }
  res.final_theta = st.theta;
  res.final_baseline = baseline.params();
  res.final_exact_eta = eta_k;
  return res;
}

// ---------------------------------------------------------------------------

void write_run_csv_header(std::ostream& out) {
  out << "iter,decision,eta_hat_old,eta_hat_trial,sigma_eta,L_improvement,ratio,mu,delta,grad_norm,"
         "entropy,entropy_trial,sigma_step_inf,sigma_bound,kl_trial,buffer_size,history_size,env_steps,"
         "inner_iters,exact_eta,exact_eta_next,floor_clamped,notes\n";
}

void write_run_csv_row(std::ostream& out, const IterationRecord& r) {
  out << std::setprecision(17);
  out << r.iter << ',' << to_string(r.decision) << ',' << r.eta_hat_old << ',' << r.eta_hat_trial << ','
      << r.sigma_eta << ',' << r.L_improvement << ',' << r.ratio << ',' << r.mu << ',' << r.delta << ','
      << r.grad_norm << ',' << r.entropy << ',' << r.entropy_trial << ',' << r.sigma_step_inf << ','
      << r.sigma_bound << ',' << r.kl_trial << ',' << r.buffer_size << ',' << r.history_size << ','
      << r.env_steps << ',' << r.inner_iters << ',' << r.exact_eta << ',' << r.exact_eta_next << ','
      << (r.floor_clamped ? 1 : 0) << ',' << r.notes << '\n';
}

}  // namespace stro
