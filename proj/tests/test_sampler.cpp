#include "oracles.hpp"

#include "stro/envs.hpp"
#include "stro/sampler.hpp"
#include "stro/stro.hpp"

#include <doctest.h>

#include <sstream>

using namespace stro;

namespace {

/// One state, one action, reward 1, every episode lasts one step.
class OneStepEnv final : public Environment {
 public:
  OneStepEnv() : Environment({EnvKind::chain, true, 1, 1, 1, 0.9}) {}
  Observation reset(Rng&) const override { return VectorXd::Zero(1); }
  StepResult step(const Observation& s, const Action&, Rng&) const override { return {s, 1.0, true}; }
  std::optional<double> exact_eta(const PolicyFamily&, const VectorXd&) const override { return 1.0; }
  std::optional<double> optimal_eta() const override { return 1.0; }
};

VectorXd randn(Index n, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  VectorXd v(n);
  for (auto& x : v) x = nd(rng);
  return v;
}

bool same_batch(const TrajectoryBatch& a, const TrajectoryBatch& b) {
  if (a.count() != b.count() || a.episode_returns != b.episode_returns) return false;
  for (std::size_t i = 0; i < a.transitions.size(); ++i) {
    const auto& x = a.transitions[i];
    const auto& y = b.transitions[i];
    if (x.state != y.state || x.action != y.action || x.reward != y.reward || x.done != y.done) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("one-step env: eta_hat 1 and sigma_hat 0") {
  const OneStepEnv env;
  const auto fam = default_policy_family(env, StroConfig{});
  const VectorXd theta = default_initial_theta(*fam, StroConfig{});
  const auto batch = collect(env, *fam, theta, 10, 0);
  CHECK(batch.count() == 10);
  CHECK(batch.episode_returns.size() == 10);
  CHECK(batch.eta_hat == 1.0);
  REQUIRE(batch.sigma_eta_hat.has_value());
  CHECK(*batch.sigma_eta_hat == 0.0);
  const auto single = collect(env, *fam, theta, 1, 0);
  CHECK_FALSE(single.sigma_eta_hat.has_value());
}

TEST_CASE("collection is deterministic per (seed, workers)") {
  EnvConfig cfg;
  cfg.kind = EnvKind::point_mass_2d;
  const auto env = make_env(cfg);
  const auto fam = default_policy_family(*env, StroConfig{});
  const VectorXd theta = default_initial_theta(*fam, StroConfig{});
  CHECK(same_batch(collect(*env, *fam, theta, 500, 4), collect(*env, *fam, theta, 500, 4)));
  CHECK(same_batch(collect(*env, *fam, theta, 500, 4, 3), collect(*env, *fam, theta, 500, 4, 3)));
  CHECK_FALSE(same_batch(collect(*env, *fam, theta, 500, 4), collect(*env, *fam, theta, 500, 5)));
  CHECK(collect(*env, *fam, theta, 500, 4, 3).count() == 500);
}

TEST_CASE("batch bookkeeping: segments, truncated episodes and statistics") {
  const auto env = make_env(EnvConfig{});
  const auto fam = default_policy_family(*env, StroConfig{});
  const VectorXd theta = default_initial_theta(*fam, StroConfig{});
  const auto batch = collect(*env, *fam, theta, 250, 1);  // horizon 100: two full episodes and a partial one
  CHECK(batch.episode_returns.size() == 2);
  CHECK(batch.transitions.back().segment_end);
  CHECK_FALSE(batch.transitions.back().done);
  int ends = 0;
  for (const auto& t : batch.transitions) ends += t.segment_end ? 1 : 0;
  CHECK(ends == 3);
  // Returns recomputed from the transitions.
  std::vector<double> returns;
  double ret = 0.0, disc = 1.0;
  for (const auto& t : batch.transitions) {
    ret += disc * t.reward;
    disc *= env->spec().discount;
    if (t.done) {
      returns.push_back(ret);
      ret = 0.0;
      disc = 1.0;
    }
  }
  REQUIRE(returns.size() == 2);
  CHECK(returns[0] == doctest::Approx(batch.episode_returns[0]).epsilon(1e-14));
  CHECK(returns[1] == doctest::Approx(batch.episode_returns[1]).epsilon(1e-14));
  CHECK(batch.eta_hat == doctest::Approx((returns[0] + returns[1]) / 2));
  CHECK(*batch.sigma_eta_hat == doctest::Approx(std::abs(returns[0] - returns[1]) / std::sqrt(2.0)));

  TrajectoryBatch merged = batch;
  merged.append(collect(*env, *fam, theta, 200, 2));
  CHECK(merged.count() == 450);
  CHECK(merged.episode_returns.size() == 4);
  CHECK(merged.transitions[250].episode_id > merged.transitions[249].episode_id);
}

TEST_CASE("eta_hat is unbiased on the chain") {
  const auto env = make_env(EnvConfig{});
  const auto fam = default_policy_family(*env, StroConfig{});
  const VectorXd theta = default_initial_theta(*fam, StroConfig{});
  const double exact = env->exact_eta(*fam, theta).value();
  const Mdp mdp = env->exact_mdp();
  CHECK(exact == doctest::Approx(evaluate(mdp, TabularPolicy::uniform(8, 2)).eta));

  const auto one = collect(*env, *fam, theta, 4000, 0);
  const double se1 = *one.sigma_eta_hat / std::sqrt(static_cast<double>(one.episode_returns.size()));
  CHECK(std::abs(one.eta_hat - exact) < 3 * se1);

  std::vector<double> etas;
  for (std::uint64_t s = 0; s < 200; ++s) etas.push_back(collect(*env, *fam, theta, 1000, 100 + s).eta_hat);
  double mean = 0.0, var = 0.0;
  for (double e : etas) mean += e / 200.0;
  for (double e : etas) var += (e - mean) * (e - mean) / 199.0;
  CHECK(std::abs(mean - exact) < 4 * std::sqrt(var / 200.0));
}

TEST_CASE("GAE equals the forward sum over 500 episodes") {
  EnvConfig cfg;
  cfg.kind = EnvKind::point_mass_1d;
  cfg.horizon = 20;
  const auto env = make_env(cfg);
  const auto fam = default_policy_family(*env, StroConfig{});
  Rng rng(3);
  const auto batch = collect(*env, *fam, default_initial_theta(*fam, StroConfig{}), 500 * 20 + 7, 11);
  ValueBaseline base(FeatureKind::quadratic, 1);
  base.set_params(randn(base.features().dim(), rng));
  for (double lambda : {0.0, 0.5, 0.95, 1.0}) {
    const auto adv = gae(batch, base, 0.97, lambda);
    double worst = 0.0;
    std::size_t start = 0;
    for (std::size_t i = 0; i < batch.transitions.size(); ++i) {
      if (!batch.transitions[i].segment_end) continue;
      std::vector<double> r, v, nv;
      for (std::size_t j = start; j <= i; ++j) {
        const auto& t = batch.transitions[j];
        r.push_back(t.reward);
        v.push_back(base(t.state));
        nv.push_back(t.done ? 0.0 : base(t.next_state));
      }
      const auto want = oracle::gae_forward(r, v, nv, 0.97, lambda);
      for (std::size_t j = start; j <= i; ++j) worst = std::max(worst, std::abs(adv.values(static_cast<Index>(j)) - want[j - start]));
      start = i + 1;
    }
    CHECK(worst < 1e-9);
  }
  GaeConfig norm;
  norm.normalize = true;
  const auto nadv = gae(batch, base, norm);
  CHECK(std::abs(nadv.values.mean()) < 1e-12);
  CHECK(std::sqrt((nadv.values.array() - nadv.values.mean()).square().mean()) == doctest::Approx(1.0).epsilon(1e-3));

  GaeConfig bad;
  bad.lambda = 0.9;
  bad.mutate_sign_flip = true;
  GaeConfig good = bad;
  good.mutate_sign_flip = false;
  CHECK((gae(batch, base, bad).values - gae(batch, base, good).values).cwiseAbs().maxCoeff() > 1e-3);
}

TEST_CASE("baseline fitting") {
  const auto env = make_env(EnvConfig{});
  const auto fam = default_policy_family(*env, StroConfig{});
  const VectorXd theta = default_initial_theta(*fam, StroConfig{});
  const auto batch = collect(*env, *fam, theta, 3000, 5);
  ValueBaseline ref(FeatureKind::tabular, 8);
  Rng rng(1);
  ref.set_params(randn(8, rng));

  SUBCASE("constant targets give a constant baseline") {
    AdvantageTable adv{VectorXd(batch.count()), 0.95, 0.9};
    for (Index i = 0; i < batch.count(); ++i) adv.values(i) = 2.5 - ref(batch.transitions[i].state);
    const auto fit = fit_baseline(ref, batch, adv);
    for (Index s = 0; s < 8; ++s) CHECK(fit(VectorXd::Constant(1, s)) == doctest::Approx(2.5).epsilon(1e-10));
    CHECK(baseline_loss(fit, ref, batch, adv) < 1e-20);
  }
  SUBCASE("exact values as targets") {
    const auto ev = evaluate(env->exact_mdp(), TabularPolicy::uniform(8, 2));
    AdvantageTable adv{VectorXd(batch.count()), 0.95, 0.9};
    for (Index i = 0; i < batch.count(); ++i) {
      const auto& s = batch.transitions[i].state;
      adv.values(i) = ev.v(static_cast<Index>(s(0))) - ref(s);
    }
    const auto fit = fit_baseline(ref, batch, adv);
    CHECK((fit.params() - ev.v).cwiseAbs().maxCoeff() < 1e-8);
  }
  SUBCASE("Adam agrees with the normal equations and never increases the loss") {
    const auto adv = gae(batch, ref, 0.9, 0.95);
    const auto exact = fit_baseline(ref, batch, adv);
    BaselineFitConfig cfg;
    cfg.method = BaselineFitMethod::adam;
    cfg.epochs = 200;
    cfg.step_size = 0.05;
    double prev = baseline_loss(ref, ref, batch, adv);
    for (int epochs : {1, 5, 20, 50, 100}) {
      BaselineFitConfig partial = cfg;
      partial.epochs = epochs;
      const double loss = baseline_loss(fit_baseline(ref, batch, adv, partial), ref, batch, adv);
      CHECK(loss <= prev + 1e-12);
      prev = loss;
    }
    const auto adam = fit_baseline(ref, batch, adv, cfg);
    CHECK((adam.params() - exact.params()).cwiseAbs().maxCoeff() < 1e-4);
  }
}

TEST_CASE("rank-deficient designs keep unvisited coefficients") {
  const auto env = make_env(EnvConfig{});
  TrajectoryBatch batch;
  for (int i = 0; i < 4; ++i) {
    Transition t;
    t.state = VectorXd::Constant(1, 2.0);
    t.next_state = t.state;
    t.action = VectorXd::Zero(1);
    t.done = i == 3;
    t.segment_end = t.done;
    batch.transitions.push_back(t);
  }
  ValueBaseline ref(FeatureKind::tabular, 8);
  VectorXd p = VectorXd::LinSpaced(8, 1.0, 8.0);
  ref.set_params(p);
  AdvantageTable adv{VectorXd::Constant(4, 1.0), 0.9, 0.9};
  const auto fit = fit_baseline(ref, batch, adv);
  CHECK(fit.params()(2) == doctest::Approx(4.0).epsilon(1e-6));
  CHECK(fit.params()(5) == doctest::Approx(6.0).epsilon(1e-6));
}

TEST_CASE("surrogate estimator") {
  EnvConfig cfg;
  cfg.kind = EnvKind::point_mass_2d;
  const auto env = make_env(cfg);
  const auto fam = default_policy_family(*env, StroConfig{});
  Rng rng(21);
  const VectorXd theta_old = randn(fam->num_params(), rng, 0.02);
  const auto batch = collect(*env, *fam, theta_old, 256, 3);
  AdvantageTable adv{randn(batch.count(), rng), 0.95, 0.99};
  const SurrogateEstimator est(*fam, theta_old, batch, adv);
  CHECK(est.L(theta_old) == doctest::Approx(batch.eta_hat + adv.values.mean()).epsilon(1e-12));
  CHECK(est.D(theta_old) == 0.0);

  const VectorXd theta = theta_old + randn(theta_old.size(), rng, 0.05);
  const VectorXd fd = oracle::fd_gradient([&](const VectorXd& th) { return est.L(th); }, theta);
  CHECK((est.grad(theta) - fd).norm() / std::max(fd.norm(), 1.0) < 1e-6);

  // Direct importance-weighted average.
  double direct = 0.0;
  for (Index i = 0; i < batch.count(); ++i) {
    const auto& t = batch.transitions[i];
    const VectorXd phi = fam->features(t.state);
    direct += std::exp(fam->log_prob(theta, phi, t.action) - fam->log_prob(theta_old, phi, t.action)) * adv.values(i);
  }
  CHECK(est.L(theta) == doctest::Approx(batch.eta_hat + direct / batch.count()).epsilon(1e-12));

  const std::vector<Index> subset{0, 5, 9};
  double sub = 0.0;
  for (Index i : subset) sub += fam->kl(theta_old, theta, fam->features(batch.transitions[i].state));
  CHECK(est.D(theta, subset) == doctest::Approx(sub / 3.0));

  const auto vals = empirical_L_g_D(*fam, theta, theta_old, batch, adv);
  CHECK(vals.L == est.L(theta));
  CHECK(vals.D == est.D(theta));
  CHECK(sample_entropy(*fam, theta, batch) == doctest::Approx(est.entropy(theta)));

  AdvantageTable wrong{VectorXd::Zero(3), 0.95, 0.99};
  CHECK_THROWS_AS(SurrogateEstimator(*fam, theta_old, batch, wrong), std::invalid_argument);
}

TEST_CASE("batch csv") {
  const OneStepEnv env;
  const auto fam = default_policy_family(env, StroConfig{});
  const auto batch = collect(env, *fam, default_initial_theta(*fam, StroConfig{}), 3, 0);
  std::ostringstream out;
  write_batch_csv(out, batch);
  std::istringstream in(out.str());
  std::string header;
  std::getline(in, header);
  CHECK(header == "episode_id,t,state_0,action_0,reward,done");
}
