#include "oracles.hpp"

#include "stro/envs.hpp"
#include "stro/stro.hpp"

#include <doctest.h>

#include <cmath>

using namespace stro;

namespace {

Observation idx(Index s) { return VectorXd::Constant(1, static_cast<double>(s)); }

}  // namespace

TEST_CASE("kind names round trip") {
  for (auto k : {EnvKind::chain, EnvKind::gridworld, EnvKind::point_mass_1d, EnvKind::point_mass_2d, EnvKind::lq_scalar})
    CHECK(env_kind_from_string(to_string(k)) == k);
  CHECK_THROWS_AS(env_kind_from_string("cartpole"), std::invalid_argument);
}

TEST_CASE("chain dynamics and exact model") {
  EnvConfig cfg;
  cfg.chain_slip = 0.0;
  cfg.chain_uniform_start = false;
  const auto env = make_env(cfg);
  Rng rng(0);
  CHECK(env->step(idx(3), idx(1), rng).next_state(0) == 4.0);
  CHECK(env->step(idx(3), idx(0), rng).next_state(0) == 2.0);
  CHECK(env->step(idx(7), idx(1), rng).reward == 1.0);
  CHECK(env->step(idx(6), idx(1), rng).reward == 0.0);
  for (std::uint64_t seed = 0; seed < 10; ++seed) CHECK(reset(*env, seed)(0) == 0.0);

  // Point-mass start: no tabular export, but exact eta still works.
  const auto fam = default_policy_family(*env, StroConfig{});
  CHECK(env->exact_eta(*fam, default_initial_theta(*fam, StroConfig{})).has_value());

  EnvConfig uni;
  uni.chain_slip = 0.0;
  const Mdp mdp = make_env(uni)->exact_mdp();
  CHECK(mdp.n_states() == 8);
  CHECK(mdp.n_actions() == 2);
  for (Index a = 0; a < 2; ++a) CHECK((mdp.transition(a).rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-15);

  // Deterministic chain: walk right, then collect +1 forever.
  const double g = mdp.discount();
  double want = 0.0;
  for (int s = 0; s < 8; ++s) want += std::pow(g, 7 - s) / (1 - g) / 8.0;
  CHECK(value_iteration(mdp).eta_star == doctest::Approx(want).epsilon(1e-12));
  CHECK(make_env(uni)->optimal_eta().value() == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("chain slip reverses the move") {
  EnvConfig cfg;
  cfg.chain_slip = 0.25;
  const Mdp mdp = make_env(cfg)->exact_mdp();
  CHECK(mdp.p(3, 1, 4) == doctest::Approx(0.75));
  CHECK(mdp.p(3, 1, 2) == doctest::Approx(0.25));
  CHECK(mdp.p(0, 0, 0) == doctest::Approx(0.75));
}

TEST_CASE("empirical start distribution matches the uniform start") {
  const auto env = make_env(EnvConfig{});
  Rng rng(12);
  const int n = 100000;
  VectorXd counts = VectorXd::Zero(8);
  for (int i = 0; i < n; ++i) counts(static_cast<Index>(env->reset(rng)(0))) += 1.0;
  const double expected = n / 8.0;
  const double chi2 = (counts.array() - expected).square().sum() / expected;
  // 0.999 quantile of chi-square with 7 degrees of freedom.
  CHECK(chi2 < 24.32);
}

TEST_CASE("gridworld dynamics") {
  EnvConfig cfg;
  cfg.kind = EnvKind::gridworld;
  const auto env = make_env(cfg);
  const auto& grid = dynamic_cast<const GridworldEnv&>(*env);
  Rng rng(0);
  // Wall bump from the top-left corner going up.
  const auto bump = env->step(idx(0), idx(0), rng);
  CHECK(bump.next_state(0) == 0.0);
  CHECK(bump.reward == doctest::Approx(-cfg.step_penalty));
  CHECK_FALSE(bump.done);
  CHECK(grid.move(0, 1) == 1);
  CHECK(grid.move(0, 2) == 4);
  CHECK(grid.move(5, 3) == 4);
  const auto enter = env->step(idx(14), idx(1), rng);
  CHECK(enter.next_state(0) == 15.0);
  CHECK(enter.done);
  CHECK(enter.reward == doctest::Approx(1.0 - cfg.step_penalty));
  CHECK(reset(*env, 3) == reset(*env, 3));

  EnvConfig slip = cfg;
  slip.grid_slip = 0.2;
  const Mdp mdp = make_env(slip)->exact_mdp();
  CHECK(mdp.n_states() == 16);
  for (Index a = 0; a < 4; ++a) CHECK((mdp.transition(a).rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-14);
  // From cell 5 moving right: intended 6, perpendicular up 1 and down 9.
  CHECK(mdp.p(5, 1, 6) == doctest::Approx(0.8));
  CHECK(mdp.p(5, 1, 1) == doctest::Approx(0.1));
  CHECK(mdp.p(5, 1, 9) == doctest::Approx(0.1));
  CHECK(mdp.p(15, 2, 15) == 1.0);
}

TEST_CASE("point mass dynamics") {
  EnvConfig cfg;
  cfg.kind = EnvKind::point_mass_1d;
  const auto env = make_env(cfg);
  Rng rng(0);
  const Observation s = VectorXd::Constant(1, 0.6);
  const auto r = env->step(s, -s, rng);
  CHECK(r.next_state(0) == 0.0);
  CHECK(r.reward == doctest::Approx(-(0.36 + 0.1 * 0.36)));
  for (std::uint64_t seed = 0; seed < 20; ++seed) CHECK(std::abs(reset(*env, seed)(0)) <= 1.0);
  CHECK_THROWS_AS(env->exact_mdp(), std::logic_error);
}

TEST_CASE("LQ exact eta matches the moment recursion and Monte Carlo") {
  EnvConfig cfg;
  cfg.kind = EnvKind::lq_scalar;
  cfg.lq_a = 0.9;
  cfg.lq_b = 0.5;
  const auto env = make_env(cfg);
  const auto& lq = dynamic_cast<const LinearQuadraticEnv&>(*env);
  const auto& sp = env->spec();
  for (double k : {-1.0, -0.3, 0.2}) {
    const double got = lq.linear_gaussian_eta(MatrixXd::Constant(1, 1, k), VectorXd::Constant(1, 0.1),
                                              VectorXd::Constant(1, 0.4));
    const double want = oracle::lq_scalar_eta(0.9, 0.5, 1.0, 0.1, sp.discount, sp.horizon, k, 0.1, 0.4);
    CHECK(got == doctest::Approx(want).epsilon(1e-12));
  }

  // Through the policy family: theta = [k, k0, log sd].
  const auto fam = default_policy_family(*env, StroConfig{});
  VectorXd theta(3);
  theta << -0.5, 0.05, std::log(0.3);
  const double exact = env->exact_eta(*fam, theta).value();
  CHECK(exact == doctest::Approx(oracle::lq_scalar_eta(0.9, 0.5, 1.0, 0.1, sp.discount, sp.horizon, -0.5, 0.05, 0.3)));
  Rng rng(99);
  const int episodes = 20000;
  double sum = 0.0, sumsq = 0.0;
  for (int e = 0; e < episodes; ++e) {
    Observation s = env->reset(rng);
    double ret = 0.0, disc = 1.0;
    for (int t = 0; t < sp.horizon; ++t) {
      const Action a = fam->sample(theta, fam->features(s), rng);
      const auto step = env->step(s, a, rng);
      ret += disc * step.reward;
      disc *= sp.discount;
      s = step.next_state;
    }
    sum += ret;
    sumsq += ret * ret;
  }
  const double mean = sum / episodes;
  const double se = std::sqrt((sumsq / episodes - mean * mean) / episodes);
  CHECK(std::abs(mean - exact) < 4 * se);
}

TEST_CASE("LQ optimal gain beats a fine grid of gains") {
  EnvConfig cfg;
  cfg.kind = EnvKind::point_mass_1d;
  const auto env = make_env(cfg);
  const auto& lq = dynamic_cast<const LinearQuadraticEnv&>(*env);
  const auto& sp = env->spec();
  const double kstar = lq.optimal_gain();
  const double best = oracle::lq_scalar_eta(1, 1, 1, 0.1, sp.discount, sp.horizon, kstar, 0, 0);
  CHECK(env->optimal_eta().value() == doctest::Approx(best).epsilon(1e-12));
  for (int i = 0; i <= 4000; ++i) {
    const double k = -2.5 + 2.0 * i / 4000.0;
    CHECK(oracle::lq_scalar_eta(1, 1, 1, 0.1, sp.discount, sp.horizon, k, 0, 0) <= best + 1e-10);
  }
}

TEST_CASE("tabular policy from categorical logits") {
  const auto env = make_env(EnvConfig{});
  const auto fam = default_policy_family(*env, StroConfig{});
  VectorXd theta = VectorXd::Zero(fam->num_params());
  const TabularPolicy pi = tabular_policy_from(*fam, theta, 8);
  CHECK((pi.probs().array() - 0.5).abs().maxCoeff() < 1e-15);
  EnvConfig pm;
  pm.kind = EnvKind::point_mass_1d;
  const auto cont = make_env(pm);
  const auto gfam = default_policy_family(*cont, StroConfig{});
  CHECK_THROWS_AS(tabular_policy_from(*gfam, default_initial_theta(*gfam, StroConfig{}), 8), std::invalid_argument);
}
