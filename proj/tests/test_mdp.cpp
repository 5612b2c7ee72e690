#include "oracles.hpp"

#include "stro/mdp.hpp"

#include <doctest.h>

#include <random>

using namespace stro;

namespace {

std::vector<MatrixXd> transitions_of(const Mdp& mdp) {
  std::vector<MatrixXd> P;
  for (Index a = 0; a < mdp.n_actions(); ++a) P.push_back(mdp.transition(a));
  return P;
}

Mdp two_state_mdp() {
  MatrixXd P0(2, 2), P1(2, 2), R(2, 2);
  P0 << 0.9, 0.1, 0.2, 0.8;
  P1 << 0.3, 0.7, 0.6, 0.4;
  R << 1.0, 0.0, 0.5, 2.0;
  VectorXd rho(2);
  rho << 0.4, 0.6;
  return Mdp({P0, P1}, R, rho, 0.9);
}

}  // namespace

TEST_CASE("construction rejects malformed models") {
  MatrixXd P = MatrixXd::Identity(2, 2);
  MatrixXd R = MatrixXd::Zero(2, 1);
  VectorXd rho = VectorXd::Constant(2, 0.5);
  CHECK_NOTHROW(Mdp({P}, R, rho, 0.5));
  CHECK_THROWS_AS(Mdp({P}, R, rho, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(Mdp({P}, R, rho, -0.1), std::invalid_argument);
  MatrixXd bad = P;
  bad(0, 0) = 0.9;
  CHECK_THROWS_AS(Mdp({bad}, R, rho, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(Mdp({P}, R, VectorXd::Constant(2, 0.4), 0.5), std::invalid_argument);
  CHECK_THROWS_AS(Mdp({P, P}, R, rho, 0.5), std::invalid_argument);
  MatrixXd negative = P;
  negative(0, 0) = 1.5;
  negative(0, 1) = -0.5;
  CHECK_THROWS_AS(Mdp({negative}, R, rho, 0.5), std::invalid_argument);
}

TEST_CASE("policy rows are renormalized") {
  MatrixXd probs(1, 2);
  probs << 0.5 + 1e-13, 0.5;
  const TabularPolicy pi(probs);
  CHECK(pi.probs().row(0).sum() == doctest::Approx(1.0).epsilon(1e-16));
  probs << 0.6, 0.5;
  CHECK_THROWS_AS(TabularPolicy{probs}, std::invalid_argument);
}

TEST_CASE("one state with reward 1 and gamma 0.9 has eta 10") {
  const Mdp mdp({MatrixXd::Ones(1, 1)}, MatrixXd::Ones(1, 1), VectorXd::Ones(1), 0.9);
  const auto ev = evaluate(mdp, TabularPolicy::uniform(1, 1));
  CHECK(ev.eta == doctest::Approx(10.0).epsilon(1e-14));
  CHECK(value_iteration(mdp).eta_star == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(optimal_advantage(mdp, ev) == 0.0);
}

TEST_CASE("evaluate matches iterated Bellman backups and the visitation series") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Mdp mdp = random_mdp(6, 3, 0.85, seed);
    const TabularPolicy pi = random_policy(6, 3, seed + 100);
    const auto ev = evaluate(mdp, pi);
    const auto P = transitions_of(mdp);
    const VectorXd v = oracle::iterate_values(P, mdp.reward(), pi.probs(), mdp.discount());
    CHECK((ev.v - v).cwiseAbs().maxCoeff() < 1e-10);
    const VectorXd visit = oracle::visitation_series(P, pi.probs(), mdp.initial_dist(), mdp.discount());
    CHECK((ev.visit - visit).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(ev.visit.sum() == doctest::Approx(1.0 / (1.0 - mdp.discount())).epsilon(1e-12));
    CHECK(ev.eta == doctest::Approx(mdp.initial_dist().dot(v)).epsilon(1e-12));
    for (Index s = 0; s < 6; ++s) CHECK(std::abs(pi.probs().row(s).dot(ev.adv.row(s))) < 1e-10);
  }
}

TEST_CASE("surrogate and policy advantage identities") {
  const Mdp mdp = two_state_mdp();
  const TabularPolicy base = random_policy(2, 2, 3);
  const auto ev = evaluate(mdp, base);
  CHECK(surrogate_L(mdp, base, ev, base) == doctest::Approx(ev.eta).epsilon(1e-14));
  CHECK(std::abs(policy_advantage(mdp, ev, base)) < 1e-12);

  // Direct double sum.
  const TabularPolicy cand = random_policy(2, 2, 4);
  double direct = ev.eta;
  for (Index s = 0; s < 2; ++s)
    for (Index a = 0; a < 2; ++a) direct += ev.visit(s) * cand(s, a) * ev.adv(s, a);
  CHECK(std::abs(surrogate_L(mdp, base, ev, cand) - direct) < 1e-12);
  CHECK(std::abs(surrogate_L(mdp, base, ev, cand) - ev.eta - policy_advantage(mdp, ev, cand)) < 1e-12);

  const TabularPolicy greedy = greedy_policy(ev);
  const double astar = optimal_advantage(mdp, ev);
  CHECK(astar >= 0.0);
  CHECK(surrogate_L(mdp, base, ev, greedy) == doctest::Approx(ev.eta + astar).epsilon(1e-13));
}

TEST_CASE("performance difference identity on random pairs") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Mdp mdp = random_mdp(5, 3, 0.9, seed);
    const TabularPolicy pi = random_policy(5, 3, 2 * seed + 1);
    const TabularPolicy other = random_policy(5, 3, 2 * seed + 2);
    const auto ev = evaluate(mdp, pi);
    const auto ev_other = evaluate(mdp, other);
    double expected = 0.0;
    for (Index s = 0; s < 5; ++s)
      for (Index a = 0; a < 3; ++a) expected += ev_other.visit(s) * other(s, a) * ev.adv(s, a);
    CHECK(std::abs(ev_other.eta - ev.eta - expected) < 1e-9);
  }
}

TEST_CASE("value iteration is optimal against the Bellman optimality oracle") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Mdp mdp = random_mdp(5, 3, 0.9, seed);
    const auto vi = value_iteration(mdp);
    const VectorXd vstar = oracle::optimal_values(transitions_of(mdp), mdp.reward(), mdp.discount());
    CHECK(std::abs(vi.eta_star - mdp.initial_dist().dot(vstar)) < 1e-9);
    CHECK(optimal_advantage(mdp, evaluate(mdp, vi.policy)) < 1e-9);
    CHECK(optimal_advantage(mdp, evaluate(mdp, TabularPolicy::uniform(5, 3))) > 0.0);
    for (std::uint64_t k = 0; k < 100; ++k) {
      CHECK(evaluate(mdp, random_policy(5, 3, 1000 * seed + k)).eta <= vi.eta_star + 1e-12);
    }
  }
}

TEST_CASE("one action means zero optimal advantage") {
  const Mdp mdp = random_mdp(4, 1, 0.8, 11);
  CHECK(optimal_advantage(mdp, evaluate(mdp, TabularPolicy::uniform(4, 1))) == doctest::Approx(0.0));
}

TEST_CASE("finite horizon evaluation approaches the discounted value") {
  const Mdp mdp = random_mdp(4, 2, 0.8, 5);
  const TabularPolicy pi = random_policy(4, 2, 6);
  const double full = evaluate(mdp, pi).eta;
  CHECK(evaluate_finite_horizon(mdp, pi, 0) == 0.0);
  CHECK(evaluate_finite_horizon(mdp, pi, 1) == doctest::Approx(mdp.initial_dist().dot((pi.probs().cwiseProduct(mdp.reward())).rowwise().sum())));
  CHECK(std::abs(evaluate_finite_horizon(mdp, pi, 300) - full) < 1e-12);
}

TEST_CASE("argmax ties go to the lowest index") {
  MatrixXd t(1, 3);
  t << 1.0, 2.0, 2.0;
  CHECK(argmax_action(t, 0) == 1);
}

TEST_CASE("evaluate is deterministic") {
  const Mdp mdp = random_mdp(5, 3, 0.9, 3);
  const TabularPolicy pi = random_policy(5, 3, 9);
  const auto a = evaluate(mdp, pi);
  const auto b = evaluate(mdp, pi);
  CHECK(a.eta == b.eta);
  CHECK(a.v == b.v);
}
