#include "stro/verification.hpp"

#include "stro/envs.hpp"
#include "stro/mdp.hpp"
#include "stro/numerics.hpp"
#include "stro/policy.hpp"
#include "stro/sampler.hpp"
#include "stro/stro.hpp"
#include "stro/tabular_tr.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <iomanip>
#include <ostream>
#include <random>
#include <sstream>

namespace stro {

namespace {

constexpr double kPi = 3.14159265358979323846;

CheckResult make_check(std::string name, double tol, double observed, std::string detail = {}) {
  return {std::move(name), tol, observed, std::isfinite(observed) && observed <= tol, std::move(detail)};
}

VectorXd random_vector(Index n, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  VectorXd v(n);
  for (Index i = 0; i < n; ++i) v(i) = normal(rng);
  return v;
}

CheckResult check_bellman(std::uint64_t seed) {
  double worst = 0.0;
  for (int t = 0; t < 10; ++t) {
    const Mdp mdp = random_mdp(5, 3, 0.9, seed + t);
    const TabularPolicy pi = random_policy(5, 3, seed + 100 + t);
    const EvalResult ev = evaluate(mdp, pi);
    for (Index s = 0; s < 5; ++s) {
      double vs = 0.0;
      double adv = 0.0;
      for (Index a = 0; a < 3; ++a) {
        double backup = mdp.reward()(s, a);
        for (Index n = 0; n < 5; ++n) backup += mdp.discount() * mdp.p(s, a, n) * ev.v(n);
        worst = std::max(worst, std::abs(ev.q(s, a) - backup));
        vs += pi(s, a) * ev.q(s, a);
        adv += pi(s, a) * ev.adv(s, a);
      }
      worst = std::max({worst, std::abs(vs - ev.v(s)), std::abs(adv)});
    }
    worst = std::max(worst, std::abs(ev.visit.sum() - 1.0 / (1.0 - mdp.discount())));
    worst = std::max(worst, std::abs(mdp.initial_dist().dot(ev.v) - ev.eta));
  }
  return make_check("mdp.bellman_consistency", 1e-9, worst, "10 random 5x3 MDPs");
}

CheckResult check_performance_difference(std::uint64_t seed) {
  double worst = 0.0;
  const Mdp mdp = random_mdp(6, 3, 0.9, seed);
  for (int t = 0; t < 20; ++t) {
    const TabularPolicy pi = random_policy(6, 3, seed + 2 * t + 1);
    const TabularPolicy other = random_policy(6, 3, seed + 2 * t + 2);
    const EvalResult ev = evaluate(mdp, pi);
    const EvalResult ev_other = evaluate(mdp, other);
    double rhs = 0.0;
    for (Index s = 0; s < 6; ++s)
      for (Index a = 0; a < 3; ++a) rhs += ev_other.visit(s) * other(s, a) * ev.adv(s, a);
    worst = std::max(worst, std::abs(ev_other.eta - ev.eta - rhs));
  }
  return make_check("mdp.performance_difference", 1e-9, worst, "20 random policy pairs");
}

CheckResult check_first_order_matching(std::uint64_t seed) {
  const Mdp mdp = random_mdp(4, 3, 0.9, seed);
  Rng rng(seed);
  MatrixXd logits(4, 3);
  for (Index i = 0; i < logits.size(); ++i) logits(i) = random_vector(1, rng)(0);
  const TabularPolicy base = TabularPolicy::softmax(logits);
  const EvalResult ev = evaluate(mdp, base);
  VectorXd analytic(12);
  for (Index s = 0; s < 4; ++s)
    for (Index a = 0; a < 3; ++a) analytic(s * 3 + a) = ev.visit(s) * base(s, a) * ev.adv(s, a);
  auto eta_of = [&](const VectorXd& z) {
    MatrixXd l(4, 3);
    for (Index s = 0; s < 4; ++s)
      for (Index a = 0; a < 3; ++a) l(s, a) = z(s * 3 + a);
    return evaluate(mdp, TabularPolicy::softmax(l)).eta;
  };
  VectorXd z0(12);
  for (Index s = 0; s < 4; ++s)
    for (Index a = 0; a < 3; ++a) z0(s * 3 + a) = logits(s, a);
  const VectorXd fd = central_difference_gradient(eta_of, z0);
  return make_check("mdp.first_order_matching", 1e-5, relative_error(analytic, fd),
                    "grad L at base vs finite-difference grad eta");
}

// Best objective over budget splits for a 2-state/2-action instance: the
// objective is concave piecewise linear in the split, so a fine grid plus the
// two kink points is exact.
double tv_grid_oracle(const TabularPolicy& base, const EvalResult& ev, double delta) {
  std::array<double, 2> gain_rate{};
  std::array<double, 2> movable{};
  for (Index s = 0; s < 2; ++s) {
    const Index best = argmax_action(ev.adv, s);
    gain_rate[s] = ev.adv(s, best) - ev.adv(s, 1 - best);
    movable[s] = base(s, 1 - best);
  }
  auto value = [&](double t) {
    double L = ev.eta + ev.visit.dot((base.probs().cwiseProduct(ev.adv)).rowwise().sum());
    const double budget[2] = {t * delta, (1.0 - t) * delta};
    for (Index s = 0; s < 2; ++s) {
      const double m = std::min(budget[s] / ev.visit(s), movable[s]);
      L += ev.visit(s) * m * gain_rate[s];
    }
    return L;
  };
  std::vector<double> ts;
  for (int i = 0; i <= 10000; ++i) ts.push_back(i * 1e-4);
  ts.push_back(std::clamp(ev.visit(0) * movable[0] / delta, 0.0, 1.0));
  ts.push_back(std::clamp(1.0 - ev.visit(1) * movable[1] / delta, 0.0, 1.0));
  double best = -std::numeric_limits<double>::infinity();
  for (double t : ts) best = std::max(best, value(t));
  return best;
}

CheckResult check_tv_subproblem(std::uint64_t seed) {
  double worst = 0.0;
  for (int t = 0; t < 50; ++t) {
    const Mdp mdp = random_mdp(2, 2, 0.9, seed + 1000 + t);
    const TabularPolicy base = random_policy(2, 2, seed + 2000 + t);
    const EvalResult ev = evaluate(mdp, base);
    const double delta = 0.05 + 0.5 * (t % 10) / 10.0;
    const TabularPolicy sol = solve_tv_subproblem(mdp, base, ev, delta);
    const double got = surrogate_L(mdp, base, ev, sol);
    worst = std::max(worst, std::abs(got - tv_grid_oracle(base, ev, delta)));
    worst = std::max(worst, std::max(0.0, weighted_tv(ev.visit, base, sol) - delta));
  }
  return make_check("tabular.tv_subproblem_vs_grid", 1e-9, worst, "50 random 2x2 instances");
}

CheckResult check_lemmas_and_convergence(std::uint64_t seed, CheckResult& convergence) {
  int violations = 0;
  double gap = 0.0;
  int iterations = 0;
  for (int t = 0; t < 5; ++t) {
    const Mdp mdp = random_mdp(5, 3, 0.9, seed + 3000 + t);
    const TrTrace trace = run(mdp, TabularPolicy::uniform(5, 3), TrConfig{});
    for (const auto& c : check_lemmas(mdp, trace)) violations += c.ok ? 0 : 1;
    gap = std::max(gap, std::abs(trace.final_eta - value_iteration(mdp).eta_star));
    iterations += static_cast<int>(trace.records.size());
  }
  convergence = make_check("tabular.convergence_to_optimum", 1e-6, gap, "5 random 5x3 MDPs");
  return make_check("tabular.lemma_bounds", 0.0, violations,
                    "violations over " + std::to_string(iterations) + " iterations (tol 1e-9)");
}

CheckResult check_cg(std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (int t = 0; t < 5; ++t) {
    MatrixXd M(50, 50);
    for (Index i = 0; i < M.size(); ++i) M(i) = random_vector(1, rng)(0);
    const MatrixXd A = M.transpose() * M / 50.0 + MatrixXd::Identity(50, 50);
    const VectorXd b = random_vector(50, rng);
    CgConfig cfg;
    cfg.residual_tol = 1e-13;
    const CgResult res = conjugate_gradient([&](const VectorXd& v) -> VectorXd { return A * v; }, b, cfg);
    worst = std::max(worst, relative_error(res.x, A.ldlt().solve(b)));
  }
  return make_check("numerics.cg_vs_dense_solve", 1e-8, worst, "5 random 50x50 SPD systems");
}

CheckResult check_line_search(std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (int t = 0; t < 20; ++t) {
    MatrixXd M(3, 3);
    for (Index i = 0; i < M.size(); ++i) M(i) = random_vector(1, rng)(0);
    const MatrixXd Q = M.transpose() * M + 0.1 * MatrixXd::Identity(3, 3);
    const VectorXd c = random_vector(3, rng);
    const VectorXd x0 = random_vector(3, rng);
    const ScalarFunction L = [&](const VectorXd& x) { return c.dot(x) - 0.5 * x.dot(Q * x); };
    const ScalarFunction D = [&](const VectorXd& x) { return 0.5 * (x - x0).dot(Q * (x - x0)); };
    const VectorXd g = c - Q * x0;
    const double delta = 0.01 + 0.1 * t;
    const LineSearchResult r = feasible_line_search(L, D, x0, g, g, delta);
    if (r.alpha > 0.0) {
      const VectorXd x = x0 + r.alpha * g;
      worst = std::max(worst, std::max(0.0, L(x0) + 0.1 * r.alpha * g.dot(g) - L(x)));
      worst = std::max(worst, std::max(0.0, D(x) - delta));
    }
  }
  return make_check("numerics.line_search_conditions", 0.0, worst, "re-evaluated on 20 concave quadratics");
}

CheckResult check_projected_gradient(std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (int t = 0; t < 5; ++t) {
    MatrixXd M(2, 2);
    for (Index i = 0; i < M.size(); ++i) M(i) = random_vector(1, rng)(0);
    const MatrixXd Q = M.transpose() * M + 0.2 * MatrixXd::Identity(2, 2);
    const VectorXd c = random_vector(2, rng, 2.0);
    const VectorXd center = random_vector(2, rng);
    const double radius = 0.5;
    auto f = [&](const VectorXd& x) { return c.dot(x) - 0.5 * x.dot(Q * x); };
    const DifferentiableFunction obj = [&](const VectorXd& x, VectorXd* grad) {
      if (grad != nullptr) *grad = c - Q * x;
      return f(x);
    };
    ProjectedGradientConfig cfg;
    cfg.steps = 5000;
    const VectorXd x = projected_gradient_box(obj, center, radius, center, cfg);
    double best = -std::numeric_limits<double>::infinity();
    VectorXd probe(2);
    for (int i = 0; i <= 400; ++i) {
      for (int j = 0; j <= 400; ++j) {
        probe << center(0) - radius + i * (2 * radius / 400), center(1) - radius + j * (2 * radius / 400);
        best = std::max(best, f(probe));
      }
    }
    worst = std::max(worst, std::abs(f(x) - best));
  }
  return make_check("numerics.projected_gradient_vs_grid", 1e-4, worst, "5 concave quadratics, 401x401 grid");
}

CheckResult check_log_prob_gradient(std::uint64_t seed) {
  Rng rng(seed);
  const MeanModelSpec spec{FeatureKind::linear, 3, 2};
  const GaussianPolicy family(spec);
  double worst = 0.0;
  for (int t = 0; t < 10; ++t) {
    const VectorXd theta = random_vector(family.num_params(), rng, 0.5);
    const VectorXd phi = family.features(random_vector(2, rng));
    const Action a = random_vector(2, rng);
    VectorXd grad = VectorXd::Zero(theta.size());
    family.add_log_prob_gradient(theta, phi, a, 1.0, grad);
    const VectorXd fd = central_difference_gradient(
        [&](const VectorXd& th) { return family.log_prob(th, phi, a); }, theta);
    worst = std::max(worst, relative_error(grad, fd));
  }
  const CategoricalPolicy cat(MeanModelSpec{FeatureKind::tabular, 3, 4});
  for (int t = 0; t < 10; ++t) {
    const VectorXd theta = random_vector(cat.num_params(), rng);
    const VectorXd phi = cat.features(Observation::Constant(1, t % 3));
    const Action a = Action::Constant(1, t % 4);
    VectorXd grad = VectorXd::Zero(theta.size());
    cat.add_log_prob_gradient(theta, phi, a, 1.0, grad);
    const VectorXd fd = central_difference_gradient(
        [&](const VectorXd& th) { return cat.log_prob(th, phi, a); }, theta);
    worst = std::max(worst, relative_error(grad, fd));
  }
  return make_check("policy.log_prob_gradient_fd", 1e-5, worst, "Gaussian and categorical");
}

CheckResult check_fim(std::uint64_t seed) {
  Rng rng(seed);
  const MeanModelSpec spec{FeatureKind::linear, 3, 2};
  const GaussianPolicy family(spec);
  double worst = 0.0;
  for (int t = 0; t < 5; ++t) {
    const VectorXd theta = random_vector(family.num_params(), rng, 0.5);
    std::vector<Observation> states;
    for (int i = 0; i < 8; ++i) states.push_back(random_vector(2, rng));
    const VectorXd v = random_vector(theta.size(), rng);
    const auto params = GaussianPolicyParams::from_flat(spec, theta);
    const VectorXd hv = fim_vector_product(params, states, v, 0.0);
    // q(u) = u^T H u from the symmetric second difference of the mean KL.
    auto mean_kl = [&](const VectorXd& th) {
      double acc = 0.0;
      for (const auto& s : states) acc += family.kl(theta, th, family.features(s));
      return acc / static_cast<double>(states.size());
    };
    const double h = 1e-3;
    auto q = [&](const VectorXd& u) { return (mean_kl(theta + h * u) + mean_kl(theta - h * u)) / (h * h); };
    VectorXd fd(theta.size());
    for (Index i = 0; i < theta.size(); ++i) {
      const VectorXd e = VectorXd::Unit(theta.size(), i);
      fd(i) = (q(e + v) - q(e - v)) / 4.0;
    }
    worst = std::max(worst, relative_error(hv, fd));
  }
  return make_check("policy.fim_vs_kl_hessian_fd", 1e-4, worst, "Gaussian linear mean, 8 states");
}

CheckResult check_kl_quadrature(std::uint64_t seed) {
  Rng rng(seed);
  const MeanModelSpec spec{FeatureKind::tabular, 1, 1};
  double worst = 0.0;
  for (int t = 0; t < 10; ++t) {
    const VectorXd a = random_vector(2, rng, 0.7);
    const VectorXd b = random_vector(2, rng, 0.7);
    const auto p_old = GaussianPolicyParams::from_flat(spec, a);
    const auto p_new = GaussianPolicyParams::from_flat(spec, b);
    const double kl = kl_divergence(p_old, p_new, Observation::Constant(1, 0.0));
    const double mo = a(0), so = std::exp(a(1)), mn = b(0), sn = std::exp(b(1));
    const int n = 40000;
    const double lo = mo - 14 * so, hi = mo + 14 * so, h = (hi - lo) / n;
    double acc = 0.0;
    for (int i = 0; i <= n; ++i) {
      const double x = lo + i * h;
      const double lp = -0.5 * std::pow((x - mo) / so, 2) - std::log(so) - 0.5 * std::log(2 * kPi);
      const double lq = -0.5 * std::pow((x - mn) / sn, 2) - std::log(sn) - 0.5 * std::log(2 * kPi);
      const double w = (i == 0 || i == n) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
      acc += w * std::exp(lp) * (lp - lq);
    }
    worst = std::max(worst, std::abs(kl - acc * h / 3.0));
  }
  return make_check("policy.kl_vs_quadrature", 1e-6, worst, "1-D Simpson rule");
}

CheckResult check_gae(std::uint64_t seed, bool mutate) {
  Rng rng(seed);
  std::uniform_int_distribution<int> len(1, 50);
  std::bernoulli_distribution coin(0.5);
  ValueBaseline baseline(FeatureKind::linear, 1);
  double worst = 0.0;
  const double lambdas[] = {0.0, 0.5, 0.95, 1.0};
  for (int ep = 0; ep < 200; ++ep) {
    baseline.set_params(random_vector(2, rng));
    const int T = len(rng);
    const bool terminal = coin(rng);
    TrajectoryBatch batch;
    Observation s = random_vector(1, rng);
    for (int t = 0; t < T; ++t) {
      Observation next = random_vector(1, rng);
      const bool last = t + 1 == T;
      batch.transitions.push_back({s, Action::Zero(1), random_vector(1, rng)(0), next, last && terminal, last, 0, t});
      s = next;
    }
    const double gamma = 0.9 + 0.09 * coin(rng);
    for (double lambda : lambdas) {
      GaeConfig cfg;
      cfg.gamma = gamma;
      cfg.lambda = lambda;
      cfg.mutate_sign_flip = mutate;
      const AdvantageTable adv = gae(batch, baseline, cfg);
      for (int t = 0; t < T; ++t) {
        double expected = 0.0;
        double w = 1.0;
        for (int j = t; j < T; ++j) {
          const auto& tr = batch.transitions[static_cast<std::size_t>(j)];
          const double boot = tr.done ? 0.0 : baseline(tr.next_state);
          expected += w * (tr.reward + gamma * boot - baseline(tr.state));
          w *= gamma * lambda;
        }
        worst = std::max(worst, std::abs(adv.values(t) - expected));
      }
    }
  }
  return make_check("sampler.gae_vs_forward_sum", 1e-10, worst,
                    mutate ? "MUTATION: sign flip injected" : "200 random episodes x 4 lambdas");
}

CheckResult check_surrogate_gradient(std::uint64_t seed) {
  EnvConfig ec;
  ec.kind = EnvKind::point_mass_2d;
  const auto env = make_env(ec);
  StroConfig sc;
  const auto family = default_policy_family(*env, sc);
  Rng rng(seed);
  const VectorXd theta_old = random_vector(family->num_params(), rng, 0.02);
  const TrajectoryBatch batch = collect(*env, *family, theta_old, 64, seed);
  AdvantageTable adv{random_vector(batch.count(), rng), 0.95, 0.99};
  double worst = 0.0;
  for (int t = 0; t < 5; ++t) {
    const VectorXd theta = theta_old + random_vector(theta_old.size(), rng, 0.05);
    const SurrogateEstimator est(*family, theta_old, batch, adv);
    const VectorXd fd = central_difference_gradient([&](const VectorXd& th) { return est.L(th); }, theta);
    worst = std::max(worst, relative_error(est.grad(theta), fd));
  }
  return make_check("sampler.surrogate_gradient_fd", 1e-5, worst, "point_mass_2d batch of 64");
}

CheckResult check_ratio_and_mu() {
  StroConfig cfg;
  double err = std::abs(stochastic_ratio(2.0, 1.0, 0.5, 3.0, 2.5) - 1.0);
  err = std::max(err, std::abs(update_mu(0.05, 0.5, cfg) - 0.1));
  err = std::max(err, std::abs(update_mu(0.05, -0.05, cfg) - 0.04));
  err = std::max(err, std::abs(update_mu(cfg.mu_min, -10.0, cfg) - cfg.mu_min));
  return make_check("stro.ratio_and_mu_arithmetic", 1e-15, err, "fixed synthetic inputs");
}

}  // namespace

std::vector<CheckResult> run_verification(const VerifyOptions& options) {
  const std::uint64_t seed = options.seed;
  std::vector<CheckResult> out;
  out.push_back(check_bellman(seed));
  out.push_back(check_performance_difference(seed));
  out.push_back(check_first_order_matching(seed));
  out.push_back(check_tv_subproblem(seed));
  CheckResult convergence;
  out.push_back(check_lemmas_and_convergence(seed, convergence));
  out.push_back(convergence);
  out.push_back(check_cg(seed));
  out.push_back(check_line_search(seed));
  out.push_back(check_projected_gradient(seed));
  out.push_back(check_log_prob_gradient(seed));
  out.push_back(check_fim(seed));
  out.push_back(check_kl_quadrature(seed));
  out.push_back(check_gae(seed, options.mutate_gae));
  out.push_back(check_surrogate_gradient(seed));
  out.push_back(check_ratio_and_mu());
  return out;
}

void print_check_table(std::ostream& out, const std::vector<CheckResult>& checks) {
  std::size_t width = 5;
  for (const auto& c : checks) width = std::max(width, c.name.size());
  out << std::left << std::setw(static_cast<int>(width)) << "check" << "  " << std::setw(10) << "tolerance"
      << "  " << std::setw(12) << "observed" << "  result  detail\n";
  for (const auto& c : checks) {
    std::ostringstream tol, obs;
    tol << std::setprecision(3) << c.tolerance;
    obs << std::setprecision(3) << c.observed;
    out << std::left << std::setw(static_cast<int>(width)) << c.name << "  " << std::setw(10) << tol.str() << "  "
        << std::setw(12) << obs.str() << "  " << (c.pass ? "PASS  " : "FAIL  ") << "  " << c.detail << '\n';
  }
  out << std::right;
}

}  // namespace stro
