#include "stro/serialization.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

namespace stro {

namespace {

class KeyReader {
 public:
  KeyReader(const json& j, std::string what) : j_(j), what_(std::move(what)) {
    if (!j.is_object()) throw std::invalid_argument(what_ + ": expected a JSON object");
  }

  template <class T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception& e) {
      throw std::invalid_argument(what_ + "." + key + ": " + e.what());
    }
  }

  const json* sub(const std::string& key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (seen_.count(item.key()) == 0) throw std::invalid_argument(what_ + ": unknown key '" + item.key() + "'");
    }
  }

 private:
  const json& j_;
  std::string what_;
  std::set<std::string> seen_;
};

json matrix_to_json(const MatrixXd& m) {
  json rows = json::array();
  for (Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

MatrixXd matrix_from_json(const json& j, Index rows, Index cols, const std::string& what) {
  if (!j.is_array() || static_cast<Index>(j.size()) != rows) throw std::invalid_argument(what + ": wrong row count");
  MatrixXd m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    const json& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Index>(row.size()) != cols) {
      throw std::invalid_argument(what + ": wrong column count");
    }
    for (Index c = 0; c < cols; ++c) m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

VectorXd vector_from_json(const json& j, Index size, const std::string& what) {
  if (!j.is_array() || static_cast<Index>(j.size()) != size) throw std::invalid_argument(what + ": wrong length");
  VectorXd v(size);
  for (Index i = 0; i < size; ++i) v(i) = j[static_cast<std::size_t>(i)].get<double>();
  return v;
}

json vector_to_json(const VectorXd& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

}  // namespace

json mdp_to_json(const Mdp& mdp) {
  json P = json::array();
  for (Index s = 0; s < mdp.n_states(); ++s) {
    json per_action = json::array();
    for (Index a = 0; a < mdp.n_actions(); ++a) {
      per_action.push_back(vector_to_json(mdp.transition(a).row(s).transpose()));
    }
    P.push_back(std::move(per_action));
  }
  return {{"n_states", mdp.n_states()},
          {"n_actions", mdp.n_actions()},
          {"transition", std::move(P)},
          {"reward", matrix_to_json(mdp.reward())},
          {"initial_dist", vector_to_json(mdp.initial_dist())},
          {"discount", mdp.discount()}};
}

Mdp mdp_from_json(const json& j) {
  try {
    const Index S = j.at("n_states").get<Index>();
    const Index A = j.at("n_actions").get<Index>();
    if (S <= 0 || A <= 0) throw std::invalid_argument("mdp: n_states and n_actions must be positive");
    const json& P = j.at("transition");
    if (!P.is_array() || static_cast<Index>(P.size()) != S) throw std::invalid_argument("mdp.transition: wrong state count");
    std::vector<MatrixXd> transitions(static_cast<std::size_t>(A), MatrixXd(S, S));
    for (Index s = 0; s < S; ++s) {
      const MatrixXd rows = matrix_from_json(P[static_cast<std::size_t>(s)], A, S, "mdp.transition");
      for (Index a = 0; a < A; ++a) transitions[static_cast<std::size_t>(a)].row(s) = rows.row(a);
    }
    return Mdp(std::move(transitions), matrix_from_json(j.at("reward"), S, A, "mdp.reward"),
               vector_from_json(j.at("initial_dist"), S, "mdp.initial_dist"), j.at("discount").get<double>());
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("mdp: ") + e.what());
  }
}

json tr_config_to_json(const TrConfig& c) {
  return {{"beta0", c.beta0},   {"beta1", c.beta1},   {"gamma1", c.gamma1},       {"gamma2", c.gamma2},
          {"gamma3", c.gamma3}, {"delta0", c.delta0}, {"max_iters", c.max_iters}, {"tol_Astar", c.tol_Astar}};
}

TrConfig tr_config_from_json(const json& j) {
  TrConfig c;
  KeyReader r(j, "tabular");
  r.get("beta0", c.beta0);
  r.get("beta1", c.beta1);
  r.get("gamma1", c.gamma1);
  r.get("gamma2", c.gamma2);
  r.get("gamma3", c.gamma3);
  r.get("delta0", c.delta0);
  r.get("max_iters", c.max_iters);
  r.get("tol_Astar", c.tol_Astar);
  r.finish();
  c.validate();
  return c;
}

json stro_config_to_json(const StroConfig& c) {
  return {{"N", c.N},
          {"N_max", c.N_max},
          {"mu0", c.mu0},
          {"mu_min", c.mu_min},
          {"mu_max", c.mu_max},
          {"gamma1", c.gamma1},
          {"gamma2", c.gamma2},
          {"gamma3", c.gamma3},
          {"beta0", c.beta0},
          {"beta1", c.beta1},
          {"inner_eps", c.inner_eps},
          {"inner_check_period", c.inner_check_period},
          {"max_inner_iters", c.max_inner_iters},
          {"max_rejections_before_force", c.max_rejections_before_force},
          {"sigma_bound_scale", c.sigma_bound_scale},
          {"sigma_steps", c.sigma_steps},
          {"tau_armijo", c.tau_armijo},
          {"minibatch", c.minibatch},
          {"fim_damping", c.fim_damping},
          {"sigma_floor", c.sigma_floor},
          {"initial_log_std", c.initial_log_std},
          {"alternating", c.alternating},
          {"natural_gradient_only", c.natural_gradient_only},
          {"gae_lambda", c.gae_lambda},
          {"normalize_advantages", c.normalize_advantages},
          {"baseline_fit",
           {{"method", c.baseline_fit.method == BaselineFitMethod::exact ? "exact" : "adam"},
            {"epochs", c.baseline_fit.epochs},
            {"step_size", c.baseline_fit.step_size},
            {"ridge", c.baseline_fit.ridge}}},
          {"max_env_steps", c.max_env_steps},
          {"max_iters", c.max_iters},
          {"workers", c.workers},
          {"seed", c.seed}};
}

StroConfig stro_config_from_json(const json& j) {
  StroConfig c;
  KeyReader r(j, "stro");
  r.get("N", c.N);
  r.get("N_max", c.N_max);
  r.get("mu0", c.mu0);
  r.get("mu_min", c.mu_min);
  r.get("mu_max", c.mu_max);
  r.get("gamma1", c.gamma1);
  r.get("gamma2", c.gamma2);
  r.get("gamma3", c.gamma3);
  r.get("beta0", c.beta0);
  r.get("beta1", c.beta1);
  r.get("inner_eps", c.inner_eps);
  r.get("inner_check_period", c.inner_check_period);
  r.get("max_inner_iters", c.max_inner_iters);
  r.get("max_rejections_before_force", c.max_rejections_before_force);
  r.get("sigma_bound_scale", c.sigma_bound_scale);
  r.get("sigma_steps", c.sigma_steps);
  r.get("tau_armijo", c.tau_armijo);
  r.get("minibatch", c.minibatch);
  r.get("fim_damping", c.fim_damping);
  r.get("sigma_floor", c.sigma_floor);
  r.get("initial_log_std", c.initial_log_std);
  r.get("alternating", c.alternating);
  r.get("natural_gradient_only", c.natural_gradient_only);
  r.get("gae_lambda", c.gae_lambda);
  r.get("normalize_advantages", c.normalize_advantages);
  if (const json* bf = r.sub("baseline_fit")) {
    KeyReader b(*bf, "stro.baseline_fit");
    std::string method = c.baseline_fit.method == BaselineFitMethod::exact ? "exact" : "adam";
    b.get("method", method);
    if (method == "exact") {
      c.baseline_fit.method = BaselineFitMethod::exact;
    } else if (method == "adam") {
      c.baseline_fit.method = BaselineFitMethod::adam;
    } else {
      throw std::invalid_argument("stro.baseline_fit.method: expected 'exact' or 'adam'");
    }
    b.get("epochs", c.baseline_fit.epochs);
    b.get("step_size", c.baseline_fit.step_size);
    b.get("ridge", c.baseline_fit.ridge);
    b.finish();
  }
  r.get("max_env_steps", c.max_env_steps);
  r.get("max_iters", c.max_iters);
  r.get("workers", c.workers);
  r.get("seed", c.seed);
  r.finish();
  c.validate();
  return c;
}

json env_config_to_json(const EnvConfig& c) {
  return {{"kind", to_string(c.kind)},
          {"horizon", c.horizon},
          {"discount", c.discount},
          {"chain_length", c.chain_length},
          {"chain_slip", c.chain_slip},
          {"chain_uniform_start", c.chain_uniform_start},
          {"grid_size", c.grid_size},
          {"grid_slip", c.grid_slip},
          {"step_penalty", c.step_penalty},
          {"lq_a", c.lq_a},
          {"lq_b", c.lq_b},
          {"lq_q", c.lq_q},
          {"lq_c", c.lq_c}};
}

EnvConfig env_config_from_json(const json& j) {
  EnvConfig c;
  KeyReader r(j, "env");
  std::string kind = to_string(c.kind);
  r.get("kind", kind);
  c.kind = env_kind_from_string(kind);
  r.get("horizon", c.horizon);
  r.get("discount", c.discount);
  r.get("chain_length", c.chain_length);
  r.get("chain_slip", c.chain_slip);
  r.get("chain_uniform_start", c.chain_uniform_start);
  r.get("grid_size", c.grid_size);
  r.get("grid_slip", c.grid_slip);
  r.get("step_penalty", c.step_penalty);
  r.get("lq_a", c.lq_a);
  r.get("lq_b", c.lq_b);
  r.get("lq_q", c.lq_q);
  r.get("lq_c", c.lq_c);
  r.finish();
  return c;
}

json checkpoint_to_json(const PolicyFamily& family, const VectorXd& theta) {
  const MeanModelSpec& spec = family.spec();
  json j;
  j["spec"] = {{"kind", to_string(spec.kind)}, {"feature_dim", spec.feature_dim}, {"action_dim", spec.action_dim}};
  if (family.is_gaussian()) {
    const auto p = GaussianPolicyParams::from_flat(spec, theta);
    j["theta_mu"] = matrix_to_json(p.theta_mu);
    j["theta_sigma"] = vector_to_json(p.log_std);
  } else {
    j["logits"] = matrix_to_json(CategoricalPolicyParams::from_flat(spec, theta).logits);
  }
  return j;
}

Checkpoint checkpoint_from_json(const json& j) {
  try {
    Checkpoint cp;
    const json& s = j.at("spec");
    cp.spec.kind = feature_kind_from_string(s.at("kind").get<std::string>());
    cp.spec.feature_dim = s.at("feature_dim").get<Index>();
    cp.spec.action_dim = s.at("action_dim").get<Index>();
    cp.spec.validate();
    cp.gaussian = j.contains("theta_mu");
    if (cp.gaussian) {
      GaussianPolicyParams p{cp.spec,
                             matrix_from_json(j.at("theta_mu"), cp.spec.action_dim, cp.spec.feature_dim, "theta_mu"),
                             vector_from_json(j.at("theta_sigma"), cp.spec.action_dim, "theta_sigma")};
      cp.theta = p.flat();
    } else {
      CategoricalPolicyParams p{cp.spec,
                                matrix_from_json(j.at("logits"), cp.spec.action_dim, cp.spec.feature_dim, "logits")};
      cp.theta = p.flat();
    }
    if (!cp.theta.allFinite()) throw std::invalid_argument("checkpoint: non-finite parameters");
    return cp;
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("checkpoint: ") + e.what());
  }
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(path + ": " + e.what());
  }
}

void write_json_file(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << '\n';
}

}  // namespace stro
