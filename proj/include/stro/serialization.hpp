#pragma once

#include "stro/envs.hpp"
#include "stro/mdp.hpp"
#include "stro/policy.hpp"
#include "stro/stro.hpp"
#include "stro/tabular_tr.hpp"

#include <json.hpp>

#include <string>

namespace stro {

using nlohmann::json;

/// {n_states, n_actions, transition[s][a][s'], reward[s][a], initial_dist[s], discount}
json mdp_to_json(const Mdp& mdp);
Mdp mdp_from_json(const json& j);

// Config readers reject unknown keys so that typos fail loudly. Missing keys
// keep their defaults.
json tr_config_to_json(const TrConfig& c);
TrConfig tr_config_from_json(const json& j);
json stro_config_to_json(const StroConfig& c);
StroConfig stro_config_from_json(const json& j);
json env_config_to_json(const EnvConfig& c);
EnvConfig env_config_from_json(const json& j);

/// {spec: {kind, feature_dim, action_dim}, theta_mu, theta_sigma} for Gaussian
/// policies, {spec, logits} for categorical ones. Matrices are row-major
/// nested arrays.
json checkpoint_to_json(const PolicyFamily& family, const VectorXd& theta);

struct Checkpoint {
  MeanModelSpec spec;
  bool gaussian = true;
  VectorXd theta;  ///< flat layout of the matching PolicyFamily
};
Checkpoint checkpoint_from_json(const json& j);

json read_json_file(const std::string& path);
void write_json_file(const std::string& path, const json& j);

}  // namespace stro
