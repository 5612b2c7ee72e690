#pragma once

#include <Eigen/Dense>

#include <string>

namespace stro {

using Eigen::Index;
using Eigen::VectorXd;

enum class FeatureKind { tabular, linear, quadratic };

std::string to_string(FeatureKind kind);
FeatureKind feature_kind_from_string(const std::string& name);

/// Maps an observation to the feature vector consumed by linear-in-parameter
/// models.
///   tabular:   observation is [state index]; one-hot of length n_states
///   linear:    [x_1 .. x_d, 1]
///   quadratic: [x_1 .. x_d, x_i x_j (i <= j), 1]
class FeatureMap {
 public:
  FeatureMap(FeatureKind kind, Index input_dim);

  FeatureKind kind() const { return kind_; }
  /// n_states for tabular maps, observation dimension otherwise.
  Index input_dim() const { return input_dim_; }
  Index dim() const { return dim_; }

  VectorXd operator()(const VectorXd& observation) const;

 private:
  FeatureKind kind_;
  Index input_dim_;
  Index dim_;
};

}  // namespace stro
