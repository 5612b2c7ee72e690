#include "stro/features.hpp"

#include <cmath>
#include <stdexcept>

namespace stro {

std::string to_string(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::tabular: return "tabular";
    case FeatureKind::linear: return "linear";
    case FeatureKind::quadratic: return "quadratic";
  }
  return "unknown";
}

FeatureKind feature_kind_from_string(const std::string& name) {
  if (name == "tabular") return FeatureKind::tabular;
  if (name == "linear") return FeatureKind::linear;
  if (name == "quadratic") return FeatureKind::quadratic;
  throw std::invalid_argument("unknown feature kind: " + name);
}

FeatureMap::FeatureMap(FeatureKind kind, Index input_dim) : kind_(kind), input_dim_(input_dim) {
  if (input_dim <= 0) throw std::invalid_argument("feature map input dimension must be positive");
  switch (kind) {
    case FeatureKind::tabular: dim_ = input_dim; break;
    case FeatureKind::linear: dim_ = input_dim + 1; break;
    case FeatureKind::quadratic: dim_ = input_dim + input_dim * (input_dim + 1) / 2 + 1; break;
  }
}

VectorXd FeatureMap::operator()(const VectorXd& observation) const {
  if (kind_ == FeatureKind::tabular) {
    if (observation.size() != 1) throw std::invalid_argument("tabular features expect a state index");
    const auto s = static_cast<Index>(std::lround(observation(0)));
    if (s < 0 || s >= input_dim_) throw std::out_of_range("state index out of range");
    VectorXd phi = VectorXd::Zero(dim_);
    phi(s) = 1.0;
    return phi;
  }
  if (observation.size() != input_dim_) throw std::invalid_argument("observation dimension mismatch");
  VectorXd phi(dim_);
  phi.head(input_dim_) = observation;
  Index k = input_dim_;
  if (kind_ == FeatureKind::quadratic) {
    for (Index i = 0; i < input_dim_; ++i)
      for (Index j = i; j < input_dim_; ++j) phi(k++) = observation(i) * observation(j);
  }
  phi(k) = 1.0;
  return phi;
}

}  // namespace stro
