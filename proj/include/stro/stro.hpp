#pragma once

#include "stro/envs.hpp"
#include "stro/policy.hpp"
#include "stro/sampler.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace stro {

/// Parameters of the sampled trust-region loop. Field names double as config
/// file keys.
struct StroConfig {
  Index N = 2048;     ///< transitions per simulation
  Index N_max = 0;    ///< buffer cap; 0 means (max_rejections_before_force + 1) * N
  double mu0 = 0.05;
  double mu_min = 0.01;
  double mu_max = 0.1;
  double gamma1 = 2.0;
  double gamma2 = 0.8;
  double gamma3 = 0.6;
  double beta0 = -0.1;
  double beta1 = 0.0;
  double inner_eps = 1e-4;
  int inner_check_period = 5;
  int max_inner_iters = 50;
  int max_rejections_before_force = 4;
  double sigma_bound_scale = 0.1;  ///< c_ent: sigma box radius is c_ent * |entropy|
  int sigma_steps = 50;            ///< projected-gradient iterations of the sigma stage
  double tau_armijo = 0.1;
  Index minibatch = 256;
  double fim_damping = kDefaultFimDamping;
  double sigma_floor = kDefaultSigmaFloor;
  double initial_log_std = 0.0;
  bool alternating = true;             ///< split mean and log-std updates for Gaussian policies
  bool natural_gradient_only = false;  ///< ablation: a single CG step per outer iteration
  double gae_lambda = 0.95;
  bool normalize_advantages = false;
  BaselineFitConfig baseline_fit;
  Index max_env_steps = 200000;
  int max_iters = 0;  ///< 0 means no iteration cap
  int workers = 1;
  std::uint64_t seed = 0;

  void validate() const;
  Index n_max() const { return N_max > 0 ? N_max : (max_rejections_before_force + 1) * N; }
};

enum class Decision { accept, reject, force };
std::string to_string(Decision d);

struct RejectedCandidate {
  VectorXd theta;
  TrajectoryBatch batch;
  double eta_hat = 0.0;
};

struct TrustRegionState {
  VectorXd theta;
  double mu = 0.0;
  double delta = 0.0;  ///< mu * ||g_hat(theta, B)||
  TrajectoryBatch buffer;
  std::vector<RejectedCandidate> history;  ///< H
  int consecutive_rejections = 0;
};

struct IterationRecord {
  int iter = 0;
  Decision decision = Decision::reject;
  double eta_hat_old = 0.0;
  double eta_hat_trial = 0.0;
  double sigma_eta = 0.0;
  double L_improvement = 0.0;
  double ratio = 0.0;
  double mu = 0.0;  ///< coefficient used for this iteration's radius
  double delta = 0.0;
  double grad_norm = 0.0;
  double entropy = 0.0;        ///< Ent(theta_k, B)
  double entropy_trial = 0.0;  ///< Ent(theta_trial, B)
  double sigma_step_inf = 0.0;
  double sigma_bound = 0.0;
  double kl_trial = 0.0;  ///< D_hat(theta_trial, B)
  Index buffer_size = 0;  ///< |B| used to build the model
  Index history_size = 0;
  Index env_steps = 0;  ///< cumulative, after this iteration
  int inner_iters = 0;
  double exact_eta = std::numeric_limits<double>::quiet_NaN();       ///< eta(theta_k) when available
  double exact_eta_next = std::numeric_limits<double>::quiet_NaN();  ///< eta(theta_{k+1})
  bool floor_clamped = false;
  std::string notes;
};

struct InnerResult {
  VectorXd theta;
  int iterations = 0;
  int cg_fallbacks = 0;
  bool stopped_by_test = false;
};

/// Inner solver: natural-gradient directions from CG on random minibatches,
/// steps from feasible_line_search (Armijo on the minibatch, D_hat <= delta on
/// the whole buffer), stagnation / entropy-drift test every check period.
/// With `block` set only the coordinates in [first, second) move.
InnerResult inner_solve(const SurrogateEstimator& est, const VectorXd& theta_k, double delta_k,
                        const StroConfig& config, Rng& rng,
                        std::optional<std::pair<Index, Index>> block = std::nullopt);

struct AlternatingResult {
  InnerResult mean_stage;
  VectorXd theta;
  double sigma_bound = 0.0;     ///< c_ent * |Ent(theta_k, B)|
  double sigma_step_inf = 0.0;  ///< ||log_std_trial - log_std_k||_inf
  double L_mean_stage = 0.0;
  double L_sigma_stage = 0.0;
  bool floor_clamped = false;
};

/// Mean block by inner_solve with log-std frozen, then projected gradient
/// ascent on the log-std block inside the infinity-norm box and above the
/// sigma floor. Sigma-stage points leaving the KL ball score -infinity.
AlternatingResult alternating_gaussian_step(const GaussianPolicy& family, const SurrogateEstimator& est,
                                            const VectorXd& theta_k, double delta_k,
                                            const StroConfig& config, Rng& rng);

/// (eta_trial - eta_old) / (sigma + L_trial - L_old). Returns -infinity when
/// L_trial <= L_old; a missing sigma counts as 0.
double stochastic_ratio(double eta_hat_trial, double eta_hat_old, std::optional<double> sigma_eta_old,
                        double L_trial, double L_old);

double update_mu(double mu, double ratio, const StroConfig& config);

/// Accept when ratio >= beta1. Otherwise reject while |B| < N_max: keep theta,
/// merge fresh samples from `sample_fresh` into B and push the trial onto H.
/// Once |B| >= N_max, take the best-eta_hat member of H and drop it from H.
/// `sample_fresh` may return nothing when the sample budget is spent.
Decision accept_or_reject(TrustRegionState& state, const VectorXd& theta_trial, TrajectoryBatch trial_batch,
                          double ratio, const StroConfig& config,
                          const std::function<std::optional<TrajectoryBatch>()>& sample_fresh);

struct StroResult {
  std::vector<IterationRecord> records;
  VectorXd final_theta;
  VectorXd final_baseline;
  double initial_exact_eta = std::numeric_limits<double>::quiet_NaN();
  double final_exact_eta = std::numeric_limits<double>::quiet_NaN();
  Index env_steps = 0;
};

/// Policy family matching the environment: categorical with tabular features on
/// discrete environments, Gaussian with linear features on continuous ones.
std::unique_ptr<PolicyFamily> default_policy_family(const Environment& env, const StroConfig& config);
/// Zero mean / logits, log-std at config.initial_log_std.
VectorXd default_initial_theta(const PolicyFamily& family, const StroConfig& config);

using IterationCallback = std::function<void(const IterationRecord&, const VectorXd& theta)>;

/// The full sampled loop, deterministic given config.seed and config.workers.
StroResult run_stro(const Environment& env, const PolicyFamily& family, const VectorXd& theta0,
                    const StroConfig& config, const IterationCallback& on_iteration = {});

inline constexpr const char* kRunCsvSchema = "stro_run_v1";
void write_run_csv_header(std::ostream& out);
void write_run_csv_row(std::ostream& out, const IterationRecord& rec);

/// Independent 64-bit stream derived from (seed, stream, index).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index);

}  // namespace stro
