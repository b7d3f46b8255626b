#pragma once

#include "ctbcf/dataset.h"
#include "ctbcf/random.h"
#include "ctbcf/trees.h"

#include <Eigen/Dense>
#include <json.hpp>

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace ctbcf {

/// Draws are stored one row per posterior draw.
using DrawMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct SamplerConfig {
  int num_chains = 4;
  int burn_in = 5000;
  int kept_draws = 2500;  // per chain
  int thinning = 1;
  std::uint64_t seed = 1;
  // Explicit per-chain seeds; when empty they are derived from `seed`.
  std::vector<std::uint64_t> chain_seeds;
  TreePriorConfig control = TreePriorConfig::control_defaults();
  TreePriorConfig moderator = TreePriorConfig::moderator_defaults();
  double tau_scale_prior_sd = 0.5;
  // tau(x) fixed to a single scalar slope with a Normal(0, s0^2) prior.
  bool homogeneous = false;
  bool keep_forests = false;
  int threads = 1;
  // Test-bed switches: keep tree structures fixed, pin the tau scale.
  bool freeze_structure = false;
  std::optional<double> fixed_tau_scale;

  void validate() const;
  std::uint64_t chain_seed(int chain) const;
  nlohmann::json to_json() const;
  static SamplerConfig from_json(const nlohmann::json& j);
};

/// Model-unit inputs for the sampler: standardized y and z plus the two
/// designs and their cut grids.
struct ModelData {
  Eigen::MatrixXd x_control;
  Eigen::MatrixXd x_moderator;
  Eigen::VectorXd y;
  Eigen::VectorXd z;
  CutpointGrid control_grid;
  CutpointGrid moderator_grid;

  static ModelData make(Eigen::MatrixXd x_control, Eigen::MatrixXd x_moderator,
                        Eigen::VectorXd y, Eigen::VectorXd z, int max_cuts = 100);
  std::size_t n() const { return static_cast<std::size_t>(y.size()); }
};

/// Draw sigma^2 from its full conditional under p(sigma^2) ∝ 1/sigma^2:
/// Inverse-Gamma(n/2, sum(e^2)/2).
double sample_sigma2(std::span<const double> residual, RandomSource& rng);

/// Draw the tau scale s from its conditional in u_i = s * x_i + eps_i, where
/// x_i = g(x_i) z_i. With `half_normal` the prior is Normal(0, s0^2) truncated
/// to s > 0; otherwise it is the untruncated Normal(0, s0^2).
double sample_tau_scale(std::span<const double> gz, std::span<const double> u, double sigma2,
                        double prior_sd, RandomSource& rng, bool half_normal = true);

struct TauScaleConditional {
  double mean;
  double variance;
};
TauScaleConditional tau_scale_conditional(std::span<const double> gz, std::span<const double> u,
                                          double sigma2, double prior_sd);

/// Live state of one chain.
class ChainState {
 public:
  /// Root-only trees with zero leaves, sigma^2 = 1, tau scale = s0.
  ChainState(const ModelData& data, const SamplerConfig& cfg, std::uint64_t seed);

  /// One full sweep: control trees, moderator trees, sigma^2, tau scale.
  void step();

  double sigma2() const { return sigma2_; }
  double tau_scale() const { return tau_scale_; }
  const Eigen::VectorXd& mu_hat() const { return mu_hat_; }
  /// Raw (unit-scale) moderator forest output g(x_i).
  const Eigen::VectorXd& raw_tau() const { return g_hat_; }
  Eigen::VectorXd tau_hat() const;
  const Eigen::VectorXd& residual() const { return resid_; }
  /// y - mu - tau * z rebuilt from the trees.
  Eigen::VectorXd recompute_residual() const;

  /// Rebuilds every cache from the trees, summing trees in index order.
  void refresh_caches();

  Forest control_forest() const;
  Forest moderator_forest() const;

  std::vector<TrackedTree>& control_trees() { return mu_trees_; }
  std::vector<TrackedTree>& moderator_trees() { return tau_trees_; }
  void set_sigma2(double s) { sigma2_ = s; }
  void set_tau_scale(double s);
  RandomSource& rng() { return rng_; }

 private:
  void update_control_tree(std::size_t j);
  void update_moderator_tree(std::size_t j);
  void update_tau_scale();

  const ModelData* data_;
  SamplerConfig cfg_;
  RandomSource rng_;
  std::vector<TrackedTree> mu_trees_;
  std::vector<TrackedTree> tau_trees_;
  double sigma2_ = 1.0;
  double tau_scale_ = 1.0;
  Eigen::VectorXd mu_hat_;
  Eigen::VectorXd g_hat_;
  Eigen::VectorXd resid_;
  std::vector<double> scratch_r_;
  std::vector<double> scratch_w_;
};

struct ForestSnapshot {
  Forest control;
  Forest moderator;
  double tau_scale = 1.0;
};

/// Posterior draws in model units plus what is needed to report them in
/// natural units.
struct PosteriorDraws {
  DrawMatrix mu;   // draws x n
  DrawMatrix tau;  // draws x n, tau = scale * g
  Eigen::VectorXd sigma;
  Eigen::VectorXd tau_scale;
  int num_chains = 0;
  bool homogeneous = false;
  Standardization transform;
  nlohmann::json provenance;
  std::vector<ForestSnapshot> forests;  // empty unless keep_forests

  Eigen::Index num_draws() const { return mu.rows(); }
  Eigen::Index num_units() const { return mu.cols(); }
  DrawMatrix tau_natural() const;
  /// Control function in natural units, defined so that y = mu + tau * z.
  DrawMatrix mu_natural() const;
  Eigen::VectorXd sigma_natural() const;
  /// Posterior mean of mu + tau * z in natural units for each draw.
  DrawMatrix fitted_natural(const Eigen::VectorXd& z_natural) const;
};

/// Runs every chain (in parallel up to cfg.threads) and concatenates their
/// kept draws in chain order. Output does not depend on the thread count.
PosteriorDraws run_chains(const ModelData& data, const Standardization& transform,
                          const SamplerConfig& cfg);

/// Standardizes the panel, builds both designs and runs the sampler.
PosteriorDraws fit_panel(const PanelDataset& data, const SamplerConfig& cfg);

struct PredictionDraws {
  DrawMatrix mu;   // natural units
  DrawMatrix tau;  // natural units
};

/// Evaluates stored forest snapshots on new design rows.
PredictionDraws predict(const PosteriorDraws& draws, const Eigen::MatrixXd& x_control,
                        const Eigen::MatrixXd& x_moderator);

/// Effective sample size by Geyer's initial positive sequence.
double effective_sample_size(std::span<const double> chain);

}  // namespace ctbcf
