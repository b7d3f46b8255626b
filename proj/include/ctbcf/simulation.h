#pragma once

#include "ctbcf/dataset.h"
#include "ctbcf/diagnostics.h"
#include "ctbcf/sampler.h"

#include <Eigen/Dense>
#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace ctbcf {

enum class ScenarioFamily {
  // y = x/2 + (z + 1)^2 / 2 + 1/4 + eps
  Quadratic,
  // y = x/2 + (c0 + c1 x) z + eps; a positive control with linear effects
  Linear,
};

struct SimulationScenario {
  ScenarioFamily family = ScenarioFamily::Quadratic;
  double b = 0.0;  // confounding: z' ~ N(b x - 1, 1)
  int n = 1000;
  std::uint64_t seed = 1;
  double noise_sd = 0.5;
  double c0 = -0.2;
  double c1 = 0.1;

  void validate() const;
  /// Case 1: quadratic with b = 0. Case 2: quadratic with b = 1. Case 3:
  /// linear effects with b = 0.
  static SimulationScenario from_case(int case_id);
  nlohmann::json to_json() const;
};

/// The quadratic family's exposure response h(z) = (z + 1)^2 / 2 + 1/4.
inline double quadratic_response(double z) { return 0.5 * (z + 1.0) * (z + 1.0) + 0.25; }

struct SyntheticData {
  Eigen::VectorXd x, z, y;
  Eigen::VectorXd mu_true;   // x / 2
  Eigen::VectorXd tau_true;  // h'(z) = z + 1 (quadratic) or c0 + c1 x (linear)
  Eigen::VectorXd h;         // h(z); quadratic family only
  Eigen::VectorXd noise;

  /// One numeric covariate `x` with both roles; no unit or time columns.
  PanelDataset to_panel() const;
};

/// x ~ N(0, 1); z' ~ N(b x - 1, 1); z = z' / sd(z') without recentering.
SyntheticData generate_synthetic(const SimulationScenario& scenario);

struct RecoveryMetrics {
  double rmse_mu = 0.0;           // posterior-mean mu vs x / 2
  double rmse_mu_centered = 0.0;  // same after centering both
  double tau_mean = 0.0;          // mean over units of posterior-mean tau
  double tau_sd = 0.0;
  std::optional<double> spearman;  // corr(tau_hat, x); absent when either is constant
  double rmse_tau = 0.0;           // vs tau_true
  std::optional<double> smoother_gap;  // quadratic family only
  std::optional<double> sign_change_x;
  double ate_mean = 0.0, ate_lo95 = 0.0, ate_hi95 = 0.0;
  std::vector<std::optional<double>> nonlinearity;  // per diagnostic group

  nlohmann::json to_json() const;
};

/// Spearman rank correlation (average ranks for ties); nullopt if undefined.
std::optional<double> spearman_correlation(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

/// The threshold t on x that best separates positive from negative effects,
/// with effects positive below t when `decreasing` and above t otherwise.
/// Nullopt when the effects never change sign.
std::optional<double> sign_change_point(const Eigen::VectorXd& x, const Eigen::VectorXd& tau_hat, bool decreasing);

/// Max |smooth(r) - (h + delta)| over grid points in the central 90% of z,
/// where delta = mean(r - h) absorbs the intercept that the model folds into mu.
double smoother_gap_to_truth(const Eigen::VectorXd& residuals, const Eigen::VectorXd& z, double span = 0.75,
                             int grid_points = 100);

RecoveryMetrics recovery_metrics(const PosteriorDraws& draws, const SyntheticData& truth,
                                 const DiagnosticsReport* diagnostics = nullptr);

struct ScenarioRun {
  SyntheticData data;
  PosteriorDraws draws;
  DiagnosticsReport diagnostics;
  RecoveryMetrics metrics;
};

ScenarioRun run_scenario(const SimulationScenario& scenario, const SamplerConfig& cfg,
                         const DiagnosticsOptions& diag = {});

}  // namespace ctbcf
