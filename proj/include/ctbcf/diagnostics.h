#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <optional>
#include <ostream>
#include <vector>

namespace ctbcf {

/// y - mu_hat, elementwise.
Eigen::VectorXd partial_residuals(const Eigen::VectorXd& y, const Eigen::VectorXd& mu_hat);

struct Clustering {
  std::vector<int> labels;  // 0-based, increasing in group mean
  int num_groups = 0;
  double cut_height = 0.0;
  /// Heights of the merges applied below the cut, in order.
  std::vector<double> merge_heights;
};

/// Complete-linkage agglomerative clustering of scalar values under absolute
/// difference, cut at `cut_height` (default: the sample SD of the values).
/// Groups joined at a height <= the cut stay together.
Clustering cluster_effects(const Eigen::VectorXd& tau_hat, std::optional<double> cut_height = std::nullopt);

struct GroupLinearity {
  int label = 0;
  int size = 0;
  double overall_slope = 0.0;  // ATE line through the origin
  double group_slope = 0.0;    // group mean effect, line through the origin
  std::optional<double> ols_intercept;
  std::optional<double> ols_slope;
  std::optional<double> r2_linear;
  std::optional<double> r2_quadratic;
  /// R^2 gain from adding z^2 to the group OLS.
  std::optional<double> nonlinearity;
  /// Whether the group slope lies between the overall slope and the OLS slope.
  std::optional<bool> shrunk_toward_overall;
};

/// Per-group linear fits of partial residuals on the exposure.
std::vector<GroupLinearity> group_linearity_report(const std::vector<int>& labels,
                                                   const Eigen::VectorXd& residuals,
                                                   const Eigen::VectorXd& z,
                                                   const Eigen::VectorXd& tau_hat);

/// Local quadratic regression with tricube weights. The bandwidth at each
/// target is the distance to its ceil(span * n)-th nearest observation.
Eigen::VectorXd loess(const Eigen::VectorXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& at,
                      double span = 0.75);

struct SmootherCheck {
  Eigen::VectorXd grid;
  Eigen::VectorXd fitted;
  Eigen::VectorXd line;  // slope * grid
  double slope = 0.0;
  double max_gap = 0.0;

  /// Largest |fitted - line| over grid points within [lo, hi].
  double max_gap_within(double lo, double hi) const;
};

/// Smooths residuals against z on an evenly spaced grid over the z range and
/// compares the curve with the line slope * z.
SmootherCheck global_smoother_check(const Eigen::VectorXd& residuals, const Eigen::VectorXd& z, double slope,
                                    double span = 0.75, int grid_points = 100);

struct DiagnosticsOptions {
  std::optional<double> cut_height;
  double span = 0.75;
  int grid_points = 100;
};

struct DiagnosticsReport {
  Eigen::VectorXd residuals;
  Eigen::VectorXd z;
  Eigen::VectorXd tau_hat;
  Clustering clustering;
  double overall_ate = 0.0;
  std::vector<GroupLinearity> groups;
  SmootherCheck smoother;

  nlohmann::json to_json() const;
  /// Columns: index, z, residual, tau_hat, group.
  void write_scatter(std::ostream& out) const;
  /// Columns: group, size, overall_slope, group_slope, ols_intercept, ols_slope, nonlinearity.
  void write_lines(std::ostream& out) const;
  /// Columns: z, smooth, line.
  void write_smoother(std::ostream& out) const;
};

/// Full linearity check from natural-unit posterior means.
DiagnosticsReport run_diagnostics(const Eigen::VectorXd& y, const Eigen::VectorXd& mu_hat,
                                  const Eigen::VectorXd& z, const Eigen::VectorXd& tau_hat,
                                  const DiagnosticsOptions& options = {});

}  // namespace ctbcf
