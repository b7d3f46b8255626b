#pragma once

#include "ctbcf/cart.h"
#include "ctbcf/dataset.h"
#include "ctbcf/estimands.h"
#include "ctbcf/random.h"
#include "ctbcf/sampler.h"
#include "ctbcf/spline.h"

#include <Eigen/Dense>
#include <json.hpp>

#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace ctbcf {

// ---------------------------------------------------------------------------
// Additive summary: tau(x) ~ alpha + sum of factor effects + sum_j h_j(x_j)

/// Covariate inputs for the additive summary. Smooth terms get a penalized
/// spline; factor terms get dummies with level 0 as the reference.
struct AdditiveInputs {
  struct Smooth {
    std::string name;
    Eigen::VectorXd values;
  };
  struct Factor {
    std::string name;
    std::vector<std::string> levels;
    std::vector<int> codes;
  };
  std::vector<Smooth> smooths;
  std::vector<Factor> factors;
  Eigen::Index n = 0;
};

/// Numeric moderators and time become smooths; categorical moderators and the
/// unit identifier become factors.
AdditiveInputs additive_inputs(const PanelDataset& data);

struct AdditiveSummaryOptions {
  int basis_dimension = 10;
  // Fixed smoothing parameters, one per smooth; when absent they are chosen
  // by GCV on the posterior-mean surface.
  std::optional<std::vector<double>> lambdas;
  double interval_level = 0.9;
  int grid_points = 100;
};

struct PartialEffectCurve {
  std::string name;
  Eigen::VectorXd grid;
  Eigen::VectorXd mean;
  Eigen::VectorXd lo;
  Eigen::VectorXd hi;

  double span() const { return mean.maxCoeff() - mean.minCoeff(); }
};

struct AdditiveSummaryFit {
  struct Block {
    std::string name;
    bool smooth = false;
    Eigen::Index offset = 0;
    Eigen::Index width = 0;
    std::vector<std::string> levels;  // factors: levels[1..] map to the block columns
  };

  Eigen::MatrixXd design;  // n x p: intercept, factor dummies, spline blocks
  std::vector<Block> blocks;
  std::vector<SplineBasis> bases;  // one per smooth block, in block order
  std::vector<double> lambdas;
  Eigen::MatrixXd projector;  // p x n
  DrawMatrix coefficients;    // draws x p
  std::vector<std::string> warnings;
  double interval_level = 0.9;
  int grid_points = 100;

  Eigen::VectorXd intercept() const { return coefficients.col(0); }
  const Block& block(const std::string& name) const;
  /// Per-draw values of one term at the training points (draws x n). For a
  /// factor the reference level contributes exactly 0.
  DrawMatrix component(const std::string& name) const;
  /// Per-draw coefficients of one factor including the reference (draws x levels).
  DrawMatrix factor_effects(const std::string& name) const;
  /// Smooth term on a grid spanning its observed range.
  PartialEffectCurve curve(const std::string& name, const Eigen::VectorXd& observed) const;
  /// Projects one surface with the frozen smoothing parameters.
  Eigen::VectorXd project(const Eigen::VectorXd& tau) const { return projector * tau; }
};

/// Penalized least-squares projection of every tau draw (draws x n, natural
/// units) onto the additive family. Smoothing parameters are chosen once and
/// then held fixed, so the map from draws to coefficients is linear.
AdditiveSummaryFit fit_additive_summary(const DrawMatrix& tau, const AdditiveInputs& inputs,
                                        const AdditiveSummaryOptions& options = {});

/// Columns: term, grid, mean, lo, hi (interval at the fit's level).
void write_partial_effects(std::ostream& out, const std::vector<PartialEffectCurve>& curves,
                           double level);

// ---------------------------------------------------------------------------
// Tree summary

struct TreeSummary {
  RegressionTree tree;
  std::vector<std::string> variable_names;
  std::vector<int> leaf_ids;
  UnitGroups subgroups;                        // one group per leaf
  std::vector<EstimandPosterior> subgroup_cate;  // group_ate over the leaves
  struct Difference {
    int first = 0, second = 0;  // subgroup indices
    EstimandPosterior posterior;
  };
  std::vector<Difference> differences;  // all pairs first < second

  nlohmann::json to_json() const;
};

/// Regresses posterior-mean effects (after removing each unit-group's mean, if
/// groups are given) on the moderators with one pruned tree, then pushes the
/// raw draws through its leaves.
TreeSummary fit_tree_summary(const DrawMatrix& tau, const Eigen::MatrixXd& moderators,
                             const std::vector<std::string>& names, const UnitGroups* sweep_groups,
                             const RegressionTreeOptions& options = {});

/// Moderator covariates (categoricals as level codes) plus time, for the tree summary.
struct TreeInputs {
  Eigen::MatrixXd x;
  std::vector<std::string> names;
};
TreeInputs tree_inputs(const PanelDataset& data);

// ---------------------------------------------------------------------------
// Linear comparators

/// Intercept, control covariates (categoricals as dummies without their first
/// level), unit dummies without the reference unit, time dummies without the
/// first period, and the exposure as the last column.
struct LinearDesign {
  Design design;
  int z_column = -1;
};
LinearDesign linear_design(const PanelDataset& data);

/// Per-draw OLS of the fitted surface mu + tau * z (draws x n, natural units)
/// on the linear design; the draw is the exposure coefficient.
EstimandPosterior project_linear_ate(const DrawMatrix& fitted, const LinearDesign& design);

/// Exposure-coefficient posterior of the linear model under a flat prior on
/// the coefficients and p(sigma^2) ∝ 1/sigma^2, sampled exactly.
struct LinearRefit {
  Eigen::VectorXd coefficients;  // least-squares estimate
  double residual_ss = 0.0;
  int degrees_of_freedom = 0;
  EstimandPosterior ate;
};
LinearRefit refit_linear_flat(const Eigen::VectorXd& y, const LinearDesign& design, int num_draws,
                              RandomSource& rng);

/// Throws RankDeficiencyError naming the columns that are linear combinations
/// of earlier ones.
void require_full_rank(const Eigen::MatrixXd& x, const std::vector<std::string>& names);

}  // namespace ctbcf
