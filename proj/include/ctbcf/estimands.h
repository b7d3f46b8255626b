#pragma once

#include "ctbcf/sampler.h"

#include <Eigen/Dense>

#include <map>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

namespace ctbcf {

/// Posterior of one scalar estimand, in natural units.
struct EstimandPosterior {
  std::string name;
  Eigen::VectorXd draws;
  double point = 0.0;  // posterior mean
  std::map<double, std::pair<double, double>> intervals;  // level -> (lo, hi)

  static EstimandPosterior from_draws(std::string name, Eigen::VectorXd draws,
                                      const std::vector<double>& levels = {0.5, 0.95});
};

/// Linear-interpolation quantile (the "type 7" convention) of unsorted values.
double quantile(std::vector<double> values, double p);

/// Equal-tailed interval at `level`: quantiles (1-level)/2 and (1+level)/2.
std::pair<double, double> equal_tailed_interval(const Eigen::Ref<const Eigen::VectorXd>& draws,
                                                double level);

/// Per-draw mean of tau over units. `tau` holds natural-unit draws x units.
EstimandPosterior posterior_ate(const DrawMatrix& tau);
EstimandPosterior posterior_ate(const PosteriorDraws& draws);

/// A partition of units into named groups.
struct UnitGroups {
  std::vector<std::string> names;
  std::vector<std::vector<int>> members;

  /// Groups from a code vector; group k is named names[k].
  static UnitGroups from_codes(const std::vector<int>& codes, std::vector<std::string> names);
  void validate(Eigen::Index n) const;
};

/// Per-draw mean of tau within each group.
std::vector<EstimandPosterior> group_ate(const DrawMatrix& tau, const UnitGroups& groups);

/// tau * (z_hi - z_lo) per draw: the CATE between two exposure levels.
EstimandPosterior finite_difference_cate(const Eigen::VectorXd& tau_draws, double z_hi,
                                         double z_lo, const std::string& name = "CATE");

/// Columns: name, mean, lo50, hi50, lo95, hi95, n_draws.
void write_estimand_table(std::ostream& out, const std::vector<EstimandPosterior>& rows);

}  // namespace ctbcf
