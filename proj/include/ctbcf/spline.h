#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace ctbcf {

/// Natural cubic regression spline parameterized by its values at the knots,
/// with the exact second-derivative energy penalty ∫ f''(u)^2 du. The penalty
/// null space is {constant, linear}. Beyond the outer knots the function
/// continues linearly.
///
/// A sum-to-zero constraint over the training points is absorbed, so the
/// constrained basis has dimension - 1 columns and every fitted curve has mean
/// zero over the data it was built on.
class SplineBasis {
 public:
  /// Knots at equally spaced empirical quantiles. With fewer distinct values
  /// than `dimension`, the distinct values themselves become the knots and
  /// `warning()` says so.
  static SplineBasis build(const Eigen::VectorXd& x, int dimension = 10);

  int dimension() const { return static_cast<int>(knots_.size()); }
  int constrained_dimension() const { return dimension() - 1; }
  const std::vector<double>& knots() const { return knots_; }
  const std::string& warning() const { return warning_; }

  /// Unconstrained basis: column k is the cardinal spline for knot k.
  Eigen::MatrixXd evaluate_raw(const Eigen::VectorXd& x) const;
  Eigen::MatrixXd evaluate(const Eigen::VectorXd& x) const { return evaluate_raw(x) * constraint_; }
  const Eigen::MatrixXd& raw_penalty() const { return raw_penalty_; }
  const Eigen::MatrixXd& penalty() const { return penalty_; }
  /// K x (K - 1) map from constrained to raw coefficients.
  const Eigen::MatrixXd& constraint() const { return constraint_; }

 private:
  std::vector<double> knots_;
  Eigen::MatrixXd second_deriv_;  // K x K, knot values -> second derivatives at knots
  Eigen::MatrixXd raw_penalty_;
  Eigen::MatrixXd penalty_;
  Eigen::MatrixXd constraint_;
  std::string warning_;
};

}  // namespace ctbcf
