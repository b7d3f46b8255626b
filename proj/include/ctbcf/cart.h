#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <string>
#include <vector>

namespace ctbcf {

struct RegressionTreeOptions {
  double min_leaf_fraction = 0.05;
  int folds = 10;
  // Pick the smallest subtree within one standard error of the best CV error.
  bool one_se_rule = true;
};

/// Least-squares regression tree with cost-complexity pruning. Splits are
/// "x <= threshold goes left" with thresholds at midpoints between
/// consecutive distinct values.
class RegressionTree {
 public:
  struct Node {
    int var = -1;
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;  // mean response of the node's training rows
    double sse = 0.0;
    int count = 0;
    bool is_leaf() const { return left < 0; }
  };

  /// Grows the full tree (respecting the minimum leaf size) and prunes it by
  /// K-fold cross-validated cost complexity.
  static RegressionTree fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                            const RegressionTreeOptions& options = {});
  /// Grows without pruning.
  static RegressionTree grow(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, int min_leaf);

  int leaf_of(const Eigen::MatrixXd& x, Eigen::Index row) const;
  double predict(const Eigen::MatrixXd& x, Eigen::Index row) const { return nodes_[static_cast<std::size_t>(leaf_of(x, row))].value; }
  std::vector<int> leaves() const;
  int num_leaves() const { return static_cast<int>(leaves().size()); }
  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  /// Human-readable path of conditions leading to a node.
  std::string describe(int id, const std::vector<std::string>& names) const;
  nlohmann::json to_json(const std::vector<std::string>& names) const;

  /// Weakest-link pruning sequence: complexity thresholds alpha_0 = 0 <
  /// alpha_1 < ... and the optimal subtree for each.
  std::vector<std::pair<double, RegressionTree>> pruning_sequence() const;
  double selected_alpha() const { return selected_alpha_; }

 private:
  void collapse(int id);
  std::vector<Node> nodes_;
  std::vector<int> parent_;
  double selected_alpha_ = 0.0;
};

}  // namespace ctbcf
