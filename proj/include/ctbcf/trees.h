#pragma once

#include "ctbcf/random.h"

#include <Eigen/Dense>
#include <json.hpp>

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ctbcf {

/// Structure prior and leaf prior for one forest.
///
/// A node at depth d splits with probability alpha * (1 + d)^-beta. Leaf values
/// are Normal(0, leaf_variance); a nonpositive leaf_variance selects the
/// default (0.5 / sqrt(num_trees))^2, i.e. prior SD 0.5 for the forest total.
struct TreePriorConfig {
  double alpha = 0.95;
  double beta = 2.0;
  int num_trees = 200;
  double leaf_variance = 0.0;

  double resolved_leaf_variance() const;
  double split_probability(int depth) const;
  void validate(const std::string& label) const;

  static TreePriorConfig control_defaults() { return {0.95, 2.0, 200, 0.0}; }
  static TreePriorConfig moderator_defaults() { return {0.25, 3.0, 50, 0.0}; }
};

/// Candidate cut values per design column. A rule "x <= cut goes left" is
/// only ever drawn from this grid. Cut lists are sorted and deduplicated and
/// never contain the column maximum, so no global cut sends every row left.
struct CutpointGrid {
  std::vector<std::vector<double>> cuts;

  static CutpointGrid build(const Eigen::MatrixXd& x, int max_cuts = 100);
  std::size_t num_columns() const { return cuts.size(); }
};

struct TreeNode {
  int var = -1;
  int cut = -1;  // index into the grid's cut list for `var`
  double cut_value = 0.0;
  double value = 0.0;
  int left = -1;
  int right = -1;
  int parent = -1;
  int depth = 0;
  bool alive = true;

  bool is_leaf() const { return left < 0; }
};

/// Binary regression tree with axis-aligned splits and scalar leaves.
///
/// Nodes live in a flat vector; pruned slots are recycled, so node ids are
/// stable for as long as a node exists. Node 0 is always the root.
class DecisionTree {
 public:
  DecisionTree();

  const TreeNode& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  std::size_t capacity() const { return nodes_.size(); }

  std::vector<int> leaves() const;
  std::vector<int> internal_nodes() const;
  /// Internal nodes whose children are both leaves (the PRUNE / CHANGE targets).
  std::vector<int> nog_nodes() const;
  int num_leaves() const;
  bool is_root_only() const { return nodes_[0].is_leaf(); }

  /// Splits a leaf; returns {left, right}. Children inherit the parent's value.
  std::pair<int, int> grow(int leaf, int var, int cut, double cut_value);
  /// Collapses a node whose children are both leaves.
  void prune(int node);
  void change(int node, int var, int cut, double cut_value);
  void set_value(int leaf, double value) { nodes_[static_cast<std::size_t>(leaf)].value = value; }

  /// Leaf reached by a row; descends from `from`.
  int route(const Eigen::MatrixXd& x, Eigen::Index row, int from = 0) const;
  double predict(const Eigen::MatrixXd& x, Eigen::Index row) const {
    return node(route(x, row)).value;
  }

  /// Canonical depth-first rendering of the structure (rules only, no values).
  std::string structure_key() const;

  /// Depth-first node list: internal nodes as {var, cut, cut_value}, leaves as {value}.
  nlohmann::json to_json() const;
  static DecisionTree from_json(const nlohmann::json& j);

  bool operator==(const DecisionTree& other) const;

 private:
  int allocate();
  std::vector<TreeNode> nodes_;
  std::vector<int> free_;
};

/// Per-column admissible cut-index range [lo, hi) inside a node's cell.
std::vector<std::pair<int, int>> cell_ranges(const DecisionTree& tree, int node,
                                             const CutpointGrid& grid);
/// True when at least one column still has an admissible cut in the leaf's cell.
bool leaf_growable(const DecisionTree& tree, int leaf, const CutpointGrid& grid);

/// Structure log prior: sum over internal nodes of log p(d) plus sum over
/// leaves of log(1 - p(d)). Split-rule selection terms are not included; the
/// MH ratio accounts for them.
double tree_log_prior(const DecisionTree& tree, const TreePriorConfig& cfg);

struct LeafStats {
  double s_wr = 0.0;  // sum of w_i * r_i
  double s_ww = 0.0;  // sum of w_i^2
};

/// Stats indexed by node id (entries for non-leaves are zero). An empty
/// weight span means w = 1.
std::vector<LeafStats> leaf_sufficient_stats(const DecisionTree& tree, const Eigen::MatrixXd& x,
                                             std::span<const double> residual,
                                             std::span<const double> weight);

/// Structure-dependent part of the Gaussian log marginal of one leaf with a
/// Normal(0, v) value and observation variance sigma2.
double leaf_log_marginal(const LeafStats& s, double v, double sigma2);
double integrated_log_marginal(std::span<const LeafStats> stats, double v, double sigma2);

/// Conjugate posterior draw for one leaf. The normal deviate is multiplied by
/// sign(s_wr) so that flipping the sign of the weights flips the draw exactly.
double sample_leaf_value(const LeafStats& s, double v, double sigma2, RandomSource& rng);
std::vector<double> sample_leaf_values(std::span<const LeafStats> stats, double v, double sigma2,
                                       RandomSource& rng);

enum class MoveKind { Grow, Prune, Change };

struct MoveProbabilities {
  double grow = 0.0, prune = 0.0, change = 0.0;
};
/// GROW 0.25, PRUNE 0.25, CHANGE 0.5, renormalized over the possible moves.
MoveProbabilities move_probabilities(const DecisionTree& tree, const CutpointGrid& grid);

struct Proposal {
  MoveKind kind = MoveKind::Grow;
  int node = -1;  // leaf for GROW, nog node for PRUNE / CHANGE
  int var = -1;
  int cut = -1;
  DecisionTree proposed;
  double log_forward = 0.0;     // log q(T -> T')
  double log_reverse = 0.0;     // log q(T' -> T)
  double log_rule_prior = 0.0;  // log of the split-rule selection prior ratio
};

/// Draws a structure move. Returns nullopt when no move is possible (a
/// root-only tree over a grid with no cuts).
std::optional<Proposal> propose_move(const DecisionTree& tree, const CutpointGrid& grid,
                                     RandomSource& rng);

/// A tree together with the leaf each training row falls into.
struct TrackedTree {
  DecisionTree tree;
  std::vector<int> leaf_of;

  explicit TrackedTree(std::size_t n = 0) : leaf_of(n, 0) {}
  void reassign(const Eigen::MatrixXd& x);
  /// Fitted leaf value for row i.
  double fit(std::size_t i) const { return tree.node(leaf_of[i]).value; }
};

struct MoveOutcome {
  std::optional<MoveKind> kind;
  bool accepted = false;
  double log_ratio = 0.0;
};

/// Log MH ratio of a proposal given the affected leaves' stats before and after.
double log_acceptance_ratio(const DecisionTree& current, const Proposal& p,
                            const TreePriorConfig& cfg, double marginal_before,
                            double marginal_after);

/// One Metropolis-Hastings structure update followed by a conjugate draw of
/// every leaf value. The likelihood for row i is r_i ~ N(w_i * leaf, sigma2).
MoveOutcome mh_update_tree(TrackedTree& t, const Eigen::MatrixXd& x,
                           std::span<const double> residual, std::span<const double> weight,
                           double sigma2, const TreePriorConfig& cfg, const CutpointGrid& grid,
                           RandomSource& rng, bool update_structure = true);

/// The same update on the full residual e = r - w * fit(tree), which is kept
/// current in place. When `fit` is non-empty it accumulates the change in
/// this tree's output row by row.
MoveOutcome mh_update_tree_inplace(TrackedTree& t, const Eigen::MatrixXd& x, std::span<double> residual,
                                   std::span<const double> weight, std::span<double> fit, double sigma2,
                                   const TreePriorConfig& cfg, const CutpointGrid& grid, RandomSource& rng,
                                   bool update_structure = true);

/// Sum-of-trees function over a design with a fixed column count.
struct Forest {
  std::vector<DecisionTree> trees;
  int num_columns = 0;

  nlohmann::json to_json() const;
  static Forest from_json(const nlohmann::json& j);
  bool operator==(const Forest&) const = default;
};

Eigen::VectorXd forest_predict(const Forest& forest, const Eigen::MatrixXd& x);

}  // namespace ctbcf
