#include "ctbcf/trees.h"

#include "ctbcf/error.h"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>

namespace ctbcf {

// --- priors -------------------------------------------------------------------

double TreePriorConfig::resolved_leaf_variance() const {
  if (leaf_variance > 0.0) return leaf_variance;
  const double sd = 0.5 / std::sqrt(static_cast<double>(std::max(num_trees, 1)));
  return sd * sd;
}

double TreePriorConfig::split_probability(int depth) const {
  return alpha * std::pow(1.0 + depth, -beta);
}

void TreePriorConfig::validate(const std::string& label) const {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError(label + ": alpha must lie in (0, 1)");
  if (!(beta >= 0.0)) throw ConfigError(label + ": beta must be >= 0");
  if (num_trees < 0) throw ConfigError(label + ": number of trees must be >= 0");
  if (!std::isfinite(leaf_variance)) throw ConfigError(label + ": leaf variance must be finite");
}

CutpointGrid CutpointGrid::build(const Eigen::MatrixXd& x, int max_cuts) {
  CutpointGrid grid;
  grid.cuts.resize(static_cast<std::size_t>(x.cols()));
  std::vector<double> sorted;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    sorted.assign(x.col(j).data(), x.col(j).data() + x.rows());
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> distinct = sorted;
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    auto& cuts = grid.cuts[static_cast<std::size_t>(j)];
    if (distinct.size() < 2) continue;
    if (static_cast<int>(distinct.size()) - 1 <= max_cuts) {
      cuts.assign(distinct.begin(), distinct.end() - 1);
      continue;
    }
    const double top = distinct.back();
    const std::size_t n = sorted.size();
    for (int q = 1; q <= max_cuts; ++q) {
      const std::size_t idx = static_cast<std::size_t>(q) * n / static_cast<std::size_t>(max_cuts + 1);
      const double v = sorted[std::min(idx, n - 1)];
      if (v < top && (cuts.empty() || v > cuts.back())) cuts.push_back(v);
    }
  }
  return grid;
}

// --- DecisionTree -------------------------------------------------------------

DecisionTree::DecisionTree() { nodes_.emplace_back(); }

int DecisionTree::allocate() {
  if (!free_.empty()) {
    const int id = free_.back();
    free_.pop_back();
    nodes_[static_cast<std::size_t>(id)] = TreeNode{};
    return id;
  }
  nodes_.emplace_back();
  return static_cast<int>(nodes_.size() - 1);
}

std::vector<int> DecisionTree::leaves() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].alive && nodes_[i].is_leaf()) out.push_back(static_cast<int>(i));
  }
  return out;
}

std::vector<int> DecisionTree::internal_nodes() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].alive && !nodes_[i].is_leaf()) out.push_back(static_cast<int>(i));
  }
  return out;
}

std::vector<int> DecisionTree::nog_nodes() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const auto& nd = nodes_[i];
    if (nd.alive && !nd.is_leaf() && node(nd.left).is_leaf() && node(nd.right).is_leaf()) {
      out.push_back(static_cast<int>(i));
    }
  }
  return out;
}

int DecisionTree::num_leaves() const {
  int k = 0;
  for (const auto& nd : nodes_) k += (nd.alive && nd.is_leaf()) ? 1 : 0;
  return k;
}

std::pair<int, int> DecisionTree::grow(int leaf, int var, int cut, double cut_value) {
  if (!node(leaf).alive || !node(leaf).is_leaf()) throw std::logic_error("grow on a non-leaf");
  const int l = allocate();
  const int r = allocate();
  auto& parent = nodes_[static_cast<std::size_t>(leaf)];
  for (int c : {l, r}) {
    auto& ch = nodes_[static_cast<std::size_t>(c)];
    ch.parent = leaf;
    ch.depth = parent.depth + 1;
    ch.value = parent.value;
  }
  parent.var = var;
  parent.cut = cut;
  parent.cut_value = cut_value;
  parent.left = l;
  parent.right = r;
  return {l, r};
}

void DecisionTree::prune(int id) {
  auto& nd = nodes_[static_cast<std::size_t>(id)];
  if (nd.is_leaf() || !node(nd.left).is_leaf() || !node(nd.right).is_leaf()) {
    throw std::logic_error("prune needs a node with two leaf children");
  }
  for (int c : {nd.left, nd.right}) {
    nodes_[static_cast<std::size_t>(c)].alive = false;
    free_.push_back(c);
  }
  // Keep the recycle order deterministic: the lower id is reused first.
  std::sort(free_.begin(), free_.end(), std::greater<>());
  nd.left = nd.right = -1;
  nd.var = nd.cut = -1;
  nd.cut_value = 0.0;
}

void DecisionTree::change(int id, int var, int cut, double cut_value) {
  auto& nd = nodes_[static_cast<std::size_t>(id)];
  if (nd.is_leaf()) throw std::logic_error("change on a leaf");
  nd.var = var;
  nd.cut = cut;
  nd.cut_value = cut_value;
}

int DecisionTree::route(const Eigen::MatrixXd& x, Eigen::Index row, int from) const {
  int id = from;
  for (;;) {
    const auto& nd = nodes_[static_cast<std::size_t>(id)];
    if (nd.left < 0) return id;
    id = x(row, nd.var) <= nd.cut_value ? nd.left : nd.right;
  }
}

std::string DecisionTree::structure_key() const {
  std::ostringstream out;
  std::function<void(int)> walk = [&](int id) {
    const auto& nd = node(id);
    if (nd.is_leaf()) {
      out << "L";
      return;
    }
    out << "(" << nd.var << ":" << nd.cut << " ";
    walk(nd.left);
    out << " ";
    walk(nd.right);
    out << ")";
  };
  walk(0);
  return out.str();
}

nlohmann::json DecisionTree::to_json() const {
  nlohmann::json list = nlohmann::json::array();
  std::function<void(int)> walk = [&](int id) {
    const auto& nd = node(id);
    if (nd.is_leaf()) {
      list.push_back({{"value", nd.value}});
      return;
    }
    list.push_back({{"var", nd.var}, {"cut", nd.cut}, {"cut_value", nd.cut_value}});
    walk(nd.left);
    walk(nd.right);
  };
  walk(0);
  return list;
}

DecisionTree DecisionTree::from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.empty()) throw ParseError("tree must be a non-empty node list");
  DecisionTree tree;
  std::size_t pos = 0;
  std::function<void(int)> build = [&](int id) {
    if (pos >= j.size()) throw ParseError("truncated tree node list");
    const auto& rec = j[pos++];
    if (rec.contains("value")) {
      tree.set_value(id, rec.at("value").get<double>());
      return;
    }
    auto [l, r] = tree.grow(id, rec.at("var").get<int>(), rec.at("cut").get<int>(),
                            rec.at("cut_value").get<double>());
    build(l);
    build(r);
  };
  build(0);
  if (pos != j.size()) throw ParseError("trailing nodes after a complete tree");
  return tree;
}

bool DecisionTree::operator==(const DecisionTree& other) const {
  std::function<bool(int, int)> eq = [&](int a, int b) {
    const auto& x = node(a);
    const auto& y = other.node(b);
    if (x.is_leaf() != y.is_leaf()) return false;
    if (x.is_leaf()) return x.value == y.value;
    return x.var == y.var && x.cut == y.cut && x.cut_value == y.cut_value && eq(x.left, y.left) &&
           eq(x.right, y.right);
  };
  return eq(0, 0);
}

// --- cells ------------------------------------------------------------------

std::vector<std::pair<int, int>> cell_ranges(const DecisionTree& tree, int node,
                                             const CutpointGrid& grid) {
  std::vector<std::pair<int, int>> ranges(grid.num_columns());
  for (std::size_t v = 0; v < ranges.size(); ++v) ranges[v] = {0, static_cast<int>(grid.cuts[v].size())};
  int child = node;
  int parent = tree.node(node).parent;
  while (parent >= 0) {
    const auto& p = tree.node(parent);
    auto& r = ranges[static_cast<std::size_t>(p.var)];
    if (p.left == child) r.second = std::min(r.second, p.cut);
    else r.first = std::max(r.first, p.cut + 1);
    child = parent;
    parent = p.parent;
  }
  return ranges;
}

bool leaf_growable(const DecisionTree& tree, int leaf, const CutpointGrid& grid) {
  struct Constraint {
    int var, lo, hi;
  };
  Constraint local[64];
  std::vector<Constraint> spill;
  std::size_t count = 0;
  auto find = [&](int var) -> Constraint* {
    for (std::size_t k = 0; k < count; ++k) {
      Constraint& c = k < 64 ? local[k] : spill[k - 64];
      if (c.var == var) return &c;
    }
    return nullptr;
  };
  int child = leaf;
  int parent = tree.node(leaf).parent;
  while (parent >= 0) {
    const auto& p = tree.node(parent);
    Constraint* c = find(p.var);
    if (!c) {
      Constraint fresh{p.var, 0, static_cast<int>(grid.cuts[static_cast<std::size_t>(p.var)].size())};
      if (count < 64) local[count] = fresh;
      else spill.push_back(fresh);
      c = count < 64 ? &local[count] : &spill.back();
      ++count;
    }
    if (p.left == child) c->hi = std::min(c->hi, p.cut);
    else c->lo = std::max(c->lo, p.cut + 1);
    child = parent;
    parent = p.parent;
  }
  std::size_t splittable = 0;
  for (const auto& cuts : grid.cuts) splittable += cuts.empty() ? 0 : 1;
  std::size_t constrained = 0;
  for (std::size_t k = 0; k < count; ++k) {
    const Constraint& c = k < 64 ? local[k] : spill[k - 64];
    if (c.hi > c.lo) return true;
    constrained += grid.cuts[static_cast<std::size_t>(c.var)].empty() ? 0 : 1;
  }
  return splittable > constrained;
}

double tree_log_prior(const DecisionTree& tree, const TreePriorConfig& cfg) {
  double lp = 0.0;
  for (std::size_t i = 0; i < tree.capacity(); ++i) {
    const auto& nd = tree.node(static_cast<int>(i));
    if (!nd.alive) continue;
    const double p = cfg.split_probability(nd.depth);
    lp += nd.is_leaf() ? std::log1p(-p) : std::log(p);
  }
  return lp;
}

// --- leaf algebra -------------------------------------------------------------

std::vector<LeafStats> leaf_sufficient_stats(const DecisionTree& tree, const Eigen::MatrixXd& x,
                                             std::span<const double> residual,
                                             std::span<const double> weight) {
  if (residual.size() != static_cast<std::size_t>(x.rows())) throw ShapeError("residual length");
  if (!weight.empty() && weight.size() != residual.size()) throw ShapeError("weight length");
  std::vector<LeafStats> stats(tree.capacity());
  for (std::size_t i = 0; i < residual.size(); ++i) {
    const double w = weight.empty() ? 1.0 : weight[i];
    auto& s = stats[static_cast<std::size_t>(tree.route(x, static_cast<Eigen::Index>(i)))];
    s.s_wr += w * residual[i];
    s.s_ww += w * w;
  }
  return stats;
}

double leaf_log_marginal(const LeafStats& s, double v, double sigma2) {
  if (s.s_ww == 0.0) return 0.0;
  return -0.5 * std::log1p(v * s.s_ww / sigma2) +
         v * s.s_wr * s.s_wr / (2.0 * sigma2 * (sigma2 + v * s.s_ww));
}

double integrated_log_marginal(std::span<const LeafStats> stats, double v, double sigma2) {
  double total = 0.0;
  for (const auto& s : stats) total += leaf_log_marginal(s, v, sigma2);
  return total;
}

double sample_leaf_value(const LeafStats& s, double v, double sigma2, RandomSource& rng) {
  const double precision = 1.0 / v + s.s_ww / sigma2;
  const double mean = (s.s_wr / sigma2) / precision;
  const double sign = std::signbit(s.s_wr) ? -1.0 : 1.0;
  return mean + sign * rng.normal() / std::sqrt(precision);
}

std::vector<double> sample_leaf_values(std::span<const LeafStats> stats, double v, double sigma2,
                                       RandomSource& rng) {
  std::vector<double> out;
  out.reserve(stats.size());
  for (const auto& s : stats) out.push_back(sample_leaf_value(s, v, sigma2, rng));
  return out;
}

// --- proposals ------------------------------------------------------------------

namespace {

bool any_growable(const DecisionTree& tree, const CutpointGrid& grid) {
  for (std::size_t i = 0; i < tree.capacity(); ++i) {
    const auto& nd = tree.node(static_cast<int>(i));
    if (nd.alive && nd.is_leaf() && leaf_growable(tree, static_cast<int>(i), grid)) return true;
  }
  return false;
}

std::vector<int> growable_leaves(const DecisionTree& tree, const CutpointGrid& grid) {
  std::vector<int> out;
  for (int leaf : tree.leaves()) {
    if (leaf_growable(tree, leaf, grid)) out.push_back(leaf);
  }
  return out;
}

struct RuleChoice {
  int var = -1;
  int cut = -1;
  int num_vars = 0;  // admissible columns in the cell
  int num_cuts = 0;  // admissible cuts for the chosen column
};

std::vector<int> admissible_vars(const std::vector<std::pair<int, int>>& ranges) {
  std::vector<int> vars;
  for (std::size_t v = 0; v < ranges.size(); ++v) {
    if (ranges[v].second > ranges[v].first) vars.push_back(static_cast<int>(v));
  }
  return vars;
}

RuleChoice draw_rule(const DecisionTree& tree, int node, const CutpointGrid& grid, RandomSource& rng) {
  const auto ranges = cell_ranges(tree, node, grid);
  const auto vars = admissible_vars(ranges);
  RuleChoice rc;
  rc.num_vars = static_cast<int>(vars.size());
  rc.var = vars[static_cast<std::size_t>(rng.index(rc.num_vars))];
  const auto [lo, hi] = ranges[static_cast<std::size_t>(rc.var)];
  rc.num_cuts = hi - lo;
  rc.cut = lo + rng.index(rc.num_cuts);
  return rc;
}

double log_or_neg_inf(double p) {
  return p > 0.0 ? std::log(p) : -std::numeric_limits<double>::infinity();
}

}  // namespace

MoveProbabilities move_probabilities(const DecisionTree& tree, const CutpointGrid& grid) {
  MoveProbabilities p;
  if (any_growable(tree, grid)) p.grow = 0.25;
  if (!tree.is_root_only()) {
    p.prune = 0.25;
    p.change = 0.5;
  }
  const double total = p.grow + p.prune + p.change;
  if (total > 0.0) {
    p.grow /= total;
    p.prune /= total;
    p.change /= total;
  }
  return p;
}

std::optional<Proposal> propose_move(const DecisionTree& tree, const CutpointGrid& grid,
                                     RandomSource& rng) {
  const auto probs = move_probabilities(tree, grid);
  if (probs.grow + probs.prune + probs.change <= 0.0) return std::nullopt;

  Proposal p;
  const double u = rng.uniform();
  if (u < probs.grow) p.kind = MoveKind::Grow;
  else if (u < probs.grow + probs.prune) p.kind = MoveKind::Prune;
  else p.kind = MoveKind::Change;
  p.proposed = tree;

  switch (p.kind) {
    case MoveKind::Grow: {
      const auto candidates = growable_leaves(tree, grid);
      p.node = candidates[static_cast<std::size_t>(rng.index(static_cast<int>(candidates.size())))];
      const RuleChoice rc = draw_rule(tree, p.node, grid, rng);
      p.var = rc.var;
      p.cut = rc.cut;
      p.proposed.grow(p.node, rc.var, rc.cut, grid.cuts[static_cast<std::size_t>(rc.var)][static_cast<std::size_t>(rc.cut)]);
      const double rule = -std::log(rc.num_vars) - std::log(rc.num_cuts);
      p.log_forward = std::log(probs.grow) - std::log(candidates.size()) + rule;
      const auto rev = move_probabilities(p.proposed, grid);
      p.log_reverse = log_or_neg_inf(rev.prune) - std::log(p.proposed.nog_nodes().size());
      p.log_rule_prior = rule;
      break;
    }
    case MoveKind::Prune: {
      const auto nogs = tree.nog_nodes();
      p.node = nogs[static_cast<std::size_t>(rng.index(static_cast<int>(nogs.size())))];
      const auto& nd = tree.node(p.node);
      p.var = nd.var;
      p.cut = nd.cut;
      p.proposed.prune(p.node);
      const auto ranges = cell_ranges(tree, p.node, grid);
      const auto nvars = static_cast<double>(admissible_vars(ranges).size());
      const auto [lo, hi] = ranges[static_cast<std::size_t>(nd.var)];
      const double rule = -std::log(nvars) - std::log(static_cast<double>(hi - lo));
      p.log_forward = std::log(probs.prune) - std::log(nogs.size());
      const auto rev = move_probabilities(p.proposed, grid);
      const auto regrow = growable_leaves(p.proposed, grid);
      p.log_reverse = log_or_neg_inf(rev.grow) - std::log(regrow.size()) + rule;
      p.log_rule_prior = -rule;
      break;
    }
    case MoveKind::Change: {
      const auto nogs = tree.nog_nodes();
      p.node = nogs[static_cast<std::size_t>(rng.index(static_cast<int>(nogs.size())))];
      const auto& nd = tree.node(p.node);
      const auto ranges = cell_ranges(tree, p.node, grid);
      const RuleChoice rc = draw_rule(tree, p.node, grid, rng);
      p.var = rc.var;
      p.cut = rc.cut;
      p.proposed.change(p.node, rc.var, rc.cut, grid.cuts[static_cast<std::size_t>(rc.var)][static_cast<std::size_t>(rc.cut)]);
      const auto [lo, hi] = ranges[static_cast<std::size_t>(nd.var)];
      const double old_rule = -std::log(rc.num_vars) - std::log(static_cast<double>(hi - lo));
      const double new_rule = -std::log(rc.num_vars) - std::log(rc.num_cuts);
      const auto rev = move_probabilities(p.proposed, grid);
      p.log_forward = std::log(probs.change) - std::log(nogs.size()) + new_rule;
      p.log_reverse = std::log(rev.change) - std::log(p.proposed.nog_nodes().size()) + old_rule;
      p.log_rule_prior = new_rule - old_rule;
      break;
    }
  }
  return p;
}

double log_acceptance_ratio(const DecisionTree& current, const Proposal& p,
                            const TreePriorConfig& cfg, double marginal_before,
                            double marginal_after) {
  // Only the split node and its children differ between the two structures.
  double prior = p.log_rule_prior;
  if (p.kind != MoveKind::Change) {
    const int d = current.node(p.node).depth;
    const double ps = cfg.split_probability(d);
    const double pc = cfg.split_probability(d + 1);
    const double split = std::log(ps) + 2.0 * std::log1p(-pc) - std::log1p(-ps);
    prior += p.kind == MoveKind::Grow ? split : -split;
  }
  return prior + (marginal_after - marginal_before) + (p.log_reverse - p.log_forward);
}

// --- MH update ----------------------------------------------------------------

void TrackedTree::reassign(const Eigen::MatrixXd& x) {
  leaf_of.resize(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) leaf_of[static_cast<std::size_t>(i)] = tree.route(x, i);
}

namespace {

// Unit weights and explicit weights get separate instantiations so the hot
// loops carry no per-row branch on the weight kind.
struct UnitWeight {
  double operator()(std::size_t) const { return 1.0; }
};
struct SpanWeight {
  std::span<const double> w;
  double operator()(std::size_t i) const { return w[i]; }
};

// Per-leaf sum(w e) and sum(w^2). Rows are spread over four interleaved
// accumulator sets so consecutive rows in the same leaf do not wait on each
// other's stores; the sets are combined at the end. With a split column the
// same pass also fills `left` with the sums over rows where col <= cut, per
// leaf; right-going rows land in a spare slot that is discarded.
template <typename W>
void accumulate_leaf_stats(const int* leaf_of, const double* e, W w_at, std::size_t n, std::vector<LeafStats>& stats,
                           const double* col = nullptr, double cut = 0.0, std::vector<LeafStats>* left = nullptr) {
  const std::size_t cap = stats.size();
  const bool split = col != nullptr;
  const std::size_t width = split ? 2 * cap + 1 : cap;
  thread_local std::vector<LeafStats> lanes_tls;
  auto& lanes = lanes_tls;
  lanes.assign(4 * width, LeafStats{});
  LeafStats* lane[4] = {lanes.data(), lanes.data() + width, lanes.data() + 2 * width, lanes.data() + 3 * width};
  auto add = [&](LeafStats* ln, std::size_t i) {
    const double w = w_at(i);
    const int leaf = leaf_of[i];
    auto& s = ln[leaf];
    s.s_wr += w * e[i];
    s.s_ww += w * w;
  };
  auto add_split = [&](LeafStats* ln, std::size_t i) {
    const double w = w_at(i);
    const int leaf = leaf_of[i];
    const double we = w * e[i];
    const double ww = w * w;
    auto& s = ln[leaf];
    s.s_wr += we;
    s.s_ww += ww;
    auto& l = ln[col[i] <= cut ? cap + static_cast<std::size_t>(leaf) : 2 * cap];
    l.s_wr += we;
    l.s_ww += ww;
  };
  std::size_t i = 0;
  if (split) {
    for (; i + 4 <= n; i += 4) {
      add_split(lane[0], i);
      add_split(lane[1], i + 1);
      add_split(lane[2], i + 2);
      add_split(lane[3], i + 3);
    }
    for (; i < n; ++i) add_split(lane[0], i);
  } else {
    for (; i + 4 <= n; i += 4) {
      add(lane[0], i);
      add(lane[1], i + 1);
      add(lane[2], i + 2);
      add(lane[3], i + 3);
    }
    for (; i < n; ++i) add(lane[0], i);
  }
  auto combine = [&](std::size_t offset, std::vector<LeafStats>& out) {
    out.resize(cap);
    for (std::size_t k = 0; k < cap; ++k) {
      const std::size_t j = offset + k;
      out[k].s_wr = (lane[0][j].s_wr + lane[1][j].s_wr) + (lane[2][j].s_wr + lane[3][j].s_wr);
      out[k].s_ww = (lane[0][j].s_ww + lane[1][j].s_ww) + (lane[2][j].s_ww + lane[3][j].s_ww);
    }
  };
  combine(0, stats);
  if (split) combine(cap, *left);
}

template <typename W>
MoveOutcome mh_update_tree_impl(TrackedTree& t, const Eigen::MatrixXd& x, double* e, W w_at,
                                double* fit, std::size_t n, double sigma2, const TreePriorConfig& cfg,
                                const CutpointGrid& grid, RandomSource& rng, bool update_structure) {
  const double v = cfg.resolved_leaf_variance();
  MoveOutcome out;
  int* leaf_of = t.leaf_of.data();

  // Per-leaf sums over the partial residual r = e + w * value(leaf). The row
  // pass collects sum(w e) and sum(w^2); the value term is added per leaf.
  thread_local std::vector<LeafStats> stats_tls;
  thread_local std::vector<double> old_tls;
  auto& stats = stats_tls;
  auto& old_value = old_tls;
  stats.assign(t.tree.capacity(), LeafStats{});
  old_value.assign(t.tree.capacity(), 0.0);
  for (std::size_t id = 0; id < t.tree.capacity(); ++id) old_value[id] = t.tree.node(static_cast<int>(id)).value;

  std::optional<Proposal> prop;
  if (update_structure) prop = propose_move(t.tree, grid, rng);

  // Rows of leaves a and b are rerouted to dl / dr when a move is accepted.
  int a = -1, b = -1, dl = -1, dr = -1;
  const double* col = nullptr;
  double cut = 0.0;
  bool grow = false, prune = false;
  if (prop) {
    const auto& cur = t.tree.node(prop->node);
    const auto& nxt = prop->proposed.node(prop->node);
    grow = prop->kind == MoveKind::Grow;
    prune = prop->kind == MoveKind::Prune;
    a = grow ? prop->node : cur.left;
    b = grow ? prop->node : cur.right;
    dl = prune ? prop->node : nxt.left;
    dr = prune ? prop->node : nxt.right;
    if (!prune) {
      col = x.col(nxt.var).data();
      cut = nxt.cut_value;
    }
  }
  // Left-going rows of a and b, split by source leaf; the right side follows
  // by subtraction from the leaf totals.
  thread_local std::vector<LeafStats> left_tls;
  auto& left = left_tls;
  accumulate_leaf_stats(leaf_of, e, w_at, n, stats, col, cut, &left);
  for (std::size_t id = 0; id < t.tree.capacity(); ++id) {
    const auto& nd = t.tree.node(static_cast<int>(id));
    if (nd.alive && nd.is_leaf()) stats[id].s_wr += nd.value * stats[id].s_ww;
  }

  if (prop) {
    out.kind = prop->kind;
    const double va = old_value[static_cast<std::size_t>(a)];
    const double vb = old_value[static_cast<std::size_t>(b)];
    double la_we = 0.0, la_ww = 0.0, lb_we = 0.0, lb_ww = 0.0;
    if (col != nullptr) {
      la_we = left[static_cast<std::size_t>(a)].s_wr;
      la_ww = left[static_cast<std::size_t>(a)].s_ww;
      if (!grow) {
        lb_we = left[static_cast<std::size_t>(b)].s_wr;
        lb_ww = left[static_cast<std::size_t>(b)].s_ww;
      }
    }
    const LeafStats sa = stats[static_cast<std::size_t>(a)];
    const LeafStats sb = stats[static_cast<std::size_t>(b)];
    LeafStats after[2];
    if (prune) {
      after[0] = {sa.s_wr + sb.s_wr, sa.s_ww + sb.s_ww};
    } else if (grow) {
      after[0] = {la_we + va * la_ww, la_ww};
      after[1] = {sa.s_wr - after[0].s_wr, sa.s_ww - after[0].s_ww};
    } else {
      after[0] = {la_we + va * la_ww + lb_we + vb * lb_ww, la_ww + lb_ww};
      after[1] = {sa.s_wr + sb.s_wr - after[0].s_wr, sa.s_ww + sb.s_ww - after[0].s_ww};
    }

    double m_before = leaf_log_marginal(sa, v, sigma2);
    if (!grow) m_before += leaf_log_marginal(sb, v, sigma2);
    double m_after = leaf_log_marginal(after[0], v, sigma2);
    if (!prune) m_after += leaf_log_marginal(after[1], v, sigma2);
    out.log_ratio = log_acceptance_ratio(t.tree, *prop, cfg, m_before, m_after);
    if (std::log(rng.uniform()) < out.log_ratio) {
      out.accepted = true;
      t.tree = std::move(prop->proposed);
      stats.resize(t.tree.capacity());
      stats[static_cast<std::size_t>(a)] = LeafStats{};
      stats[static_cast<std::size_t>(b)] = LeafStats{};
      stats[static_cast<std::size_t>(dl)] = after[0];
      if (!prune) stats[static_cast<std::size_t>(dr)] = after[1];
    }
  }

  thread_local std::vector<double> new_tls;
  auto& new_value = new_tls;
  new_value.assign(t.tree.capacity(), 0.0);
  for (std::size_t id = 0; id < t.tree.capacity(); ++id) {
    const auto& nd = t.tree.node(static_cast<int>(id));
    if (!nd.alive || !nd.is_leaf()) continue;
    new_value[id] = sample_leaf_value(stats[id], v, sigma2, rng);
    t.tree.set_value(static_cast<int>(id), new_value[id]);
  }

  // One pass moves rows to their new leaf and applies the change in fit.
  const double* ov = old_value.data();
  const double* nv = new_value.data();
  if (!out.accepted) {
    for (std::size_t i = 0; i < n; ++i) {
      const int leaf = leaf_of[i];
      const double d = nv[leaf] - ov[leaf];
      e[i] -= w_at(i) * d;
      if (fit) fit[i] += d;
    }
  } else if (col == nullptr) {
    // PRUNE: rows of both children move to the parent.
    for (std::size_t i = 0; i < n; ++i) {
      const int leaf = leaf_of[i];
      const int to = (leaf == a) | (leaf == b) ? dl : leaf;
      const double d = nv[to] - ov[leaf];
      e[i] -= w_at(i) * d;
      if (fit) fit[i] += d;
      leaf_of[i] = to;
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      const int leaf = leaf_of[i];
      const int dest = col[i] <= cut ? dl : dr;
      const int to = (leaf == a) | (leaf == b) ? dest : leaf;
      const double d = nv[to] - ov[leaf];
      e[i] -= w_at(i) * d;
      if (fit) fit[i] += d;
      leaf_of[i] = to;
    }
  }
  return out;
}

}  // namespace

MoveOutcome mh_update_tree_inplace(TrackedTree& t, const Eigen::MatrixXd& x, std::span<double> residual,
                                   std::span<const double> weight, std::span<double> fit, double sigma2,
                                   const TreePriorConfig& cfg, const CutpointGrid& grid, RandomSource& rng,
                                   bool update_structure) {
  const std::size_t n = residual.size();
  if (t.leaf_of.size() != n || (!weight.empty() && weight.size() != n) || (!fit.empty() && fit.size() != n)) {
    throw std::invalid_argument("mh_update_tree: row count mismatch");
  }
  double* f = fit.empty() ? nullptr : fit.data();
  if (weight.empty()) {
    return mh_update_tree_impl(t, x, residual.data(), UnitWeight{}, f, n, sigma2, cfg, grid, rng,
                               update_structure);
  }
  return mh_update_tree_impl(t, x, residual.data(), SpanWeight{weight}, f, n, sigma2, cfg, grid, rng,
                             update_structure);
}

MoveOutcome mh_update_tree(TrackedTree& t, const Eigen::MatrixXd& x,
                           std::span<const double> residual, std::span<const double> weight,
                           double sigma2, const TreePriorConfig& cfg, const CutpointGrid& grid,
                           RandomSource& rng, bool update_structure) {
  std::vector<double> e(residual.begin(), residual.end());
  for (std::size_t i = 0; i < e.size(); ++i) e[i] -= (weight.empty() ? 1.0 : weight[i]) * t.fit(i);
  return mh_update_tree_inplace(t, x, e, weight, {}, sigma2, cfg, grid, rng, update_structure);
}

// --- forests --------------------------------------------------------------------

nlohmann::json Forest::to_json() const {
  nlohmann::json j;
  j["format"] = "ctbcf-forest";
  j["version"] = 1;
  j["num_columns"] = num_columns;
  j["trees"] = nlohmann::json::array();
  for (const auto& t : trees) j["trees"].push_back(t.to_json());
  return j;
}

Forest Forest::from_json(const nlohmann::json& j) {
  if (j.value("format", std::string{}) != "ctbcf-forest") throw ParseError("not a forest document");
  if (j.value("version", 0) != 1) throw ParseError("unsupported forest format version");
  Forest f;
  f.num_columns = j.at("num_columns").get<int>();
  for (const auto& t : j.at("trees")) f.trees.push_back(DecisionTree::from_json(t));
  return f;
}

Eigen::VectorXd forest_predict(const Forest& forest, const Eigen::MatrixXd& x) {
  if (x.cols() != forest.num_columns) {
    throw ShapeError("design has " + std::to_string(x.cols()) + " columns, forest expects " +
                     std::to_string(forest.num_columns));
  }
  Eigen::VectorXd out = Eigen::VectorXd::Zero(x.rows());
  for (const auto& tree : forest.trees) {
    for (Eigen::Index i = 0; i < x.rows(); ++i) out[i] += tree.predict(x, i);
  }
  return out;
}

}  // namespace ctbcf
