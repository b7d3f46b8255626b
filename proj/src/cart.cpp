#include "ctbcf/cart.h"

#include "ctbcf/error.h"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>

namespace ctbcf {

namespace {

struct SplitChoice {
  int var = -1;
  double threshold = 0.0;
  double gain = 0.0;
};

SplitChoice best_split(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const std::vector<int>& rows,
                       int min_leaf) {
  SplitChoice best;
  const auto m = rows.size();
  if (m < 2 * static_cast<std::size_t>(min_leaf)) return best;
  double total = 0.0, total2 = 0.0;
  for (int i : rows) {
    total += y[i];
    total2 += y[i] * y[i];
  }
  const double parent_sse = total2 - total * total / static_cast<double>(m);
  std::vector<int> order(rows);
  for (Eigen::Index v = 0; v < x.cols(); ++v) {
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return x(a, v) < x(b, v); });
    double left = 0.0, left2 = 0.0;
    for (std::size_t k = 0; k + 1 < m; ++k) {
      const double yi = y[order[k]];
      left += yi;
      left2 += yi * yi;
      const double xv = x(order[k], v);
      const double xn = x(order[k + 1], v);
      if (!(xn > xv)) continue;
      const auto nl = static_cast<double>(k + 1);
      const auto nr = static_cast<double>(m - k - 1);
      if (nl < min_leaf || nr < min_leaf) continue;
      const double right = total - left;
      const double right2 = total2 - left2;
      const double sse = (left2 - left * left / nl) + (right2 - right * right / nr);
      const double gain = parent_sse - sse;
      if (gain > best.gain) {
        best.gain = gain;
        best.var = static_cast<int>(v);
        best.threshold = 0.5 * (xv + xn);
      }
    }
  }
  // Ignore numerically zero improvements (constant response).
  const double tol = 1e-12 * std::max(1.0, std::abs(total2));
  if (best.gain <= tol) best.var = -1;
  return best;
}

}  // namespace

RegressionTree RegressionTree::grow(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, int min_leaf) {
  if (x.rows() != y.size()) throw ShapeError("tree design and response differ in length");
  if (y.size() == 0) throw DegenerateInputError("regression tree on no rows");
  RegressionTree t;
  std::function<int(std::vector<int>, int)> build = [&](std::vector<int> rows, int parent) {
    const int id = static_cast<int>(t.nodes_.size());
    t.nodes_.emplace_back();
    t.parent_.push_back(parent);
    double s = 0.0;
    for (int i : rows) s += y[i];
    const double mean = s / static_cast<double>(rows.size());
    double sse = 0.0;
    for (int i : rows) sse += (y[i] - mean) * (y[i] - mean);
    t.nodes_[static_cast<std::size_t>(id)].value = mean;
    t.nodes_[static_cast<std::size_t>(id)].sse = sse;
    t.nodes_[static_cast<std::size_t>(id)].count = static_cast<int>(rows.size());
    const SplitChoice sc = best_split(x, y, rows, min_leaf);
    if (sc.var < 0) return id;
    std::vector<int> l, r;
    for (int i : rows) (x(i, sc.var) <= sc.threshold ? l : r).push_back(i);
    const int lid = build(std::move(l), id);
    const int rid = build(std::move(r), id);
    auto& nd = t.nodes_[static_cast<std::size_t>(id)];
    nd.var = sc.var;
    nd.threshold = sc.threshold;
    nd.left = lid;
    nd.right = rid;
    return id;
  };
  std::vector<int> all(static_cast<std::size_t>(y.size()));
  std::iota(all.begin(), all.end(), 0);
  build(std::move(all), -1);
  return t;
}

int RegressionTree::leaf_of(const Eigen::MatrixXd& x, Eigen::Index row) const {
  int id = 0;
  while (!nodes_[static_cast<std::size_t>(id)].is_leaf()) {
    const auto& nd = nodes_[static_cast<std::size_t>(id)];
    id = x(row, nd.var) <= nd.threshold ? nd.left : nd.right;
  }
  return id;
}

std::vector<int> RegressionTree::leaves() const {
  std::vector<int> out;
  std::function<void(int)> walk = [&](int id) {
    const auto& nd = nodes_[static_cast<std::size_t>(id)];
    if (nd.is_leaf()) {
      out.push_back(id);
      return;
    }
    walk(nd.left);
    walk(nd.right);
  };
  walk(0);
  return out;
}

void RegressionTree::collapse(int id) {
  auto& nd = nodes_[static_cast<std::size_t>(id)];
  nd.left = nd.right = -1;
  nd.var = -1;
  nd.threshold = 0.0;
}

std::vector<std::pair<double, RegressionTree>> RegressionTree::pruning_sequence() const {
  std::vector<std::pair<double, RegressionTree>> seq;
  RegressionTree cur = *this;
  seq.emplace_back(0.0, cur);
  for (;;) {
    if (cur.nodes_[0].is_leaf()) break;
    // Subtree risk and leaf count for every live node.
    std::vector<double> risk(cur.nodes_.size(), 0.0);
    std::vector<int> nleaf(cur.nodes_.size(), 0);
    std::function<void(int)> eval = [&](int id) {
      const auto& nd = cur.nodes_[static_cast<std::size_t>(id)];
      if (nd.is_leaf()) {
        risk[static_cast<std::size_t>(id)] = nd.sse;
        nleaf[static_cast<std::size_t>(id)] = 1;
        return;
      }
      eval(nd.left);
      eval(nd.right);
      risk[static_cast<std::size_t>(id)] = risk[static_cast<std::size_t>(nd.left)] + risk[static_cast<std::size_t>(nd.right)];
      nleaf[static_cast<std::size_t>(id)] = nleaf[static_cast<std::size_t>(nd.left)] + nleaf[static_cast<std::size_t>(nd.right)];
    };
    eval(0);
    double weakest = std::numeric_limits<double>::infinity();
    std::function<void(int)> scan = [&](int id) {
      const auto& nd = cur.nodes_[static_cast<std::size_t>(id)];
      if (nd.is_leaf()) return;
      const double g = (nd.sse - risk[static_cast<std::size_t>(id)]) / (nleaf[static_cast<std::size_t>(id)] - 1);
      weakest = std::min(weakest, g);
      scan(nd.left);
      scan(nd.right);
    };
    scan(0);
    const double tol = 1e-12 * std::max(1.0, std::abs(weakest));
    std::function<void(int)> cut = [&](int id) {
      const auto& nd = cur.nodes_[static_cast<std::size_t>(id)];
      if (nd.is_leaf()) return;
      const double g = (nd.sse - risk[static_cast<std::size_t>(id)]) / (nleaf[static_cast<std::size_t>(id)] - 1);
      if (g <= weakest + tol) {
        cur.collapse(id);
        return;
      }
      cut(nd.left);
      cut(nd.right);
    };
    cut(0);
    seq.emplace_back(std::max(weakest, 0.0), cur);
  }
  return seq;
}

RegressionTree RegressionTree::fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                   const RegressionTreeOptions& options) {
  const auto n = y.size();
  auto min_leaf_for = [&](Eigen::Index rows) {
    return std::max(1, static_cast<int>(std::ceil(options.min_leaf_fraction * static_cast<double>(rows))));
  };
  const RegressionTree full = grow(x, y, min_leaf_for(n));
  const auto seq = full.pruning_sequence();
  if (seq.size() == 1 || options.folds < 2 || n < options.folds) {
    RegressionTree t = seq.back().second;
    if (seq.size() == 1) t = seq.front().second;
    return t;
  }

  // Representative alpha for each interval of the main sequence.
  std::vector<double> reps;
  for (std::size_t k = 0; k < seq.size(); ++k) {
    if (k + 1 < seq.size()) reps.push_back(std::sqrt(seq[k].first * seq[k + 1].first));
    else reps.push_back(std::numeric_limits<double>::infinity());
  }
  std::vector<std::vector<double>> sq_err(reps.size(), std::vector<double>(static_cast<std::size_t>(n), 0.0));
  for (int f = 0; f < options.folds; ++f) {
    std::vector<int> train, test;
    for (Eigen::Index i = 0; i < n; ++i) (i % options.folds == f ? test : train).push_back(static_cast<int>(i));
    Eigen::MatrixXd xt(static_cast<Eigen::Index>(train.size()), x.cols());
    Eigen::VectorXd yt(static_cast<Eigen::Index>(train.size()));
    for (std::size_t k = 0; k < train.size(); ++k) {
      xt.row(static_cast<Eigen::Index>(k)) = x.row(train[k]);
      yt[static_cast<Eigen::Index>(k)] = y[train[k]];
    }
    const auto fold_seq = grow(xt, yt, min_leaf_for(yt.size())).pruning_sequence();
    for (std::size_t k = 0; k < reps.size(); ++k) {
      std::size_t pick = 0;
      for (std::size_t q = 0; q < fold_seq.size(); ++q) {
        if (fold_seq[q].first <= reps[k]) pick = q;
      }
      const auto& sub = fold_seq[pick].second;
      for (int i : test) {
        const double e = y[i] - sub.predict(x, i);
        sq_err[k][static_cast<std::size_t>(i)] = e * e;
      }
    }
  }
  std::vector<double> mean(reps.size()), se(reps.size());
  for (std::size_t k = 0; k < reps.size(); ++k) {
    const double m = std::accumulate(sq_err[k].begin(), sq_err[k].end(), 0.0) / static_cast<double>(n);
    double v = 0.0;
    for (double e : sq_err[k]) v += (e - m) * (e - m);
    mean[k] = m;
    se[k] = std::sqrt(v / static_cast<double>(n - 1) / static_cast<double>(n));
  }
  const auto best = static_cast<std::size_t>(std::min_element(mean.begin(), mean.end()) - mean.begin());
  std::size_t chosen = best;
  if (options.one_se_rule) {
    const double bound = mean[best] + se[best];
    for (std::size_t k = seq.size(); k-- > best;) {
      if (mean[k] <= bound) {
        chosen = k;
        break;
      }
    }
  }
  RegressionTree t = seq[chosen].second;
  t.selected_alpha_ = seq[chosen].first;
  return t;
}

std::string RegressionTree::describe(int id, const std::vector<std::string>& names) const {
  std::vector<std::string> parts;
  int child = id;
  int parent = parent_[static_cast<std::size_t>(id)];
  while (parent >= 0) {
    const auto& p = nodes_[static_cast<std::size_t>(parent)];
    std::ostringstream s;
    const std::string name = p.var < static_cast<int>(names.size()) ? names[static_cast<std::size_t>(p.var)]
                                                                    : "x" + std::to_string(p.var);
    s << name << (p.left == child ? " <= " : " > ") << p.threshold;
    parts.push_back(s.str());
    child = parent;
    parent = parent_[static_cast<std::size_t>(parent)];
  }
  if (parts.empty()) return "all";
  std::string out;
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) out += (out.empty() ? "" : " & ") + *it;
  return out;
}

nlohmann::json RegressionTree::to_json(const std::vector<std::string>& names) const {
  std::function<nlohmann::json(int)> walk = [&](int id) {
    const auto& nd = nodes_[static_cast<std::size_t>(id)];
    if (nd.is_leaf()) return nlohmann::json{{"leaf", id}, {"value", nd.value}, {"count", nd.count}};
    return nlohmann::json{{"variable", nd.var < static_cast<int>(names.size()) ? names[static_cast<std::size_t>(nd.var)] : std::string("?")},
                          {"threshold", nd.threshold},
                          {"count", nd.count},
                          {"left", walk(nd.left)},
                          {"right", walk(nd.right)}};
  };
  return walk(0);
}

}  // namespace ctbcf
