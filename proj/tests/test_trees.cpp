#include "ctbcf/error.h"
#include "ctbcf/trees.h"

#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <random>

using namespace ctbcf;

namespace {

Eigen::MatrixXd column(std::initializer_list<double> v) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(v.size()), 1);
  Eigen::Index i = 0;
  for (double d : v) x(i++, 0) = d;
  return x;
}

// log N(r; 0, sigma2 I + v w w') - log N(r; 0, sigma2 I), by dense linear algebra.
double dense_log_marginal(const Eigen::VectorXd& r, const Eigen::VectorXd& w, double v, double sigma2) {
  const auto n = r.size();
  const Eigen::MatrixXd cov = sigma2 * Eigen::MatrixXd::Identity(n, n) + v * w * w.transpose();
  const Eigen::LLT<Eigen::MatrixXd> llt(cov);
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const double quad = r.dot(llt.solve(r));
  return -0.5 * (logdet + quad) + 0.5 * (n * std::log(sigma2) + r.squaredNorm() / sigma2);
}

}  // namespace

TEST(CutpointGrid, DistinctValuesWithoutMaximum) {
  const auto g = CutpointGrid::build(column({3, 1, 2, 2, 5}));
  EXPECT_EQ(g.cuts[0], (std::vector<double>{1, 2, 3}));
}

TEST(CutpointGrid, IndicatorHasSingleCutAtZero) {
  const auto g = CutpointGrid::build(column({0, 1, 1, 0, 1}));
  EXPECT_EQ(g.cuts[0], (std::vector<double>{0}));
}

TEST(CutpointGrid, ConstantColumnHasNoCuts) {
  EXPECT_TRUE(CutpointGrid::build(column({2, 2, 2})).cuts[0].empty());
}

TEST(CutpointGrid, ManyValuesUseQuantilesBelowMaximum) {
  Eigen::MatrixXd x(1000, 1);
  for (int i = 0; i < 1000; ++i) x(i, 0) = i * 0.5;
  const auto g = CutpointGrid::build(x, 100);
  EXPECT_LE(g.cuts[0].size(), 100u);
  EXPECT_GE(g.cuts[0].size(), 95u);
  EXPECT_TRUE(std::is_sorted(g.cuts[0].begin(), g.cuts[0].end()));
  EXPECT_LT(g.cuts[0].back(), x.maxCoeff());
}

TEST(DecisionTree, GrowRoutePrune) {
  DecisionTree t;
  EXPECT_TRUE(t.is_root_only());
  const auto [l, r] = t.grow(0, 0, 1, 2.0);
  const Eigen::MatrixXd x = column({1, 2, 3});
  EXPECT_EQ(t.route(x, 0), l);
  EXPECT_EQ(t.route(x, 1), l);  // x <= cut goes left
  EXPECT_EQ(t.route(x, 2), r);
  EXPECT_EQ(t.num_leaves(), 2);
  EXPECT_EQ(t.nog_nodes(), std::vector<int>{0});
  t.grow(r, 0, 2, 2.5);
  EXPECT_EQ(t.nog_nodes(), std::vector<int>{r});
  EXPECT_EQ(t.node(t.route(x, 2)).depth, 2);
  t.prune(r);
  t.prune(0);
  EXPECT_TRUE(t.is_root_only());
  EXPECT_EQ(t, DecisionTree{});
  // Recycled slots come back lowest id first.
  const auto [l2, r2] = t.grow(0, 0, 0, 1.0);
  EXPECT_EQ(l2, 1);
  EXPECT_EQ(r2, 2);
}

TEST(DecisionTree, JsonRoundTrip) {
  DecisionTree t;
  const auto [l, r] = t.grow(0, 1, 3, 0.25);
  t.grow(l, 0, 0, -1.5);
  t.set_value(r, 0.125);
  const DecisionTree back = DecisionTree::from_json(t.to_json());
  EXPECT_EQ(back, t);
  Eigen::MatrixXd x(3, 2);
  x << -2, 0, 0, 0, 1, 1;
  for (Eigen::Index i = 0; i < 3; ++i) EXPECT_EQ(back.predict(x, i), t.predict(x, i));
}

TEST(TreePrior, StructureLogPrior) {
  const TreePriorConfig cfg{0.95, 2.0, 1, 0.0};
  DecisionTree t;
  EXPECT_NEAR(tree_log_prior(t, cfg), std::log(0.05), 1e-14);
  t.grow(0, 0, 0, 0.0);
  const double p1 = 0.95 / 4.0;
  EXPECT_NEAR(tree_log_prior(t, cfg), std::log(0.95) + 2.0 * std::log(1.0 - p1), 1e-14);
}

TEST(TreePrior, DefaultLeafVariance) {
  EXPECT_DOUBLE_EQ(TreePriorConfig::control_defaults().resolved_leaf_variance(), 0.25 / 200.0);
  EXPECT_DOUBLE_EQ(TreePriorConfig::moderator_defaults().resolved_leaf_variance(), 0.25 / 50.0);
}

TEST(LeafAlgebra, LogMarginalMatchesDenseGaussian) {
  std::mt19937_64 gen(5);
  std::normal_distribution<double> nd;
  for (int rep = 0; rep < 20; ++rep) {
    Eigen::VectorXd r(7), w(7);
    for (int i = 0; i < 7; ++i) {
      r[i] = nd(gen);
      w[i] = rep % 2 ? 1.0 : nd(gen);
    }
    const double v = 0.3, sigma2 = 0.7;
    const LeafStats s{w.dot(r), w.squaredNorm()};
    EXPECT_NEAR(leaf_log_marginal(s, v, sigma2), dense_log_marginal(r, w, v, sigma2), 1e-10);
  }
}

TEST(LeafAlgebra, EmptyLeafContributesZero) {
  EXPECT_EQ(leaf_log_marginal(LeafStats{}, 0.5, 1.0), 0.0);
}

TEST(LeafAlgebra, PosteriorDrawMoments) {
  const LeafStats s{3.0, 4.0};
  const double v = 0.5, sigma2 = 2.0;
  const double prec = 1.0 / v + s.s_ww / sigma2;
  const double mean = s.s_wr / sigma2 / prec;
  RandomSource rng(9);
  const int n = 200000;
  double m1 = 0.0, m2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double d = sample_leaf_value(s, v, sigma2, rng);
    m1 += d;
    m2 += d * d;
  }
  m1 /= n;
  m2 = m2 / n - m1 * m1;
  EXPECT_NEAR(m1, mean, 4.0 * std::sqrt(1.0 / prec / n));
  EXPECT_NEAR(m2, 1.0 / prec, 0.01);
}

TEST(LeafAlgebra, NegatedWeightsGiveNegatedDraw) {
  RandomSource a(4), b(4);
  for (int i = 0; i < 100; ++i) {
    const LeafStats s{0.1 * (i - 50), 1.0 + i};
    const LeafStats flipped{-s.s_wr, s.s_ww};
    EXPECT_EQ(sample_leaf_value(s, 0.3, 0.9, a), -sample_leaf_value(flipped, 0.3, 0.9, b));
  }
}

TEST(Moves, ProbabilitiesRenormalize) {
  const auto grid = CutpointGrid::build(column({1, 2, 3}));
  DecisionTree t;
  auto p = move_probabilities(t, grid);
  EXPECT_DOUBLE_EQ(p.grow, 1.0);
  t.grow(0, 0, 0, 1.0);
  p = move_probabilities(t, grid);
  EXPECT_DOUBLE_EQ(p.grow, 0.25);
  EXPECT_DOUBLE_EQ(p.prune, 0.25);
  EXPECT_DOUBLE_EQ(p.change, 0.5);
  const auto none = CutpointGrid::build(column({1, 1, 1}));
  RandomSource rng(1);
  EXPECT_FALSE(propose_move(DecisionTree{}, none, rng).has_value());
}

TEST(Moves, AcceptanceRatioUsesFullStructurePrior) {
  Eigen::MatrixXd x(40, 2);
  for (int i = 0; i < 40; ++i) x.row(i) << i % 7, (i * 13) % 11;
  const auto grid = CutpointGrid::build(x);
  const TreePriorConfig cfg{0.8, 1.5, 1, 0.3};
  RandomSource rng(5);
  DecisionTree t;
  int checked = 0;
  for (int k = 0; k < 400; ++k) {
    auto p = propose_move(t, grid, rng);
    ASSERT_TRUE(p.has_value());
    const double full = tree_log_prior(p->proposed, cfg) - tree_log_prior(t, cfg) + p->log_rule_prior +
                        p->log_reverse - p->log_forward;
    EXPECT_NEAR(log_acceptance_ratio(t, *p, cfg, 0.0, 0.0), full, 1e-12);
    ++checked;
    if (p->kind != MoveKind::Prune || rng.uniform() < 0.3) t = p->proposed;
  }
  EXPECT_EQ(checked, 400);
  EXPECT_GT(t.num_leaves(), 2);
}

TEST(Moves, CellRangesRespectAncestors) {
  const auto grid = CutpointGrid::build(column({1, 2, 3, 4, 5}));  // cuts 1,2,3,4
  DecisionTree t;
  const auto [l, r] = t.grow(0, 0, 2, 3.0);
  EXPECT_EQ(cell_ranges(t, l, grid)[0], (std::pair<int, int>{0, 2}));
  EXPECT_EQ(cell_ranges(t, r, grid)[0], (std::pair<int, int>{3, 4}));
  const auto [rl, rr] = t.grow(r, 0, 3, 4.0);
  EXPECT_FALSE(leaf_growable(t, rl, grid));
  EXPECT_FALSE(leaf_growable(t, rr, grid));
  EXPECT_TRUE(leaf_growable(t, l, grid));
}

// Exact posterior over every tree reachable on one column with two cuts,
// compared with the visit frequencies of the MH chain.
TEST(Moves, StructureChainMatchesEnumeration) {
  const Eigen::MatrixXd x = column({0, 0, 1, 1, 2, 2});
  Eigen::VectorXd r(6);
  r << -0.9, -0.4, 0.5, 0.2, 1.4, 0.8;
  const auto grid = CutpointGrid::build(x);  // cuts 0, 1
  const TreePriorConfig cfg{0.9, 1.0, 1, 0.6};
  const double sigma2 = 0.5, v = cfg.leaf_variance;
  auto p = [&](int d) { return cfg.split_probability(d); };
  auto lm = [&](std::initializer_list<int> rows) {
    LeafStats s;
    for (int i : rows) {
      s.s_wr += r[i];
      s.s_ww += 1.0;
    }
    return std::exp(leaf_log_marginal(s, v, sigma2));
  };
  std::map<std::string, double> post;
  post["root"] = (1 - p(0)) * lm({0, 1, 2, 3, 4, 5});
  post["s0"] = p(0) * 0.5 * (1 - p(1)) * (1 - p(1)) * lm({0, 1}) * lm({2, 3, 4, 5});
  post["s1"] = p(0) * 0.5 * (1 - p(1)) * (1 - p(1)) * lm({0, 1, 2, 3}) * lm({4, 5});
  post["s0s1"] = p(0) * 0.5 * (1 - p(1)) * p(1) * (1 - p(2)) * (1 - p(2)) * lm({0, 1}) * lm({2, 3}) * lm({4, 5});
  post["s1s0"] = post["s0s1"];
  double z = 0.0;
  for (auto& [k, val] : post) z += val;
  for (auto& [k, val] : post) val /= z;

  auto classify = [&](const DecisionTree& t) -> std::string {
    if (t.is_root_only()) return "root";
    const auto& root = t.node(0);
    if (t.num_leaves() == 2) return root.cut == 0 ? "s0" : "s1";
    return root.cut == 0 ? "s0s1" : "s1s0";
  };
  TrackedTree tt(6);
  RandomSource rng(2024);
  std::map<std::string, double> freq;
  const std::vector<double> resid(r.data(), r.data() + r.size());
  const int sweeps = 200000;
  for (int s = 0; s < sweeps; ++s) {
    mh_update_tree(tt, x, resid, {}, sigma2, cfg, grid, rng);
    freq[classify(tt.tree)] += 1.0 / sweeps;
  }
  for (const auto& [k, val] : post) EXPECT_NEAR(freq[k], val, 0.01) << k;
}

TEST(Forest, PredictSumsTreesAndChecksColumns) {
  Forest f;
  f.num_columns = 1;
  DecisionTree a, b;
  const auto [l, r] = a.grow(0, 0, 0, 1.5);
  a.set_value(l, 1.0);
  a.set_value(r, 2.0);
  b.set_value(0, 0.5);
  f.trees = {a, b};
  const Eigen::VectorXd out = forest_predict(f, column({1, 2}));
  EXPECT_DOUBLE_EQ(out[0], 1.5);
  EXPECT_DOUBLE_EQ(out[1], 2.5);
  EXPECT_THROW(forest_predict(f, Eigen::MatrixXd::Zero(2, 3)), ShapeError);
  EXPECT_EQ(Forest::from_json(f.to_json()), f);
}

TEST(Moves, InplaceUpdateKeepsResidualAndFitCurrent) {
  std::mt19937_64 gen(11);
  std::normal_distribution<double> nd;
  const int n = 60;
  Eigen::MatrixXd x(n, 2);
  std::vector<double> r(n), w(n);
  for (int i = 0; i < n; ++i) {
    x(i, 0) = nd(gen);
    x(i, 1) = i % 4;
    r[i] = x(i, 0) + nd(gen);
    w[i] = nd(gen);
  }
  const auto grid = CutpointGrid::build(x);
  const TreePriorConfig cfg{0.95, 1.0, 1, 0.5};
  TrackedTree t(n);
  std::vector<double> e = r, fit(n, 0.0);
  RandomSource rng(3);
  int accepted = 0;
  for (int s = 0; s < 500; ++s) {
    accepted += mh_update_tree_inplace(t, x, e, w, fit, 0.8, cfg, grid, rng).accepted;
    for (int i = 0; i < n; ++i) {
      ASSERT_EQ(t.leaf_of[i], t.tree.route(x, i));
      ASSERT_NEAR(fit[i], t.fit(i), 1e-10);
      ASSERT_NEAR(e[i], r[i] - w[i] * t.fit(i), 1e-10);
    }
  }
  EXPECT_GT(accepted, 10);
}
