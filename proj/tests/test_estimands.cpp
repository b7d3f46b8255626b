#include "ctbcf/error.h"
#include "ctbcf/estimands.h"

#include <gtest/gtest.h>

#include <random>
#include <sstream>

using namespace ctbcf;

namespace {

DrawMatrix random_draws(int draws, int units, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> nd;
  DrawMatrix m(draws, units);
  for (int s = 0; s < draws; ++s)
    for (int i = 0; i < units; ++i) m(s, i) = nd(gen);
  return m;
}

}  // namespace

TEST(Quantile, LinearInterpolation) {
  EXPECT_DOUBLE_EQ(quantile({1, 2, 3, 4}, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(quantile({4, 1, 3, 2}, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(quantile({4, 1, 3, 2}, 1.0), 4.0);
  EXPECT_DOUBLE_EQ(quantile({10, 20}, 0.25), 12.5);
  EXPECT_THROW(quantile({}, 0.5), DegenerateInputError);
}

TEST(Intervals, EqualTailedOnUniformGrid) {
  Eigen::VectorXd v(101);
  for (int i = 0; i <= 100; ++i) v[i] = i;
  const auto [lo, hi] = equal_tailed_interval(v, 0.9);
  EXPECT_DOUBLE_EQ(lo, 5.0);
  EXPECT_DOUBLE_EQ(hi, 95.0);
  EXPECT_THROW(equal_tailed_interval(v, 1.0), ConfigError);
}

TEST(Intervals, NestedLevels) {
  const DrawMatrix d = random_draws(500, 1, 3);
  const auto e = EstimandPosterior::from_draws("x", d.col(0));
  EXPECT_LE(e.intervals.at(0.95).first, e.intervals.at(0.5).first);
  EXPECT_GE(e.intervals.at(0.95).second, e.intervals.at(0.5).second);
}

TEST(Ate, PerDrawUnitMean) {
  DrawMatrix tau(2, 3);
  tau << 1, 2, 3, -1, 0, 4;
  const auto ate = posterior_ate(tau);
  EXPECT_EQ(ate.name, "ATE");
  EXPECT_DOUBLE_EQ(ate.draws[0], 2.0);
  EXPECT_DOUBLE_EQ(ate.draws[1], 1.0);
  EXPECT_DOUBLE_EQ(ate.point, 1.5);
}

TEST(Ate, ConstantTauGivesConstant) {
  const DrawMatrix tau = DrawMatrix::Constant(10, 7, -0.25);
  const auto ate = posterior_ate(tau);
  EXPECT_DOUBLE_EQ(ate.point, -0.25);
  EXPECT_DOUBLE_EQ(ate.intervals.at(0.95).first, -0.25);
}

TEST(GroupAte, SingleGroupEqualsAteBitForBit) {
  const DrawMatrix tau = random_draws(50, 9, 4);
  const auto g = group_ate(tau, UnitGroups::from_codes(std::vector<int>(9, 0), {"all"}));
  EXPECT_EQ(g[0].draws, posterior_ate(tau).draws);
}

TEST(GroupAte, SizeWeightedGroupMeansGiveAte) {
  const DrawMatrix tau = random_draws(40, 10, 5);
  const std::vector<int> codes{0, 1, 2, 0, 1, 2, 0, 0, 1, 2};
  const auto groups = UnitGroups::from_codes(codes, {"a", "b", "c"});
  const auto g = group_ate(tau, groups);
  const auto ate = posterior_ate(tau);
  for (Eigen::Index s = 0; s < 40; ++s) {
    double acc = 0.0;
    for (std::size_t k = 0; k < 3; ++k) acc += g[k].draws[s] * static_cast<double>(groups.members[k].size());
    EXPECT_NEAR(acc / 10.0, ate.draws[s], 1e-12);
  }
}

TEST(GroupAte, InvalidPartitions) {
  const DrawMatrix tau = random_draws(5, 4, 6);
  UnitGroups g;
  g.names = {"a", "b"};
  g.members = {{0, 1}, {1, 2, 3}};
  EXPECT_THROW(group_ate(tau, g), ShapeError);
  g.members = {{0, 1}, {2}};
  EXPECT_THROW(group_ate(tau, g), ShapeError);
  g.members = {{0, 1, 2, 3}, {}};
  EXPECT_THROW(group_ate(tau, g), DegenerateInputError);
  EXPECT_THROW(UnitGroups::from_codes({0, 3}, {"a"}), ShapeError);
}

TEST(FiniteDifference, ScalesByExposureGap) {
  Eigen::VectorXd tau(3);
  tau << 0.5, -1.0, 2.0;
  const auto c = finite_difference_cate(tau, 3.0, 1.0);
  EXPECT_DOUBLE_EQ(c.draws[1], -2.0);
  EXPECT_DOUBLE_EQ(c.point, 1.0);
  EXPECT_EQ(c.name, "CATE");
}

TEST(EstimandTable, HeaderAndRow) {
  DrawMatrix tau = DrawMatrix::Constant(4, 2, 1.0);
  std::ostringstream out;
  write_estimand_table(out, {posterior_ate(tau)});
  std::istringstream in(out.str());
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  EXPECT_EQ(header, "name,mean,lo50,hi50,lo95,hi95,n_draws");
  EXPECT_EQ(row.substr(0, 4), "ATE,");
  EXPECT_EQ(row.substr(row.size() - 2), ",4");
}
