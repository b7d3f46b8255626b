#include "ctbcf/estimands.h"

#include "ctbcf/error.h"

#include <algorithm>
#include <cmath>

namespace ctbcf {

namespace {

double quantile_sorted(const std::vector<double>& v, double p) {
  const double h = (static_cast<double>(v.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double frac = h - static_cast<double>(lo);
  return frac == 0.0 ? v[lo] : v[lo] + frac * (v[hi] - v[lo]);
}

// Sequential per-row mean over a subset of columns; every ATE-like estimand
// goes through here so that identical partitions give identical bits.
Eigen::VectorXd row_means(const DrawMatrix& tau, const std::vector<int>& cols) {
  Eigen::VectorXd d(tau.rows());
  for (Eigen::Index s = 0; s < tau.rows(); ++s) {
    double acc = 0.0;
    for (int i : cols) acc += tau(s, i);
    d[s] = acc / static_cast<double>(cols.size());
  }
  return d;
}

}  // namespace

double quantile(std::vector<double> values, double p) {
  if (values.empty()) throw DegenerateInputError("quantile of an empty sample");
  std::sort(values.begin(), values.end());
  return quantile_sorted(values, p);
}

std::pair<double, double> equal_tailed_interval(const Eigen::Ref<const Eigen::VectorXd>& draws,
                                                double level) {
  if (!(level > 0.0 && level < 1.0)) throw ConfigError("interval level must lie in (0, 1)");
  if (draws.size() < 2) throw DegenerateInputError("an interval needs at least 2 draws");
  std::vector<double> v(draws.data(), draws.data() + draws.size());
  std::sort(v.begin(), v.end());
  return {quantile_sorted(v, 0.5 * (1.0 - level)), quantile_sorted(v, 0.5 * (1.0 + level))};
}

EstimandPosterior EstimandPosterior::from_draws(std::string name, Eigen::VectorXd draws,
                                                const std::vector<double>& levels) {
  EstimandPosterior e;
  e.name = std::move(name);
  e.point = draws.size() ? draws.mean() : 0.0;
  if (draws.size() >= 2) {
    for (double level : levels) e.intervals[level] = equal_tailed_interval(draws, level);
  }
  e.draws = std::move(draws);
  return e;
}

EstimandPosterior posterior_ate(const DrawMatrix& tau) {
  if (tau.rows() == 0 || tau.cols() == 0) throw DegenerateInputError("no tau draws");
  std::vector<int> all(static_cast<std::size_t>(tau.cols()));
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
  return EstimandPosterior::from_draws("ATE", row_means(tau, all));
}

EstimandPosterior posterior_ate(const PosteriorDraws& draws) {
  return posterior_ate(draws.tau_natural());
}

UnitGroups UnitGroups::from_codes(const std::vector<int>& codes, std::vector<std::string> names) {
  UnitGroups g;
  g.members.resize(names.size());
  g.names = std::move(names);
  for (std::size_t i = 0; i < codes.size(); ++i) {
    const auto k = static_cast<std::size_t>(codes[i]);
    if (codes[i] < 0 || k >= g.members.size()) throw ShapeError("group code out of range");
    g.members[k].push_back(static_cast<int>(i));
  }
  return g;
}

void UnitGroups::validate(Eigen::Index n) const {
  if (names.size() != members.size()) throw ShapeError("group names and members differ in length");
  std::vector<int> seen(static_cast<std::size_t>(n), 0);
  for (std::size_t k = 0; k < members.size(); ++k) {
    if (members[k].empty()) throw DegenerateInputError("group '" + names[k] + "' is empty");
    for (int i : members[k]) {
      if (i < 0 || i >= n) throw ShapeError("group '" + names[k] + "' lists an unknown unit");
      if (seen[static_cast<std::size_t>(i)]++) throw ShapeError("unit " + std::to_string(i) + " is in two groups");
    }
  }
  for (std::size_t i = 0; i < seen.size(); ++i) {
    if (!seen[i]) throw ShapeError("unit " + std::to_string(i) + " is in no group");
  }
}

std::vector<EstimandPosterior> group_ate(const DrawMatrix& tau, const UnitGroups& groups) {
  groups.validate(tau.cols());
  std::vector<EstimandPosterior> out;
  out.reserve(groups.members.size());
  for (std::size_t k = 0; k < groups.members.size(); ++k) {
    out.push_back(EstimandPosterior::from_draws(groups.names[k], row_means(tau, groups.members[k])));
  }
  return out;
}

EstimandPosterior finite_difference_cate(const Eigen::VectorXd& tau_draws, double z_hi, double z_lo,
                                         const std::string& name) {
  return EstimandPosterior::from_draws(name, tau_draws * (z_hi - z_lo));
}

void write_estimand_table(std::ostream& out, const std::vector<EstimandPosterior>& rows) {
  out << "name,mean,lo50,hi50,lo95,hi95,n_draws\n";
  for (const auto& r : rows) {
    auto iv = [&](double level) {
      auto it = r.intervals.find(level);
      return it == r.intervals.end() ? std::pair<double, double>{NAN, NAN} : it->second;
    };
    const auto i50 = iv(0.5);
    const auto i95 = iv(0.95);
    out << r.name << "," << format_double(r.point) << "," << format_double(i50.first) << ","
        << format_double(i50.second) << "," << format_double(i95.first) << ","
        << format_double(i95.second) << "," << r.draws.size() << "\n";
  }
}

}  // namespace ctbcf
