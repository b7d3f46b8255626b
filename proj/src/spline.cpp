#include "ctbcf/spline.h"

#include "ctbcf/error.h"

#include <algorithm>
#include <cmath>

namespace ctbcf {

namespace {

double type7_quantile(const std::vector<double>& sorted, double p) {
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace

SplineBasis SplineBasis::build(const Eigen::VectorXd& x, int dimension) {
  if (dimension < 2) throw ConfigError("spline basis dimension must be >= 2");
  std::vector<double> sorted(x.data(), x.data() + x.size());
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> distinct = sorted;
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (distinct.size() < 2) throw DegenerateInputError("spline basis over a constant column");

  SplineBasis b;
  if (static_cast<int>(distinct.size()) < dimension) {
    b.knots_ = distinct;
    b.warning_ = "only " + std::to_string(distinct.size()) + " distinct values; basis dimension reduced to " +
                 std::to_string(distinct.size());
  } else {
    const auto k = static_cast<std::size_t>(dimension);
    for (std::size_t j = 0; j < k; ++j) {
      b.knots_.push_back(type7_quantile(sorted, static_cast<double>(j) / static_cast<double>(k - 1)));
    }
    if (std::adjacent_find(b.knots_.begin(), b.knots_.end(),
                           [](double a, double c) { return !(c > a); }) != b.knots_.end()) {
      // Heavy ties: place knots on quantiles of the distinct values instead.
      b.knots_.clear();
      for (std::size_t j = 0; j < k; ++j) {
        b.knots_.push_back(type7_quantile(distinct, static_cast<double>(j) / static_cast<double>(k - 1)));
      }
    }
  }

  const int K = b.dimension();
  b.second_deriv_ = Eigen::MatrixXd::Zero(K, K);
  b.raw_penalty_ = Eigen::MatrixXd::Zero(K, K);
  if (K >= 3) {
    std::vector<double> h(static_cast<std::size_t>(K - 1));
    for (int j = 0; j + 1 < K; ++j) h[static_cast<std::size_t>(j)] = b.knots_[static_cast<std::size_t>(j + 1)] - b.knots_[static_cast<std::size_t>(j)];
    Eigen::MatrixXd D = Eigen::MatrixXd::Zero(K - 2, K);
    Eigen::MatrixXd B = Eigen::MatrixXd::Zero(K - 2, K - 2);
    for (int i = 0; i < K - 2; ++i) {
      const double h0 = h[static_cast<std::size_t>(i)];
      const double h1 = h[static_cast<std::size_t>(i + 1)];
      D(i, i) = 1.0 / h0;
      D(i, i + 1) = -1.0 / h0 - 1.0 / h1;
      D(i, i + 2) = 1.0 / h1;
      B(i, i) = (h0 + h1) / 3.0;
      if (i + 1 < K - 2) B(i, i + 1) = B(i + 1, i) = h1 / 6.0;
    }
    const Eigen::LLT<Eigen::MatrixXd> llt(B);
    const Eigen::MatrixXd BinvD = llt.solve(D);
    b.second_deriv_.middleRows(1, K - 2) = BinvD;
    b.raw_penalty_ = D.transpose() * BinvD;
    b.raw_penalty_ = 0.5 * (b.raw_penalty_ + b.raw_penalty_.transpose());
  }

  // Absorb the centering constraint 1' X beta = 0.
  const Eigen::RowVectorXd colsum = b.evaluate_raw(x).colwise().sum();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(colsum.transpose());
  const Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(K, K);
  b.constraint_ = Q.rightCols(K - 1);
  b.penalty_ = b.constraint_.transpose() * b.raw_penalty_ * b.constraint_;
  b.penalty_ = 0.5 * (b.penalty_ + b.penalty_.transpose());
  return b;
}

Eigen::MatrixXd SplineBasis::evaluate_raw(const Eigen::VectorXd& x) const {
  const int K = dimension();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(x.size(), K);
  const double lo = knots_.front();
  const double hi = knots_.back();
  for (Eigen::Index r = 0; r < x.size(); ++r) {
    const double v = x[r];
    // Interval j with knots_[j] <= v <= knots_[j + 1] (clamped for extrapolation).
    int j;
    if (v <= lo) j = 0;
    else if (v >= hi) j = K - 2;
    else j = static_cast<int>(std::upper_bound(knots_.begin(), knots_.end(), v) - knots_.begin()) - 1;
    j = std::clamp(j, 0, K - 2);
    const double xl = knots_[static_cast<std::size_t>(j)];
    const double xr = knots_[static_cast<std::size_t>(j + 1)];
    const double h = xr - xl;
    auto row = out.row(r);
    if (v < lo || v > hi) {
      // Linear continuation from the nearest end knot.
      const bool left = v < lo;
      const double at = left ? xl : xr;
      const double dx = v - at;
      // Value at the end knot.
      row(left ? j : j + 1) += 1.0;
      // Derivative at the end knot: (beta_{j+1} - beta_j) / h + c-'(at) F_j + c+'(at) F_{j+1}.
      row(j) -= dx / h;
      row(j + 1) += dx / h;
      const double cm = left ? -h / 3.0 : h / 6.0;
      const double cp = left ? -h / 6.0 : h / 3.0;
      row += dx * (cm * second_deriv_.row(j) + cp * second_deriv_.row(j + 1));
      continue;
    }
    const double am = (xr - v) / h;
    const double ap = (v - xl) / h;
    const double cm = ((xr - v) * (xr - v) * (xr - v) / h - h * (xr - v)) / 6.0;
    const double cp = ((v - xl) * (v - xl) * (v - xl) / h - h * (v - xl)) / 6.0;
    row(j) += am;
    row(j + 1) += ap;
    row += cm * second_deriv_.row(j) + cp * second_deriv_.row(j + 1);
  }
  return out;
}

}  // namespace ctbcf
