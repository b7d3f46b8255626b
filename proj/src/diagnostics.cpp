#include "ctbcf/diagnostics.h"

#include "ctbcf/dataset.h"
#include "ctbcf/error.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace ctbcf {

Eigen::VectorXd partial_residuals(const Eigen::VectorXd& y, const Eigen::VectorXd& mu_hat) {
  if (y.size() != mu_hat.size()) throw ShapeError("outcome and control fit differ in length");
  return y - mu_hat;
}

Clustering cluster_effects(const Eigen::VectorXd& tau_hat, std::optional<double> cut_height) {
  const auto n = static_cast<std::size_t>(tau_hat.size());
  if (n < 2) throw DegenerateInputError("clustering needs at least 2 values");
  Clustering c;
  c.cut_height = cut_height ? *cut_height : sample_sd(tau_hat);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return tau_hat[static_cast<Eigen::Index>(a)] < tau_hat[static_cast<Eigen::Index>(b)]; });

  // On a line, complete-linkage clusters stay contiguous in sorted order, and
  // the closest pair is always a neighbouring pair of intervals.
  struct Interval {
    std::size_t begin, end;  // positions in `order`, inclusive
    double lo, hi;
  };
  std::vector<Interval> iv;
  for (std::size_t k = 0; k < n; ++k) {
    const double v = tau_hat[static_cast<Eigen::Index>(order[k])];
    iv.push_back({k, k, v, v});
  }
  while (iv.size() > 1) {
    std::size_t best = 0;
    double best_h = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k + 1 < iv.size(); ++k) {
      const double h = iv[k + 1].hi - iv[k].lo;
      if (h < best_h) {
        best_h = h;
        best = k;
      }
    }
    if (best_h > c.cut_height) break;
    c.merge_heights.push_back(best_h);
    iv[best] = {iv[best].begin, iv[best + 1].end, iv[best].lo, iv[best + 1].hi};
    iv.erase(iv.begin() + static_cast<std::ptrdiff_t>(best) + 1);
  }
  c.labels.assign(n, 0);
  for (std::size_t g = 0; g < iv.size(); ++g) {
    for (std::size_t k = iv[g].begin; k <= iv[g].end; ++k) c.labels[order[k]] = static_cast<int>(g);
  }
  c.num_groups = static_cast<int>(iv.size());
  return c;
}

namespace {

// R^2 of a least-squares fit, or nullopt when the design is rank deficient.
struct LsFit {
  Eigen::VectorXd beta;
  double r2;
};

std::optional<LsFit> least_squares(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  qr.setThreshold(1e-10);
  if (qr.rank() < x.cols()) return std::nullopt;
  LsFit f;
  f.beta = qr.solve(y);
  const double mean = y.mean();
  const double tss = (y.array() - mean).square().sum();
  const double rss = (y - x * f.beta).squaredNorm();
  f.r2 = tss > 0.0 ? 1.0 - rss / tss : 1.0;
  return f;
}

}  // namespace

std::vector<GroupLinearity> group_linearity_report(const std::vector<int>& labels, const Eigen::VectorXd& residuals,
                                                   const Eigen::VectorXd& z, const Eigen::VectorXd& tau_hat) {
  const auto n = residuals.size();
  if (z.size() != n || tau_hat.size() != n || static_cast<Eigen::Index>(labels.size()) != n) {
    throw ShapeError("diagnostic inputs differ in length");
  }
  if (n == 0) return {};
  const int num_groups = *std::max_element(labels.begin(), labels.end()) + 1;
  const double overall = tau_hat.mean();
  std::vector<GroupLinearity> out;
  for (int g = 0; g < num_groups; ++g) {
    std::vector<Eigen::Index> rows;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (labels[static_cast<std::size_t>(i)] == g) rows.push_back(i);
    }
    GroupLinearity gl;
    gl.label = g;
    gl.size = static_cast<int>(rows.size());
    gl.overall_slope = overall;
    double s = 0.0;
    for (auto i : rows) s += tau_hat[i];
    gl.group_slope = rows.empty() ? 0.0 : s / static_cast<double>(rows.size());
    if (rows.size() >= 3) {
      const auto m = static_cast<Eigen::Index>(rows.size());
      Eigen::MatrixXd x1(m, 2), x2(m, 3);
      Eigen::VectorXd r(m);
      for (Eigen::Index k = 0; k < m; ++k) {
        const double zi = z[rows[static_cast<std::size_t>(k)]];
        x1(k, 0) = x2(k, 0) = 1.0;
        x1(k, 1) = x2(k, 1) = zi;
        x2(k, 2) = zi * zi;
        r[k] = residuals[rows[static_cast<std::size_t>(k)]];
      }
      if (const auto lin = least_squares(x1, r)) {
        gl.ols_intercept = lin->beta[0];
        gl.ols_slope = lin->beta[1];
        gl.r2_linear = lin->r2;
        const double lo = std::min(overall, *gl.ols_slope);
        const double hi = std::max(overall, *gl.ols_slope);
        gl.shrunk_toward_overall = gl.group_slope >= lo && gl.group_slope <= hi;
        if (const auto quad = least_squares(x2, r)) {
          gl.r2_quadratic = quad->r2;
          gl.nonlinearity = std::max(0.0, quad->r2 - lin->r2);
        }
      }
    }
    out.push_back(gl);
  }
  return out;
}

Eigen::VectorXd loess(const Eigen::VectorXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& at, double span) {
  const auto n = x.size();
  if (y.size() != n) throw ShapeError("smoother inputs differ in length");
  if (n < 3) throw DegenerateInputError("smoother needs at least 3 points");
  if (!(span > 0.0)) throw ConfigError("smoother span must be positive");
  const auto q = std::min<Eigen::Index>(n, std::max<Eigen::Index>(1, static_cast<Eigen::Index>(std::ceil(span * static_cast<double>(n)))));
  Eigen::VectorXd out(at.size());
  std::vector<double> dist(static_cast<std::size_t>(n));
  for (Eigen::Index t = 0; t < at.size(); ++t) {
    const double x0 = at[t];
    for (Eigen::Index i = 0; i < n; ++i) dist[static_cast<std::size_t>(i)] = std::abs(x[i] - x0);
    std::vector<double> sorted = dist;
    std::nth_element(sorted.begin(), sorted.begin() + (q - 1), sorted.end());
    double h = sorted[static_cast<std::size_t>(q - 1)];
    if (span > 1.0) h *= span;
    // Weighted quadratic in (x - x0) / h; falls back to lower degree when the
    // window holds too few distinct x values.
    std::vector<Eigen::Index> rows;
    std::vector<double> w;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double d = dist[static_cast<std::size_t>(i)];
      double wi;
      if (h > 0.0) {
        const double u = d / h;
        wi = u < 1.0 ? std::pow(1.0 - u * u * u, 3) : 0.0;
      } else {
        wi = d == 0.0 ? 1.0 : 0.0;
      }
      if (wi > 0.0) {
        rows.push_back(i);
        w.push_back(wi);
      }
    }
    const double scale = h > 0.0 ? h : 1.0;
    double fitted = std::numeric_limits<double>::quiet_NaN();
    for (int degree = 2; degree >= 0; --degree) {
      const auto m = static_cast<Eigen::Index>(rows.size());
      Eigen::MatrixXd xd(m, degree + 1);
      Eigen::VectorXd yd(m);
      for (Eigen::Index k = 0; k < m; ++k) {
        const double sw = std::sqrt(w[static_cast<std::size_t>(k)]);
        const double u = (x[rows[static_cast<std::size_t>(k)]] - x0) / scale;
        double p = 1.0;
        for (int c = 0; c <= degree; ++c) {
          xd(k, c) = sw * p;
          p *= u;
        }
        yd[k] = sw * y[rows[static_cast<std::size_t>(k)]];
      }
      Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(xd);
      qr.setThreshold(1e-10);
      if (qr.rank() == xd.cols()) {
        fitted = qr.solve(yd)[0];
        break;
      }
    }
    out[t] = fitted;
  }
  return out;
}

double SmootherCheck::max_gap_within(double lo, double hi) const {
  double gap = 0.0;
  for (Eigen::Index g = 0; g < grid.size(); ++g) {
    if (grid[g] >= lo && grid[g] <= hi) gap = std::max(gap, std::abs(fitted[g] - line[g]));
  }
  return gap;
}

SmootherCheck global_smoother_check(const Eigen::VectorXd& residuals, const Eigen::VectorXd& z, double slope,
                                    double span, int grid_points) {
  if (z.size() < 10) throw DegenerateInputError("smoother check needs at least 10 points");
  if (grid_points < 2) throw ConfigError("smoother grid needs at least 2 points");
  SmootherCheck s;
  s.slope = slope;
  s.grid = Eigen::VectorXd::LinSpaced(grid_points, z.minCoeff(), z.maxCoeff());
  s.fitted = loess(z, residuals, s.grid, span);
  s.line = slope * s.grid;
  s.max_gap = (s.fitted - s.line).cwiseAbs().maxCoeff();
  return s;
}

DiagnosticsReport run_diagnostics(const Eigen::VectorXd& y, const Eigen::VectorXd& mu_hat, const Eigen::VectorXd& z,
                                  const Eigen::VectorXd& tau_hat, const DiagnosticsOptions& options) {
  DiagnosticsReport r;
  r.residuals = partial_residuals(y, mu_hat);
  r.z = z;
  r.tau_hat = tau_hat;
  r.clustering = cluster_effects(tau_hat, options.cut_height);
  r.overall_ate = tau_hat.mean();
  r.groups = group_linearity_report(r.clustering.labels, r.residuals, z, tau_hat);
  r.smoother = global_smoother_check(r.residuals, z, r.overall_ate, options.span, options.grid_points);
  return r;
}

namespace {

template <typename T>
nlohmann::json opt(const std::optional<T>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::string opt_csv(const std::optional<double>& v) { return v ? format_double(*v) : "NA"; }

}  // namespace

nlohmann::json DiagnosticsReport::to_json() const {
  nlohmann::json j;
  j["cut_height"] = clustering.cut_height;
  j["num_groups"] = clustering.num_groups;
  j["overall_ate"] = overall_ate;
  j["labels"] = clustering.labels;
  j["groups"] = nlohmann::json::array();
  for (const auto& g : groups) {
    j["groups"].push_back({{"group", g.label},
                           {"size", g.size},
                           {"overall_slope", g.overall_slope},
                           {"group_slope", g.group_slope},
                           {"ols_intercept", opt(g.ols_intercept)},
                           {"ols_slope", opt(g.ols_slope)},
                           {"r2_linear", opt(g.r2_linear)},
                           {"r2_quadratic", opt(g.r2_quadratic)},
                           {"nonlinearity", opt(g.nonlinearity)},
                           {"shrunk_toward_overall", opt(g.shrunk_toward_overall)}});
  }
  j["smoother"] = {{"slope", smoother.slope}, {"max_gap", smoother.max_gap}, {"grid_points", smoother.grid.size()}};
  return j;
}

void DiagnosticsReport::write_scatter(std::ostream& out) const {
  out << "index,z,residual,tau_hat,group\n";
  for (Eigen::Index i = 0; i < residuals.size(); ++i) {
    out << i << ',' << format_double(z[i]) << ',' << format_double(residuals[i]) << ',' << format_double(tau_hat[i])
        << ',' << clustering.labels[static_cast<std::size_t>(i)] << '\n';
  }
}

void DiagnosticsReport::write_lines(std::ostream& out) const {
  out << "group,size,overall_slope,group_slope,ols_intercept,ols_slope,nonlinearity\n";
  for (const auto& g : groups) {
    out << g.label << ',' << g.size << ',' << format_double(g.overall_slope) << ',' << format_double(g.group_slope)
        << ',' << opt_csv(g.ols_intercept) << ',' << opt_csv(g.ols_slope) << ',' << opt_csv(g.nonlinearity) << '\n';
  }
}

void DiagnosticsReport::write_smoother(std::ostream& out) const {
  out << "z,smooth,line\n";
  for (Eigen::Index g = 0; g < smoother.grid.size(); ++g) {
    out << format_double(smoother.grid[g]) << ',' << format_double(smoother.fitted[g]) << ','
        << format_double(smoother.line[g]) << '\n';
  }
}

}  // namespace ctbcf
