// Acceptance suite: `acceptance N` checks criterion N and prints one line,
// `acceptance all` checks every criterion. Exit status is 1 on FAIL and, for
// a single criterion, 77 on SKIP.
#include "ctbcf/cli.h"
#include "ctbcf/estimands.h"
#include "ctbcf/sampler.h"
#include "ctbcf/simulation.h"
#include "ctbcf/summaries.h"

#include "support.h"

#include <boost/math/distributions/inverse_gamma.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>

using namespace ctbcf;
namespace fs = std::filesystem;

namespace {

enum class Status { Pass, Fail, Skip };

struct Verdict {
  Status status;
  std::string detail;
};

Verdict verdict(bool ok, const std::string& detail) { return {ok ? Status::Pass : Status::Fail, detail}; }

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s.precision(digits);
  s << v;
  return s.str();
}

std::string fmt_opt(const std::optional<double>& v) { return v ? fmt(*v) : std::string("none"); }

// Standard error of the mean of an autocorrelated series by batch means.
double batch_means_se(const std::vector<double>& x, int batches = 100) {
  const std::size_t len = x.size() / static_cast<std::size_t>(batches);
  std::vector<double> means(static_cast<std::size_t>(batches), 0.0);
  for (int b = 0; b < batches; ++b) {
    for (std::size_t i = 0; i < len; ++i) means[static_cast<std::size_t>(b)] += x[b * len + i];
    means[static_cast<std::size_t>(b)] /= static_cast<double>(len);
  }
  double m = 0.0;
  for (double v : means) m += v;
  m /= batches;
  double ss = 0.0;
  for (double v : means) ss += (v - m) * (v - m);
  return std::sqrt(ss / (batches - 1) / batches);
}

double mean_of(const std::vector<double>& x) {
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

// ---------------------------------------------------------------------------
// 1. Frozen structures: the sampler reduces to a Gibbs sampler for a Bayesian
// linear model with independent Normal coefficients and p(sigma^2) ∝ 1/sigma^2.
// The oracle integrates the Gaussian conditional over sigma^2 numerically.

struct LinearPosteriorMoments {
  Eigen::VectorXd mean;     // coefficients
  Eigen::VectorXd second;   // E[theta_k^2]
  double sigma2_mean = 0.0;
  double sigma2_second = 0.0;
};

LinearPosteriorMoments linear_oracle(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                     const Eigen::VectorXd& prior_var) {
  const auto n = static_cast<double>(y.size());
  const Eigen::Index p = x.cols();
  const Eigen::MatrixXd xtx = x.transpose() * x;
  const Eigen::VectorXd xty = x.transpose() * y;
  const double yty = y.squaredNorm();
  // Log density of log(sigma^2) on a fine grid.
  const int points = 40001;
  const double lo = -14.0, hi = 10.0, h = (hi - lo) / (points - 1);
  std::vector<double> logw(points);
  std::vector<Eigen::VectorXd> means(points);
  std::vector<Eigen::VectorXd> vars(points);
  for (int k = 0; k < points; ++k) {
    const double s2 = std::exp(lo + h * k);
    Eigen::MatrixXd prec = xtx / s2;
    prec.diagonal() += prior_var.cwiseInverse();
    const Eigen::LLT<Eigen::MatrixXd> llt(prec);
    const Eigen::VectorXd b = xty / s2;
    const Eigen::VectorXd m = llt.solve(b);
    double logdet = 0.0;
    for (Eigen::Index j = 0; j < p; ++j) logdet += 2.0 * std::log(llt.matrixL()(j, j));
    // p(sigma^2 | y) ∝ sigma^-2 (sigma^2)^(-n/2) |prec|^-1/2 exp(-(y'y/sigma^2 - m'prec m)/2);
    // the Jacobian of the log transform cancels the leading sigma^-2.
    logw[static_cast<std::size_t>(k)] = -0.5 * n * std::log(s2) - 0.5 * logdet - 0.5 * (yty / s2 - m.dot(b));
    means[static_cast<std::size_t>(k)] = m;
    vars[static_cast<std::size_t>(k)] = llt.solve(Eigen::MatrixXd::Identity(p, p)).diagonal();
  }
  const double top = *std::max_element(logw.begin(), logw.end());
  double z = 0.0;
  LinearPosteriorMoments out;
  out.mean = Eigen::VectorXd::Zero(p);
  out.second = Eigen::VectorXd::Zero(p);
  for (int k = 0; k < points; ++k) {
    const double w = std::exp(logw[static_cast<std::size_t>(k)] - top) * ((k == 0 || k == points - 1) ? 0.5 : 1.0);
    const double s2 = std::exp(lo + h * k);
    const auto& m = means[static_cast<std::size_t>(k)];
    z += w;
    out.mean += w * m;
    out.second += w * (vars[static_cast<std::size_t>(k)] + m.cwiseProduct(m));
    out.sigma2_mean += w * s2;
    out.sigma2_second += w * s2 * s2;
  }
  out.mean /= z;
  out.second /= z;
  out.sigma2_mean /= z;
  out.sigma2_second /= z;
  return out;
}

Verdict criterion_1() {
  const Stopwatch clock;
  const int n = 10;
  std::mt19937_64 gen(101);
  std::normal_distribution<double> nd;
  Eigen::MatrixXd xc(n, 1), xm(n, 1);
  Eigen::VectorXd y(n), z(n);
  for (int i = 0; i < n; ++i) {
    xc(i, 0) = i / 9.0;
    xm(i, 0) = xc(i, 0);
    z[i] = nd(gen);
    y[i] = 0.2 + (i >= 5 ? 0.6 : 0.0) + 0.4 * z[i] + 0.5 * nd(gen);
  }
  const ModelData data = ModelData::make(xc, xm, y, z);

  SamplerConfig cfg;
  cfg.num_chains = 1;
  cfg.control = {0.95, 2.0, 2, 0.3};
  cfg.moderator = {0.25, 3.0, 1, 0.4};
  cfg.freeze_structure = true;
  cfg.fixed_tau_scale = 1.0;
  ChainState chain(data, cfg, 2024);
  // Control tree 0 splits at x <= 4/9; tree 1 and the moderator tree stay root-only.
  auto& split = chain.control_trees()[0];
  const auto& cuts = data.control_grid.cuts[0];
  const int cut = static_cast<int>(std::find_if(cuts.begin(), cuts.end(), [](double c) { return c > 0.44; }) - cuts.begin());
  const auto [left, right] = split.tree.grow(0, 0, cut, cuts[static_cast<std::size_t>(cut)]);
  split.reassign(data.x_control);
  chain.refresh_caches();

  // Coefficients: left leaf, right leaf, tree-1 root, moderator root.
  Eigen::MatrixXd design(n, 4);
  for (int i = 0; i < n; ++i) {
    const bool goes_left = xc(i, 0) <= cuts[static_cast<std::size_t>(cut)];
    design.row(i) << (goes_left ? 1.0 : 0.0), (goes_left ? 0.0 : 1.0), 1.0, z[i];
  }
  Eigen::VectorXd prior_var(4);
  prior_var << 0.3, 0.3, 0.3, 0.4;
  const auto oracle = linear_oracle(design, y, prior_var);

  const int burn = 2000, kept = 100000;
  std::vector<std::vector<double>> trace(5, std::vector<double>(kept));
  for (int s = 0; s < burn + kept; ++s) {
    chain.step();
    if (s < burn) continue;
    const auto k = static_cast<std::size_t>(s - burn);
    trace[0][k] = split.tree.node(left).value;
    trace[1][k] = split.tree.node(right).value;
    trace[2][k] = chain.control_trees()[1].tree.node(0).value;
    trace[3][k] = chain.moderator_trees()[0].tree.node(0).value;
    trace[4][k] = chain.sigma2();
  }
  bool structures_frozen = split.tree.num_leaves() == 2 && chain.control_trees()[1].tree.is_root_only() &&
                           chain.moderator_trees()[0].tree.is_root_only();

  double worst = 0.0;
  std::string worst_name;
  auto check = [&](const std::vector<double>& series, double expected, const std::string& name) {
    const double zscore = std::abs(mean_of(series) - expected) / batch_means_se(series);
    if (zscore > worst) {
      worst = zscore;
      worst_name = name;
    }
  };
  const char* names[] = {"leaf_left", "leaf_right", "leaf_root", "moderator_leaf"};
  for (int j = 0; j < 4; ++j) {
    std::vector<double> sq(trace[static_cast<std::size_t>(j)]);
    for (double& v : sq) v *= v;
    check(trace[static_cast<std::size_t>(j)], oracle.mean[j], std::string("E[") + names[j] + "]");
    check(sq, oracle.second[j], std::string("E[") + names[j] + "^2]");
  }
  std::vector<double> s4(trace[4]);
  for (double& v : s4) v *= v;
  check(trace[4], oracle.sigma2_mean, "E[sigma2]");
  check(s4, oracle.sigma2_second, "E[sigma2^2]");

  const double secs = clock.seconds();
  return verdict(structures_frozen && worst < 3.0 && secs < 60.0,
                 "10 moments over 1e5 draws, max |error|/MCSE = " + fmt(worst) + " at " + worst_name +
                     " (< 3); E[sigma2] sampled " + fmt(mean_of(trace[4])) + " vs oracle " +
                     fmt(oracle.sigma2_mean) + "; " + fmt(secs, 3) + " s (< 60 s)");
}

// ---------------------------------------------------------------------------
// 2. sample_sigma2 against the inverse-gamma CDF.

Verdict criterion_2() {
  std::vector<double> resid{0.3, -1.2, 0.8, 0.05, -0.4, 1.7, -0.9, 0.2, 0.6, -0.3, 1.1, -0.75};
  double sse = 0.0;
  for (double r : resid) sse += r * r;
  const boost::math::inverse_gamma_distribution<double> ig(resid.size() / 2.0, sse / 2.0);
  RandomSource rng(77);
  const int draws = 100000;
  std::vector<double> d(static_cast<std::size_t>(draws));
  for (double& v : d) v = sample_sigma2(resid, rng);
  std::sort(d.begin(), d.end());
  double ks = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double f = boost::math::cdf(ig, d[i]);
    ks = std::max({ks, f - static_cast<double>(i) / draws, static_cast<double>(i + 1) / draws - f});
  }
  return verdict(ks < 0.01, "KS distance " + fmt(ks) + " over 1e5 draws (< 0.01)");
}

// ---------------------------------------------------------------------------
// 3. Two-point separable data: the only structures are the root and the
// single split between the two points.

Verdict criterion_3() {
  Eigen::MatrixXd x(2, 1);
  x << 0.0, 1.0;
  const std::vector<double> r{-0.45, 0.55};
  const auto grid = CutpointGrid::build(x);
  const TreePriorConfig cfg{0.95, 2.0, 1, 0.25};
  const double sigma2 = 0.5;
  auto marginal = [&](std::initializer_list<int> rows) {
    LeafStats s;
    for (int i : rows) {
      s.s_wr += r[static_cast<std::size_t>(i)];
      s.s_ww += 1.0;
    }
    return std::exp(leaf_log_marginal(s, cfg.leaf_variance, sigma2));
  };
  const double p0 = cfg.split_probability(0), p1 = cfg.split_probability(1);
  const double root = (1 - p0) * marginal({0, 1});
  const double split = p0 * (1 - p1) * (1 - p1) * marginal({0}) * marginal({1});
  const double exact_split = split / (root + split);

  TrackedTree t(2);
  RandomSource rng(4242);
  const int sweeps = 100000;
  int visits = 0;
  for (int s = 0; s < sweeps; ++s) {
    mh_update_tree(t, x, r, {}, sigma2, cfg, grid, rng);
    if (!t.tree.is_root_only()) ++visits;
  }
  const double freq = static_cast<double>(visits) / sweeps;
  return verdict(std::abs(freq - exact_split) <= 0.01 && grid.cuts[0].size() == 1,
                 "split visited " + fmt(freq) + " vs enumerated " + fmt(exact_split) + ", root " + fmt(1 - freq) +
                     " vs " + fmt(1 - exact_split) + " over 1e5 sweeps (within 0.01)");
}

// ---------------------------------------------------------------------------
// 4. Linear positive control at desk defaults.

Verdict criterion_4() {
  const Stopwatch clock;
  int covered = 0;
  double worst_rmse = 0.0;
  std::ostringstream per;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    auto sc = SimulationScenario::from_case(3);
    sc.seed = seed;
    SamplerConfig cfg;
    cfg.seed = seed;
    const auto run = run_scenario(sc, cfg);
    const auto& m = run.metrics;
    const bool cover = m.ate_lo95 <= sc.c0 && sc.c0 <= m.ate_hi95;
    covered += cover ? 1 : 0;
    worst_rmse = std::max(worst_rmse, m.rmse_tau);
    per << (seed > 1 ? " " : "") << fmt(m.rmse_tau, 3) << (cover ? "" : "*");
  }
  const double secs = clock.seconds();
  return verdict(covered >= 8 && worst_rmse < 0.1 && secs < 600.0,
                 "95% ATE interval covers -0.2 in " + std::to_string(covered) + "/10 (>= 8); max RMSE tau " +
                     fmt(worst_rmse) + " (< 0.1) [per seed, * = miss: " + per.str() + "]; " + fmt(secs, 4) +
                     " s (< 600 s)");
}

// ---------------------------------------------------------------------------
// 5 and 6. Quadratic exposure response, without and with confounding by x.

ScenarioRun quadratic_run(int case_id) {
  auto sc = SimulationScenario::from_case(case_id);
  sc.seed = 7;
  SamplerConfig cfg;
  cfg.seed = 7;
  return run_scenario(sc, cfg);
}

Verdict criterion_5() {
  const Stopwatch clock;
  const auto run = quadratic_run(1);
  const auto& m = run.metrics;
  int flagged = 0;
  std::ostringstream scores;
  for (std::size_t g = 0; g < m.nonlinearity.size(); ++g) {
    scores << (g ? " " : "") << fmt_opt(m.nonlinearity[g]);
    if (m.nonlinearity[g] && *m.nonlinearity[g] > 0.3) ++flagged;
  }
  const int groups = static_cast<int>(m.nonlinearity.size());
  const double secs = clock.seconds();
  const bool ok = std::abs(m.tau_mean) < 0.1 && m.tau_sd < 0.1 && m.smoother_gap && *m.smoother_gap < 0.25 &&
                  2 * flagged > groups && secs < 300.0;
  return verdict(ok, "|mean tau| " + fmt(std::abs(m.tau_mean)) + " (< 0.1); sd tau " + fmt(m.tau_sd) +
                         " (< 0.1); smoother gap " + fmt_opt(m.smoother_gap) + " (< 0.25); nonlinearity > 0.3 in " +
                         std::to_string(flagged) + "/" + std::to_string(groups) + " groups [" + scores.str() +
                         "]; " + fmt(secs, 3) + " s (< 300 s)");
}

Verdict criterion_6() {
  const Stopwatch clock;
  const auto run = quadratic_run(2);
  const auto& m = run.metrics;
  const Eigen::VectorXd tau_hat = run.draws.tau_natural().colwise().mean().transpose();
  // Positive below the crossing and negative above it.
  const auto crossing = sign_change_point(run.data.x, tau_hat, true);
  double best = -1.0;
  for (const auto& s : m.nonlinearity) best = std::max(best, s.value_or(-1.0));
  const double secs = clock.seconds();
  const bool spearman_ok = m.spearman && *m.spearman < -0.8;
  const bool crossing_ok = crossing && *crossing >= -1.5 && *crossing <= -0.5;
  const bool ok = spearman_ok && crossing_ok && best > 0.2 && secs < 300.0;
  return verdict(ok, "spearman " + fmt_opt(m.spearman) + " (< -0.8); positive-to-negative crossing at x = " +
                         fmt_opt(crossing) + " (in [-1.5, -0.5]; crossing in either direction at " +
                         fmt_opt(m.sign_change_x) + "); max group nonlinearity " + fmt(best) + " (> 0.2); " +
                         fmt(secs, 3) + " s (< 300 s)");
}

// ---------------------------------------------------------------------------
// 7. Projection identities.

Verdict criterion_7() {
  std::mt19937_64 gen(7);
  std::normal_distribution<double> nd;
  const int n = 300;
  AdditiveInputs inputs;
  inputs.n = n;
  Eigen::VectorXd x1(n), x2(n);
  std::vector<int> codes(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    x1[i] = nd(gen);
    x2[i] = 3.0 * (i % 17) / 16.0 + 0.01 * nd(gen);
    codes[static_cast<std::size_t>(i)] = i % 3;
  }
  inputs.smooths = {{"x1", x1}, {"x2", x2}};
  inputs.factors = {{"g", {"a", "b", "c"}, codes}};
  const Eigen::VectorXd c1 = Eigen::VectorXd::LinSpaced(9, -1.0, 1.0).array().sin();
  const Eigen::VectorXd c2 = Eigen::VectorXd::LinSpaced(9, 0.0, 2.0).array().square();
  Eigen::VectorXd tau = SplineBasis::build(x1, 10).evaluate(x1) * c1 + SplineBasis::build(x2, 10).evaluate(x2) * c2;
  const double effects[] = {0.0, 0.5, -0.3};
  for (int i = 0; i < n; ++i) tau[i] += 1.25 + effects[codes[static_cast<std::size_t>(i)]];
  DrawMatrix additive_draws(3, n);
  for (int s = 0; s < 3; ++s) additive_draws.row(s) = (tau.array() * (1.0 + 0.1 * s)).matrix().transpose();
  const auto add = fit_additive_summary(additive_draws, inputs);
  const double additive_err =
      (add.design * add.coefficients.transpose() - additive_draws.transpose()).cwiseAbs().maxCoeff();

  // Constant tau = c in every draw; mu varies by draw inside the span of the
  // other design columns.
  const auto panel = fixtures::small_panel(6, 8, 3);
  const auto ld = linear_design(panel);
  const Eigen::VectorXd c = (Eigen::VectorXd(4) << 0.8, -0.203, 0.0, 2.5).finished();
  DrawMatrix fitted(c.size(), panel.n());
  for (Eigen::Index s = 0; s < c.size(); ++s) {
    Eigen::VectorXd beta(ld.design.x.cols());
    for (Eigen::Index j = 0; j < beta.size(); ++j) beta[j] = nd(gen);
    beta[ld.z_column] = 0.0;
    fitted.row(s) = (ld.design.x * beta + c[s] * panel.z).transpose();
  }
  const double linear_err = (project_linear_ate(fitted, ld).draws - c).cwiseAbs().maxCoeff();

  // Subgroup CATEs from a tree summary against group_ate on its leaves.
  Eigen::MatrixXd x(n, 1);
  DrawMatrix draws(40, n);
  for (int i = 0; i < n; ++i) x(i, 0) = nd(gen);
  for (int s = 0; s < 40; ++s)
    for (int i = 0; i < n; ++i) draws(s, i) = std::sin(2.0 * x(i, 0)) + 0.2 * nd(gen);
  const auto ts = fit_tree_summary(draws, x, {"x"}, nullptr);
  const auto direct = group_ate(draws, ts.subgroups);
  bool identical = direct.size() == ts.subgroup_cate.size() && direct.size() > 1;
  for (std::size_t k = 0; identical && k < direct.size(); ++k) {
    identical = direct[k].draws == ts.subgroup_cate[k].draws;
  }

  return verdict(additive_err < 1e-6 && linear_err < 1e-10 && identical,
                 "additive recovery error " + fmt(additive_err) + " (< 1e-6); linear projection of constant effects off by " +
                     fmt(linear_err) + " (< 1e-10); subgroup CATEs " + (identical ? "identical" : "differ") +
                     " to group_ate on " + std::to_string(direct.size()) + " leaves");
}

// ---------------------------------------------------------------------------
// 8. Real panel supplied by the user.

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Verdict criterion_8() {
  const char* data = std::getenv("CTBCF_DL_DATA");
  const char* schema = std::getenv("CTBCF_DL_SCHEMA");
  if (data == nullptr || schema == nullptr) {
    return {Status::Skip, "set CTBCF_DL_DATA and CTBCF_DL_SCHEMA to the murder panel and its role file"};
  }
  const Stopwatch clock;
  const fs::path dir = fixtures::scratch_dir("murder");
  std::ostringstream out, err;
  auto analyzed = [&](const std::string& name, bool homogeneous) -> std::optional<nlohmann::json> {
    std::vector<std::string> args{"fit", "--data", data, "--schema", schema, "--out", (dir / name).string()};
    if (homogeneous) args.push_back("--homogeneous");
    if (cli::run(args, out, err) != 0) return std::nullopt;
    if (cli::run({"analyze", "--run", (dir / name).string()}, out, err) != 0) return std::nullopt;
    return nlohmann::json::parse(slurp(dir / name / "analysis.json"));
  };
  const auto hetero = analyzed("heterogeneous", false);
  const auto homog = analyzed("homogeneous", true);
  if (!hetero || !homog) return {Status::Fail, "pipeline failed: " + err.str()};
  const double ate = (*hetero)["ate"]["mean"].get<double>();
  const double ate_h = (*homog)["ate"]["mean"].get<double>();
  const int groups = (*hetero)["num_groups"].get<int>();
  std::string largest = "none";
  double span = 0.0;
  if ((*hetero)["additive"].is_object()) {
    largest = (*hetero)["additive"]["name"].get<std::string>();
    span = (*hetero)["additive"]["span"].get<double>();
  }
  const bool ok = std::abs(ate + 0.203) <= 0.05 && std::abs(ate_h + 0.181) <= 0.05 && groups >= 6 && groups <= 10 &&
                  largest == "afdc15" && span >= 0.05 && span <= 0.12;
  return verdict(ok, "ATE " + fmt(ate) + " (-0.203 +/- 0.05); homogeneous " + fmt(ate_h) +
                         " (-0.181 +/- 0.05); " + std::to_string(groups) + " groups (6-10); largest smooth " + largest +
                         " with span " + fmt(span) + " (afdc15, 0.05-0.12); " + fmt(clock.seconds(), 4) + " s");
}

// ---------------------------------------------------------------------------
// 9. Thread count does not change the draw files.

Verdict criterion_9() {
  const fs::path dir = fixtures::scratch_dir("threads");
  const auto panel = fixtures::small_panel(8, 10, 21);
  write_panel(panel, dir / "panel.csv");
  std::ofstream(dir / "roles.cfg") << panel.schema().to_string();
  std::ostringstream out, err;
  for (const char* threads : {"1", "4"}) {
    const int code = cli::run({"fit", "--data", (dir / "panel.csv").string(), "--schema", (dir / "roles.cfg").string(),
                               "--out", (dir / threads).string(), "--chains", "4", "--burnin", "150", "--draws", "100",
                               "--seed", "99", "--threads", threads},
                              out, err);
    if (code != 0) return {Status::Fail, "fit failed: " + err.str()};
  }
  int identical = 0, files = 0;
  for (const char* f : {"mu.csv", "tau.csv", "sigma.csv", "tau_scale.csv"}) {
    ++files;
    const std::string a = slurp(dir / "1" / f);
    if (!a.empty() && a == slurp(dir / "4" / f)) ++identical;
  }
  return verdict(identical == files, std::to_string(identical) + "/" + std::to_string(files) +
                                         " draw files byte-identical between 1 and 4 threads (4 chains, seed 99)");
}

const std::map<int, std::pair<std::string, std::function<Verdict()>>>& criteria() {
  static const std::map<int, std::pair<std::string, std::function<Verdict()>>> table{
      {1, {"fixed-structure conjugacy", criterion_1}},
      {2, {"sigma^2 conditional", criterion_2}},
      {3, {"two-structure enumeration", criterion_3}},
      {4, {"linear positive control", criterion_4}},
      {5, {"quadratic response, b = 0", criterion_5}},
      {6, {"quadratic response, b = 1", criterion_6}},
      {7, {"projection identities", criterion_7}},
      {8, {"murder panel", criterion_8}},
      {9, {"thread determinism", criterion_9}},
  };
  return table;
}

Status report(int id) {
  const auto& [name, fn] = criteria().at(id);
  Verdict v{Status::Fail, ""};
  try {
    v = fn();
  } catch (const std::exception& e) {
    v = {Status::Fail, std::string("exception: ") + e.what()};
  }
  const char* label = v.status == Status::Pass ? "PASS" : v.status == Status::Skip ? "SKIP" : "FAIL";
  std::cout << label << " criterion " << id << " (" << name << "): " << v.detail << std::endl;
  return v.status;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: acceptance <1-9|all>\n";
    return 2;
  }
  const std::string arg = argv[1];
  if (arg == "all") {
    bool ok = true;
    for (const auto& [id, entry] : criteria()) ok = report(id) != Status::Fail && ok;
    return ok ? 0 : 1;
  }
  const int id = std::atoi(arg.c_str());
  if (!criteria().contains(id)) {
    std::cerr << "unknown criterion: " << arg << "\n";
    return 2;
  }
  const Status status = report(id);
  return status == Status::Fail ? 1 : status == Status::Skip ? 77 : 0;
}
