#include "ctbcf/simulation.h"

#include "ctbcf/error.h"
#include "ctbcf/estimands.h"
#include "ctbcf/random.h"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ctbcf {

void SimulationScenario::validate() const {
  if (n < 2) throw ConfigError("scenario needs n >= 2");
  if (!(noise_sd > 0.0) || !std::isfinite(noise_sd)) throw ConfigError("noise_sd must be positive");
  if (!std::isfinite(b)) throw ConfigError("b must be finite");
}

SimulationScenario SimulationScenario::from_case(int case_id) {
  SimulationScenario s;
  switch (case_id) {
    case 1:
      s.b = 0.0;
      break;
    case 2:
      s.b = 1.0;
      break;
    case 3:
      s.family = ScenarioFamily::Linear;
      s.b = 0.0;
      break;
    default:
      throw ConfigError("unknown simulation case " + std::to_string(case_id) + " (expected 1, 2 or 3)");
  }
  return s;
}

nlohmann::json SimulationScenario::to_json() const {
  nlohmann::json j{{"family", family == ScenarioFamily::Quadratic ? "quadratic" : "linear"},
                   {"b", b},
                   {"n", n},
                   {"seed", seed},
                   {"noise_sd", noise_sd}};
  if (family == ScenarioFamily::Linear) {
    j["c0"] = c0;
    j["c1"] = c1;
  }
  return j;
}

SyntheticData generate_synthetic(const SimulationScenario& scenario) {
  scenario.validate();
  const Eigen::Index n = scenario.n;
  RandomSource rng(scenario.seed);
  SyntheticData d;
  d.x.resize(n);
  d.z.resize(n);
  d.noise.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) d.x[i] = rng.normal();
  Eigen::VectorXd zraw(n);
  for (Eigen::Index i = 0; i < n; ++i) zraw[i] = rng.normal(scenario.b * d.x[i] - 1.0, 1.0);
  for (Eigen::Index i = 0; i < n; ++i) d.noise[i] = rng.normal(0.0, scenario.noise_sd);
  const double sd = sample_sd(zraw);
  if (!(sd > 0.0)) throw DegenerateInputError("simulated exposure has zero variance");
  d.z = zraw / sd;
  d.mu_true = 0.5 * d.x;
  d.y.resize(n);
  if (scenario.family == ScenarioFamily::Quadratic) {
    d.h = d.z.unaryExpr([](double v) { return quadratic_response(v); });
    d.tau_true = d.z.array() + 1.0;
    d.y = d.mu_true + d.h + d.noise;
  } else {
    d.tau_true = (scenario.c0 + scenario.c1 * d.x.array()).matrix();
    d.y = d.mu_true + d.tau_true.cwiseProduct(d.z) + d.noise;
  }
  return d;
}

PanelDataset SyntheticData::to_panel() const {
  PanelDataset p;
  p.outcome_name = "y";
  p.exposure_name = "z";
  p.y = y;
  p.z = z;
  CovariateColumn c;
  c.spec.name = "x";
  c.spec.kind = CovariateKind::Numeric;
  c.spec.control = true;
  c.spec.moderator = true;
  c.numeric.assign(x.data(), x.data() + x.size());
  p.covariates.push_back(std::move(c));
  return p;
}

namespace {

Eigen::VectorXd average_ranks(const Eigen::VectorXd& v) {
  const auto n = static_cast<std::size_t>(v.size());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return v[static_cast<Eigen::Index>(a)] < v[static_cast<Eigen::Index>(b)];
  });
  Eigen::VectorXd r(v.size());
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && v[static_cast<Eigen::Index>(order[j + 1])] == v[static_cast<Eigen::Index>(order[i])]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[static_cast<Eigen::Index>(order[k])] = rank;
    i = j + 1;
  }
  return r;
}

}  // namespace

std::optional<double> spearman_correlation(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) throw ShapeError("correlation inputs differ in length");
  if (a.size() < 2) return std::nullopt;
  const Eigen::VectorXd ra = average_ranks(a);
  const Eigen::VectorXd rb = average_ranks(b);
  const Eigen::ArrayXd ca = ra.array() - ra.mean();
  const Eigen::ArrayXd cb = rb.array() - rb.mean();
  const double saa = ca.square().sum();
  const double sbb = cb.square().sum();
  if (!(saa > 0.0) || !(sbb > 0.0)) return std::nullopt;
  return (ca * cb).sum() / std::sqrt(saa * sbb);
}

std::optional<double> sign_change_point(const Eigen::VectorXd& x, const Eigen::VectorXd& tau_hat, bool decreasing) {
  if (x.size() != tau_hat.size()) throw ShapeError("sign-change inputs differ in length");
  const auto n = static_cast<std::size_t>(x.size());
  if ((tau_hat.array() > 0.0).all() || (tau_hat.array() < 0.0).all() || n < 2) return std::nullopt;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return x[static_cast<Eigen::Index>(a)] < x[static_cast<Eigen::Index>(b)];
  });
  // Errors with t below every point: all are on the "above" side.
  auto wrong_above = [&](double t) { return decreasing ? t > 0.0 : t < 0.0; };
  auto wrong_below = [&](double t) { return decreasing ? t < 0.0 : t > 0.0; };
  long errors = 0;
  for (std::size_t k = 0; k < n; ++k) errors += wrong_above(tau_hat[static_cast<Eigen::Index>(order[k])]) ? 1 : 0;
  long best = errors;
  std::optional<double> best_t = x[static_cast<Eigen::Index>(order[0])];
  for (std::size_t k = 0; k < n; ++k) {
    const double t = tau_hat[static_cast<Eigen::Index>(order[k])];
    errors += (wrong_below(t) ? 1 : 0) - (wrong_above(t) ? 1 : 0);
    const double xk = x[static_cast<Eigen::Index>(order[k])];
    if (k + 1 < n && x[static_cast<Eigen::Index>(order[k + 1])] == xk) continue;
    if (errors < best) {
      best = errors;
      best_t = k + 1 < n ? 0.5 * (xk + x[static_cast<Eigen::Index>(order[k + 1])]) : xk;
    }
  }
  return best_t;
}

double smoother_gap_to_truth(const Eigen::VectorXd& residuals, const Eigen::VectorXd& z, double span,
                             int grid_points) {
  const Eigen::VectorXd h = z.unaryExpr([](double v) { return quadratic_response(v); });
  const double delta = (residuals - h).mean();
  std::vector<double> zs(z.data(), z.data() + z.size());
  const double lo = quantile(zs, 0.05);
  const double hi = quantile(zs, 0.95);
  const Eigen::VectorXd grid = Eigen::VectorXd::LinSpaced(grid_points, lo, hi);
  const Eigen::VectorXd smooth = loess(z, residuals, grid, span);
  double gap = 0.0;
  for (Eigen::Index g = 0; g < grid.size(); ++g) {
    gap = std::max(gap, std::abs(smooth[g] - (quadratic_response(grid[g]) + delta)));
  }
  return gap;
}

RecoveryMetrics recovery_metrics(const PosteriorDraws& draws, const SyntheticData& truth,
                                 const DiagnosticsReport* diagnostics) {
  if (draws.num_units() != truth.x.size()) throw ShapeError("draws and truth disagree on n");
  RecoveryMetrics m;
  const DrawMatrix tau = draws.tau_natural();
  const Eigen::VectorXd mu_hat = draws.mu_natural().colwise().mean().transpose();
  const Eigen::VectorXd tau_hat = tau.colwise().mean().transpose();
  const auto n = static_cast<double>(truth.x.size());
  m.rmse_mu = std::sqrt((mu_hat - truth.mu_true).squaredNorm() / n);
  const Eigen::VectorXd dc = (mu_hat.array() - mu_hat.mean()) - (truth.mu_true.array() - truth.mu_true.mean());
  m.rmse_mu_centered = std::sqrt(dc.squaredNorm() / n);
  m.tau_mean = tau_hat.mean();
  m.tau_sd = sample_sd(tau_hat);
  m.spearman = spearman_correlation(tau_hat, truth.x);
  m.rmse_tau = std::sqrt((tau_hat - truth.tau_true).squaredNorm() / n);
  if (m.spearman) m.sign_change_x = sign_change_point(truth.x, tau_hat, *m.spearman < 0.0);
  if (truth.h.size() == truth.x.size()) {
    m.smoother_gap = smoother_gap_to_truth(partial_residuals(truth.y, mu_hat), truth.z);
  }
  if (draws.num_draws() >= 2) {
    const EstimandPosterior ate = posterior_ate(tau);
    m.ate_mean = ate.point;
    m.ate_lo95 = ate.intervals.at(0.95).first;
    m.ate_hi95 = ate.intervals.at(0.95).second;
  } else {
    m.ate_mean = m.ate_lo95 = m.ate_hi95 = tau_hat.mean();
  }
  if (diagnostics != nullptr) {
    for (const auto& g : diagnostics->groups) m.nonlinearity.push_back(g.nonlinearity);
  }
  return m;
}

nlohmann::json RecoveryMetrics::to_json() const {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  nlohmann::json j{{"rmse_mu", rmse_mu},
                   {"rmse_mu_centered", rmse_mu_centered},
                   {"tau_mean", tau_mean},
                   {"tau_sd", tau_sd},
                   {"spearman", opt(spearman)},
                   {"rmse_tau", rmse_tau},
                   {"smoother_gap", opt(smoother_gap)},
                   {"sign_change_x", opt(sign_change_x)},
                   {"ate", {{"mean", ate_mean}, {"lo95", ate_lo95}, {"hi95", ate_hi95}}}};
  j["nonlinearity"] = nlohmann::json::array();
  for (const auto& v : nonlinearity) j["nonlinearity"].push_back(opt(v));
  return j;
}

ScenarioRun run_scenario(const SimulationScenario& scenario, const SamplerConfig& cfg,
                         const DiagnosticsOptions& diag) {
  ScenarioRun run;
  run.data = generate_synthetic(scenario);
  run.draws = fit_panel(run.data.to_panel(), cfg);
  run.draws.provenance["scenario"] = scenario.to_json();
  const Eigen::VectorXd mu_hat = run.draws.mu_natural().colwise().mean().transpose();
  const Eigen::VectorXd tau_hat = run.draws.tau_natural().colwise().mean().transpose();
  run.diagnostics = run_diagnostics(run.data.y, mu_hat, run.data.z, tau_hat, diag);
  run.metrics = recovery_metrics(run.draws, run.data, &run.diagnostics);
  return run;
}

}  // namespace ctbcf
