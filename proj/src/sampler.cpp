#include "ctbcf/sampler.h"

#include "ctbcf/error.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>

namespace ctbcf {

// --- configuration ------------------------------------------------------------

void SamplerConfig::validate() const {
  if (num_chains < 1) throw ConfigError("num_chains must be >= 1");
  if (burn_in < 0) throw ConfigError("burn_in must be >= 0");
  if (kept_draws < 1) throw ConfigError("kept_draws must be >= 1");
  if (thinning < 1) throw ConfigError("thinning must be >= 1");
  if (threads < 1) throw ConfigError("threads must be >= 1");
  if (!(tau_scale_prior_sd > 0.0)) throw ConfigError("tau scale prior SD must be > 0");
  if (!chain_seeds.empty() && static_cast<int>(chain_seeds.size()) != num_chains) {
    throw ConfigError("chain_seeds must list one seed per chain");
  }
  if (fixed_tau_scale && !std::isfinite(*fixed_tau_scale)) throw ConfigError("fixed tau scale must be finite");
  control.validate("control forest");
  moderator.validate("moderator forest");
}

std::uint64_t SamplerConfig::chain_seed(int chain) const {
  if (!chain_seeds.empty()) return chain_seeds[static_cast<std::size_t>(chain)];
  return splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(chain) + 1));
}

namespace {

nlohmann::json prior_json(const TreePriorConfig& p) {
  return {{"alpha", p.alpha}, {"beta", p.beta}, {"num_trees", p.num_trees},
          {"leaf_variance", p.resolved_leaf_variance()}};
}

TreePriorConfig prior_from_json(const nlohmann::json& j) {
  TreePriorConfig p;
  p.alpha = j.at("alpha").get<double>();
  p.beta = j.at("beta").get<double>();
  p.num_trees = j.at("num_trees").get<int>();
  p.leaf_variance = j.at("leaf_variance").get<double>();
  return p;
}

}  // namespace

nlohmann::json SamplerConfig::to_json() const {
  nlohmann::json j;
  j["num_chains"] = num_chains;
  j["burn_in"] = burn_in;
  j["kept_draws"] = kept_draws;
  j["thinning"] = thinning;
  j["seed"] = seed;
  j["chain_seeds"] = nlohmann::json::array();
  for (int c = 0; c < num_chains; ++c) j["chain_seeds"].push_back(chain_seed(c));
  j["control_prior"] = prior_json(control);
  j["moderator_prior"] = prior_json(moderator);
  j["tau_scale_prior_sd"] = tau_scale_prior_sd;
  j["homogeneous"] = homogeneous;
  j["keep_forests"] = keep_forests;
  return j;
}

SamplerConfig SamplerConfig::from_json(const nlohmann::json& j) {
  SamplerConfig c;
  c.num_chains = j.at("num_chains").get<int>();
  c.burn_in = j.at("burn_in").get<int>();
  c.kept_draws = j.at("kept_draws").get<int>();
  c.thinning = j.at("thinning").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.chain_seeds = j.at("chain_seeds").get<std::vector<std::uint64_t>>();
  c.control = prior_from_json(j.at("control_prior"));
  c.moderator = prior_from_json(j.at("moderator_prior"));
  c.tau_scale_prior_sd = j.at("tau_scale_prior_sd").get<double>();
  c.homogeneous = j.at("homogeneous").get<bool>();
  c.keep_forests = j.value("keep_forests", false);
  return c;
}

ModelData ModelData::make(Eigen::MatrixXd x_control, Eigen::MatrixXd x_moderator,
                          Eigen::VectorXd y, Eigen::VectorXd z, int max_cuts) {
  if (x_control.rows() != y.size() || x_moderator.rows() != y.size() || z.size() != y.size()) {
    throw ShapeError("designs, outcome and exposure must have the same number of rows");
  }
  ModelData d;
  d.control_grid = CutpointGrid::build(x_control, max_cuts);
  d.moderator_grid = CutpointGrid::build(x_moderator, max_cuts);
  d.x_control = std::move(x_control);
  d.x_moderator = std::move(x_moderator);
  d.y = std::move(y);
  d.z = std::move(z);
  return d;
}

// --- conditionals ---------------------------------------------------------------

double sample_sigma2(std::span<const double> residual, RandomSource& rng) {
  double sse = 0.0;
  for (double e : residual) sse += e * e;
  if (!(sse > 0.0)) {
    throw DegenerateFitError("sum of squared residuals is zero; the fit interpolates the data");
  }
  const double shape = 0.5 * static_cast<double>(residual.size());
  return 0.5 * sse / rng.gamma(shape);
}

TauScaleConditional tau_scale_conditional(std::span<const double> gz, std::span<const double> u,
                                          double sigma2, double prior_sd) {
  double sxx = 0.0, sxu = 0.0;
  for (std::size_t i = 0; i < gz.size(); ++i) {
    sxx += gz[i] * gz[i];
    sxu += gz[i] * u[i];
  }
  const double prior_precision = std::isinf(prior_sd) ? 0.0 : 1.0 / (prior_sd * prior_sd);
  const double var = 1.0 / (prior_precision + sxx / sigma2);
  return {var * sxu / sigma2, var};
}

double sample_tau_scale(std::span<const double> gz, std::span<const double> u, double sigma2,
                        double prior_sd, RandomSource& rng, bool half_normal) {
  const auto c = tau_scale_conditional(gz, u, sigma2, prior_sd);
  const double sd = std::sqrt(c.variance);
  if (!half_normal) return rng.normal(c.mean, sd);
  return rng.truncated_normal_positive(c.mean, sd);
}

// --- chain state ----------------------------------------------------------------

ChainState::ChainState(const ModelData& data, const SamplerConfig& cfg, std::uint64_t seed)
    : data_(&data), cfg_(cfg), rng_(seed) {
  cfg_.validate();
  const std::size_t n = data.n();
  if (n == 0) throw DegenerateInputError("no observations");
  mu_trees_.assign(static_cast<std::size_t>(cfg_.control.num_trees), TrackedTree(n));
  if (!cfg_.homogeneous) {
    tau_trees_.assign(static_cast<std::size_t>(cfg_.moderator.num_trees), TrackedTree(n));
  }
  sigma2_ = 1.0;
  if (cfg_.fixed_tau_scale) tau_scale_ = *cfg_.fixed_tau_scale;
  else tau_scale_ = cfg_.homogeneous ? 0.0 : cfg_.tau_scale_prior_sd;
  scratch_r_.resize(n);
  scratch_w_.resize(n);
  refresh_caches();
}

Eigen::VectorXd ChainState::tau_hat() const { return tau_scale_ * g_hat_.array(); }

void ChainState::set_tau_scale(double s) {
  tau_scale_ = s;
  refresh_caches();
}

void ChainState::refresh_caches() {
  const auto& d = *data_;
  const std::size_t n = d.n();
  mu_hat_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  for (const auto& t : mu_trees_) {
    for (std::size_t i = 0; i < n; ++i) mu_hat_[static_cast<Eigen::Index>(i)] += t.fit(i);
  }
  if (cfg_.homogeneous) {
    g_hat_ = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(n));
  } else {
    g_hat_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    for (const auto& t : tau_trees_) {
      for (std::size_t i = 0; i < n; ++i) g_hat_[static_cast<Eigen::Index>(i)] += t.fit(i);
    }
  }
  resid_ = recompute_residual();
}

Eigen::VectorXd ChainState::recompute_residual() const {
  const auto& d = *data_;
  Eigen::VectorXd e(d.y.size());
  for (Eigen::Index i = 0; i < e.size(); ++i) {
    e[i] = d.y[i] - mu_hat_[i] - (tau_scale_ * g_hat_[i]) * d.z[i];
  }
  return e;
}

void ChainState::update_control_tree(std::size_t j) {
  const auto& d = *data_;
  const std::size_t n = d.n();
  mh_update_tree_inplace(mu_trees_[j], d.x_control, std::span<double>(resid_.data(), n), {},
                         std::span<double>(mu_hat_.data(), n), sigma2_, cfg_.control, d.control_grid, rng_,
                         !cfg_.freeze_structure);
}

void ChainState::update_moderator_tree(std::size_t j) {
  const auto& d = *data_;
  const std::size_t n = d.n();
  // Leaf value theta enters row i as (tau_scale * z_i) * theta; scratch_w_
  // is filled once per sweep in step().
  mh_update_tree_inplace(tau_trees_[j], d.x_moderator, std::span<double>(resid_.data(), n), scratch_w_,
                         std::span<double>(g_hat_.data(), n), sigma2_, cfg_.moderator, d.moderator_grid,
                         rng_, !cfg_.freeze_structure);
}

void ChainState::update_tau_scale() {
  const auto& d = *data_;
  const std::size_t n = d.n();
  for (std::size_t i = 0; i < n; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    scratch_w_[i] = g_hat_[ii] * d.z[ii];
    scratch_r_[i] = d.y[ii] - mu_hat_[ii];
  }
  tau_scale_ = sample_tau_scale(scratch_w_, scratch_r_, sigma2_, cfg_.tau_scale_prior_sd, rng_,
                                !cfg_.homogeneous);
  resid_ = recompute_residual();
}

void ChainState::step() {
  for (std::size_t j = 0; j < mu_trees_.size(); ++j) update_control_tree(j);
  const std::size_t n = data_->n();
  for (std::size_t i = 0; i < n; ++i) scratch_w_[i] = tau_scale_ * data_->z[static_cast<Eigen::Index>(i)];
  for (std::size_t j = 0; j < tau_trees_.size(); ++j) update_moderator_tree(j);
  sigma2_ = sample_sigma2(std::span<const double>(resid_.data(), static_cast<std::size_t>(resid_.size())), rng_);
  if (!cfg_.fixed_tau_scale) update_tau_scale();
}

Forest ChainState::control_forest() const {
  Forest f;
  f.num_columns = static_cast<int>(data_->x_control.cols());
  for (const auto& t : mu_trees_) f.trees.push_back(t.tree);
  return f;
}

Forest ChainState::moderator_forest() const {
  Forest f;
  f.num_columns = static_cast<int>(data_->x_moderator.cols());
  for (const auto& t : tau_trees_) f.trees.push_back(t.tree);
  return f;
}

// --- draws ----------------------------------------------------------------------

namespace {

void natural_rows(const Standardization& tr, const DrawMatrix& mu, const DrawMatrix& tau,
                  DrawMatrix* mu_out, DrawMatrix* tau_out) {
  const double factor = tr.tau_factor();
  DrawMatrix tau_nat = tau * factor;
  if (mu_out) {
    *mu_out = (tr.y_center + (mu * tr.y_scale).array() - tau_nat.array() * tr.z_center).matrix();
  }
  if (tau_out) *tau_out = std::move(tau_nat);
}

}  // namespace

DrawMatrix PosteriorDraws::tau_natural() const {
  DrawMatrix out;
  natural_rows(transform, mu, tau, nullptr, &out);
  return out;
}

DrawMatrix PosteriorDraws::mu_natural() const {
  DrawMatrix out;
  natural_rows(transform, mu, tau, &out, nullptr);
  return out;
}

Eigen::VectorXd PosteriorDraws::sigma_natural() const { return sigma * transform.y_scale; }

DrawMatrix PosteriorDraws::fitted_natural(const Eigen::VectorXd& z_natural) const {
  DrawMatrix mu_n, tau_n;
  natural_rows(transform, mu, tau, &mu_n, &tau_n);
  return (mu_n.array() + tau_n.array().rowwise() * z_natural.transpose().array()).matrix();
}

PosteriorDraws run_chains(const ModelData& data, const Standardization& transform,
                          const SamplerConfig& cfg) {
  cfg.validate();
  const auto n = static_cast<Eigen::Index>(data.n());
  const int kept = cfg.kept_draws;
  const Eigen::Index total = static_cast<Eigen::Index>(cfg.num_chains) * kept;

  PosteriorDraws out;
  out.mu.resize(total, n);
  out.tau.resize(total, n);
  out.sigma.resize(total);
  out.tau_scale.resize(total);
  out.num_chains = cfg.num_chains;
  out.homogeneous = cfg.homogeneous;
  out.transform = transform;
  if (cfg.keep_forests) out.forests.resize(static_cast<std::size_t>(total));

  auto run_one = [&](int c) {
    ChainState st(data, cfg, cfg.chain_seed(c));
    // Rebuilding the caches from the trees every 100 sweeps bounds the
    // rounding drift of the in-place updates.
    long sweep = 0;
    auto advance = [&] {
      st.step();
      if (++sweep % 100 == 0) st.refresh_caches();
    };
    for (int it = 0; it < cfg.burn_in; ++it) advance();
    for (int k = 0; k < kept; ++k) {
      for (int t = 0; t < cfg.thinning; ++t) advance();
      const Eigen::Index row = static_cast<Eigen::Index>(c) * kept + k;
      out.mu.row(row) = st.mu_hat().transpose();
      out.tau.row(row) = (st.tau_scale() * st.raw_tau().array()).matrix().transpose();
      out.sigma[row] = std::sqrt(st.sigma2());
      out.tau_scale[row] = st.tau_scale();
      if (cfg.keep_forests) {
        out.forests[static_cast<std::size_t>(row)] = {st.control_forest(), st.moderator_forest(),
                                                      st.tau_scale()};
      }
    }
  };

  std::vector<std::exception_ptr> failures(static_cast<std::size_t>(cfg.num_chains));
  std::atomic<int> next{0};
  auto worker = [&]() {
    for (int c = next++; c < cfg.num_chains; c = next++) {
      try {
        run_one(c);
      } catch (...) {
        failures[static_cast<std::size_t>(c)] = std::current_exception();
      }
    }
  };
  const int nthreads = std::min(cfg.threads, cfg.num_chains);
  if (nthreads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (int c = 0; c < cfg.num_chains; ++c) {
    if (auto& f = failures[static_cast<std::size_t>(c)]) {
      try {
        std::rethrow_exception(f);
      } catch (const Error& e) {
        throw Error(e.kind(), "chain " + std::to_string(c) + ": " + e.what());
      } catch (const std::exception& e) {
        throw Error(ErrorKind::Internal, "chain " + std::to_string(c) + ": " + e.what());
      }
    }
  }

  double ess_sigma = 0.0, ess_ate = 0.0;
  for (int c = 0; c < cfg.num_chains; ++c) {
    const Eigen::Index first = static_cast<Eigen::Index>(c) * kept;
    std::vector<double> s(out.sigma.data() + first, out.sigma.data() + first + kept);
    std::vector<double> a(static_cast<std::size_t>(kept));
    for (int k = 0; k < kept; ++k) a[static_cast<std::size_t>(k)] = out.tau.row(first + k).mean();
    ess_sigma += effective_sample_size(s);
    ess_ate += effective_sample_size(a);
  }
  out.provenance["sampler"] = cfg.to_json();
  out.provenance["ess"] = {{"sigma", ess_sigma}, {"ate", ess_ate}};
  return out;
}

PosteriorDraws fit_panel(const PanelDataset& data, const SamplerConfig& cfg) {
  data.validate();
  const DesignPair designs = design_matrices(data);
  StandardizedPanel sp = standardize(data);
  const ModelData md = ModelData::make(designs.control.x, designs.moderator.x, sp.data.y, sp.data.z);
  return run_chains(md, sp.transform, cfg);
}

PredictionDraws predict(const PosteriorDraws& draws, const Eigen::MatrixXd& x_control,
                        const Eigen::MatrixXd& x_moderator) {
  if (draws.forests.empty()) {
    throw CapabilityError("forest snapshots were not stored; refit with forest persistence enabled");
  }
  if (x_control.rows() != x_moderator.rows()) throw ShapeError("design row counts differ");
  const Eigen::Index m = x_control.rows();
  const auto nd = static_cast<Eigen::Index>(draws.forests.size());
  DrawMatrix mu(nd, m), tau(nd, m);
  for (Eigen::Index d = 0; d < nd; ++d) {
    const auto& snap = draws.forests[static_cast<std::size_t>(d)];
    mu.row(d) = forest_predict(snap.control, x_control).transpose();
    Eigen::VectorXd g = draws.homogeneous ? Eigen::VectorXd::Ones(m)
                                          : forest_predict(snap.moderator, x_moderator);
    tau.row(d) = (snap.tau_scale * g.array()).matrix().transpose();
  }
  PredictionDraws out;
  natural_rows(draws.transform, mu, tau, &out.mu, &out.tau);
  return out;
}

double effective_sample_size(std::span<const double> chain) {
  const std::size_t n = chain.size();
  if (n < 4) return static_cast<double>(n);
  double mean = 0.0;
  for (double v : chain) mean += v;
  mean /= static_cast<double>(n);
  auto autocov = [&](std::size_t lag) {
    double s = 0.0;
    for (std::size_t i = 0; i + lag < n; ++i) s += (chain[i] - mean) * (chain[i + lag] - mean);
    return s / static_cast<double>(n);
  };
  const double g0 = autocov(0);
  if (!(g0 > 0.0)) return static_cast<double>(n);
  double sum = 0.0;
  for (std::size_t k = 0; 2 * k + 1 < n; ++k) {
    const double pair = autocov(2 * k) + autocov(2 * k + 1);
    if (pair <= 0.0) break;
    sum += pair;
  }
  const double tau_int = std::max(1.0, (2.0 * sum - g0) / g0);
  return static_cast<double>(n) / tau_int;
}

}  // namespace ctbcf
