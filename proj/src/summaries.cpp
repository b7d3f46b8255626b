#include "ctbcf/summaries.h"

#include "ctbcf/error.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace ctbcf {

namespace {

constexpr double kRankTolerance = 1e-10;

Eigen::Index rank_of(const Eigen::MatrixXd& x) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  qr.setThreshold(kRankTolerance);
  return qr.rank();
}

}  // namespace

void require_full_rank(const Eigen::MatrixXd& x, const std::vector<std::string>& names) {
  if (x.cols() == 0) return;
  if (x.rows() < x.cols()) {
    throw RankDeficiencyError("design has " + std::to_string(x.cols()) + " columns but only " +
                              std::to_string(x.rows()) + " rows");
  }
  if (rank_of(x) == x.cols()) return;
  // Walk the columns in order and report every one that adds nothing.
  std::vector<Eigen::Index> kept;
  std::string listed;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    Eigen::MatrixXd trial(x.rows(), static_cast<Eigen::Index>(kept.size()) + 1);
    for (std::size_t k = 0; k < kept.size(); ++k) trial.col(static_cast<Eigen::Index>(k)) = x.col(kept[k]);
    trial.col(trial.cols() - 1) = x.col(j);
    if (rank_of(trial) == trial.cols()) {
      kept.push_back(j);
    } else {
      const std::string nm = static_cast<std::size_t>(j) < names.size() ? names[static_cast<std::size_t>(j)]
                                                                       : "column " + std::to_string(j);
      listed += (listed.empty() ? "" : ", ") + nm;
    }
  }
  throw RankDeficiencyError("collinear columns: " + listed);
}

// --- additive summary --------------------------------------------------------

AdditiveInputs additive_inputs(const PanelDataset& data) {
  AdditiveInputs in;
  in.n = static_cast<Eigen::Index>(data.n());
  for (const auto& c : data.covariates) {
    if (!c.spec.moderator) continue;
    if (c.spec.kind == CovariateKind::Numeric) {
      in.smooths.push_back({c.spec.name, Eigen::Map<const Eigen::VectorXd>(c.numeric.data(), in.n)});
    } else {
      in.factors.push_back({c.spec.name, c.spec.levels, c.codes});
    }
  }
  if (data.has_unit()) in.factors.push_back({data.unit_name, data.unit_levels, data.unit_codes});
  if (data.has_time()) {
    in.smooths.push_back({data.time_name, Eigen::Map<const Eigen::VectorXd>(data.time.data(), in.n)});
  }
  return in;
}

const AdditiveSummaryFit::Block& AdditiveSummaryFit::block(const std::string& name) const {
  for (const auto& b : blocks) {
    if (b.name == name) return b;
  }
  throw ConfigError("additive summary has no term named '" + name + "'");
}

DrawMatrix AdditiveSummaryFit::component(const std::string& name) const {
  const Block& b = block(name);
  return coefficients.middleCols(b.offset, b.width) * design.middleCols(b.offset, b.width).transpose();
}

DrawMatrix AdditiveSummaryFit::factor_effects(const std::string& name) const {
  const Block& b = block(name);
  if (b.smooth) throw ConfigError("'" + name + "' is a smooth term, not a factor");
  DrawMatrix out = DrawMatrix::Zero(coefficients.rows(), b.width + 1);
  out.rightCols(b.width) = coefficients.middleCols(b.offset, b.width);
  return out;
}

PartialEffectCurve AdditiveSummaryFit::curve(const std::string& name, const Eigen::VectorXd& observed) const {
  const Block& b = block(name);
  if (!b.smooth) throw ConfigError("'" + name + "' is a factor, not a smooth term");
  std::size_t which = 0;
  for (const auto& other : blocks) {
    if (&other == &b) break;
    if (other.smooth) ++which;
  }
  PartialEffectCurve c;
  c.name = name;
  c.grid = Eigen::VectorXd::LinSpaced(grid_points, observed.minCoeff(), observed.maxCoeff());
  const Eigen::MatrixXd basis = bases[which].evaluate(c.grid);
  const DrawMatrix values = coefficients.middleCols(b.offset, b.width) * basis.transpose();
  c.mean = values.colwise().mean().transpose();
  c.lo.resize(c.grid.size());
  c.hi.resize(c.grid.size());
  for (Eigen::Index g = 0; g < c.grid.size(); ++g) {
    if (values.rows() >= 2) {
      const auto [lo, hi] = equal_tailed_interval(values.col(g), interval_level);
      c.lo[g] = lo;
      c.hi[g] = hi;
    } else {
      c.lo[g] = c.hi[g] = c.mean[g];
    }
  }
  return c;
}

namespace {

struct PenaltyTerm {
  Eigen::Index offset;
  Eigen::MatrixXd s;
  double scale;  // tr(X_j'X_j) / tr(S_j)
};

struct PenalizedSolve {
  Eigen::VectorXd beta;
  double gcv;
};

Eigen::MatrixXd penalized_normal_matrix(const Eigen::MatrixXd& xtx, const std::vector<PenaltyTerm>& pens,
                                        const std::vector<double>& lambdas) {
  Eigen::MatrixXd m = xtx;
  for (std::size_t j = 0; j < pens.size(); ++j) {
    const auto w = pens[j].s.rows();
    m.block(pens[j].offset, pens[j].offset, w, w) += lambdas[j] * pens[j].s;
  }
  return m;
}

PenalizedSolve solve_gcv(const Eigen::MatrixXd& x, const Eigen::MatrixXd& xtx, const Eigen::VectorXd& target,
                         const std::vector<PenaltyTerm>& pens, const std::vector<double>& lambdas) {
  const Eigen::MatrixXd m = penalized_normal_matrix(xtx, pens, lambdas);
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(m);
  PenalizedSolve out;
  out.beta = ldlt.solve(x.transpose() * target);
  const double rss = (target - x * out.beta).squaredNorm();
  const double tr = ldlt.solve(xtx).trace();
  const auto n = static_cast<double>(x.rows());
  out.gcv = n - tr > 1e-8 ? n * rss / ((n - tr) * (n - tr)) : std::numeric_limits<double>::infinity();
  return out;
}

}  // namespace

AdditiveSummaryFit fit_additive_summary(const DrawMatrix& tau, const AdditiveInputs& inputs,
                                        const AdditiveSummaryOptions& options) {
  const Eigen::Index n = tau.cols();
  if (n != inputs.n) throw ShapeError("additive summary inputs have " + std::to_string(inputs.n) +
                                      " rows but the draws cover " + std::to_string(n) + " units");
  if (tau.rows() < 1) throw DegenerateInputError("additive summary needs at least one draw");
  if (options.lambdas && options.lambdas->size() != inputs.smooths.size()) {
    throw ConfigError("expected " + std::to_string(inputs.smooths.size()) + " smoothing parameters");
  }

  AdditiveSummaryFit fit;
  fit.interval_level = options.interval_level;
  fit.grid_points = options.grid_points;
  std::vector<std::string> colnames{"(intercept)"};
  std::vector<Eigen::MatrixXd> pieces{Eigen::MatrixXd::Ones(n, 1)};
  Eigen::Index offset = 1;
  for (const auto& f : inputs.factors) {
    if (static_cast<Eigen::Index>(f.codes.size()) != n) throw ShapeError("factor '" + f.name + "' has the wrong length");
    const auto w = static_cast<Eigen::Index>(f.levels.size()) - 1;
    if (w <= 0) continue;
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, w);
    for (Eigen::Index i = 0; i < n; ++i) {
      const int code = f.codes[static_cast<std::size_t>(i)];
      if (code > 0) d(i, code - 1) = 1.0;
    }
    for (std::size_t l = 1; l < f.levels.size(); ++l) colnames.push_back(f.name + "=" + f.levels[l]);
    fit.blocks.push_back({f.name, false, offset, w, f.levels});
    pieces.push_back(std::move(d));
    offset += w;
  }
  std::vector<PenaltyTerm> pens;
  for (const auto& s : inputs.smooths) {
    if (s.values.size() != n) throw ShapeError("smooth '" + s.name + "' has the wrong length");
    SplineBasis basis = SplineBasis::build(s.values, options.basis_dimension);
    if (!basis.warning().empty()) fit.warnings.push_back(s.name + ": " + basis.warning());
    Eigen::MatrixXd d = basis.evaluate(s.values);
    const auto w = d.cols();
    for (Eigen::Index k = 0; k < w; ++k) colnames.push_back(s.name + "[" + std::to_string(k + 1) + "]");
    const double trs = basis.penalty().trace();
    const double trx = d.squaredNorm();
    pens.push_back({offset, basis.penalty(), trs > 0 ? trx / trs : 1.0});
    fit.blocks.push_back({s.name, true, offset, w, {}});
    fit.bases.push_back(std::move(basis));
    pieces.push_back(std::move(d));
    offset += w;
  }
  fit.design.resize(n, offset);
  Eigen::Index at = 0;
  for (const auto& p : pieces) {
    fit.design.middleCols(at, p.cols()) = p;
    at += p.cols();
  }
  require_full_rank(fit.design, colnames);

  const Eigen::MatrixXd& x = fit.design;
  const Eigen::MatrixXd xtx = x.transpose() * x;
  if (options.lambdas) {
    fit.lambdas = *options.lambdas;
  } else {
    // Coordinate search over log10 multipliers of each term's natural scale.
    const Eigen::VectorXd target = tau.colwise().mean().transpose();
    std::vector<double> k(pens.size(), 0.0);
    auto lambdas_for = [&](const std::vector<double>& ks) {
      std::vector<double> l(ks.size());
      for (std::size_t j = 0; j < ks.size(); ++j) l[j] = std::pow(10.0, ks[j]) * pens[j].scale;
      return l;
    };
    double best = solve_gcv(x, xtx, target, pens, lambdas_for(k)).gcv;
    for (int pass = 0; pass < 3; ++pass) {
      for (std::size_t j = 0; j < pens.size(); ++j) {
        for (int step = -18; step <= 12; ++step) {
          std::vector<double> trial = k;
          trial[j] = 0.5 * step;
          const double g = solve_gcv(x, xtx, target, pens, lambdas_for(trial)).gcv;
          if (g < best - 1e-12 * std::abs(best)) {
            best = g;
            k = trial;
          }
        }
      }
    }
    fit.lambdas = lambdas_for(k);
  }
  for (double l : fit.lambdas) {
    if (!(l >= 0.0) || !std::isfinite(l)) throw ConfigError("smoothing parameters must be finite and >= 0");
  }
  const Eigen::MatrixXd m = penalized_normal_matrix(xtx, pens, fit.lambdas);
  fit.projector = m.ldlt().solve(x.transpose());
  fit.coefficients = tau * fit.projector.transpose();
  return fit;
}

void write_partial_effects(std::ostream& out, const std::vector<PartialEffectCurve>& curves, double level) {
  const std::string pct = std::to_string(static_cast<int>(std::lround(level * 100)));
  out << "term,grid,mean,lo" << pct << ",hi" << pct << "\n";
  for (const auto& c : curves) {
    for (Eigen::Index g = 0; g < c.grid.size(); ++g) {
      out << c.name << ',' << format_double(c.grid[g]) << ',' << format_double(c.mean[g]) << ','
          << format_double(c.lo[g]) << ',' << format_double(c.hi[g]) << '\n';
    }
  }
}

// --- tree summary ------------------------------------------------------------

TreeInputs tree_inputs(const PanelDataset& data) {
  TreeInputs t;
  std::vector<Eigen::VectorXd> cols;
  const auto n = static_cast<Eigen::Index>(data.n());
  for (const auto& c : data.covariates) {
    if (!c.spec.moderator) continue;
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      v[i] = c.spec.kind == CovariateKind::Numeric ? c.numeric[static_cast<std::size_t>(i)]
                                                   : static_cast<double>(c.codes[static_cast<std::size_t>(i)]);
    }
    cols.push_back(std::move(v));
    t.names.push_back(c.spec.name);
  }
  if (data.has_time()) {
    cols.push_back(Eigen::Map<const Eigen::VectorXd>(data.time.data(), n));
    t.names.push_back(data.time_name);
  }
  t.x.resize(n, static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) t.x.col(static_cast<Eigen::Index>(j)) = cols[j];
  return t;
}

TreeSummary fit_tree_summary(const DrawMatrix& tau, const Eigen::MatrixXd& moderators,
                             const std::vector<std::string>& names, const UnitGroups* sweep_groups,
                             const RegressionTreeOptions& options) {
  if (moderators.rows() != tau.cols()) throw ShapeError("moderators and draws disagree on the number of units");
  if (moderators.cols() == 0) throw ConfigError("tree summary needs at least one moderator");
  Eigen::VectorXd target = tau.colwise().mean().transpose();
  if (sweep_groups != nullptr) {
    sweep_groups->validate(tau.cols());
    for (const auto& members : sweep_groups->members) {
      double m = 0.0;
      for (int i : members) m += target[i];
      m /= static_cast<double>(members.size());
      for (int i : members) target[i] -= m;
    }
  }
  TreeSummary s;
  s.tree = RegressionTree::fit(moderators, target, options);
  s.variable_names = names;
  s.leaf_ids = s.tree.leaves();
  std::vector<int> codes(static_cast<std::size_t>(tau.cols()));
  for (Eigen::Index i = 0; i < moderators.rows(); ++i) {
    const int leaf = s.tree.leaf_of(moderators, i);
    codes[static_cast<std::size_t>(i)] =
        static_cast<int>(std::find(s.leaf_ids.begin(), s.leaf_ids.end(), leaf) - s.leaf_ids.begin());
  }
  std::vector<std::string> labels;
  for (int id : s.leaf_ids) labels.push_back(s.tree.describe(id, names));
  s.subgroups = UnitGroups::from_codes(codes, labels);
  s.subgroup_cate = group_ate(tau, s.subgroups);
  for (std::size_t a = 0; a < s.subgroup_cate.size(); ++a) {
    for (std::size_t b = a + 1; b < s.subgroup_cate.size(); ++b) {
      Eigen::VectorXd d = s.subgroup_cate[b].draws - s.subgroup_cate[a].draws;
      s.differences.push_back({static_cast<int>(a), static_cast<int>(b),
                               EstimandPosterior::from_draws("[" + labels[b] + "] - [" + labels[a] + "]", std::move(d))});
    }
  }
  return s;
}

namespace {

nlohmann::json posterior_json(const EstimandPosterior& p) {
  nlohmann::json j{{"name", p.name}, {"mean", p.point}, {"n_draws", p.draws.size()}};
  for (const auto& [level, iv] : p.intervals) {
    const std::string pct = std::to_string(static_cast<int>(std::lround(level * 100)));
    j["lo" + pct] = iv.first;
    j["hi" + pct] = iv.second;
  }
  return j;
}

}  // namespace

nlohmann::json TreeSummary::to_json() const {
  nlohmann::json j;
  j["tree"] = tree.to_json(variable_names);
  j["selected_alpha"] = tree.selected_alpha();
  j["subgroups"] = nlohmann::json::array();
  for (std::size_t k = 0; k < subgroup_cate.size(); ++k) {
    nlohmann::json g = posterior_json(subgroup_cate[k]);
    g["leaf"] = leaf_ids[k];
    g["size"] = subgroups.members[k].size();
    j["subgroups"].push_back(std::move(g));
  }
  j["differences"] = nlohmann::json::array();
  for (const auto& d : differences) {
    nlohmann::json g = posterior_json(d.posterior);
    g["first"] = d.first;
    g["second"] = d.second;
    j["differences"].push_back(std::move(g));
  }
  return j;
}

// --- linear comparators ------------------------------------------------------

LinearDesign linear_design(const PanelDataset& data) {
  const auto n = static_cast<Eigen::Index>(data.n());
  std::vector<Eigen::VectorXd> cols;
  std::vector<DesignColumn> meta;
  cols.push_back(Eigen::VectorXd::Ones(n));
  meta.push_back({"(intercept)", "", false});
  for (const auto& c : data.covariates) {
    if (!c.spec.control) continue;
    if (c.spec.kind == CovariateKind::Numeric) {
      cols.push_back(Eigen::Map<const Eigen::VectorXd>(c.numeric.data(), n));
      meta.push_back({c.spec.name, c.spec.name, false});
    } else {
      for (std::size_t l = 1; l < c.spec.levels.size(); ++l) {
        Eigen::VectorXd v(n);
        for (Eigen::Index i = 0; i < n; ++i) v[i] = c.codes[static_cast<std::size_t>(i)] == static_cast<int>(l) ? 1.0 : 0.0;
        cols.push_back(std::move(v));
        meta.push_back({c.spec.name + "=" + c.spec.levels[l], c.spec.name, true});
      }
    }
  }
  if (data.has_unit()) {
    for (std::size_t l = 1; l < data.unit_levels.size(); ++l) {
      Eigen::VectorXd v(n);
      for (Eigen::Index i = 0; i < n; ++i) v[i] = data.unit_codes[static_cast<std::size_t>(i)] == static_cast<int>(l) ? 1.0 : 0.0;
      cols.push_back(std::move(v));
      meta.push_back({data.unit_name + "=" + data.unit_levels[l], data.unit_name, true});
    }
  }
  if (data.has_time()) {
    const std::set<double> periods(data.time.begin(), data.time.end());
    for (auto it = std::next(periods.begin()); it != periods.end(); ++it) {
      Eigen::VectorXd v(n);
      for (Eigen::Index i = 0; i < n; ++i) v[i] = data.time[static_cast<std::size_t>(i)] == *it ? 1.0 : 0.0;
      cols.push_back(std::move(v));
      meta.push_back({data.time_name + "=" + format_double(*it), data.time_name, true});
    }
  }
  cols.push_back(data.z);
  meta.push_back({data.exposure_name, data.exposure_name, false});
  LinearDesign d;
  d.design.x.resize(n, static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) d.design.x.col(static_cast<Eigen::Index>(j)) = cols[j];
  d.design.columns = std::move(meta);
  d.z_column = static_cast<int>(cols.size()) - 1;
  return d;
}

namespace {

std::vector<std::string> column_names(const Design& d) {
  std::vector<std::string> out;
  for (const auto& c : d.columns) out.push_back(c.name);
  return out;
}

struct ExposureRow {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr;
  Eigen::VectorXd row;  // e_z' (X'X)^-1 X'
  double r_zz = 0.0;
};

ExposureRow exposure_row(const LinearDesign& d) {
  const Eigen::MatrixXd& x = d.design.x;
  if (d.z_column != static_cast<int>(x.cols()) - 1) throw ConfigError("exposure must be the last linear-design column");
  require_full_rank(x, column_names(d.design));
  ExposureRow e;
  e.qr.compute(x);
  const Eigen::Index p = x.cols();
  // With z last, the z row of R^-1 Q' is q_p / R_pp.
  e.r_zz = e.qr.matrixQR()(p - 1, p - 1);
  const Eigen::MatrixXd q = e.qr.householderQ() * Eigen::MatrixXd::Identity(x.rows(), p);
  e.row = q.col(p - 1) / e.r_zz;
  return e;
}

}  // namespace

EstimandPosterior project_linear_ate(const DrawMatrix& fitted, const LinearDesign& design) {
  if (fitted.cols() != design.design.x.rows()) throw ShapeError("fitted draws and linear design disagree on n");
  const ExposureRow e = exposure_row(design);
  Eigen::VectorXd ate = fitted * e.row;
  return EstimandPosterior::from_draws("ATE (linear projection)", std::move(ate));
}

LinearRefit refit_linear_flat(const Eigen::VectorXd& y, const LinearDesign& design, int num_draws,
                              RandomSource& rng) {
  const Eigen::MatrixXd& x = design.design.x;
  if (y.size() != x.rows()) throw ShapeError("outcome and linear design disagree on n");
  if (x.rows() <= x.cols()) {
    throw RankDeficiencyError("linear refit needs more rows (" + std::to_string(x.rows()) + ") than columns (" +
                              std::to_string(x.cols()) + ")");
  }
  if (num_draws < 2) throw ConfigError("linear refit needs at least 2 draws");
  const ExposureRow e = exposure_row(design);
  LinearRefit r;
  r.coefficients = e.qr.solve(y);
  r.residual_ss = (y - x * r.coefficients).squaredNorm();
  r.degrees_of_freedom = static_cast<int>(x.rows() - x.cols());
  const double bz = r.coefficients[design.z_column];
  const double vzz = 1.0 / (e.r_zz * e.r_zz);
  Eigen::VectorXd draws(num_draws);
  for (int s = 0; s < num_draws; ++s) {
    const double sigma2 = 0.5 * r.residual_ss / rng.gamma(0.5 * r.degrees_of_freedom);
    draws[s] = bz + std::sqrt(sigma2 * vzz) * rng.normal();
  }
  r.ate = EstimandPosterior::from_draws("ATE (linear refit)", std::move(draws));
  return r;
}

}  // namespace ctbcf
