#include "ctbcf/cli.h"

#include "ctbcf/dataset.h"
#include "ctbcf/diagnostics.h"
#include "ctbcf/draws_io.h"
#include "ctbcf/error.h"
#include "ctbcf/estimands.h"
#include "ctbcf/sampler.h"
#include "ctbcf/simulation.h"
#include "ctbcf/summaries.h"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

namespace ctbcf::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct SamplerFlags {
  int chains = 4;
  int burnin = 5000;
  int draws = 2500;
  int thin = 1;
  std::uint64_t seed = 1;
  int threads = 1;
  bool homogeneous = false;
  bool keep_forests = false;
};

void add_sampler_flags(CLI::App* app, SamplerFlags& f) {
  app->add_option("--chains", f.chains, "Number of chains")->capture_default_str();
  app->add_option("--burnin", f.burnin, "Burn-in sweeps per chain")->capture_default_str();
  app->add_option("--draws", f.draws, "Kept draws per chain")->capture_default_str();
  app->add_option("--thin", f.thin, "Sweeps between kept draws")->capture_default_str();
  app->add_option("--seed", f.seed, "Random seed")->capture_default_str();
  app->add_option("--threads", f.threads, "Worker threads for chains")->capture_default_str();
  app->add_flag("--homogeneous", f.homogeneous, "Single scalar effect instead of a moderating forest");
  app->add_flag("--keep-forests", f.keep_forests, "Store forest snapshots (needed by predict)");
}

SamplerConfig sampler_config(const SamplerFlags& f) {
  SamplerConfig c;
  c.num_chains = f.chains;
  c.burn_in = f.burnin;
  c.kept_draws = f.draws;
  c.thinning = f.thin;
  c.seed = f.seed;
  c.threads = f.threads;
  c.homogeneous = f.homogeneous;
  c.keep_forests = f.keep_forests;
  c.validate();
  return c;
}

void require_file(const std::string& path, const std::string& what) {
  if (!fs::is_regular_file(path)) throw ParseError(what + " file not found: '" + path + "'");
}

void write_json(const fs::path& path, const json& j) { std::ofstream(path) << j.dump(2) << "\n"; }

template <typename F>
void write_with(const fs::path& path, F&& f) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write '" + path.string() + "'");
  f(out);
}

json fit_manifest(const fs::path& data_path, const std::string& data_fp, const Schema& schema,
                  const PanelDataset& data) {
  json m;
  m["command"] = "fit";
  m["data"] = {{"path", fs::absolute(data_path).lexically_normal().string()}, {"fingerprint", data_fp}};
  const std::string schema_text = schema.to_string();
  m["schema"] = {{"text", schema_text}, {"fingerprint", fingerprint(schema_text)}};
  m["unit_levels"] = data.unit_levels;
  return m;
}

// --- fit ------------------------------------------------------------------------

struct FitArgs {
  std::string data, schema, out;
  SamplerFlags sampler;
};

void write_refit(const PanelDataset& data, const SamplerConfig& cfg, int num_draws, const fs::path& out, json& notes) {
  try {
    const LinearDesign ld = linear_design(data);
    RandomSource rng(splitmix64(cfg.seed ^ 0x6c696e6561722d72ULL));
    const LinearRefit r = refit_linear_flat(data.y, ld, std::max(num_draws, 2), rng);
    write_with(out / "linear_refit.csv", [&](std::ostream& o) { write_estimand_table(o, {r.ate}); });
    notes["linear_refit"] = {{"columns", ld.design.cols()}, {"degrees_of_freedom", r.degrees_of_freedom}};
  } catch (const RankDeficiencyError& e) {
    notes["linear_refit"] = {{"skipped", e.what()}};
  }
}

int cmd_fit(const FitArgs& a, std::ostream& out) {
  require_file(a.schema, "schema");
  require_file(a.data, "data");
  const Schema schema = Schema::load(a.schema);
  const PanelDataset data = load_panel(a.data, schema);
  const SamplerConfig cfg = sampler_config(a.sampler);
  const PosteriorDraws draws = fit_panel(data, cfg);
  json extra = fit_manifest(a.data, file_fingerprint(a.data), schema, data);
  fs::create_directories(a.out);
  json notes = json::object();
  write_refit(data, cfg, static_cast<int>(draws.num_draws()), a.out, notes);
  extra["notes"] = notes;
  write_draws(draws, a.out, extra);
  out << "wrote " << draws.num_draws() << " draws for " << draws.num_units() << " units to " << a.out << "\n";
  return kOk;
}

// --- analyze --------------------------------------------------------------------

struct AnalyzeArgs {
  std::string run;
  std::string data;    // defaults to the path recorded at fit time
  std::string schema;  // defaults to the schema recorded at fit time
  std::string out;     // defaults to the run directory
  std::string groups;
  std::optional<double> cut_height;
  double span = 0.75;
};

std::optional<UnitGroups> grouping(const PanelDataset& data, const std::string& name) {
  if (name.empty()) {
    if (!data.has_unit()) return std::nullopt;
    return UnitGroups::from_codes(data.unit_codes, data.unit_levels);
  }
  if (data.has_unit() && name == data.unit_name) return UnitGroups::from_codes(data.unit_codes, data.unit_levels);
  for (const auto& c : data.covariates) {
    if (c.spec.name == name && c.spec.kind == CovariateKind::Categorical) {
      return UnitGroups::from_codes(c.codes, c.spec.levels);
    }
  }
  throw ConfigError("--groups '" + name + "' is neither the unit column nor a categorical covariate");
}

json analyze_run(const AnalyzeArgs& a) {
  const json manifest = read_manifest(a.run);
  const std::string data_path = a.data.empty() ? manifest.at("data").at("path").get<std::string>() : a.data;
  require_file(data_path, "data");
  const std::string fp = file_fingerprint(data_path);
  if (fp != manifest.at("data").at("fingerprint").get<std::string>()) {
    throw ConsistencyError("data file '" + data_path + "' does not match the fingerprint recorded in " +
                           (fs::path(a.run) / "manifest.json").string());
  }
  Schema schema;
  {
    std::istringstream in(manifest.at("schema").at("text").get<std::string>());
    schema = Schema::parse(in);
  }
  if (!a.schema.empty()) {
    require_file(a.schema, "schema");
    if (Schema::load(a.schema).to_string() != schema.to_string()) {
      throw ConsistencyError("schema '" + a.schema + "' differs from the one used at fit time");
    }
  }
  const PanelDataset data = load_panel(data_path, schema);
  const PosteriorDraws draws = read_draws(a.run);
  if (draws.num_units() != static_cast<Eigen::Index>(data.n())) {
    throw ConsistencyError("draws cover " + std::to_string(draws.num_units()) + " units but the data has " +
                           std::to_string(data.n()));
  }
  const fs::path out = a.out.empty() ? fs::path(a.run) : fs::path(a.out);
  fs::create_directories(out);
  json report;
  json files = json::array();

  const DrawMatrix tau = draws.tau_natural();
  // Effect estimands.
  std::vector<EstimandPosterior> ate_rows{posterior_ate(tau)};
  try {
    const LinearDesign ld = linear_design(data);
    ate_rows.push_back(project_linear_ate(draws.fitted_natural(data.z), ld));
  } catch (const RankDeficiencyError& e) {
    report["notes"]["linear_projection"] = e.what();
  }
  write_with(out / "ate.csv", [&](std::ostream& o) { write_estimand_table(o, ate_rows); });
  files.push_back("ate.csv");
  report["ate"] = {{"mean", ate_rows[0].point},
                   {"lo95", ate_rows[0].intervals.at(0.95).first},
                   {"hi95", ate_rows[0].intervals.at(0.95).second}};
  if (ate_rows.size() > 1) report["ate_linear_projection"] = {{"mean", ate_rows[1].point}};

  const auto groups = grouping(data, a.groups);
  if (groups) {
    write_with(out / "group_ate.csv", [&](std::ostream& o) { write_estimand_table(o, group_ate(tau, *groups)); });
    files.push_back("group_ate.csv");
  }

  // Additive summary.
  const AdditiveInputs inputs = additive_inputs(data);
  if (!inputs.smooths.empty() || !inputs.factors.empty()) {
    const AdditiveSummaryFit fit = fit_additive_summary(tau, inputs);
    std::vector<PartialEffectCurve> curves;
    json terms = json::array();
    std::string largest;
    double largest_span = -1.0;
    for (std::size_t k = 0; k < inputs.smooths.size(); ++k) {
      curves.push_back(fit.curve(inputs.smooths[k].name, inputs.smooths[k].values));
      const double sp = curves.back().span();
      terms.push_back({{"name", inputs.smooths[k].name}, {"kind", "smooth"}, {"lambda", fit.lambdas[k]}, {"span", sp}});
      if (sp > largest_span) {
        largest_span = sp;
        largest = inputs.smooths[k].name;
      }
    }
    for (const auto& f : inputs.factors) {
      if (f.levels.size() < 2) continue;
      const Eigen::VectorXd means = fit.factor_effects(f.name).colwise().mean().transpose();
      terms.push_back({{"name", f.name}, {"kind", "factor"}, {"span", means.maxCoeff() - means.minCoeff()}});
    }
    write_with(out / "additive_curves.csv",
               [&](std::ostream& o) { write_partial_effects(o, curves, fit.interval_level); });
    json add{{"terms", terms}, {"warnings", fit.warnings}, {"intercept_mean", fit.intercept().mean()}};
    if (!largest.empty()) add["largest_smooth"] = {{"name", largest}, {"span", largest_span}};
    write_json(out / "additive_summary.json", add);
    files.push_back("additive_curves.csv");
    files.push_back("additive_summary.json");
    report["additive"] = add.contains("largest_smooth") ? add["largest_smooth"] : json(nullptr);
  }

  // Tree summary.
  const TreeInputs ti = tree_inputs(data);
  if (ti.x.cols() > 0) {
    std::optional<UnitGroups> sweep;
    if (data.has_unit()) sweep = UnitGroups::from_codes(data.unit_codes, data.unit_levels);
    const TreeSummary ts = fit_tree_summary(tau, ti.x, ti.names, sweep ? &*sweep : nullptr);
    write_json(out / "tree_summary.json", ts.to_json());
    files.push_back("tree_summary.json");
    report["tree_leaves"] = ts.leaf_ids.size();
  }

  // Linearity diagnostics; the only step that reads the outcome.
  const Eigen::VectorXd mu_hat = draws.mu_natural().colwise().mean().transpose();
  const Eigen::VectorXd tau_hat = tau.colwise().mean().transpose();
  DiagnosticsOptions dopt;
  dopt.cut_height = a.cut_height;
  dopt.span = a.span;
  const DiagnosticsReport diag = run_diagnostics(data.y, mu_hat, data.z, tau_hat, dopt);
  write_json(out / "diagnostics.json", diag.to_json());
  write_with(out / "diagnostics_scatter.csv", [&](std::ostream& o) { diag.write_scatter(o); });
  write_with(out / "diagnostics_lines.csv", [&](std::ostream& o) { diag.write_lines(o); });
  write_with(out / "smoother.csv", [&](std::ostream& o) { diag.write_smoother(o); });
  for (const char* f : {"diagnostics.json", "diagnostics_scatter.csv", "diagnostics_lines.csv", "smoother.csv"}) {
    files.push_back(f);
  }
  report["num_groups"] = diag.clustering.num_groups;
  report["files"] = files;
  write_json(out / "analysis.json", report);
  return report;
}

int cmd_analyze(const AnalyzeArgs& a, std::ostream& out) {
  const json r = analyze_run(a);
  out << "ATE " << r["ate"]["mean"].get<double>() << " (" << r["ate"]["lo95"].get<double>() << ", "
      << r["ate"]["hi95"].get<double>() << "); " << r["num_groups"].get<int>() << " effect groups\n";
  return kOk;
}

// --- predict --------------------------------------------------------------------

struct PredictArgs {
  std::string run, data, out;
};

int cmd_predict(const PredictArgs& a, std::ostream& out) {
  const json manifest = read_manifest(a.run);
  require_file(a.data, "data");
  Schema schema;
  {
    std::istringstream in(manifest.at("schema").at("text").get<std::string>());
    schema = Schema::parse(in);
  }
  LoadOptions lo;
  lo.require_outcome = false;
  lo.require_exposure = false;
  if (schema.unit) lo.unit_levels = manifest.at("unit_levels").get<std::vector<std::string>>();
  const PanelDataset rows = load_panel(a.data, schema, lo);
  const PosteriorDraws draws = read_draws(a.run);
  const DesignPair designs = design_matrices(rows);
  const PredictionDraws p = predict(draws, designs.control.x, designs.moderator.x);
  fs::create_directories(a.out);
  std::vector<std::string> header;
  for (std::size_t i = 0; i < rows.n(); ++i) header.push_back("obs" + std::to_string(i + 1));
  write_matrix_csv(fs::path(a.out) / "mu_pred.csv", p.mu, header);
  write_matrix_csv(fs::path(a.out) / "tau_pred.csv", p.tau, header);
  write_with(fs::path(a.out) / "ate_pred.csv", [&](std::ostream& o) { write_estimand_table(o, {posterior_ate(p.tau)}); });
  out << "predicted " << rows.n() << " rows with " << p.tau.rows() << " draws\n";
  return kOk;
}

// --- simulate -------------------------------------------------------------------

struct SimulateArgs {
  int case_id = 1;
  std::optional<double> b;
  int n = 1000;
  double noise_sd = 0.5;
  std::string out;
  SamplerFlags sampler;
  std::optional<double> cut_height;
  double span = 0.75;
};

int cmd_simulate(const SimulateArgs& a, std::ostream& out) {
  SimulationScenario sc = SimulationScenario::from_case(a.case_id);
  if (a.b) sc.b = *a.b;
  sc.n = a.n;
  sc.noise_sd = a.noise_sd;
  sc.seed = a.sampler.seed;
  SamplerFlags sf = a.sampler;
  sf.seed = splitmix64(a.sampler.seed);
  const SamplerConfig cfg = sampler_config(sf);
  DiagnosticsOptions dopt;
  dopt.cut_height = a.cut_height;
  dopt.span = a.span;
  const ScenarioRun run = run_scenario(sc, cfg, dopt);

  const fs::path dir(a.out);
  fs::create_directories(dir);
  const PanelDataset panel = run.data.to_panel();
  write_panel(panel, dir / "data.csv");
  const Schema schema = panel.schema();
  std::ofstream(dir / "schema.cfg") << schema.to_string();
  json extra = fit_manifest(dir / "data.csv", file_fingerprint(dir / "data.csv"), schema, panel);
  extra["command"] = "simulate";
  extra["scenario"] = sc.to_json();
  json notes = json::object();
  write_refit(panel, cfg, static_cast<int>(run.draws.num_draws()), dir, notes);
  extra["notes"] = notes;
  write_draws(run.draws, dir, extra);

  AnalyzeArgs aa;
  aa.run = dir.string();
  aa.cut_height = a.cut_height;
  aa.span = a.span;
  analyze_run(aa);

  json metrics = run.metrics.to_json();
  metrics["scenario"] = sc.to_json();
  metrics["sampler"] = cfg.to_json();
  metrics["num_groups"] = run.diagnostics.clustering.num_groups;
  write_json(dir / "metrics.json", metrics);
  out << "case " << a.case_id << ": ATE " << run.metrics.ate_mean << ", tau sd " << run.metrics.tau_sd << "\n";
  return kOk;
}

const char* kind_label(ErrorKind k) {
  switch (k) {
    case ErrorKind::Input:
      return "input";
    case ErrorKind::Consistency:
      return "consistency";
    case ErrorKind::Internal:
      break;
  }
  return "internal";
}

std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

// CLI11 reads config files only for the top-level app, so a subcommand's
// --config file is turned into flags here. Flags given explicitly win.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  std::string path;
  std::vector<std::string> kept;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
    } else {
      kept.push_back(args[i]);
    }
  }
  if (path.empty() || kept.empty()) return kept;
  if (!std::filesystem::exists(path)) throw CLI::FileError::Missing(path);
  const std::string sub = kept.front();
  auto given = [&](const std::string& name) {
    for (const auto& a : kept) {
      if (a == "--" + name || a.rfind("--" + name + "=", 0) == 0) return true;
    }
    return false;
  };
  std::vector<std::string> out = kept;
  for (const auto& item : CLI::ConfigTOML().from_file(path)) {
    if (item.name == "++" || item.name == "--") continue;
    if (!item.parents.empty() && !(item.parents.size() == 1 && item.parents[0] == sub)) continue;
    if (given(item.name)) continue;
    for (const auto& v : item.inputs) out.push_back("--" + item.name + "=" + v);
  }
  return out;
}
void add_config_flag(CLI::App* cmd) {
  cmd->add_option("--config", "TOML/INI file with flag values; flags given on the command line win");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Tree-ensemble estimation of heterogeneous effects of a continuous exposure", "ctbcf"};
  app.require_subcommand(1, 1);

  FitArgs fit;
  auto* fit_cmd = app.add_subcommand("fit", "Fit the model and write posterior draws");
  add_config_flag(fit_cmd);
  fit_cmd->add_option("--data", fit.data, "Panel CSV")->required();
  fit_cmd->add_option("--schema", fit.schema, "Column-role file")->required();
  fit_cmd->add_option("--out", fit.out, "Run directory")->required();
  add_sampler_flags(fit_cmd, fit.sampler);

  AnalyzeArgs an;
  auto* an_cmd = app.add_subcommand("analyze", "Estimands, summaries and diagnostics from a run directory");
  add_config_flag(an_cmd);
  an_cmd->add_option("--run", an.run, "Run directory written by fit")->required();
  an_cmd->add_option("--data", an.data, "Panel CSV (defaults to the file used by fit)");
  an_cmd->add_option("--schema", an.schema, "Column-role file (must match the one used by fit)");
  an_cmd->add_option("--out", an.out, "Output directory (defaults to the run directory)");
  an_cmd->add_option("--groups", an.groups, "Unit column or categorical covariate to report group ATEs for");
  an_cmd->add_option("--cut-height", an.cut_height, "Dendrogram cut height (default: SD of the effects)");
  an_cmd->add_option("--span", an.span, "Smoother span")->capture_default_str();

  PredictArgs pr;
  auto* pr_cmd = app.add_subcommand("predict", "Evaluate stored forests on new rows");
  add_config_flag(pr_cmd);
  pr_cmd->add_option("--run", pr.run, "Run directory written by fit --keep-forests")->required();
  pr_cmd->add_option("--data", pr.data, "CSV with covariate columns")->required();
  pr_cmd->add_option("--out", pr.out, "Output directory")->required();

  SimulateArgs si;
  auto* si_cmd = app.add_subcommand("simulate", "Generate synthetic data, fit, analyze and score recovery");
  add_config_flag(si_cmd);
  si_cmd->add_option("--case", si.case_id, "1: quadratic, b=0; 2: quadratic, b=1; 3: linear effects")
      ->check(CLI::IsMember({1, 2, 3}))
      ->capture_default_str();
  si_cmd->add_option("--b", si.b, "Confounding coefficient (overrides the case)");
  si_cmd->add_option("--n", si.n, "Sample size")->capture_default_str();
  si_cmd->add_option("--noise-sd", si.noise_sd, "Noise standard deviation")->capture_default_str();
  si_cmd->add_option("--out", si.out, "Output directory")->required();
  si_cmd->add_option("--cut-height", si.cut_height, "Dendrogram cut height (default: SD of the effects)");
  si_cmd->add_option("--span", si.span, "Smoother span")->capture_default_str();
  add_sampler_flags(si_cmd, si.sampler);

  try {
    const std::vector<std::string> expanded = expand_config(args);
    std::vector<std::string> reversed(expanded.rbegin(), expanded.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error[usage]: " << one_line(e.what()) << "\n";
    return kInput;
  }

  try {
    if (fit_cmd->parsed()) return cmd_fit(fit, out);
    if (an_cmd->parsed()) return cmd_analyze(an, out);
    if (pr_cmd->parsed()) return cmd_predict(pr, out);
    if (si_cmd->parsed()) return cmd_simulate(si, out);
  } catch (const Error& e) {
    err << "error[" << kind_label(e.kind()) << "]: " << one_line(e.what()) << "\n";
    switch (e.kind()) {
      case ErrorKind::Input:
        return kInput;
      case ErrorKind::Consistency:
        return kConsistency;
      case ErrorKind::Internal:
        return kInternal;
    }
  } catch (const std::exception& e) {
    err << "error[internal]: " << one_line(e.what()) << "\n";
    return kInternal;
  }
  return kInternal;
}

}  // namespace ctbcf::cli
