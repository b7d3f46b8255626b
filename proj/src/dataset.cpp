#include "ctbcf/dataset.h"

#include "ctbcf/error.h"

#include <algorithm>
#include <functional>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <unordered_map>

namespace ctbcf {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string tok; in >> tok;) out.push_back(tok);
  return out;
}

// Splits one CSV record. Double-quoted fields may contain commas and "" escapes.
std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(trim(cur));
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  fields.push_back(trim(cur));
  return fields;
}

bool is_missing(const std::string& cell) {
  return cell.empty() || cell == "NA" || cell == "NaN" || cell == "nan" || cell == ".";
}

double parse_real(const std::string& cell, std::size_t row, const std::string& column) {
  double v = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  if (!cell.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || !std::isfinite(v)) {
    throw ParseError("row " + std::to_string(row) + ", column '" + column +
                     "': cannot parse '" + cell + "' as a finite real");
  }
  return v;
}

std::string quote_if_needed(const std::string& s) {
  if (s.find_first_of(",\"") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out += '"';
  return out;
}

}  // namespace

// --- Schema -----------------------------------------------------------------

Schema Schema::parse(std::istream& in) {
  Schema schema;
  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw SchemaError("line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw SchemaError("line " + std::to_string(lineno) + ": empty key or value");
    }
    if (key == "outcome") {
      schema.outcome = value;
      continue;
    }
    if (key == "exposure") {
      schema.exposure = value;
      continue;
    }
    if (key == "unit") {
      schema.unit = value;
      continue;
    }
    if (key == "time") {
      schema.time = value;
      continue;
    }
    if (!seen.insert(key).second) {
      throw SchemaError("covariate '" + key + "' declared twice");
    }
    CovariateSpec spec;
    spec.name = key;
    auto tokens = split_ws(value);
    const std::string& kind = tokens.front();
    if (kind == "numeric") {
      spec.kind = CovariateKind::Numeric;
    } else if (kind.rfind("categorical(", 0) == 0 && kind.back() == ')') {
      spec.kind = CovariateKind::Categorical;
      std::string inner = kind.substr(12, kind.size() - 13);
      std::size_t start = 0;
      while (start <= inner.size()) {
        auto bar = inner.find('|', start);
        if (bar == std::string::npos) bar = inner.size();
        std::string level = trim(std::string_view(inner).substr(start, bar - start));
        if (level.empty()) throw SchemaError("covariate '" + key + "': empty categorical level");
        spec.levels.push_back(level);
        start = bar + 1;
      }
      std::set<std::string> uniq(spec.levels.begin(), spec.levels.end());
      if (uniq.size() != spec.levels.size()) {
        throw SchemaError("covariate '" + key + "': duplicate categorical level");
      }
    } else {
      throw SchemaError("covariate '" + key + "': unknown kind '" + kind + "'");
    }
    for (std::size_t t = 1; t < tokens.size(); ++t) {
      if (tokens[t] == "control") spec.control = true;
      else if (tokens[t] == "moderator") spec.moderator = true;
      else throw SchemaError("covariate '" + key + "': unknown role '" + tokens[t] + "'");
    }
    if (!spec.control && !spec.moderator) {
      throw SchemaError("covariate '" + key + "' has no role (control and/or moderator)");
    }
    schema.covariates.push_back(std::move(spec));
  }
  if (schema.outcome.empty()) throw SchemaError("missing 'outcome' declaration");
  if (schema.exposure.empty()) throw SchemaError("missing 'exposure' declaration");
  return schema;
}

Schema Schema::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open schema file '" + path.string() + "'");
  return parse(in);
}

std::string Schema::to_string() const {
  std::ostringstream out;
  out << "outcome = " << outcome << "\n";
  out << "exposure = " << exposure << "\n";
  if (unit) out << "unit = " << *unit << "\n";
  if (time) out << "time = " << *time << "\n";
  for (const auto& c : covariates) {
    out << c.name << " = ";
    if (c.kind == CovariateKind::Numeric) {
      out << "numeric";
    } else {
      out << "categorical(";
      for (std::size_t l = 0; l < c.levels.size(); ++l) out << (l ? "|" : "") << c.levels[l];
      out << ")";
    }
    if (c.control) out << " control";
    if (c.moderator) out << " moderator";
    out << "\n";
  }
  return out.str();
}

// --- PanelDataset -----------------------------------------------------------

const CovariateColumn& PanelDataset::covariate(const std::string& name) const {
  for (const auto& c : covariates) {
    if (c.spec.name == name) return c;
  }
  throw SchemaError("no covariate named '" + name + "'");
}

void PanelDataset::validate() const {
  const std::size_t rows = n();
  if (rows < 2) throw DegenerateInputError("panel needs at least 2 observations");
  if (static_cast<std::size_t>(z.size()) != rows) throw ShapeError("exposure length differs from outcome");
  if (!y.allFinite() || !z.allFinite()) throw ParseError("non-finite outcome or exposure value");
  for (const auto& c : covariates) {
    if (!c.spec.control && !c.spec.moderator) {
      throw SchemaError("covariate '" + c.spec.name + "' has no role");
    }
    if (c.spec.kind == CovariateKind::Numeric) {
      if (c.numeric.size() != rows) throw ShapeError("covariate '" + c.spec.name + "' length");
      for (double v : c.numeric) {
        if (!std::isfinite(v)) throw ParseError("covariate '" + c.spec.name + "' non-finite");
      }
    } else {
      if (c.spec.levels.empty()) {
        throw SchemaError("categorical covariate '" + c.spec.name + "' has no level list");
      }
      if (c.codes.size() != rows) throw ShapeError("covariate '" + c.spec.name + "' length");
      for (int code : c.codes) {
        if (code < 0 || code >= static_cast<int>(c.spec.levels.size())) {
          throw ShapeError("covariate '" + c.spec.name + "' code out of range");
        }
      }
    }
  }
  if (has_unit()) {
    if (unit_levels.empty()) throw SchemaError("unit column has no levels");
    if (unit_codes.size() != rows) throw ShapeError("unit column length");
    for (int code : unit_codes) {
      if (code < 0 || code >= static_cast<int>(unit_levels.size())) {
        throw ShapeError("unit code out of range");
      }
    }
  }
  if (has_time()) {
    if (time.size() != rows) throw ShapeError("time column length");
    for (double t : time) {
      if (!std::isfinite(t)) throw ParseError("non-finite time value");
    }
  }
}

Schema PanelDataset::schema() const {
  Schema s;
  s.outcome = outcome_name;
  s.exposure = exposure_name;
  if (has_unit()) s.unit = unit_name;
  if (has_time()) s.time = time_name;
  for (const auto& c : covariates) s.covariates.push_back(c.spec);
  return s;
}

bool PanelDataset::operator==(const PanelDataset& o) const {
  // Bitwise comparison of the numeric vectors: round trips must be exact.
  auto same = [](const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    return a.size() == b.size() &&
           std::equal(a.data(), a.data() + a.size(), b.data());
  };
  return outcome_name == o.outcome_name && exposure_name == o.exposure_name && same(y, o.y) &&
         same(z, o.z) && covariates == o.covariates && unit_name == o.unit_name &&
         unit_levels == o.unit_levels && unit_codes == o.unit_codes &&
         time_name == o.time_name && time == o.time;
}

PanelDataset read_panel(std::istream& in, const Schema& schema, const LoadOptions& options,
                        const std::string& source_name) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError(source_name + ": empty file, expected a header row");
  const auto header = split_csv(line);
  std::unordered_map<std::string, std::size_t> col_index;
  for (std::size_t c = 0; c < header.size(); ++c) col_index.emplace(header[c], c);

  auto need = [&](const std::string& name) -> std::size_t {
    auto it = col_index.find(name);
    if (it == col_index.end()) throw SchemaError("column '" + name + "' not found in " + source_name);
    return it->second;
  };

  std::optional<std::size_t> y_col, z_col, unit_col, time_col;
  if (options.require_outcome) y_col = need(schema.outcome);
  if (options.require_exposure) z_col = need(schema.exposure);
  if (schema.unit) unit_col = need(*schema.unit);
  if (schema.time) time_col = need(*schema.time);
  std::vector<std::size_t> cov_cols;
  for (const auto& spec : schema.covariates) cov_cols.push_back(need(spec.name));

  std::vector<double> ys, zs, ts;
  std::vector<std::string> unit_raw;
  std::vector<std::vector<double>> cov_num(schema.covariates.size());
  std::vector<std::vector<int>> cov_codes(schema.covariates.size());

  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ++row;
    const auto cells = split_csv(line);
    if (cells.size() != header.size()) {
      throw ParseError(source_name + ": row " + std::to_string(row) + " has " +
                       std::to_string(cells.size()) + " fields, header has " +
                       std::to_string(header.size()));
    }
    auto cell = [&](std::size_t c, const std::string& name) -> const std::string& {
      if (is_missing(cells[c])) {
        throw ParseError(source_name + ": missing value at row " + std::to_string(row) +
                         ", column '" + name + "' (imputation is not supported)");
      }
      return cells[c];
    };
    if (y_col) ys.push_back(parse_real(cell(*y_col, schema.outcome), row, schema.outcome));
    if (z_col) zs.push_back(parse_real(cell(*z_col, schema.exposure), row, schema.exposure));
    if (unit_col) unit_raw.push_back(cell(*unit_col, *schema.unit));
    if (time_col) ts.push_back(parse_real(cell(*time_col, *schema.time), row, *schema.time));
    for (std::size_t k = 0; k < schema.covariates.size(); ++k) {
      const auto& spec = schema.covariates[k];
      const std::string& v = cell(cov_cols[k], spec.name);
      if (spec.kind == CovariateKind::Numeric) {
        cov_num[k].push_back(parse_real(v, row, spec.name));
      } else {
        auto it = std::find(spec.levels.begin(), spec.levels.end(), v);
        if (it == spec.levels.end()) {
          throw ParseError(source_name + ": row " + std::to_string(row) + ", column '" +
                           spec.name + "': level '" + v + "' not declared in schema");
        }
        cov_codes[k].push_back(static_cast<int>(it - spec.levels.begin()));
      }
    }
  }

  PanelDataset d;
  d.outcome_name = schema.outcome;
  d.exposure_name = schema.exposure;
  if (!y_col) ys.assign(row, 0.0);
  if (!z_col) zs.assign(row, 0.0);
  d.y = Eigen::Map<Eigen::VectorXd>(ys.data(), static_cast<Eigen::Index>(ys.size()));
  d.z = Eigen::Map<Eigen::VectorXd>(zs.data(), static_cast<Eigen::Index>(zs.size()));
  for (std::size_t k = 0; k < schema.covariates.size(); ++k) {
    CovariateColumn col;
    col.spec = schema.covariates[k];
    col.numeric = std::move(cov_num[k]);
    col.codes = std::move(cov_codes[k]);
    d.covariates.push_back(std::move(col));
  }
  if (schema.unit) {
    d.unit_name = *schema.unit;
    if (options.unit_levels) {
      d.unit_levels = *options.unit_levels;
    } else {
      std::set<std::string> levels(unit_raw.begin(), unit_raw.end());
      d.unit_levels.assign(levels.begin(), levels.end());
    }
    for (std::size_t i = 0; i < unit_raw.size(); ++i) {
      auto it = std::lower_bound(d.unit_levels.begin(), d.unit_levels.end(), unit_raw[i]);
      if (it == d.unit_levels.end() || *it != unit_raw[i]) {
        throw ParseError(source_name + ": row " + std::to_string(i + 1) + ": unknown unit '" +
                         unit_raw[i] + "'");
      }
      d.unit_codes.push_back(static_cast<int>(it - d.unit_levels.begin()));
    }
  }
  if (schema.time) {
    d.time_name = *schema.time;
    d.time = std::move(ts);
  }
  d.validate();
  return d;
}

PanelDataset load_panel(const std::filesystem::path& path, const Schema& schema,
                        const LoadOptions& options) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open data file '" + path.string() + "'");
  return read_panel(in, schema, options, path.string());
}

void write_panel(const PanelDataset& data, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write '" + path.string() + "'");
  std::vector<std::string> header{data.outcome_name, data.exposure_name};
  for (const auto& c : data.covariates) header.push_back(c.spec.name);
  if (data.has_unit()) header.push_back(data.unit_name);
  if (data.has_time()) header.push_back(data.time_name);
  for (std::size_t c = 0; c < header.size(); ++c) out << (c ? "," : "") << quote_if_needed(header[c]);
  out << "\n";
  for (std::size_t i = 0; i < data.n(); ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    out << format_double(data.y[ii]) << "," << format_double(data.z[ii]);
    for (const auto& c : data.covariates) {
      out << ",";
      if (c.spec.kind == CovariateKind::Numeric) out << format_double(c.numeric[i]);
      else out << quote_if_needed(c.spec.levels[static_cast<std::size_t>(c.codes[i])]);
    }
    if (data.has_unit()) out << "," << quote_if_needed(data.unit_levels[static_cast<std::size_t>(data.unit_codes[i])]);
    if (data.has_time()) out << "," << format_double(data.time[i]);
    out << "\n";
  }
}

// --- Standardization ----------------------------------------------------------

double sample_mean(const Eigen::Ref<const Eigen::VectorXd>& v) { return v.mean(); }

double sample_sd(const Eigen::Ref<const Eigen::VectorXd>& v) {
  if (v.size() < 2) return 0.0;
  const double m = v.mean();
  return std::sqrt((v.array() - m).square().sum() / static_cast<double>(v.size() - 1));
}

StandardizedPanel standardize(const PanelDataset& data) {
  if (data.n() < 2) throw DegenerateInputError("standardization needs n >= 2");
  StandardizedPanel out{data, {}};
  auto& t = out.transform;
  t.y_center = sample_mean(data.y);
  t.y_scale = sample_sd(data.y);
  t.z_center = sample_mean(data.z);
  t.z_scale = sample_sd(data.z);
  if (!(t.y_scale > 0.0)) throw DegenerateInputError("outcome '" + data.outcome_name + "' has zero variance");
  if (!(t.z_scale > 0.0)) throw DegenerateInputError("exposure '" + data.exposure_name + "' has zero variance");
  out.data.y = (data.y.array() - t.y_center) / t.y_scale;
  out.data.z = (data.z.array() - t.z_center) / t.z_scale;
  for (const auto& c : data.covariates) {
    if (c.spec.kind != CovariateKind::Numeric) continue;
    Eigen::Map<const Eigen::VectorXd> v(c.numeric.data(), static_cast<Eigen::Index>(c.numeric.size()));
    const double sd = sample_sd(v);
    t.covariates[c.spec.name] = {sample_mean(v), sd > 0.0 ? sd : 1.0};
  }
  return out;
}

// --- Designs ----------------------------------------------------------------

int Design::find_source(const std::string& source) const {
  for (std::size_t c = 0; c < columns.size(); ++c) {
    if (columns[c].source == source) return static_cast<int>(c);
  }
  return -1;
}

namespace {

Design build_design(const PanelDataset& data, bool want_control) {
  std::vector<DesignColumn> cols;
  std::vector<std::function<double(std::size_t)>> getters;
  for (const auto& c : data.covariates) {
    if (want_control ? !c.spec.control : !c.spec.moderator) continue;
    if (c.spec.kind == CovariateKind::Numeric) {
      cols.push_back({c.spec.name, c.spec.name, false});
      getters.emplace_back([&c](std::size_t i) { return c.numeric[i]; });
    } else {
      for (std::size_t l = 0; l < c.spec.levels.size(); ++l) {
        cols.push_back({c.spec.name + "=" + c.spec.levels[l], c.spec.name, true});
        const int code = static_cast<int>(l);
        getters.emplace_back([&c, code](std::size_t i) { return c.codes[i] == code ? 1.0 : 0.0; });
      }
    }
  }
  if (data.has_unit()) {
    for (std::size_t l = 0; l < data.unit_levels.size(); ++l) {
      cols.push_back({data.unit_name + "=" + data.unit_levels[l], data.unit_name, true});
      const int code = static_cast<int>(l);
      getters.emplace_back([&data, code](std::size_t i) { return data.unit_codes[i] == code ? 1.0 : 0.0; });
    }
  }
  if (data.has_time()) {
    cols.push_back({data.time_name, data.time_name, false});
    getters.emplace_back([&data](std::size_t i) { return data.time[i]; });
  }
  Design d;
  d.columns = std::move(cols);
  d.x.resize(static_cast<Eigen::Index>(data.n()), static_cast<Eigen::Index>(getters.size()));
  for (std::size_t j = 0; j < getters.size(); ++j) {
    for (std::size_t i = 0; i < data.n(); ++i) {
      d.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = getters[j](i);
    }
  }
  return d;
}

}  // namespace

DesignPair design_matrices(const PanelDataset& data) {
  const bool any_control = std::any_of(data.covariates.begin(), data.covariates.end(),
                                       [](const CovariateColumn& c) { return c.spec.control; });
  if (!any_control) throw ConfigError("no covariate is declared with the control role");
  return {build_design(data, true), build_design(data, false)};
}

// --- misc -------------------------------------------------------------------

std::string fingerprint(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << h;
  return out.str();
}

std::string file_fingerprint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return fingerprint(buf.str());
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace ctbcf
