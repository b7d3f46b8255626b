#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace ctbcf {

enum class CovariateKind { Numeric, Categorical };

/// A covariate declaration: its name, how to parse it, and whether it feeds
/// the control function, the moderating function, or both.
struct CovariateSpec {
  std::string name;
  CovariateKind kind = CovariateKind::Numeric;
  bool control = false;
  bool moderator = false;
  std::vector<std::string> levels;  // categorical only, in declaration order

  bool operator==(const CovariateSpec&) const = default;
};

/// Column-role declarations for a panel CSV.
///
/// Sidecar format, one `key = value` per line, `#` starts a comment:
///
///     outcome  = murder
///     exposure = effabt
///     unit     = state
///     time     = year
///     afdc15   = numeric control moderator
///     region   = categorical(ne|south|west) control
///
/// `unit` and `time` are optional.
struct Schema {
  std::string outcome;
  std::string exposure;
  std::optional<std::string> unit;
  std::optional<std::string> time;
  std::vector<CovariateSpec> covariates;

  static Schema parse(std::istream& in);
  static Schema load(const std::filesystem::path& path);
  std::string to_string() const;

  bool operator==(const Schema&) const = default;
};

struct CovariateColumn {
  CovariateSpec spec;
  std::vector<double> numeric;  // Numeric
  std::vector<int> codes;       // Categorical, index into spec.levels

  bool operator==(const CovariateColumn&) const = default;
};

/// Complete, validated panel. Immutable once built.
struct PanelDataset {
  std::string outcome_name;
  std::string exposure_name;
  Eigen::VectorXd y;
  Eigen::VectorXd z;
  std::vector<CovariateColumn> covariates;
  // Units are coded against `unit_levels`, which is sorted, so code 0 is the
  // alphabetically first unit.
  std::string unit_name;
  std::vector<std::string> unit_levels;
  std::vector<int> unit_codes;
  std::string time_name;
  std::vector<double> time;  // empty when the panel has no time column

  std::size_t n() const { return static_cast<std::size_t>(y.size()); }
  bool has_unit() const { return !unit_name.empty(); }
  bool has_time() const { return !time_name.empty(); }
  const CovariateColumn& covariate(const std::string& name) const;

  /// Throws if any column length, code, or value is out of contract.
  void validate() const;
  Schema schema() const;

  bool operator==(const PanelDataset& other) const;
};

struct LoadOptions {
  bool require_outcome = true;
  bool require_exposure = true;
  // When set, unit values are coded against this list instead of the levels
  // found in the file (prediction on new rows).
  std::optional<std::vector<std::string>> unit_levels;
};

PanelDataset load_panel(const std::filesystem::path& path, const Schema& schema,
                        const LoadOptions& options = {});
PanelDataset read_panel(std::istream& in, const Schema& schema, const LoadOptions& options = {},
                        const std::string& source_name = "<stream>");
void write_panel(const PanelDataset& data, const std::filesystem::path& path);

/// Affine maps between model units and natural units.
struct Standardization {
  double y_center = 0.0, y_scale = 1.0;
  double z_center = 0.0, z_scale = 1.0;
  std::map<std::string, std::pair<double, double>> covariates;  // name -> (center, scale)

  double y_to_model(double v) const { return (v - y_center) / y_scale; }
  double y_to_natural(double v) const { return v * y_scale + y_center; }
  double z_to_model(double v) const { return (v - z_center) / z_scale; }
  double z_to_natural(double v) const { return v * z_scale + z_center; }
  /// Multiplier taking a model-unit slope to natural units.
  double tau_factor() const { return y_scale / z_scale; }
};

struct StandardizedPanel {
  PanelDataset data;
  Standardization transform;
};

/// Centers and scales y and z to sample mean 0 and sample SD 1. Covariates are
/// left untouched; their center/scale is only recorded.
StandardizedPanel standardize(const PanelDataset& data);

struct DesignColumn {
  std::string name;
  std::string source;  // covariate name, unit name or time name
  bool indicator = false;
};

struct Design {
  Eigen::MatrixXd x;
  std::vector<DesignColumn> columns;

  Eigen::Index rows() const { return x.rows(); }
  Eigen::Index cols() const { return x.cols(); }
  /// Index of the first column whose source is `source`, or -1.
  int find_source(const std::string& source) const;
};

struct DesignPair {
  Design control;
  Design moderator;
};

/// Control and moderator designs: role-tagged covariates (categoricals
/// one-hot over all levels), then one indicator per unit, then time as a
/// numeric scalar.
DesignPair design_matrices(const PanelDataset& data);

/// Sample mean / sample SD (n - 1 denominator).
double sample_mean(const Eigen::Ref<const Eigen::VectorXd>& v);
double sample_sd(const Eigen::Ref<const Eigen::VectorXd>& v);

/// FNV-1a over raw bytes, rendered as 16 hex digits.
std::string fingerprint(std::string_view bytes);
std::string file_fingerprint(const std::filesystem::path& path);

/// Shortest round-trip decimal form of a double.
std::string format_double(double v);

}  // namespace ctbcf
