#include "ctbcf/draws_io.h"

#include "ctbcf/error.h"

#include <charconv>
#include <fstream>
#include <sstream>

namespace ctbcf {

namespace fs = std::filesystem;

nlohmann::json standardization_to_json(const Standardization& s) {
  nlohmann::json j;
  j["y_center"] = s.y_center;
  j["y_scale"] = s.y_scale;
  j["z_center"] = s.z_center;
  j["z_scale"] = s.z_scale;
  j["covariates"] = nlohmann::json::object();
  for (const auto& [name, cs] : s.covariates) j["covariates"][name] = {cs.first, cs.second};
  return j;
}

Standardization standardization_from_json(const nlohmann::json& j) {
  Standardization s;
  s.y_center = j.at("y_center").get<double>();
  s.y_scale = j.at("y_scale").get<double>();
  s.z_center = j.at("z_center").get<double>();
  s.z_scale = j.at("z_scale").get<double>();
  for (const auto& [name, cs] : j.at("covariates").items()) {
    s.covariates[name] = {cs.at(0).get<double>(), cs.at(1).get<double>()};
  }
  return s;
}

void write_matrix_csv(const fs::path& path, const DrawMatrix& m,
                      const std::vector<std::string>& header) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write '" + path.string() + "'");
  for (std::size_t c = 0; c < header.size(); ++c) out << (c ? "," : "") << header[c];
  out << "\n";
  std::string line;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    line.clear();
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (c) line.push_back(',');
      line += format_double(m(r, c));
    }
    line.push_back('\n');
    out << line;
  }
}

DrawMatrix read_matrix_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": missing header");
  const auto cols = static_cast<Eigen::Index>(std::count(line.begin(), line.end(), ',') + 1);
  std::vector<double> values;
  Eigen::Index rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const char* p = line.data();
    const char* end = line.data() + line.size();
    Eigen::Index c = 0;
    while (p < end) {
      double v = 0.0;
      auto [next, ec] = std::from_chars(p, end, v);
      if (ec != std::errc()) {
        throw ParseError(path.string() + ": bad number on data row " + std::to_string(rows + 1));
      }
      values.push_back(v);
      ++c;
      p = next;
      if (p < end && *p == ',') ++p;
    }
    if (c != cols) throw ParseError(path.string() + ": ragged row " + std::to_string(rows + 1));
    ++rows;
  }
  DrawMatrix m(rows, cols);
  std::copy(values.begin(), values.end(), m.data());
  return m;
}

namespace {

std::vector<std::string> unit_header(Eigen::Index n) {
  std::vector<std::string> h;
  h.reserve(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) h.push_back("obs" + std::to_string(i + 1));
  return h;
}

DrawMatrix as_column(const Eigen::VectorXd& v) {
  DrawMatrix m(v.size(), 1);
  m.col(0) = v;
  return m;
}

}  // namespace

void write_draws(const PosteriorDraws& draws, const fs::path& dir, const nlohmann::json& manifest_extra) {
  fs::create_directories(dir);
  const auto header = unit_header(draws.num_units());
  write_matrix_csv(dir / "mu.csv", draws.mu, header);
  write_matrix_csv(dir / "tau.csv", draws.tau, header);
  write_matrix_csv(dir / "sigma.csv", as_column(draws.sigma), {"sigma"});
  write_matrix_csv(dir / "tau_scale.csv", as_column(draws.tau_scale), {"tau_scale"});
  nlohmann::json files = {"mu.csv", "tau.csv", "sigma.csv", "tau_scale.csv"};
  if (!draws.forests.empty()) {
    nlohmann::json snaps;
    snaps["format"] = "ctbcf-snapshots";
    snaps["version"] = 1;
    snaps["draws"] = nlohmann::json::array();
    for (const auto& s : draws.forests) {
      snaps["draws"].push_back({{"tau_scale", s.tau_scale},
                                {"control", s.control.to_json()},
                                {"moderator", s.moderator.to_json()}});
    }
    std::ofstream(dir / "forests.json") << snaps.dump() << "\n";
    files.push_back("forests.json");
  }
  nlohmann::json manifest = manifest_extra;
  manifest["format"] = "ctbcf-run";
  manifest["version"] = 1;
  manifest["units"] = "model";
  manifest["num_draws"] = draws.num_draws();
  manifest["num_units"] = draws.num_units();
  manifest["num_chains"] = draws.num_chains;
  manifest["homogeneous"] = draws.homogeneous;
  manifest["standardization"] = standardization_to_json(draws.transform);
  manifest["provenance"] = draws.provenance;
  manifest["files"] = files;
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << "\n";
}

nlohmann::json read_manifest(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw ParseError("no manifest.json in '" + dir.string() + "'");
  nlohmann::json m;
  try {
    in >> m;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("manifest.json: " + std::string(e.what()));
  }
  if (m.value("format", std::string{}) != "ctbcf-run") throw ParseError("manifest.json is not a run manifest");
  return m;
}

PosteriorDraws read_draws(const fs::path& dir) {
  const auto manifest = read_manifest(dir);
  PosteriorDraws d;
  d.mu = read_matrix_csv(dir / "mu.csv");
  d.tau = read_matrix_csv(dir / "tau.csv");
  d.sigma = read_matrix_csv(dir / "sigma.csv").col(0);
  d.tau_scale = read_matrix_csv(dir / "tau_scale.csv").col(0);
  d.num_chains = manifest.at("num_chains").get<int>();
  d.homogeneous = manifest.at("homogeneous").get<bool>();
  d.transform = standardization_from_json(manifest.at("standardization"));
  d.provenance = manifest.at("provenance");
  if (d.mu.rows() != d.tau.rows() || d.mu.cols() != d.tau.cols() || d.sigma.size() != d.mu.rows() ||
      d.tau_scale.size() != d.mu.rows() || d.mu.rows() != manifest.at("num_draws").get<Eigen::Index>()) {
    throw ConsistencyError("draw files in '" + dir.string() + "' disagree on their dimensions");
  }
  if (fs::exists(dir / "forests.json")) {
    std::ifstream in(dir / "forests.json");
    nlohmann::json snaps;
    in >> snaps;
    for (const auto& s : snaps.at("draws")) {
      d.forests.push_back({Forest::from_json(s.at("control")), Forest::from_json(s.at("moderator")),
                           s.at("tau_scale").get<double>()});
    }
  }
  return d;
}

}  // namespace ctbcf
