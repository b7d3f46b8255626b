#pragma once

#include "ctbcf/dataset.h"

#include <filesystem>
#include <random>
#include <sstream>
#include <string>

#include <unistd.h>

namespace ctbcf::fixtures {

inline PanelDataset panel_from_text(const std::string& schema_text, const std::string& csv) {
  std::istringstream s(schema_text);
  std::istringstream c(csv);
  return read_panel(c, Schema::parse(s), {}, "inline.csv");
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("ctbcf_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

/// Balanced panel: units u0..u{U-1} over T years with one numeric moderator
/// `a` and a categorical control `r`.
inline PanelDataset small_panel(int units, int years, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> nd;
  std::ostringstream csv;
  csv << "y,z,unit,year,a,r\n";
  const char* regions[] = {"n", "s", "w"};
  for (int u = 0; u < units; ++u) {
    const double a_unit = nd(gen);
    for (int t = 0; t < years; ++t) {
      const double a = a_unit + 0.1 * t;
      const double z = nd(gen);
      const double y = 0.5 * a + 0.2 * t + (0.4 + 0.3 * a) * z + 0.3 * nd(gen);
      csv << y << "," << z << ",u" << u << "," << 2000 + t << "," << a << "," << regions[(u + t) % 3] << "\n";
    }
  }
  return panel_from_text(
      "outcome = y\nexposure = z\nunit = unit\ntime = year\n"
      "a = numeric control moderator\nr = categorical(n|s|w) control\n",
      csv.str());
}

}  // namespace ctbcf::fixtures
