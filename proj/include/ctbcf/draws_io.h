#pragma once

#include "ctbcf/sampler.h"

#include <filesystem>
#include <json.hpp>
#include <string>
#include <vector>

namespace ctbcf {

nlohmann::json standardization_to_json(const Standardization& s);
Standardization standardization_from_json(const nlohmann::json& j);

/// CSV matrix with a header row; values in shortest round-trip form, so a
/// write/read cycle is bit-exact.
void write_matrix_csv(const std::filesystem::path& path, const DrawMatrix& m,
                      const std::vector<std::string>& header);
DrawMatrix read_matrix_csv(const std::filesystem::path& path);

/// Writes mu.csv, tau.csv, sigma.csv, tau_scale.csv, forests.json (when
/// snapshots exist) and manifest.json into `dir`. Draw matrices are in model
/// (standardized) units; the manifest carries the standardization.
void write_draws(const PosteriorDraws& draws, const std::filesystem::path& dir,
                 const nlohmann::json& manifest_extra = nlohmann::json::object());
PosteriorDraws read_draws(const std::filesystem::path& dir);
nlohmann::json read_manifest(const std::filesystem::path& dir);

}  // namespace ctbcf
