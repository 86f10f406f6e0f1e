#pragma once

#include <filesystem>
#include <vector>

#include "json.hpp"
#include "motb/synthworld/world.hpp"

namespace motb::world {

inline constexpr int kDatasetSchemaVersion = 1;

nlohmann::json to_json(const Scene& scene);
Scene scene_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Sample& sample);
Sample sample_from_json(const nlohmann::json& j);

// Newline-delimited JSON, one Sample per line, each tagged with
// schema_version.
void write_dataset(const std::filesystem::path& path, const std::vector<Sample>& samples);
std::vector<Sample> read_dataset(const std::filesystem::path& path);

}  // namespace motb::world
