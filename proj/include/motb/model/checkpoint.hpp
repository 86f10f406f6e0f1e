#pragma once

// Checkpoint file layout (all integers little-endian):
//   8 bytes   magic "SCONECKP"
//   4 bytes   version (1)
//   4 bytes   JSON header length
//   N bytes   UTF-8 JSON header: model config + parameter manifest
//             [{name, group, shape, offset, count}], offsets in bytes from
//             the start of the payload
//   payload   float32 values in manifest order

#include <cstdint>
#include <filesystem>
#include <vector>

#include "motb/model/weights.hpp"

namespace motb::model {

inline constexpr char kCheckpointMagic[8] = {'S', 'C', 'O', 'N', 'E', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize_checkpoint(const Weights<float>& w);
Weights<float> deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const Weights<float>& w, const std::filesystem::path& path);
Weights<float> load_checkpoint(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

}  // namespace motb::model
