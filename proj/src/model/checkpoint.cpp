#include "motb/model/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "json.hpp"
#include "motb/errors.hpp"

namespace motb::model {

namespace {

using Kind = CheckpointError::Kind;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_f32(std::vector<std::uint8_t>& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

float get_f32(const std::uint8_t* p) { return std::bit_cast<float>(get_u32(p)); }

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Weights<float>& w) {
  const WeightLayout layout(w.config);
  if (w.tensors.size() != layout.size()) throw CheckpointError(Kind::Format, "weights do not match layout");
  nlohmann::json manifest = nlohmann::json::array();
  std::size_t offset = 0;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& spec = layout.specs()[i];
    if (w.tensors[i].shape() != spec.shape) {
      throw CheckpointError(Kind::Format, "parameter " + spec.name + " has shape " +
                                              shape_string(w.tensors[i].shape()));
    }
    manifest.push_back({{"name", spec.name},
                        {"group", std::string(group_name(spec.group))},
                        {"shape", spec.shape},
                        {"offset", offset},
                        {"count", w.tensors[i].size()}});
    offset += w.tensors[i].size() * sizeof(float);
  }
  const nlohmann::json header = {{"config", to_json(w.config)}, {"dtype", "f32le"}, {"params", manifest}};
  const std::string text = header.dump();

  std::vector<std::uint8_t> out;
  out.reserve(16 + text.size() + offset);
  out.insert(out.end(), std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& t : w.tensors)
    for (float v : t.storage()) put_f32(out, v);
  return out;
}

Weights<float> deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
    throw CheckpointError(Kind::Format, "bad checkpoint magic");
  }
  if (bytes.size() < 16) throw CheckpointError(Kind::LengthMismatch, "checkpoint truncated in preamble");
  const std::uint32_t version = get_u32(bytes.data() + 8);
  if (version != kCheckpointVersion) {
    throw CheckpointError(Kind::Version, "checkpoint version " + std::to_string(version) + " unsupported");
  }
  const std::size_t header_len = get_u32(bytes.data() + 12);
  if (16 + header_len > bytes.size()) throw CheckpointError(Kind::LengthMismatch, "checkpoint truncated in header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(Kind::Format, std::string("corrupt checkpoint header: ") + e.what());
  }

  Weights<float> w;
  try {
    w.config = model_config_from_json(header.at("config"));
  } catch (const std::exception& e) {
    throw CheckpointError(Kind::Format, std::string("checkpoint config: ") + e.what());
  }
  const WeightLayout layout(w.config);
  const auto& params = header.at("params");
  if (!params.is_array() || params.size() != layout.size()) {
    throw CheckpointError(Kind::Format, "checkpoint manifest does not match the model layout");
  }
  const std::size_t payload = 16 + header_len;
  std::size_t expected_end = payload;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& spec = layout.specs()[i];
    const auto& p = params[i];
    if (p.at("name").get<std::string>() != spec.name ||
        p.at("shape").get<std::vector<std::size_t>>() != spec.shape) {
      throw CheckpointError(Kind::Format, "manifest entry " + std::to_string(i) + " does not match " + spec.name);
    }
    const std::size_t count = p.at("count").get<std::size_t>();
    const std::size_t begin = payload + p.at("offset").get<std::size_t>();
    expected_end = std::max(expected_end, begin + count * sizeof(float));
  }
  if (expected_end != bytes.size()) {
    throw CheckpointError(Kind::LengthMismatch, "checkpoint payload is " + std::to_string(bytes.size() - payload) +
                                                    " bytes, manifest needs " + std::to_string(expected_end - payload));
  }
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& spec = layout.specs()[i];
    const std::size_t count = params[i].at("count").get<std::size_t>();
    const std::size_t begin = payload + params[i].at("offset").get<std::size_t>();
    std::vector<float> data(count);
    for (std::size_t k = 0; k < count; ++k) data[k] = get_f32(bytes.data() + begin + 4 * k);
    w.tensors.emplace_back(spec.shape, std::move(data));
  }
  return w;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(Kind::Io, "cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void save_checkpoint(const Weights<float>& w, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(w);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(Kind::Io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(Kind::Io, "short write to " + path.string());
}

Weights<float> load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(read_file_bytes(path));
}

}  // namespace motb::model
