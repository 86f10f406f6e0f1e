#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>

#include "json.hpp"
#include "motb/errors.hpp"
#include "motb/model/checkpoint.hpp"

namespace {

using namespace motb;
using Kind = CheckpointError::Kind;

model::Weights<float> small_weights() {
  model::ModelConfig cfg;
  cfg.n_layers = 4;
  cfg.mask_source_layer = 1;
  cfg.masked_layer_lo = 2;
  cfg.masked_layer_hi = 3;
  return model::Weights<float>::init(cfg, 12);
}

Kind kind_of(const std::vector<std::uint8_t>& bytes) {
  try {
    model::deserialize_checkpoint(bytes);
  } catch (const CheckpointError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no CheckpointError";
  return Kind::Io;
}

std::uint32_t header_len(const std::vector<std::uint8_t>& b) {
  std::uint32_t n = 0;
  for (int i = 0; i < 4; ++i) n |= static_cast<std::uint32_t>(b[12 + i]) << (8 * i);
  return n;
}

TEST(Checkpoint, RoundTripIsExact) {
  const auto w = small_weights();
  const auto bytes = model::serialize_checkpoint(w);
  EXPECT_EQ(std::memcmp(bytes.data(), "SCONECKP", 8), 0);
  EXPECT_EQ(bytes[8], 1);
  const auto back = model::deserialize_checkpoint(bytes);
  EXPECT_EQ(back, w);
  EXPECT_EQ(model::serialize_checkpoint(back), bytes);
}

TEST(Checkpoint, HeaderManifest) {
  const auto w = small_weights();
  const auto bytes = model::serialize_checkpoint(w);
  const auto n = header_len(bytes);
  const auto header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + n);
  const model::WeightLayout layout(w.config);
  ASSERT_EQ(header.at("params").size(), layout.size());
  std::size_t offset = 0;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& e = header["params"][i];
    EXPECT_EQ(e.at("name"), layout.specs()[i].name);
    EXPECT_EQ(e.at("offset").get<std::size_t>(), offset);
    offset += 4 * e.at("count").get<std::size_t>();
  }
  EXPECT_EQ(bytes.size(), 16 + n + offset);
}

TEST(Checkpoint, FileRoundTrip) {
  const auto w = small_weights();
  const auto path = std::filesystem::temp_directory_path() / "motb_unit.ckpt";
  model::save_checkpoint(w, path);
  EXPECT_EQ(model::read_file_bytes(path), model::serialize_checkpoint(w));
  EXPECT_EQ(model::load_checkpoint(path), w);
  std::filesystem::remove(path);
}

TEST(Checkpoint, ErrorKinds) {
  const auto good = model::serialize_checkpoint(small_weights());

  auto bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_EQ(kind_of(bad_magic), Kind::Format);

  auto bad_version = good;
  bad_version[8] = 2;
  EXPECT_EQ(kind_of(bad_version), Kind::Version);

  auto truncated = good;
  truncated.pop_back();
  EXPECT_EQ(kind_of(truncated), Kind::LengthMismatch);

  auto longer = good;
  longer.push_back(0);
  EXPECT_EQ(kind_of(longer), Kind::LengthMismatch);

  EXPECT_EQ(kind_of({good.begin(), good.begin() + 12}), Kind::LengthMismatch);

  auto corrupt = good;
  corrupt[16] = '!';
  EXPECT_EQ(kind_of(corrupt), Kind::Format);

  try {
    model::load_checkpoint("/nonexistent/dir/x.ckpt");
    ADD_FAILURE();
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.kind(), Kind::Io);
  }
}

}  // namespace
