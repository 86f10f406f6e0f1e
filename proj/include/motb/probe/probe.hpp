#pragma once

// Layer-wise relevance analysis: cosine relevance of each expert's visual
// states against the instruction states, per layer, plus top-fraction masks
// and PGM renderings of both.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "motb/model/model.hpp"
#include "motb/model/weights.hpp"
#include "motb/synthworld/world.hpp"

namespace motb::probe {

using model::Expert;

struct SimilarityMap {
  int layer = 0;
  Expert expert = Expert::Understanding;
  int image = 0;  // reference image the tokens came from
  int rows = 0;
  int cols = 0;
  std::vector<double> scores;  // row-major, rows * cols
};

// Understanding expert: VisUnd states; generation expert: VisGen states.
// Relevance is computed over all of the expert's visual tokens and split into
// one map per reference image, so the source-layer understanding maps equal
// the semantic-mask relevance exactly.
std::vector<SimilarityMap> layer_similarity(const model::LayerActivations<float>& acts, int layer, Expert expert,
                                            int rows, int cols, const model::ModelConfig& cfg);

// Exactly ceil(fraction * N) cells, highest scores first, ties to the lower
// row-major index.
std::vector<bool> top_fraction_mask(const SimilarityMap& map, double fraction = 0.5);

// Per-image min-max to [0, 255], rounding half up; a constant map is all 0.
std::vector<std::uint8_t> map_to_bytes(const SimilarityMap& map);
std::vector<std::uint8_t> grid_to_bytes(const std::vector<bool>& grid);

void write_pgm(const std::filesystem::path& path, int rows, int cols, const std::vector<std::uint8_t>& pixels);
void emit_map_image(const SimilarityMap& map, const std::filesystem::path& path);
void emit_grid_image(const std::vector<bool>& grid, int rows, int cols, const std::filesystem::path& path);

// n_layers split into 4 contiguous groups of near-equal size; entries are
// [first, last] inclusive and groups may be empty for n_layers < 4.
std::vector<std::pair<int, int>> layer_groups(int n_layers);

// Context-only forward (no Target stream) for one sample.
model::LayerActivations<float> capture(const world::Sample& sample, const model::Weights<float>& w,
                                       const world::WorldConfig& world_cfg);

struct Separation {
  std::uint64_t sample_id = 0;
  double target_mean = 0.0;
  double distractor_mean = 0.0;
  bool separated = false;  // target_mean > distractor_mean
};

// Understanding-expert relevance at the source layer, target cells against
// distractor cells. Samples without distractors are not separable and
// raise PreconditionError.
Separation separation(const world::Sample& sample, const model::LayerActivations<float>& acts,
                      const model::ModelConfig& cfg, const world::WorldConfig& world_cfg);

struct ProbeOptions {
  double fraction = 0.5;
  // PGMs are written for the first image_samples samples only.
  std::size_t image_samples = 4;
};

struct ProbeReport {
  nlohmann::json index = nlohmann::json::array();  // one entry per emitted map
  nlohmann::json group_summary;                    // mean relevance per group per expert
  std::vector<Separation> separations;
  double separated_fraction = 0.0;
};

// Writes maps/ and masks/ PGMs plus index.json and summary.json under out_dir.
ProbeReport run_probe(const std::vector<world::Sample>& samples, const model::Weights<float>& w,
                      const world::WorldConfig& world_cfg, const std::filesystem::path& out_dir,
                      const ProbeOptions& opts = {});

}  // namespace motb::probe
