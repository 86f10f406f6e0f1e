#include "motb/probe/probe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <optional>

#include "motb/bridge/bridge.hpp"
#include "motb/errors.hpp"
#include "motb/synthworld/codec.hpp"

namespace motb::probe {

namespace {

std::string_view expert_tag(Expert e) { return e == Expert::Understanding ? "und" : "gen"; }

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

std::vector<SimilarityMap> layer_similarity(const model::LayerActivations<float>& acts, int layer, Expert expert,
                                            int rows, int cols, const model::ModelConfig& cfg) {
  if (layer < 0 || layer >= cfg.n_layers) {
    throw PreconditionError("probe layer " + std::to_string(layer) + " outside [0, " + std::to_string(cfg.n_layers) + ")");
  }
  const model::Modality modality = expert == Expert::Understanding ? model::Modality::VisUnd : model::Modality::VisGen;
  const Tensor<float> vis = model::gather_states(acts, layer, modality, cfg);
  const Tensor<float> text = model::gather_states(acts, layer, model::Modality::Text, cfg);
  if (vis.rows() == 0) return {};
  const std::vector<double> rel = bridge::relevance_from_states(vis, text);

  const std::size_t cells = static_cast<std::size_t>(rows * cols);
  std::vector<SimilarityMap> out;
  std::size_t at = 0;
  for (const auto& s : acts.streams) {
    if (s.modality != modality) continue;
    if (s.length != cells) {
      throw PreconditionError("visual stream of " + std::to_string(s.length) + " tokens is not a " +
                              std::to_string(rows) + "x" + std::to_string(cols) + " grid");
    }
    SimilarityMap m;
    m.layer = layer;
    m.expert = expert;
    m.image = s.source_image_index.value_or(static_cast<int>(out.size()));
    m.rows = rows;
    m.cols = cols;
    m.scores.assign(rel.begin() + static_cast<std::ptrdiff_t>(at), rel.begin() + static_cast<std::ptrdiff_t>(at + cells));
    at += cells;
    out.push_back(std::move(m));
  }
  return out;
}

std::vector<bool> top_fraction_mask(const SimilarityMap& map, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw PreconditionError("fraction must lie in (0, 1]");
  const std::size_t n = map.scores.size();
  const auto keep = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n)));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return map.scores[a] > map.scores[b]; });
  std::vector<bool> out(n, false);
  for (std::size_t i = 0; i < std::min(keep, n); ++i) out[order[i]] = true;
  return out;
}

std::vector<std::uint8_t> map_to_bytes(const SimilarityMap& map) {
  std::vector<std::uint8_t> out(map.scores.size(), 0);
  if (map.scores.empty()) return out;
  const auto [lo, hi] = std::minmax_element(map.scores.begin(), map.scores.end());
  const double range = *hi - *lo;
  if (!(range > 0.0)) return out;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = std::floor((map.scores[i] - *lo) / range * 255.0 + 0.5);
    out[i] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
  }
  return out;
}

std::vector<std::uint8_t> grid_to_bytes(const std::vector<bool>& grid) {
  std::vector<std::uint8_t> out(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) out[i] = grid[i] ? 255 : 0;
  return out;
}

void write_pgm(const std::filesystem::path& path, int rows, int cols, const std::vector<std::uint8_t>& pixels) {
  if (rows <= 0 || cols <= 0 || pixels.size() != static_cast<std::size_t>(rows * cols)) {
    throw DimensionError("pgm pixel count does not match " + std::to_string(rows) + "x" + std::to_string(cols));
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << "P5\n" << cols << ' ' << rows << "\n255\n";
  f.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!f) throw IoError("write failed for " + path.string());
}

void emit_map_image(const SimilarityMap& map, const std::filesystem::path& path) {
  write_pgm(path, map.rows, map.cols, map_to_bytes(map));
}

void emit_grid_image(const std::vector<bool>& grid, int rows, int cols, const std::filesystem::path& path) {
  write_pgm(path, rows, cols, grid_to_bytes(grid));
}

std::vector<std::pair<int, int>> layer_groups(int n_layers) {
  std::vector<std::pair<int, int>> out;
  for (int g = 0; g < 4; ++g) {
    const int first = g * n_layers / 4;
    const int end = (g + 1) * n_layers / 4;
    out.emplace_back(first, end - 1);
  }
  return out;
}

model::LayerActivations<float> capture(const world::Sample& sample, const model::Weights<float>& w,
                                       const world::WorldConfig& world_cfg) {
  const world::Codec codec(world_cfg);
  std::vector<model::TokenStream<float>> streams;
  streams.push_back(model::embed_text(sample.instruction, w));
  for (std::size_t k = 0; k < sample.references.size(); ++k) {
    streams.push_back(model::embed_scene_und(sample.references[k], static_cast<int>(k), w, world_cfg));
  }
  for (std::size_t k = 0; k < sample.references.size(); ++k) {
    streams.push_back(model::embed_scene_gen(codec.render<float>(sample.references[k]), static_cast<int>(k), w));
  }
  return model::forward(streams, w).activations;
}

Separation separation(const world::Sample& sample, const model::LayerActivations<float>& acts,
                      const model::ModelConfig& cfg, const world::WorldConfig& world_cfg) {
  if (sample.distractor_subjects.empty()) {
    throw PreconditionError("sample " + std::to_string(sample.id) + " has no distractors");
  }
  const auto maps =
      layer_similarity(acts, cfg.mask_source_layer, Expert::Understanding, world_cfg.rows, world_cfg.cols, cfg);
  const auto targets = world::target_cell_flags(sample);
  std::vector<double> tgt, dis;
  for (const auto& m : maps) {
    const auto img = static_cast<std::size_t>(m.image);
    for (std::size_t c = 0; c < m.scores.size(); ++c) {
      if (targets[img][c]) tgt.push_back(m.scores[c]);
    }
  }
  for (const auto& ref : sample.distractor_subjects) {
    const auto& scene = sample.references[static_cast<std::size_t>(ref.image)];
    const auto& map = maps[static_cast<std::size_t>(ref.image)];
    for (const auto& cell : scene.subjects[static_cast<std::size_t>(ref.subject)].footprint) {
      dis.push_back(map.scores[static_cast<std::size_t>(cell.row * scene.cols + cell.col)]);
    }
  }
  Separation s;
  s.sample_id = sample.id;
  s.target_mean = mean_of(tgt);
  s.distractor_mean = mean_of(dis);
  s.separated = s.target_mean > s.distractor_mean;
  return s;
}

ProbeReport run_probe(const std::vector<world::Sample>& samples, const model::Weights<float>& w,
                      const world::WorldConfig& world_cfg, const std::filesystem::path& out_dir,
                      const ProbeOptions& opts) {
  if (samples.empty()) throw EmptyInputError("run_probe: no samples");
  const model::ModelConfig& cfg = w.config;
  constexpr Expert kExperts[] = {Expert::Understanding, Expert::Generation};

  struct PerSample {
    std::vector<std::vector<SimilarityMap>> maps;  // [layer * 2 + expert] -> per image
    std::optional<Separation> sep;
  };
  std::vector<PerSample> per(samples.size());
  std::vector<std::string> errors(samples.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (std::size_t i = 0; i < samples.size(); ++i) {
    try {
      const auto acts = capture(samples[i], w, world_cfg);
      for (int l = 0; l < cfg.n_layers; ++l) {
        for (Expert e : kExperts) {
          per[i].maps.push_back(layer_similarity(acts, l, e, world_cfg.rows, world_cfg.cols, cfg));
        }
      }
      if (!samples[i].distractor_subjects.empty()) per[i].sep = separation(samples[i], acts, cfg, world_cfg);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  }
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!errors[i].empty()) throw Error("probe of sample " + std::to_string(samples[i].id) + ": " + errors[i]);
  }

  ProbeReport report;
  std::filesystem::create_directories(out_dir);
  for (std::size_t i = 0; i < samples.size() && i < opts.image_samples; ++i) {
    for (const auto& maps : per[i].maps) {
      for (const auto& m : maps) {
        const std::string stem = "s" + std::to_string(samples[i].id) + "_l" + std::to_string(m.layer) + "_" +
                                 std::string(expert_tag(m.expert)) + "_i" + std::to_string(m.image) + ".pgm";
        const std::filesystem::path map_rel = std::filesystem::path("maps") / stem;
        const std::filesystem::path mask_rel = std::filesystem::path("masks") / stem;
        emit_map_image(m, out_dir / map_rel);
        emit_grid_image(top_fraction_mask(m, opts.fraction), m.rows, m.cols, out_dir / mask_rel);
        report.index.push_back({{"sample_id", samples[i].id},
                                {"layer", m.layer},
                                {"expert", expert_tag(m.expert)},
                                {"image", m.image},
                                {"path", map_rel.generic_string()},
                                {"mask_path", mask_rel.generic_string()},
                                {"mean_relevance", mean_of(m.scores)}});
      }
    }
  }

  report.group_summary = nlohmann::json::array();
  for (const auto& [first, last] : layer_groups(cfg.n_layers)) {
    nlohmann::json entry = {{"first_layer", first}, {"last_layer", last}};
    for (std::size_t e = 0; e < 2; ++e) {
      double sum = 0.0;
      std::size_t count = 0;
      for (const auto& p : per) {
        for (int l = first; l <= last; ++l) {
          for (const auto& m : p.maps[static_cast<std::size_t>(l) * 2 + e]) {
            sum += mean_of(m.scores);
            ++count;
          }
        }
      }
      entry[std::string(expert_tag(kExperts[e]))] = count == 0 ? nlohmann::json(nullptr) : nlohmann::json(sum / static_cast<double>(count));
    }
    report.group_summary.push_back(entry);
  }

  std::size_t separable = 0, separated = 0;
  nlohmann::json seps = nlohmann::json::array();
  for (const auto& p : per) {
    if (!p.sep) continue;
    report.separations.push_back(*p.sep);
    ++separable;
    separated += p.sep->separated ? 1 : 0;
    seps.push_back({{"sample_id", p.sep->sample_id},
                    {"target_mean", p.sep->target_mean},
                    {"distractor_mean", p.sep->distractor_mean},
                    {"separated", p.sep->separated}});
  }
  report.separated_fraction = separable == 0 ? 0.0 : static_cast<double>(separated) / static_cast<double>(separable);

  const nlohmann::json summary = {{"layer_groups", report.group_summary},
                                  {"source_layer", cfg.mask_source_layer},
                                  {"fraction", opts.fraction},
                                  {"samples", samples.size()},
                                  {"separable_samples", separable},
                                  {"separated_fraction", report.separated_fraction},
                                  {"separations", seps}};
  std::ofstream(out_dir / "index.json") << report.index.dump(2) << '\n';
  std::ofstream(out_dir / "summary.json") << summary.dump(2) << '\n';
  return report;
}

}  // namespace motb::probe
