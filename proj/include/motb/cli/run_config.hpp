#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "motb/model/config.hpp"
#include "motb/synthworld/world.hpp"
#include "motb/trainer/trainer.hpp"

namespace motb::cli {

// Held-out evaluation suite and sampling protocol.
struct EvalSpec {
  std::string name = "distinction_cross";
  std::vector<world::Task> tasks = {world::Task::DistinctionCross};
  std::uint64_t suite_seed = 1000000;
  std::size_t per_task = 100;
  int rounds = 3;
  int scorings = 3;
  std::uint64_t base_seed = 7;
  int sampler_steps = 8;
};

struct AblateSpec {
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::vector<double> taus = {0.82, 0.85, 0.88};
  EvalSpec suite{"mixed_distinction",
                 {world::Task::DistinctionCross, world::Task::DistinctionIntra, world::Task::DistCompCross,
                  world::Task::DistCompIntra},
                 2000000,
                 25};
};

struct ProbeSpec {
  std::vector<world::Task> tasks = {world::Task::DistinctionCross};
  std::uint64_t suite_seed = 3000000;
  std::size_t per_task = 100;
  double fraction = 0.5;
  std::size_t image_samples = 4;
};

struct RunConfig {
  std::uint64_t seed = 1;
  double tau = 0.88;
  std::filesystem::path out;
  world::WorldConfig world;
  model::ModelConfig model;
  trainer::StageConfig stage1 = trainer::StageConfig::stage1(500, 1);
  trainer::StageConfig stage2_step1 = trainer::StageConfig::stage2_step1(200, 1);
  trainer::StageConfig stage2_step2 = trainer::StageConfig::stage2_step2(200, 1);
  // Optional second Stage I pass on a freshly seeded single-candidate pool.
  int refine_steps = 0;
  EvalSpec eval;
  AblateSpec ablate;
  ProbeSpec probe;

  // Propagates seed and tau into the stage configs, then checks every
  // invariant; throws ConfigError.
  void finalize();
};

// The output path is left out so configs that differ only in where they
// write compare equal.
nlohmann::json to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j);

// Parses JSON text; syntax errors become ConfigError naming source:line:column.
nlohmann::json parse_json_text(const std::string& text, const std::string& source);

// "a.b.c=value": value is parsed as JSON when possible, otherwise taken as a
// string. Intermediate objects are created as needed.
void apply_override(nlohmann::json& j, const std::string& assignment);

// Default output root: $MOTB_OUT_ROOT or "runs".
std::filesystem::path default_out_root();

}  // namespace motb::cli
