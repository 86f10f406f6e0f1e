#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "motb/model/model.hpp"
#include "motb/model/weights.hpp"
#include "motb/synthworld/world.hpp"

namespace motb::trainer {

using model::ParamGroup;

enum class Phase { Stage1, Stage2Step1, Stage2Step2, Direct };

std::string_view phase_name(Phase p);
Phase parse_phase(std::string_view name);

struct DatasetSpec {
  std::vector<world::Task> tasks;
  std::uint64_t seed = 1;
  std::size_t per_task = 256;
};

struct StageConfig {
  Phase phase = Phase::Stage1;
  int steps = 0;
  std::set<ParamGroup> trainable_groups;
  bool mask_active = false;
  double tau = 0.88;
  int batch_size = 4;
  double learning_rate = 3e-3;
  std::uint64_t seed = 0;
  DatasetSpec dataset;
  // Weight of the relevance alignment term on the understanding expert;
  // zero disables it. Positives are pushed above tau + align_margin,
  // negatives below tau - align_gap.
  double align_weight = 0.0;
  double align_margin = 0.07;
  double align_gap = 0.38;
  // Lets ablation variants run Stage II phases with the mask switched off.
  bool ablation = false;

  static StageConfig stage1(int steps, std::uint64_t seed);
  static StageConfig stage2_step1(int steps, std::uint64_t seed, double tau = 0.88);
  static StageConfig stage2_step2(int steps, std::uint64_t seed, double tau = 0.88);
  static StageConfig direct(int steps, std::uint64_t seed);

  // Throws ConfigError when the phase invariants do not hold.
  void validate() const;
};

nlohmann::json to_json(const StageConfig& c);
StageConfig stage_config_from_json(const nlohmann::json& j);

struct TrainReport {
  std::string phase;
  std::vector<double> losses;       // total objective per step
  std::vector<double> flow_losses;  // flow-matching part per step
  std::vector<double> align_losses;
  double wall_clock_seconds = 0.0;
  std::string checkpoint_path;
  // Trainable parameters that never received a nonzero gradient.
  std::vector<std::string> untouched_parameters;
  nlohmann::json config_echo;
};

nlohmann::json to_json(const TrainReport& r);
// "step,loss" rows.
std::string loss_csv(const TrainReport& r);

// Per-parameter Adam moments, allocated only for trainable tensors.
struct OptimizerState {
  std::vector<std::optional<Tensor<float>>> first_moment;
  std::vector<std::optional<Tensor<float>>> second_moment;
  std::uint64_t step = 0;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct LossTerms {
  double flow = 0.0;
  double align = 0.0;
};

// Rectified-flow objective for one sample:
//   x1 = render(target), x0 ~ N(0, I) seeded by noise_seed,
//   x_t = (1 - t) x0 + t x1, loss = mean (head(x_t, t) - (x1 - x0))^2.
template <typename T>
ad::Var flow_loss_var(ad::Tape<T>& tape, const model::BoundWeights<T>& w, const model::ModelConfig& cfg,
                      const world::WorldConfig& world_cfg, const world::Sample& sample, T t,
                      std::uint64_t noise_seed, bool mask_active, double tau,
                      model::TapeForward<T>* forward_out = nullptr);

template <typename T>
double flow_loss(const world::Sample& sample, double t, std::uint64_t noise_seed, const model::Weights<T>& w,
                 const world::WorldConfig& world_cfg, bool mask_active, double tau = 0.88);

// Band penalty on source-layer relevance: target-subject cells should score
// above tau + margin; distractor and background cells below tau - gap.
template <typename T>
ad::Var alignment_loss_var(ad::Tape<T>& tape, const model::TapeForward<T>& fwd, const model::ModelConfig& cfg,
                           const world::Sample& sample, double tau, double margin, double gap);

std::vector<bool> trainable_mask(const model::WeightLayout& layout, const std::set<ParamGroup>& groups);

struct PhaseResult {
  model::Weights<float> weights;
  TrainReport report;
};

// Adam on the trainable groups only; deterministic in (seed, config,
// dataset). Saves a checkpoint when checkpoint_path is non-empty.
PhaseResult run_phase(const StageConfig& config, model::Weights<float> weights, const world::WorldConfig& world_cfg,
                      const std::filesystem::path& checkpoint_path = {});

struct CurriculumResult {
  model::Weights<float> weights;
  std::vector<TrainReport> reports;
  std::vector<std::filesystem::path> checkpoints;
};

// Stage1 -> Stage2Step1 -> Stage2Step2 with checkpoint handoff, starting
// from Weights::init(model_cfg, init_seed). Checkpoints land in out_dir.
CurriculumResult run_curriculum(const StageConfig& stage1, const StageConfig& s2s1, const StageConfig& s2s2,
                                std::uint64_t init_seed, const model::ModelConfig& model_cfg,
                                const world::WorldConfig& world_cfg, const std::filesystem::path& out_dir);

}  // namespace motb::trainer
