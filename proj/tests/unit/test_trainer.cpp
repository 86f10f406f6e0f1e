#include <gtest/gtest.h>

#include <filesystem>

#include "model_support.hpp"
#include "motb/errors.hpp"
#include "motb/model/checkpoint.hpp"
#include "motb/trainer/trainer.hpp"

namespace {

using namespace motb;
using trainer::Phase;
using trainer::StageConfig;
using G = model::ParamGroup;

const world::WorldConfig kWorld;

model::ModelConfig tiny_config() {
  model::ModelConfig cfg;
  cfg.n_layers = 2;
  cfg.d_model = 16;
  cfg.d_ff = 32;
  cfg.mask_source_layer = 0;
  cfg.masked_layer_lo = 1;
  cfg.masked_layer_hi = 1;
  return cfg;
}

StageConfig tiny(StageConfig c) {
  c.batch_size = 2;
  c.dataset.per_task = 4;
  return c;
}

bool group_equal(const model::Weights<float>& a, const model::Weights<float>& b, G g) {
  const model::WeightLayout L(a.config);
  for (std::size_t i = 0; i < L.size(); ++i)
    if (L.specs()[i].group == g && a.tensors[i] != b.tensors[i]) return false;
  return true;
}

TEST(StageConfig, FactoriesValidate) {
  EXPECT_NO_THROW(StageConfig::stage1(10, 1).validate());
  EXPECT_NO_THROW(StageConfig::stage2_step1(10, 1).validate());
  EXPECT_NO_THROW(StageConfig::stage2_step2(10, 1).validate());
  EXPECT_NO_THROW(StageConfig::direct(10, 1).validate());
  EXPECT_EQ(StageConfig::stage2_step1(1, 1).trainable_groups, std::set<G>{G::Understanding});
  EXPECT_EQ(StageConfig::stage2_step2(1, 1).trainable_groups, (std::set<G>{G::Understanding, G::Generation, G::FlowHead}));
  EXPECT_EQ(StageConfig::stage1(1, 1).trainable_groups.size(), 4u);
}

TEST(StageConfig, PhaseInvariants) {
  auto c = StageConfig::stage1(1, 1);
  c.mask_active = true;
  EXPECT_THROW(c.validate(), ConfigError);

  c = StageConfig::stage1(1, 1);
  c.dataset.tasks.push_back(world::Task::DistinctionCross);
  EXPECT_THROW(c.validate(), ConfigError);

  c = StageConfig::stage2_step1(1, 1);
  c.trainable_groups.insert(G::Generation);
  EXPECT_THROW(c.validate(), ConfigError);

  c = StageConfig::stage2_step1(1, 1);
  c.mask_active = false;
  EXPECT_THROW(c.validate(), ConfigError);
  c.ablation = true;
  EXPECT_NO_THROW(c.validate());

  c = StageConfig::stage2_step2(1, 1);
  c.dataset.tasks = {world::Task::CompositionSingle};
  EXPECT_THROW(c.validate(), ConfigError);

  c = StageConfig::direct(1, 1);
  c.mask_active = true;
  EXPECT_THROW(c.validate(), ConfigError);

  c = StageConfig::stage1(-1, 1);
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(trainer::parse_phase("stage3"), ConfigError);
}

TEST(StageConfig, JsonRoundTrip) {
  for (auto c : {StageConfig::stage1(3, 9), StageConfig::stage2_step1(4, 9, 0.85), StageConfig::direct(5, 2)}) {
    EXPECT_EQ(trainer::to_json(trainer::stage_config_from_json(trainer::to_json(c))), trainer::to_json(c));
  }
  EXPECT_THROW(trainer::stage_config_from_json({{"phase", "stage1"}, {"steps", "many"}}), ConfigError);
}

TEST(TrainableMask, FollowsGroups) {
  const model::WeightLayout L(tiny_config());
  const auto m = trainer::trainable_mask(L, {G::FlowHead});
  for (std::size_t i = 0; i < L.size(); ++i) EXPECT_EQ(m[i], L.specs()[i].group == G::FlowHead);
}

TEST(FlowLoss, GradientMatchesFiniteDifferences) {
  auto cfg = tiny_config();
  cfg.d_model = 8;
  cfg.d_ff = 8;
  cfg.init.zero_head = false;
  const auto w = model::Weights<float>::init(cfg, 4).cast<double>();
  const model::WeightLayout L(cfg);
  const auto sample = world::gen_sample(world::Task::DistinctionCross, 2, kWorld);
  for (bool mask : {false, true}) {
    const auto r = grad_check(
        [&](ad::Tape<double>& tape, const std::vector<ad::Var>& leaves) {
          model::BoundWeights<double> b{&L, leaves};
          return trainer::flow_loss_var<double>(tape, b, cfg, kWorld, sample, 0.3, 17, mask, 0.0);
        },
        w.tensors, {.step = 1e-3, .order = 4, .samples = 60, .seed = 1});
    EXPECT_EQ(r.coordinates, 60u);
    EXPECT_LT(r.max_rel_error, 1e-4) << "mask " << mask;
  }
}

TEST(FlowLoss, ValueIsDeterministic) {
  const auto w = model::Weights<float>::init(tiny_config(), 4);
  const auto s = world::gen_sample(world::Task::CompositionSingle, 2, kWorld);
  const double a = trainer::flow_loss(s, 0.5, 3, w, kWorld, false);
  EXPECT_EQ(a, trainer::flow_loss(s, 0.5, 3, w, kWorld, false));
  EXPECT_NE(a, trainer::flow_loss(s, 0.5, 4, w, kWorld, false));
  EXPECT_GT(a, 0.0);
}

TEST(RunPhase, ZeroStepsIsNoOp) {
  const auto w = model::Weights<float>::init(tiny_config(), 1);
  const auto r = trainer::run_phase(tiny(StageConfig::stage1(0, 1)), w, kWorld);
  EXPECT_EQ(r.weights, w);
  EXPECT_TRUE(r.report.losses.empty());
}

TEST(RunPhase, Step1FreezesGeneration) {
  auto start = model::Weights<float>::init(tiny_config(), 1);
  start = trainer::run_phase(tiny(StageConfig::stage1(2, 1)), start, kWorld).weights;
  const auto r = trainer::run_phase(tiny(StageConfig::stage2_step1(2, 1, 0.0)), start, kWorld);
  EXPECT_TRUE(group_equal(r.weights, start, G::Generation));
  EXPECT_TRUE(group_equal(r.weights, start, G::FlowHead));
  EXPECT_TRUE(group_equal(r.weights, start, G::SharedEmbeddings));
  EXPECT_FALSE(group_equal(r.weights, start, G::Understanding));
  EXPECT_EQ(r.report.losses.size(), 2u);
  EXPECT_EQ(r.report.align_losses.size(), 2u);
}

TEST(RunPhase, Stage1TouchesEveryGroup) {
  const auto start = model::Weights<float>::init(tiny_config(), 1);
  const auto r = trainer::run_phase(tiny(StageConfig::stage1(3, 1)), start, kWorld);
  for (G g : model::kAllGroups) EXPECT_FALSE(group_equal(r.weights, start, g)) << model::group_name(g);
}

TEST(RunPhase, DeterministicWithCheckpoint) {
  const auto start = model::Weights<float>::init(tiny_config(), 1);
  const auto dir = std::filesystem::temp_directory_path() / "motb_unit_trainer";
  std::filesystem::create_directories(dir);
  const auto c = tiny(StageConfig::stage1(2, 5));
  const auto a = trainer::run_phase(c, start, kWorld, dir / "a.ckpt");
  const auto b = trainer::run_phase(c, start, kWorld, dir / "b.ckpt");
  EXPECT_EQ(a.report.losses, b.report.losses);
  EXPECT_EQ(model::read_file_bytes(dir / "a.ckpt"), model::read_file_bytes(dir / "b.ckpt"));
  EXPECT_EQ(model::load_checkpoint(dir / "a.ckpt"), a.weights);
  const auto other = trainer::run_phase(tiny(StageConfig::stage1(2, 6)), start, kWorld);
  EXPECT_NE(other.weights, a.weights);
  std::filesystem::remove_all(dir);
}

TEST(Report, LossCsv) {
  trainer::TrainReport r;
  r.losses = {1.5, 0.25};
  EXPECT_EQ(trainer::loss_csv(r), "step,loss\n0,1.5\n1,0.25\n");
}

}  // namespace
