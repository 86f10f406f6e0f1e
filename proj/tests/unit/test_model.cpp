#include <gtest/gtest.h>

#include <random>

#include "model_support.hpp"
#include "motb/errors.hpp"
#include "motb/model/sampler.hpp"
#include "motb/model/weights.hpp"

namespace {

using namespace motb;
using model::Modality;

const world::WorldConfig kWorld;

bridge::SemanticMask random_mask(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<double> s(n);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& v : s) v = u(rng);
  return bridge::build_mask(s, 0.5);
}

TEST(Config, DefaultsValidateAndRoundTrip) {
  const model::ModelConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_EQ(model::model_config_from_json(model::to_json(cfg)), cfg);
}

TEST(Config, RejectsBadLayerRanges) {
  model::ModelConfig cfg;
  cfg.masked_layer_lo = cfg.mask_source_layer;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.masked_layer_hi = cfg.n_layers;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.d_model = 33;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Weights, InitIsSeededAndShaped) {
  const model::ModelConfig cfg;
  const auto a = model::Weights<float>::init(cfg, 5);
  EXPECT_EQ(a, model::Weights<float>::init(cfg, 5));
  EXPECT_NE(a, model::Weights<float>::init(cfg, 6));
  const model::WeightLayout layout(cfg);
  ASSERT_EQ(a.tensors.size(), layout.size());
  for (std::size_t i = 0; i < layout.size(); ++i) EXPECT_EQ(a.tensors[i].shape(), layout.specs()[i].shape);
}

TEST(Weights, InitSchemeTiesAndCopies) {
  const model::ModelConfig cfg;
  const auto w = model::Weights<float>::init(cfg, 1);
  const model::WeightLayout L(cfg);
  const auto& und = L.layers[1][0];
  const auto& gen = L.layers[1][1];
  EXPECT_EQ(w.tensors[und.wq], w.tensors[und.wk]);
  EXPECT_EQ(w.tensors[und.w1], w.tensors[gen.w1]);
  for (float v : w.tensors[L.head_w].storage()) EXPECT_EQ(v, 0.0f);

  const auto r = model::Weights<float>::init(testkit::random_model_config(4, 32), 1);
  const model::WeightLayout RL(r.config);
  EXPECT_NE(r.tensors[RL.layers[1][0].wq], r.tensors[RL.layers[1][0].wk]);
}

TEST(Layout, GroupsFollowNames) {
  const model::WeightLayout L(model::ModelConfig{});
  for (const auto& s : L.specs()) {
    if (s.name.rfind("und.", 0) == 0) EXPECT_EQ(s.group, model::ParamGroup::Understanding);
    if (s.name.rfind("gen.", 0) == 0) EXPECT_EQ(s.group, model::ParamGroup::Generation);
    if (s.name.rfind("embed.", 0) == 0) EXPECT_EQ(s.group, model::ParamGroup::SharedEmbeddings);
    if (s.name.rfind("head.", 0) == 0) EXPECT_EQ(s.group, model::ParamGroup::FlowHead);
  }
  EXPECT_EQ(L.index_of("head.w"), L.head_w);
  EXPECT_THROW(L.index_of("nope"), Error);
}

TEST(Routing, ModalityToExpert) {
  EXPECT_EQ(model::route(Modality::Text), model::Expert::Understanding);
  EXPECT_EQ(model::route(Modality::VisUnd), model::Expert::Understanding);
  EXPECT_EQ(model::route(Modality::VisGen), model::Expert::Generation);
  EXPECT_EQ(model::route(Modality::Target), model::Expert::Generation);
}

class ForwardTest : public ::testing::Test {
 protected:
  ForwardTest()
      : w(model::Weights<float>::init(testkit::random_model_config(4, 32), 3).cast<double>()),
        sample(world::gen_sample(world::Task::DistinctionCross, 9, kWorld)),
        streams(testkit::sample_streams(sample, w, kWorld, 77)) {}
  model::Weights<double> w;
  world::Sample sample;
  std::vector<model::TokenStream<double>> streams;
};

TEST_F(ForwardTest, LayoutPutsUnderstandingFirst) {
  const auto r = model::forward(streams, w);
  EXPECT_EQ(r.layout.understanding_rows, streams[0].length() + 36);
  EXPECT_EQ(r.layout.offset[1], streams[0].length());
  EXPECT_EQ(r.layout.offset[2], r.layout.understanding_rows);
  EXPECT_EQ(r.flow.rows(), 36u);
  EXPECT_EQ(r.flow.cols(), 20u);
  ASSERT_EQ(r.activations.states.size(), 4u);
}

TEST_F(ForwardTest, ContextIgnoresTarget) {
  auto other = testkit::sample_streams(sample, w, kWorld, 78, 0.9);
  const auto a = model::forward(streams, w), b = model::forward(other, w);
  for (std::size_t l = 0; l < 4; ++l)
    for (std::size_t k = 0; k + 1 < streams.size(); ++k) EXPECT_EQ(a.activations.states[l][k], b.activations.states[l][k]);
  EXPECT_NE(a.flow, b.flow);
}

TEST_F(ForwardTest, ZeroAttentionOnMaskedColumns) {
  const auto mask = random_mask(36, 4);
  ASSERT_GT(mask.visible_count(), 0u);
  model::MaskSpec spec;
  spec.fixed = &mask;
  const auto r = model::forward(streams, w, spec, {.record_attention = true});
  const auto& cfg = w.config;
  const auto rows = testkit::target_rows(r);
  const auto hidden = testkit::masked_columns(r, mask, cfg);
  for (int l = 0; l < cfg.n_layers; ++l) {
    const bool affected = l >= cfg.masked_layer_lo && l <= cfg.masked_layer_hi;
    const auto logits = testkit::recompute_logits(streams, r, w, l);
    for (std::size_t h = 0; h < logits.size(); ++h) {
      const auto& att = r.attention[static_cast<std::size_t>(l)][h];
      for (std::size_t i = 0; i < r.layout.total; ++i) {
        if (!rows[i]) continue;
        std::vector<bool> keep(r.layout.total, true);
        if (affected)
          for (std::size_t j = 0; j < keep.size(); ++j) keep[j] = !hidden[j];
        const auto p = testkit::restricted_softmax(logits[h], i, keep);
        for (std::size_t j = 0; j < r.layout.total; ++j) {
          if (affected && hidden[j]) EXPECT_EQ(att(i, j), 0.0);
          else EXPECT_NEAR(att(i, j), p[j], 1e-6);
        }
      }
    }
  }
}

TEST_F(ForwardTest, AllVisibleMaskIsIdentity) {
  const auto mask = bridge::build_mask(std::vector<double>(36, 1.0), 0.5);
  model::MaskSpec spec;
  spec.fixed = &mask;
  const auto a = model::forward(streams, w), b = model::forward(streams, w, spec);
  EXPECT_EQ(a.flow, b.flow);
  EXPECT_EQ(a.activations.states, b.activations.states);
}

TEST_F(ForwardTest, LayersBelowLoUnchangedByMask) {
  const auto mask = random_mask(36, 11);
  model::MaskSpec spec;
  spec.fixed = &mask;
  const auto a = model::forward(streams, w), b = model::forward(streams, w, spec);
  for (int l = 0; l < w.config.masked_layer_lo; ++l)
    EXPECT_EQ(a.activations.states[static_cast<std::size_t>(l)], b.activations.states[static_cast<std::size_t>(l)]);
  EXPECT_NE(a.flow, b.flow);
}

TEST_F(ForwardTest, InPassMaskMatchesActivations) {
  model::MaskSpec spec;
  spec.tau = 0.1;
  const auto r = model::forward(streams, w, spec);
  ASSERT_TRUE(r.mask.has_value());
  EXPECT_EQ(r.mask->source_layer, w.config.mask_source_layer);
  const auto plain = model::forward(streams, w);
  const auto m = model::compute_mask_from_activations(plain.activations, w.config, 0.1);
  EXPECT_EQ(m.bias, r.mask->bias);
  EXPECT_EQ(m.relevance, r.mask->relevance);
}

TEST_F(ForwardTest, GatherStatesDropsSentinels) {
  const auto r = model::forward(streams, w);
  const auto text = model::gather_states(r.activations, 0, Modality::Text, w.config);
  EXPECT_EQ(text.rows(), streams[0].length() - 2);
  EXPECT_EQ(model::gather_states(r.activations, 0, Modality::VisUnd, w.config).rows(), 36u);
}

TEST_F(ForwardTest, Errors) {
  auto bad_mask = random_mask(35, 1);
  model::MaskSpec spec;
  spec.fixed = &bad_mask;
  EXPECT_THROW(model::forward(streams, w, spec), MaskShapeError);

  const auto none = bridge::build_mask(std::vector<double>(36, 0.0), 0.5, false);
  spec.fixed = &none;
  EXPECT_THROW(model::forward(streams, w, spec), DegenerateRowError);

  auto two_targets = streams;
  two_targets.push_back(streams.back());
  EXPECT_THROW(model::forward(two_targets, w), StreamError);

  EXPECT_THROW(model::embed_text<double>({999}, w), VocabularyError);

  auto cfg = w.config;
  cfg.max_positions = 64;
  const auto small = model::Weights<float>::init(cfg, 1).cast<double>();
  EXPECT_THROW(model::forward(testkit::sample_streams(sample, small, kWorld, 1), small), CapacityError);
}

}  // namespace

namespace {

TEST(Sampler, DeterministicAndDecodable) {
  auto cfg = motb::testkit::random_model_config(4, 32);
  const auto w = motb::model::Weights<float>::init(cfg, 2);
  const auto s = motb::world::gen_sample(motb::world::Task::CompositionSingle, 3, kWorld);
  motb::model::SamplerOptions opts;
  opts.steps = 3;
  opts.seed = 42;
  opts.tau = 0.0;
  const auto a = motb::model::sample_generate(s.references, s.instruction, opts, w, kWorld);
  const auto b = motb::model::sample_generate(s.references, s.instruction, opts, w, kWorld);
  EXPECT_EQ(a.scene, b.scene);
  EXPECT_EQ(a.latents, b.latents);
  EXPECT_EQ(motb::world::validate(a.scene, kWorld), "");
  ASSERT_TRUE(a.mask.has_value());

  opts.policy = motb::model::MaskPolicy::Inactive;
  EXPECT_FALSE(motb::model::sample_generate(s.references, s.instruction, opts, w, kWorld).mask.has_value());
}

TEST(Sampler, RejectsZeroSteps) {
  const auto w = motb::model::Weights<float>::init(motb::testkit::random_model_config(4, 32), 2);
  const auto s = motb::world::gen_sample(motb::world::Task::CompositionSingle, 3, kWorld);
  motb::model::SamplerOptions opts;
  opts.steps = 0;
  EXPECT_THROW(motb::model::sample_generate(s.references, s.instruction, opts, w, kWorld), motb::Error);
}

}  // namespace
