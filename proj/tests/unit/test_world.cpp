#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "motb/errors.hpp"
#include "motb/synthworld/dataset_io.hpp"
#include "motb/synthworld/world.hpp"

namespace {

using namespace motb::world;

Subject subject(int shape, int color, std::vector<Cell> cells) {
  Subject s{shape, color, cells.front(), cells};
  return s;
}

TEST(Vocabulary, LayoutIsContiguous) {
  const WorldConfig cfg;
  const Vocabulary v(cfg);
  EXPECT_EQ(v.image(0), 3);
  EXPECT_EQ(v.color(0), 3 + cfg.max_images);
  EXPECT_EQ(v.shape(0), v.color(cfg.n_colors - 1) + 1);
  EXPECT_EQ(v.relation(Relation::Left), v.shape(cfg.n_shapes - 1) + 1);
  EXPECT_EQ(v.size(), v.relation(Relation::Bottom) + 1);
}

TEST(Judge, WildcardsAndMatches) {
  Scene s{6, 6, {subject(1, 2, {{0, 0}})}, 0};
  EXPECT_TRUE(judge_presence(s, {1, 2}));
  EXPECT_TRUE(judge_presence(s, {-1, 2}));
  EXPECT_TRUE(judge_presence(s, {1, -1}));
  EXPECT_FALSE(judge_presence(s, {1, 3}));
  EXPECT_FALSE(judge_presence(Scene{6, 6, {}, 0}, {-1, -1}));
}

TEST(Validate, RejectsBrokenScenes) {
  const WorldConfig cfg;
  Scene ok{6, 6, {subject(0, 0, {{0, 0}, {0, 1}})}, 1};
  EXPECT_EQ(validate(ok, cfg), "");

  Scene gap = ok;
  gap.subjects[0] = subject(0, 0, {{0, 0}, {0, 2}});
  EXPECT_EQ(validate(gap, cfg), "footprint not 4-connected");

  Scene overlap{6, 6, {subject(0, 0, {{0, 0}}), subject(1, 1, {{0, 0}})}, 1};
  EXPECT_EQ(validate(overlap, cfg), "overlapping footprints");

  Scene touch{6, 6, {subject(2, 2, {{0, 0}}), subject(2, 2, {{0, 1}})}, 1};
  EXPECT_EQ(validate(touch, cfg), "same-class subjects touch");

  Scene out{6, 6, {subject(0, 0, {{6, 0}})}, 1};
  EXPECT_EQ(validate(out, cfg), "footprint cell outside grid");

  Scene bad_color{6, 6, {subject(0, 9, {{0, 0}})}, 1};
  EXPECT_EQ(validate(bad_color, cfg), "colour out of range");
}

TEST(Instruction, ParsesGeneratedClauses) {
  const WorldConfig cfg;
  for (Task task : kAllTasks) {
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
      const Sample s = gen_sample(task, seed, cfg);
      const auto clauses = parse_instruction(s.instruction, cfg);
      ASSERT_EQ(clauses.size(), s.references.size());
      ASSERT_EQ(s.target_subjects.size(), s.references.size());
      for (std::size_t k = 0; k < clauses.size(); ++k) {
        const auto& ref = s.target_subjects[k];
        const auto& scene = s.references[static_cast<std::size_t>(ref.image)];
        // The described subject is the target and only the target.
        for (std::size_t i = 0; i < scene.subjects.size(); ++i) {
          EXPECT_EQ(satisfies(scene, i, clauses[k]), static_cast<int>(i) == ref.subject)
              << task_name(task) << " seed " << seed;
        }
      }
    }
  }
}

TEST(Instruction, UnknownTokenThrows) {
  const WorldConfig cfg;
  const Vocabulary v(cfg);
  EXPECT_EQ(parse_instruction({v.bos(), v.image(0), v.color(0)}, cfg).size(), 1u);
  EXPECT_THROW(parse_instruction({v.bos(), 999, v.eos()}, cfg), motb::VocabularyError);
}

TEST(Generator, SamplesAreValidAndDeterministic) {
  const WorldConfig cfg;
  for (Task task : kAllTasks) {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      const Sample a = gen_sample(task, seed, cfg);
      EXPECT_EQ(a, gen_sample(task, seed, cfg));
      for (const auto& r : a.references) EXPECT_EQ(validate(r, cfg), "");
      EXPECT_EQ(validate(a.target, cfg), "");
      EXPECT_EQ(is_single_candidate(task), a.distractor_subjects.empty()) << task_name(task);
      // Distractors never share a class with a target.
      for (const auto& d : a.distractor_subjects) {
        const auto& ds = a.references[d.image].subjects[d.subject];
        for (const auto& t : a.target.subjects)
          EXPECT_FALSE(ds.shape_id == t.shape_id && ds.color_id == t.color_id);
      }
    }
  }
}

TEST(Generator, TaskLayouts) {
  const WorldConfig cfg;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const Sample cross = gen_sample(Task::DistinctionCross, seed, cfg);
    ASSERT_EQ(cross.references.size(), 1u);
    const auto& subs = cross.references[0].subjects;
    EXPECT_GE(subs.size(), 2u);
    for (std::size_t i = 0; i < subs.size(); ++i)
      for (std::size_t j = i + 1; j < subs.size(); ++j) EXPECT_NE(subs[i].shape_id, subs[j].shape_id);

    const Sample intra = gen_sample(Task::DistinctionIntra, seed, cfg);
    ASSERT_EQ(intra.references[0].subjects.size(), 2u);
    EXPECT_EQ(intra.references[0].subjects[0].shape_id, intra.references[0].subjects[1].shape_id);
  }
}

TEST(Generator, TooSmallGridThrows) {
  WorldConfig cfg;
  cfg.rows = cfg.cols = 3;
  EXPECT_THROW(gen_sample(Task::CompositionSingle, 1, cfg), motb::GenerationError);
}

TEST(Suite, IdsAreSequential) {
  const auto suite = gen_suite({Task::CompositionSingle, Task::DistinctionCross}, 10, 3, WorldConfig{}, 100);
  ASSERT_EQ(suite.size(), 6u);
  for (std::size_t i = 0; i < suite.size(); ++i) EXPECT_EQ(suite[i].id, 100 + i);
  EXPECT_EQ(suite[3].task, Task::DistinctionCross);
  EXPECT_EQ(suite[3].seed, 10u);
}

TEST(TargetFlags, CoverTargetFootprints) {
  const Sample s = gen_sample(Task::DistCompCross, 4, WorldConfig{});
  const auto flags = target_cell_flags(s);
  ASSERT_EQ(flags.size(), s.references.size());
  for (const auto& ref : s.target_subjects) {
    const auto& sub = s.references[ref.image].subjects[ref.subject];
    for (const auto& c : sub.footprint) EXPECT_TRUE(flags[ref.image][c.row * 6 + c.col]);
  }
}

TEST(DatasetIo, RoundTrip) {
  const auto suite = gen_suite({kAllTasks[0], kAllTasks[3], kAllTasks[5]}, 1, 5, WorldConfig{});
  const auto path = std::filesystem::temp_directory_path() / "motb_test_dataset.ndjson";
  write_dataset(path, suite);
  EXPECT_EQ(read_dataset(path), suite);
  std::filesystem::remove(path);
}

TEST(DatasetIo, SchemaMismatchRejected) {
  auto j = to_json(gen_sample(Task::CompositionSingle, 1, WorldConfig{}));
  j["schema_version"] = kDatasetSchemaVersion + 1;
  EXPECT_THROW(sample_from_json(j), motb::Error);
}

}  // namespace
