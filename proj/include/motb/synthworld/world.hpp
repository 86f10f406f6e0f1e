#pragma once

// Synthetic subject-composition world: grid scenes holding coloured shapes,
// the six sample tasks, the closed instruction vocabulary, and the exact
// presence judge used in place of an image-reading model.

#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace motb::world {

struct Cell {
  int row = 0;
  int col = 0;
  auto operator<=>(const Cell&) const = default;
};

struct Subject {
  int shape_id = 0;
  int color_id = 0;
  Cell anchor;                  // first footprint cell in row-major order
  std::vector<Cell> footprint;  // sorted row-major, 4-connected
  bool operator==(const Subject&) const = default;
};

struct Scene {
  int rows = 0;
  int cols = 0;
  std::vector<Subject> subjects;  // sorted by anchor
  int background = 0;
  bool operator==(const Scene&) const = default;
};

enum class Task {
  CompositionSingle,
  CompositionMulti,
  DistinctionCross,
  DistinctionIntra,
  DistCompCross,
  DistCompIntra,
};

inline constexpr Task kAllTasks[] = {Task::CompositionSingle, Task::CompositionMulti,
                                     Task::DistinctionCross,  Task::DistinctionIntra,
                                     Task::DistCompCross,     Task::DistCompIntra};

std::string_view task_name(Task task);
Task parse_task(std::string_view name);
bool is_single_candidate(Task task);

struct SubjectRef {
  int image = 0;
  int subject = 0;
  bool operator==(const SubjectRef&) const = default;
};

struct Sample {
  std::uint64_t id = 0;
  std::uint64_t seed = 0;
  Task task = Task::CompositionSingle;
  std::vector<Scene> references;
  std::vector<int> instruction;
  Scene target;
  std::vector<SubjectRef> target_subjects;
  std::vector<SubjectRef> distractor_subjects;
  bool operator==(const Sample&) const = default;
};

struct WorldConfig {
  int rows = 6;
  int cols = 6;
  int n_shapes = 4;
  int n_colors = 4;
  int max_subject_cells = 4;
  int max_images = 4;
};

enum class Relation { Left, Right, Top, Bottom };

// Token layout: BOS, EOS, AND, image tokens, colour tokens, shape tokens,
// relation tokens.
class Vocabulary {
 public:
  explicit Vocabulary(const WorldConfig& cfg) : cfg_(cfg) {}

  int bos() const { return 0; }
  int eos() const { return 1; }
  int conj() const { return 2; }
  int image(int k) const { return 3 + k; }
  int color(int c) const { return 3 + cfg_.max_images + c; }
  int shape(int s) const { return 3 + cfg_.max_images + cfg_.n_colors + s; }
  int relation(Relation r) const {
    return 3 + cfg_.max_images + cfg_.n_colors + cfg_.n_shapes + static_cast<int>(r);
  }
  int size() const { return 3 + cfg_.max_images + cfg_.n_colors + cfg_.n_shapes + 4; }

  bool is_sentinel(int id) const { return id == bos() || id == eos(); }
  std::string describe(int id) const;

 private:
  WorldConfig cfg_;
};

// One parsed instruction clause: which subject of which reference image.
struct SubjectDescription {
  int image = 0;
  int color_id = 0;
  int shape_id = 0;
  std::optional<Relation> relation;
};

std::vector<SubjectDescription> parse_instruction(const std::vector<int>& tokens,
                                                  const WorldConfig& cfg);

// True when scene.subjects[index] satisfies the description's colour, shape
// and (if present) strict relative-position constraint against the other
// subjects of the same shape.
bool satisfies(const Scene& scene, std::size_t index, const SubjectDescription& desc);

// Attribute predicate for presence judging; -1 is a wildcard.
struct SubjectQuery {
  int shape_id = -1;
  int color_id = -1;
  bool matches(const Subject& s) const {
    return (shape_id < 0 || s.shape_id == shape_id) && (color_id < 0 || s.color_id == color_id);
  }
};

bool judge_presence(const Scene& scene, const SubjectQuery& query);

// Sorts footprints and subjects, and recomputes anchors.
void canonicalize(Scene& scene);

// Empty string when valid, otherwise the first violated invariant.
std::string validate(const Scene& scene, const WorldConfig& cfg);

Sample gen_sample(Task task, std::uint64_t seed, const WorldConfig& cfg);

// count samples per task, seeds seed_begin .. seed_begin + count - 1, ids
// assigned in generation order starting at id_begin.
std::vector<Sample> gen_suite(const std::vector<Task>& tasks, std::uint64_t seed_begin,
                              std::size_t count, const WorldConfig& cfg,
                              std::uint64_t id_begin = 0);

// Cells covered by the sample's target subjects, per reference image, as
// row-major flags.
std::vector<std::vector<bool>> target_cell_flags(const Sample& sample);

}  // namespace motb::world
