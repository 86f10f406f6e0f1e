#include "motb/synthworld/world.hpp"

#include <algorithm>
#include <random>

#include "motb/errors.hpp"

namespace motb::world {

namespace {

constexpr std::string_view kTaskNames[] = {"composition_single", "composition_multi",
                                           "distinction_cross",  "distinction_intra",
                                           "distcomp_cross",     "distcomp_intra"};

// Centroid of a footprint as an exact fraction (sum / count) per axis.
struct Centroid {
  long row_sum = 0;
  long col_sum = 0;
  long count = 0;
};

Centroid centroid(const Subject& s) {
  Centroid c;
  for (const auto& cell : s.footprint) {
    c.row_sum += cell.row;
    c.col_sum += cell.col;
  }
  c.count = static_cast<long>(s.footprint.size());
  return c;
}

// Strict "a is <relation> of b" on centroids.
bool relation_holds(Relation rel, const Subject& a, const Subject& b) {
  const Centroid ca = centroid(a), cb = centroid(b);
  const long a_col = ca.col_sum * cb.count, b_col = cb.col_sum * ca.count;
  const long a_row = ca.row_sum * cb.count, b_row = cb.row_sum * ca.count;
  switch (rel) {
    case Relation::Left: return a_col < b_col;
    case Relation::Right: return a_col > b_col;
    case Relation::Top: return a_row < b_row;
    case Relation::Bottom: return a_row > b_row;
  }
  return false;
}

// Relation that distinguishes a from b along the axis of larger separation.
Relation separating_relation(const Subject& a, const Subject& b) {
  const Centroid ca = centroid(a), cb = centroid(b);
  const long dc = ca.col_sum * cb.count - cb.col_sum * ca.count;
  const long dr = ca.row_sum * cb.count - cb.row_sum * ca.count;
  if (std::labs(dc) >= std::labs(dr) && dc != 0) return dc < 0 ? Relation::Left : Relation::Right;
  return dr < 0 ? Relation::Top : Relation::Bottom;
}

class Placer {
 public:
  Placer(const WorldConfig& cfg, std::mt19937_64& rng) : cfg_(cfg), rng_(rng) {}

  int uniform(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }

  // Grows a random 4-connected footprint of `size` cells that neither
  // overlaps nor touches any cell marked in the blocking grids.
  std::vector<Cell> place(int size, const std::vector<const std::vector<bool>*>& blocked) {
    for (int attempt = 0; attempt < 64; ++attempt) {
      std::vector<Cell> cells;
      std::vector<bool> mine(static_cast<std::size_t>(cfg_.rows * cfg_.cols), false);
      const Cell start{uniform(0, cfg_.rows - 1), uniform(0, cfg_.cols - 1)};
      if (!free_cell(start, blocked)) continue;
      cells.push_back(start);
      mine[index(start)] = true;
      while (static_cast<int>(cells.size()) < size) {
        std::vector<Cell> frontier;
        for (const auto& c : cells) {
          for (const auto& n : neighbours(c)) {
            if (!mine[index(n)] && free_cell(n, blocked) &&
                std::find(frontier.begin(), frontier.end(), n) == frontier.end()) {
              frontier.push_back(n);
            }
          }
        }
        if (frontier.empty()) break;
        std::sort(frontier.begin(), frontier.end());
        const Cell pick = frontier[static_cast<std::size_t>(
            uniform(0, static_cast<int>(frontier.size()) - 1))];
        cells.push_back(pick);
        mine[index(pick)] = true;
      }
      if (static_cast<int>(cells.size()) == size) {
        std::sort(cells.begin(), cells.end());
        return cells;
      }
    }
    throw GenerationError("could not place a subject of " + std::to_string(size) +
                          " cells after bounded retries");
  }

  std::size_t index(Cell c) const { return static_cast<std::size_t>(c.row * cfg_.cols + c.col); }

  void mark(std::vector<bool>& grid, const std::vector<Cell>& cells) const {
    for (const auto& c : cells) grid[index(c)] = true;
  }

 private:
  std::vector<Cell> neighbours(Cell c) const {
    std::vector<Cell> out;
    if (c.row > 0) out.push_back({c.row - 1, c.col});
    if (c.row + 1 < cfg_.rows) out.push_back({c.row + 1, c.col});
    if (c.col > 0) out.push_back({c.row, c.col - 1});
    if (c.col + 1 < cfg_.cols) out.push_back({c.row, c.col + 1});
    return out;
  }

  bool free_cell(Cell c, const std::vector<const std::vector<bool>*>& blocked) const {
    for (const auto* grid : blocked) {
      if ((*grid)[index(c)]) return false;
      for (const auto& n : neighbours(c)) {
        if ((*grid)[index(n)]) return false;
      }
    }
    return true;
  }

  const WorldConfig& cfg_;
  std::mt19937_64& rng_;
};

struct Draft {
  int shape = 0;
  int color = 0;
  bool target = false;
  std::vector<Cell> cells;
};

struct DraftImage {
  std::vector<Draft> subjects;
  std::optional<Relation> relation;  // clause relation for the target, if any
};

std::vector<int> distinct_values(std::mt19937_64& rng, int n, int count) {
  std::vector<int> all(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) all[static_cast<std::size_t>(i)] = i;
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(static_cast<std::size_t>(count));
  return all;
}

}  // namespace

std::string_view task_name(Task task) { return kTaskNames[static_cast<int>(task)]; }

Task parse_task(std::string_view name) {
  for (Task t : kAllTasks) {
    if (task_name(t) == name) return t;
  }
  throw ConfigError("unknown task '" + std::string(name) + "'");
}

bool is_single_candidate(Task task) {
  return task == Task::CompositionSingle || task == Task::CompositionMulti;
}

std::string Vocabulary::describe(int id) const {
  if (id == bos()) return "<bos>";
  if (id == eos()) return "<eos>";
  if (id == conj()) return "and";
  if (id >= image(0) && id < image(cfg_.max_images)) return "img" + std::to_string(id - image(0));
  if (id >= color(0) && id < color(cfg_.n_colors)) return "color" + std::to_string(id - color(0));
  if (id >= shape(0) && id < shape(cfg_.n_shapes)) return "shape" + std::to_string(id - shape(0));
  constexpr const char* rel[] = {"left", "right", "top", "bottom"};
  if (id >= relation(Relation::Left) && id < size()) return rel[id - relation(Relation::Left)];
  return "<unk:" + std::to_string(id) + ">";
}

std::vector<SubjectDescription> parse_instruction(const std::vector<int>& tokens,
                                                  const WorldConfig& cfg) {
  const Vocabulary vocab(cfg);
  std::vector<SubjectDescription> out;
  SubjectDescription cur;
  bool open = false;
  auto flush = [&] {
    if (open) out.push_back(cur);
    cur = SubjectDescription{};
    open = false;
  };
  for (int id : tokens) {
    if (vocab.is_sentinel(id) || id == vocab.conj()) {
      flush();
    } else if (id >= vocab.image(0) && id < vocab.image(cfg.max_images)) {
      flush();
      cur.image = id - vocab.image(0);
      open = true;
    } else if (id >= vocab.color(0) && id < vocab.color(cfg.n_colors)) {
      cur.color_id = id - vocab.color(0);
    } else if (id >= vocab.shape(0) && id < vocab.shape(cfg.n_shapes)) {
      cur.shape_id = id - vocab.shape(0);
    } else if (id >= vocab.relation(Relation::Left) && id < vocab.size()) {
      cur.relation = static_cast<Relation>(id - vocab.relation(Relation::Left));
    } else {
      throw VocabularyError("instruction token " + std::to_string(id) + " outside vocabulary");
    }
  }
  flush();
  return out;
}

bool satisfies(const Scene& scene, std::size_t index, const SubjectDescription& desc) {
  const Subject& s = scene.subjects[index];
  if (s.shape_id != desc.shape_id || s.color_id != desc.color_id) return false;
  if (!desc.relation) return true;
  for (std::size_t j = 0; j < scene.subjects.size(); ++j) {
    if (j == index || scene.subjects[j].shape_id != s.shape_id) continue;
    if (!relation_holds(*desc.relation, s, scene.subjects[j])) return false;
  }
  return true;
}

bool judge_presence(const Scene& scene, const SubjectQuery& query) {
  return std::any_of(scene.subjects.begin(), scene.subjects.end(),
                     [&](const Subject& s) { return query.matches(s); });
}

void canonicalize(Scene& scene) {
  for (auto& s : scene.subjects) {
    std::sort(s.footprint.begin(), s.footprint.end());
    if (!s.footprint.empty()) s.anchor = s.footprint.front();
  }
  std::sort(scene.subjects.begin(), scene.subjects.end(),
            [](const Subject& a, const Subject& b) { return a.anchor < b.anchor; });
}

std::string validate(const Scene& scene, const WorldConfig& cfg) {
  if (scene.rows <= 0 || scene.cols <= 0) return "empty grid";
  if (scene.background < 0 || scene.background >= cfg.n_colors) return "background colour out of range";
  std::vector<int> owner(static_cast<std::size_t>(scene.rows * scene.cols), -1);
  for (std::size_t k = 0; k < scene.subjects.size(); ++k) {
    const auto& s = scene.subjects[k];
    if (s.footprint.empty()) return "subject with empty footprint";
    if (s.shape_id < 0 || s.shape_id >= cfg.n_shapes) return "shape out of range";
    if (s.color_id < 0 || s.color_id >= cfg.n_colors) return "colour out of range";
    if (!std::is_sorted(s.footprint.begin(), s.footprint.end()) || s.anchor != s.footprint.front())
      return "footprint not canonical";
    for (const auto& c : s.footprint) {
      if (c.row < 0 || c.row >= scene.rows || c.col < 0 || c.col >= scene.cols)
        return "footprint cell outside grid";
      auto& o = owner[static_cast<std::size_t>(c.row * scene.cols + c.col)];
      if (o >= 0) return "overlapping footprints";
      o = static_cast<int>(k);
    }
  }
  // Connectivity and same-class separation.
  for (std::size_t k = 0; k < scene.subjects.size(); ++k) {
    const auto& s = scene.subjects[k];
    std::vector<Cell> stack{s.footprint.front()};
    std::vector<Cell> seen{s.footprint.front()};
    while (!stack.empty()) {
      const Cell c = stack.back();
      stack.pop_back();
      const Cell ns[] = {{c.row - 1, c.col}, {c.row + 1, c.col}, {c.row, c.col - 1}, {c.row, c.col + 1}};
      for (const auto& n : ns) {
        if (n.row < 0 || n.row >= scene.rows || n.col < 0 || n.col >= scene.cols) continue;
        const int o = owner[static_cast<std::size_t>(n.row * scene.cols + n.col)];
        if (o < 0) continue;
        if (o == static_cast<int>(k)) {
          if (std::find(seen.begin(), seen.end(), n) == seen.end()) {
            seen.push_back(n);
            stack.push_back(n);
          }
        } else {
          const auto& other = scene.subjects[static_cast<std::size_t>(o)];
          if (other.shape_id == s.shape_id && other.color_id == s.color_id)
            return "same-class subjects touch";
        }
      }
    }
    if (seen.size() != s.footprint.size()) return "footprint not 4-connected";
  }
  for (std::size_t k = 1; k < scene.subjects.size(); ++k) {
    if (!(scene.subjects[k - 1].anchor < scene.subjects[k].anchor)) return "subjects not sorted";
  }
  return {};
}

Sample gen_sample(Task task, std::uint64_t seed, const WorldConfig& cfg) {
  if (cfg.rows * cfg.cols < 16) throw GenerationError("grid too small for sample generation");
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(task), 0x5eedu};
  std::mt19937_64 rng(seq);
  Placer placer(cfg, rng);
  const auto cells = static_cast<std::size_t>(cfg.rows * cfg.cols);

  // Image layout per task: number of candidates per reference image and
  // whether candidates share a shape.
  std::vector<int> candidates;
  bool intra = false;
  switch (task) {
    case Task::CompositionSingle: candidates = {1}; break;
    case Task::CompositionMulti:
      candidates.assign(static_cast<std::size_t>(placer.uniform(2, std::min(3, cfg.max_images))), 1);
      break;
    case Task::DistinctionCross: candidates = {placer.uniform(2, std::min(3, cfg.n_shapes))}; break;
    case Task::DistinctionIntra: candidates = {2}; intra = true; break;
    case Task::DistCompCross:
    case Task::DistCompIntra: {
      intra = task == Task::DistCompIntra;
      candidates = {2, 1};
      if (placer.uniform(0, 1) == 1) std::swap(candidates[0], candidates[1]);
      break;
    }
  }

  std::vector<DraftImage> images(candidates.size());
  std::vector<bool> target_grid(cells, false);
  std::vector<std::pair<int, int>> target_classes;

  // Targets first so distractor colours can avoid target classes.
  for (std::size_t k = 0; k < images.size(); ++k) {
    Draft d;
    d.target = true;
    d.shape = placer.uniform(0, cfg.n_shapes - 1);
    d.color = placer.uniform(0, cfg.n_colors - 1);
    d.cells = placer.place(placer.uniform(1, cfg.max_subject_cells), {&target_grid});
    placer.mark(target_grid, d.cells);
    target_classes.emplace_back(d.shape, d.color);
    images[k].subjects.push_back(std::move(d));
  }
  for (std::size_t k = 0; k < images.size(); ++k) {
    const int extra = candidates[k] - 1;
    if (extra == 0) continue;
    std::vector<bool> own(cells, false);
    placer.mark(own, images[k].subjects[0].cells);
    const Draft tgt = images[k].subjects[0];
    std::vector<int> shapes, colors;
    if (intra) {
      shapes.assign(static_cast<std::size_t>(extra), tgt.shape);
      for (int c : distinct_values(rng, cfg.n_colors, cfg.n_colors)) {
        if (c != tgt.color) colors.push_back(c);
      }
    } else {
      for (int s : distinct_values(rng, cfg.n_shapes, cfg.n_shapes)) {
        if (s != tgt.shape) shapes.push_back(s);
      }
      for (int i = 0; i < extra; ++i) colors.push_back(placer.uniform(0, cfg.n_colors - 1));
    }
    for (int i = 0; i < extra; ++i) {
      Draft d;
      d.shape = shapes[static_cast<std::size_t>(i)];
      // Distractor classes never coincide with any target class.
      int color = colors[static_cast<std::size_t>(i)];
      for (int tries = 0; tries < cfg.n_colors; ++tries) {
        if (std::find(target_classes.begin(), target_classes.end(), std::make_pair(d.shape, color)) ==
            target_classes.end())
          break;
        color = (color + 1) % cfg.n_colors;
        if (intra && color == tgt.color) color = (color + 1) % cfg.n_colors;
      }
      if (std::find(target_classes.begin(), target_classes.end(), std::make_pair(d.shape, color)) !=
          target_classes.end())
        throw GenerationError("no distractor colour distinct from target classes");
      d.color = color;
      d.cells = placer.place(placer.uniform(1, cfg.max_subject_cells), {&own});
      placer.mark(own, d.cells);
      images[k].subjects.push_back(std::move(d));
    }
    if (intra) {
      images[k].relation = separating_relation(
          Subject{tgt.shape, tgt.color, tgt.cells.front(), tgt.cells},
          Subject{images[k].subjects[1].shape, images[k].subjects[1].color,
                  images[k].subjects[1].cells.front(), images[k].subjects[1].cells});
    }
  }

  Sample sample;
  sample.seed = seed;
  sample.task = task;
  sample.target.rows = cfg.rows;
  sample.target.cols = cfg.cols;
  const Vocabulary vocab(cfg);
  sample.instruction.push_back(vocab.bos());
  for (std::size_t k = 0; k < images.size(); ++k) {
    Scene scene;
    scene.rows = cfg.rows;
    scene.cols = cfg.cols;
    for (const auto& d : images[k].subjects) {
      scene.subjects.push_back(Subject{d.shape, d.color, d.cells.front(), d.cells});
    }
    canonicalize(scene);
    const Draft& tgt = images[k].subjects[0];
    for (std::size_t i = 0; i < scene.subjects.size(); ++i) {
      const auto& fp = scene.subjects[i].footprint;
      const bool is_target = std::find(fp.begin(), fp.end(), tgt.cells.front()) != fp.end();
      const SubjectRef ref{static_cast<int>(k), static_cast<int>(i)};
      (is_target ? sample.target_subjects : sample.distractor_subjects).push_back(ref);
      if (is_target) sample.target.subjects.push_back(scene.subjects[i]);
    }
    if (k > 0) sample.instruction.push_back(vocab.conj());
    sample.instruction.push_back(vocab.image(static_cast<int>(k)));
    sample.instruction.push_back(vocab.color(tgt.color));
    sample.instruction.push_back(vocab.shape(tgt.shape));
    if (images[k].relation) sample.instruction.push_back(vocab.relation(*images[k].relation));
    sample.references.push_back(std::move(scene));
  }
  sample.instruction.push_back(vocab.eos());
  canonicalize(sample.target);
  return sample;
}

std::vector<Sample> gen_suite(const std::vector<Task>& tasks, std::uint64_t seed_begin,
                              std::size_t count, const WorldConfig& cfg, std::uint64_t id_begin) {
  std::vector<Sample> out;
  out.reserve(tasks.size() * count);
  std::uint64_t id = id_begin;
  for (Task task : tasks) {
    for (std::size_t i = 0; i < count; ++i) {
      Sample s = gen_sample(task, seed_begin + i, cfg);
      s.id = id++;
      out.push_back(std::move(s));
    }
  }
  return out;
}

std::vector<std::vector<bool>> target_cell_flags(const Sample& sample) {
  std::vector<std::vector<bool>> out;
  for (const auto& ref : sample.references) {
    out.emplace_back(static_cast<std::size_t>(ref.rows * ref.cols), false);
  }
  for (const auto& t : sample.target_subjects) {
    const auto& scene = sample.references[static_cast<std::size_t>(t.image)];
    for (const auto& c : scene.subjects[static_cast<std::size_t>(t.subject)].footprint) {
      out[static_cast<std::size_t>(t.image)][static_cast<std::size_t>(c.row * scene.cols + c.col)] = true;
    }
  }
  return out;
}

}  // namespace motb::world
