#include "motb/cli/run_config.hpp"

#include <algorithm>
#include <cstdlib>

#include "motb/errors.hpp"
#include "motb/synthworld/codec.hpp"

namespace motb::cli {

namespace {

using nlohmann::json;

json tasks_json(const std::vector<world::Task>& tasks) {
  json a = json::array();
  for (auto t : tasks) a.push_back(std::string(world::task_name(t)));
  return a;
}

std::vector<world::Task> tasks_from(const json& j) {
  std::vector<world::Task> out;
  for (const auto& t : j) out.push_back(world::parse_task(t.get<std::string>()));
  return out;
}

json world_json(const world::WorldConfig& w) {
  return {{"rows", w.rows},           {"cols", w.cols},
          {"n_shapes", w.n_shapes},   {"n_colors", w.n_colors},
          {"max_subject_cells", w.max_subject_cells}, {"max_images", w.max_images}};
}

world::WorldConfig world_from(const json& j) {
  world::WorldConfig w;
  w.rows = j.value("rows", w.rows);
  w.cols = j.value("cols", w.cols);
  w.n_shapes = j.value("n_shapes", w.n_shapes);
  w.n_colors = j.value("n_colors", w.n_colors);
  w.max_subject_cells = j.value("max_subject_cells", w.max_subject_cells);
  w.max_images = j.value("max_images", w.max_images);
  return w;
}

json eval_json(const EvalSpec& e) {
  return {{"name", e.name},         {"tasks", tasks_json(e.tasks)}, {"suite_seed", e.suite_seed},
          {"per_task", e.per_task}, {"rounds", e.rounds},           {"scorings", e.scorings},
          {"base_seed", e.base_seed}, {"sampler_steps", e.sampler_steps}};
}

EvalSpec eval_from(const json& j, EvalSpec e) {
  e.name = j.value("name", e.name);
  if (j.contains("tasks")) e.tasks = tasks_from(j.at("tasks"));
  e.suite_seed = j.value("suite_seed", e.suite_seed);
  e.per_task = j.value("per_task", e.per_task);
  e.rounds = j.value("rounds", e.rounds);
  e.scorings = j.value("scorings", e.scorings);
  e.base_seed = j.value("base_seed", e.base_seed);
  e.sampler_steps = j.value("sampler_steps", e.sampler_steps);
  return e;
}

trainer::StageConfig stage_from(const json& stages, const char* key, const trainer::StageConfig& fallback) {
  if (!stages.contains(key)) return fallback;
  json j = stages.at(key);
  if (!j.contains("phase")) j["phase"] = key;
  if (j.at("phase") != key) throw ConfigError(std::string("stages.") + key + " must have phase '" + key + "'");
  json merged = trainer::to_json(fallback);
  merged.merge_patch(j);
  return trainer::stage_config_from_json(merged);
}

void check_eval(const EvalSpec& e, const std::string& where) {
  if (e.tasks.empty() || e.per_task == 0) throw ConfigError(where + ": suite is empty");
  if (e.rounds < 1 || e.scorings < 1) throw ConfigError(where + ": rounds and scorings must be >= 1");
  if (e.sampler_steps < 1) throw ConfigError(where + ": sampler_steps must be >= 1");
}

}  // namespace

void RunConfig::finalize() {
  if (!(tau > -1.0 && tau < 1.0)) throw ConfigError("tau must lie in (-1, 1)");
  model.validate();
  if (world.rows < 1 || world.cols < 1 || world.rows * world.cols < 16) throw ConfigError("world grid must have >= 16 cells");
  if (world.n_shapes < 2 || world.n_colors < 2) throw ConfigError("world needs >= 2 shapes and >= 2 colours");
  if (world.max_images < 1 || world.max_subject_cells < 1) throw ConfigError("world capacities must be positive");
  const world::Codec codec(world);
  const world::Vocabulary vocab(world);
  if (model.d_latent != codec.latent_dim()) {
    throw ConfigError("model.d_latent must equal the codec latent size " + std::to_string(codec.latent_dim()));
  }
  if (model.cell_vocab < codec.num_classes()) throw ConfigError("model.cell_vocab smaller than the cell classes");
  if (model.text_vocab < vocab.size()) throw ConfigError("model.text_vocab smaller than the instruction vocabulary");
  if (model.max_images < world.max_images) throw ConfigError("model.max_images smaller than world.max_images");
  if (refine_steps < 0) throw ConfigError("refine_steps must be >= 0");

  for (trainer::StageConfig* s : {&stage1, &stage2_step1, &stage2_step2}) s->seed = seed;
  stage2_step1.tau = tau;
  stage2_step2.tau = tau;
  stage1.validate();
  stage2_step1.validate();
  stage2_step2.validate();

  check_eval(eval, "eval");
  check_eval(ablate.suite, "ablate.suite");
  if (ablate.seeds.empty() || ablate.taus.empty()) throw ConfigError("ablate needs seeds and taus");
  for (double t : ablate.taus) {
    if (!(t > -1.0 && t < 1.0)) throw ConfigError("ablate.taus must lie in (-1, 1)");
  }
  if (probe.tasks.empty() || probe.per_task == 0) throw ConfigError("probe suite is empty");
  if (!(probe.fraction > 0.0 && probe.fraction <= 1.0)) throw ConfigError("probe.fraction must lie in (0, 1]");
}

json to_json(const RunConfig& c) {
  return {{"seed", c.seed},
          {"tau", c.tau},
          {"world", world_json(c.world)},
          {"model", model::to_json(c.model)},
          {"stages",
           {{"stage1", trainer::to_json(c.stage1)},
            {"stage2_step1", trainer::to_json(c.stage2_step1)},
            {"stage2_step2", trainer::to_json(c.stage2_step2)}}},
          {"refine_steps", c.refine_steps},
          {"eval", eval_json(c.eval)},
          {"ablate", {{"seeds", c.ablate.seeds}, {"taus", c.ablate.taus}, {"suite", eval_json(c.ablate.suite)}}},
          {"probe",
           {{"tasks", tasks_json(c.probe.tasks)},
            {"suite_seed", c.probe.suite_seed},
            {"per_task", c.probe.per_task},
            {"fraction", c.probe.fraction},
            {"image_samples", c.probe.image_samples}}}};
}

RunConfig run_config_from_json(const json& j) {
  static const char* const kKeys[] = {"seed", "tau", "out", "world", "model", "stages", "refine_steps",
                                      "eval", "ablate", "probe"};
  RunConfig c;
  try {
    if (!j.is_object()) throw ConfigError("run config must be a JSON object");
    for (const auto& [key, value] : j.items()) {
      if (std::find(std::begin(kKeys), std::end(kKeys), key) == std::end(kKeys)) {
        throw ConfigError("unknown run config key '" + key + "'");
      }
    }
    c.seed = j.value("seed", c.seed);
    c.tau = j.value("tau", c.tau);
    if (j.contains("out")) c.out = j.at("out").get<std::string>();
    if (j.contains("world")) c.world = world_from(j.at("world"));
    if (j.contains("model")) c.model = model::model_config_from_json(j.at("model"));
    if (j.contains("stages")) {
      const auto& s = j.at("stages");
      c.stage1 = stage_from(s, "stage1", c.stage1);
      c.stage2_step1 = stage_from(s, "stage2_step1", c.stage2_step1);
      c.stage2_step2 = stage_from(s, "stage2_step2", c.stage2_step2);
    }
    c.refine_steps = j.value("refine_steps", c.refine_steps);
    if (j.contains("eval")) c.eval = eval_from(j.at("eval"), c.eval);
    if (j.contains("ablate")) {
      const auto& a = j.at("ablate");
      if (a.contains("seeds")) c.ablate.seeds = a.at("seeds").get<std::vector<std::uint64_t>>();
      if (a.contains("taus")) c.ablate.taus = a.at("taus").get<std::vector<double>>();
      if (a.contains("suite")) c.ablate.suite = eval_from(a.at("suite"), c.ablate.suite);
    }
    if (j.contains("probe")) {
      const auto& p = j.at("probe");
      if (p.contains("tasks")) c.probe.tasks = tasks_from(p.at("tasks"));
      c.probe.suite_seed = p.value("suite_seed", c.probe.suite_seed);
      c.probe.per_task = p.value("per_task", c.probe.per_task);
      c.probe.fraction = p.value("fraction", c.probe.fraction);
      c.probe.image_samples = p.value("image_samples", c.probe.image_samples);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
  c.finalize();
  return c;
}

json parse_json_text(const std::string& text, const std::string& source) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    // e.byte is 1-based and points just past the offending character.
    const std::size_t at = e.byte == 0 ? 0 : std::min<std::size_t>(e.byte - 1, text.size());
    std::size_t line = 1, column = 1;
    for (std::size_t i = 0; i < at; ++i) {
      if (text[i] == '\n') {
        ++line;
        column = 1;
      } else {
        ++column;
      }
    }
    std::string what = e.what();
    const auto colon = what.find(": ", what.find("parse error"));
    if (colon != std::string::npos) what = what.substr(colon + 2);
    throw ConfigError(source + ":" + std::to_string(line) + ":" + std::to_string(column) + ": " + what);
  }
}

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;

  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
    if (!node->is_object()) throw ConfigError("override key '" + key + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

std::filesystem::path default_out_root() {
  const char* env = std::getenv("MOTB_OUT_ROOT");
  return env && *env ? std::filesystem::path(env) : std::filesystem::path("runs");
}

}  // namespace motb::cli
