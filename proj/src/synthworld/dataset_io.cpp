#include "motb/synthworld/dataset_io.hpp"

#include <fstream>
#include <string>

#include "motb/errors.hpp"

namespace motb::world {

using nlohmann::json;

json to_json(const Scene& scene) {
  json subjects = json::array();
  for (const auto& s : scene.subjects) {
    json cells = json::array();
    for (const auto& c : s.footprint) cells.push_back({c.row, c.col});
    subjects.push_back({{"shape", s.shape_id}, {"color", s.color_id}, {"cells", cells}});
  }
  return {{"grid", {scene.rows, scene.cols}}, {"background", scene.background}, {"subjects", subjects}};
}

Scene scene_from_json(const json& j) {
  Scene scene;
  scene.rows = j.at("grid").at(0).get<int>();
  scene.cols = j.at("grid").at(1).get<int>();
  scene.background = j.at("background").get<int>();
  for (const auto& sj : j.at("subjects")) {
    Subject s;
    s.shape_id = sj.at("shape").get<int>();
    s.color_id = sj.at("color").get<int>();
    for (const auto& cj : sj.at("cells")) s.footprint.push_back(Cell{cj.at(0).get<int>(), cj.at(1).get<int>()});
    scene.subjects.push_back(std::move(s));
  }
  canonicalize(scene);
  return scene;
}

namespace {

json refs_to_json(const std::vector<SubjectRef>& refs) {
  json out = json::array();
  for (const auto& r : refs) out.push_back({r.image, r.subject});
  return out;
}

std::vector<SubjectRef> refs_from_json(const json& j) {
  std::vector<SubjectRef> out;
  for (const auto& r : j) out.push_back(SubjectRef{r.at(0).get<int>(), r.at(1).get<int>()});
  return out;
}

}  // namespace

json to_json(const Sample& sample) {
  json refs = json::array();
  for (const auto& r : sample.references) refs.push_back(to_json(r));
  return {{"schema_version", kDatasetSchemaVersion},
          {"id", sample.id},
          {"seed", sample.seed},
          {"task", std::string(task_name(sample.task))},
          {"references", refs},
          {"instruction", sample.instruction},
          {"target", to_json(sample.target)},
          {"target_subjects", refs_to_json(sample.target_subjects)},
          {"distractor_subjects", refs_to_json(sample.distractor_subjects)}};
}

Sample sample_from_json(const json& j) {
  const int version = j.at("schema_version").get<int>();
  if (version != kDatasetSchemaVersion) {
    throw ConfigError("dataset schema_version " + std::to_string(version) + " unsupported");
  }
  Sample s;
  s.id = j.at("id").get<std::uint64_t>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.task = parse_task(j.at("task").get<std::string>());
  for (const auto& r : j.at("references")) s.references.push_back(scene_from_json(r));
  s.instruction = j.at("instruction").get<std::vector<int>>();
  s.target = scene_from_json(j.at("target"));
  s.target_subjects = refs_from_json(j.at("target_subjects"));
  s.distractor_subjects = refs_from_json(j.at("distractor_subjects"));
  return s;
}

void write_dataset(const std::filesystem::path& path, const std::vector<Sample>& samples) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open dataset for writing: " + path.string());
  for (const auto& s : samples) out << to_json(s).dump() << '\n';
  if (!out) throw Error("failed writing dataset: " + path.string());
}

std::vector<Sample> read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open dataset: " + path.string());
  std::vector<Sample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(sample_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace motb::world
