#include "motb/trainer/trainer.hpp"

#include <chrono>
#include <cmath>
#include <exception>
#include <random>
#include <sstream>

#include "motb/errors.hpp"
#include "motb/model/checkpoint.hpp"
#include "motb/synthworld/codec.hpp"

namespace motb::trainer {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0) {
  return splitmix(splitmix(splitmix(a) ^ b) ^ c);
}

constexpr std::uint64_t kBatchTag = 0xba7c;
constexpr std::uint64_t kTimeTag = 0x7173;
constexpr std::uint64_t kNoiseTag = 0x0153;

std::set<ParamGroup> groups_for(Phase p) {
  using G = ParamGroup;
  switch (p) {
    case Phase::Stage1: return {G::Understanding, G::Generation, G::SharedEmbeddings, G::FlowHead};
    case Phase::Stage2Step1: return {G::Understanding};
    case Phase::Stage2Step2:
    case Phase::Direct: return {G::Understanding, G::Generation, G::FlowHead};
  }
  return {};
}

std::string group_list(const std::set<ParamGroup>& g) {
  std::string s;
  for (auto x : g) s += (s.empty() ? "" : ",") + std::string(group_name(x));
  return "{" + s + "}";
}

}  // namespace

std::string_view phase_name(Phase p) {
  switch (p) {
    case Phase::Stage1: return "stage1";
    case Phase::Stage2Step1: return "stage2_step1";
    case Phase::Stage2Step2: return "stage2_step2";
    case Phase::Direct: return "direct";
  }
  return "?";
}

Phase parse_phase(std::string_view name) {
  for (Phase p : {Phase::Stage1, Phase::Stage2Step1, Phase::Stage2Step2, Phase::Direct}) {
    if (phase_name(p) == name) return p;
  }
  throw ConfigError("unknown phase '" + std::string(name) + "'");
}

StageConfig StageConfig::stage1(int steps, std::uint64_t seed) {
  StageConfig c;
  c.phase = Phase::Stage1;
  c.steps = steps;
  c.trainable_groups = groups_for(c.phase);
  c.mask_active = false;
  c.seed = seed;
  c.dataset.tasks = {world::Task::CompositionSingle, world::Task::CompositionMulti};
  return c;
}

StageConfig StageConfig::stage2_step1(int steps, std::uint64_t seed, double tau) {
  StageConfig c;
  c.phase = Phase::Stage2Step1;
  c.steps = steps;
  c.trainable_groups = groups_for(c.phase);
  c.mask_active = true;
  c.tau = tau;
  c.seed = seed;
  c.dataset.tasks = {world::Task::DistinctionCross, world::Task::DistinctionIntra,
                     world::Task::DistCompCross, world::Task::DistCompIntra};
  c.align_weight = 5.0;
  c.learning_rate = 1e-2;
  c.batch_size = 8;
  return c;
}

StageConfig StageConfig::stage2_step2(int steps, std::uint64_t seed, double tau) {
  StageConfig c = stage2_step1(steps, seed, tau);
  c.phase = Phase::Stage2Step2;
  c.trainable_groups = groups_for(c.phase);
  return c;
}

StageConfig StageConfig::direct(int steps, std::uint64_t seed) {
  StageConfig c;
  c.phase = Phase::Direct;
  c.steps = steps;
  c.trainable_groups = groups_for(c.phase);
  c.mask_active = false;
  c.seed = seed;
  c.ablation = true;
  c.dataset.tasks = {world::Task::DistinctionCross, world::Task::DistinctionIntra,
                     world::Task::DistCompCross, world::Task::DistCompIntra};
  return c;
}

void StageConfig::validate() const {
  const std::string where = "phase " + std::string(phase_name(phase)) + ": ";
  if (steps < 0) throw ConfigError(where + "steps must be >= 0");
  if (batch_size < 1) throw ConfigError(where + "batch_size must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError(where + "learning_rate must be > 0");
  if (!(tau > -1.0 && tau < 1.0)) throw ConfigError(where + "tau must lie in (-1, 1)");
  if (align_weight < 0.0) throw ConfigError(where + "align_weight must be >= 0");
  if (dataset.tasks.empty() || dataset.per_task == 0) throw ConfigError(where + "dataset is empty");
  const auto expected = groups_for(phase);
  if (trainable_groups != expected) {
    throw ConfigError(where + "trainable groups " + group_list(trainable_groups) + " != required " +
                      group_list(expected));
  }
  if (phase == Phase::Stage1) {
    if (mask_active) throw ConfigError(where + "mask must be inactive in Stage I");
    for (auto t : dataset.tasks) {
      if (!world::is_single_candidate(t)) {
        throw ConfigError(where + "Stage I uses single-candidate tasks only, got " + std::string(world::task_name(t)));
      }
    }
  }
  if (phase == Phase::Stage2Step2) {
    bool multi = false;
    for (auto t : dataset.tasks) multi = multi || !world::is_single_candidate(t);
    if (!multi) throw ConfigError(where + "Stage II step 2 needs multi-candidate tasks");
  }
  if (phase == Phase::Direct && mask_active) throw ConfigError(where + "mask must be inactive in the direct variant");
  if ((phase == Phase::Stage2Step1 || phase == Phase::Stage2Step2) && !mask_active && !ablation) {
    throw ConfigError(where + "mask must be active in Stage II");
  }
  if (align_weight > 0.0 && !trainable_groups.contains(ParamGroup::Understanding)) {
    throw ConfigError(where + "alignment term needs the understanding expert to be trainable");
  }
}

nlohmann::json to_json(const StageConfig& c) {
  nlohmann::json groups = nlohmann::json::array();
  for (auto g : c.trainable_groups) groups.push_back(std::string(group_name(g)));
  nlohmann::json tasks = nlohmann::json::array();
  for (auto t : c.dataset.tasks) tasks.push_back(std::string(world::task_name(t)));
  return {{"phase", std::string(phase_name(c.phase))},
          {"steps", c.steps},
          {"trainable_groups", groups},
          {"mask_active", c.mask_active},
          {"tau", c.tau},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"seed", c.seed},
          {"dataset", {{"tasks", tasks}, {"seed", c.dataset.seed}, {"per_task", c.dataset.per_task}}},
          {"align_weight", c.align_weight},
          {"align_margin", c.align_margin},
          {"align_gap", c.align_gap},
          {"ablation", c.ablation}};
}

StageConfig stage_config_from_json(const nlohmann::json& j) {
  try {
    const Phase phase = parse_phase(j.at("phase").get<std::string>());
    StageConfig c;
    switch (phase) {
      case Phase::Stage1: c = StageConfig::stage1(0, 0); break;
      case Phase::Stage2Step1: c = StageConfig::stage2_step1(0, 0); break;
      case Phase::Stage2Step2: c = StageConfig::stage2_step2(0, 0); break;
      case Phase::Direct: c = StageConfig::direct(0, 0); break;
    }
    c.steps = j.value("steps", c.steps);
    if (j.contains("trainable_groups")) {
      c.trainable_groups.clear();
      for (const auto& g : j.at("trainable_groups")) c.trainable_groups.insert(model::parse_group(g.get<std::string>()));
    }
    c.mask_active = j.value("mask_active", c.mask_active);
    c.tau = j.value("tau", c.tau);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.seed = j.value("seed", c.seed);
    if (j.contains("dataset")) {
      const auto& d = j.at("dataset");
      if (d.contains("tasks")) {
        c.dataset.tasks.clear();
        for (const auto& t : d.at("tasks")) c.dataset.tasks.push_back(world::parse_task(t.get<std::string>()));
      }
      c.dataset.seed = d.value("seed", c.dataset.seed);
      c.dataset.per_task = d.value("per_task", c.dataset.per_task);
    }
    c.align_weight = j.value("align_weight", c.align_weight);
    c.align_margin = j.value("align_margin", c.align_margin);
    c.align_gap = j.value("align_gap", c.align_gap);
    c.ablation = j.value("ablation", c.ablation);
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("stage config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("stage config: ") + e.what());
  }
}

nlohmann::json to_json(const TrainReport& r) {
  return {{"phase", r.phase},
          {"losses", r.losses},
          {"flow_losses", r.flow_losses},
          {"align_losses", r.align_losses},
          {"wall_clock_seconds", r.wall_clock_seconds},
          {"checkpoint_path", r.checkpoint_path},
          {"untouched_parameters", r.untouched_parameters},
          {"config", r.config_echo}};
}

std::string loss_csv(const TrainReport& r) {
  std::ostringstream os;
  os.precision(9);
  os << "step,loss\n";
  for (std::size_t i = 0; i < r.losses.size(); ++i) os << i << ',' << r.losses[i] << '\n';
  return os.str();
}

template <typename T>
ad::Var flow_loss_var(ad::Tape<T>& tape, const model::BoundWeights<T>& w, const model::ModelConfig& cfg,
                      const world::WorldConfig& world_cfg, const world::Sample& sample, T t,
                      std::uint64_t noise_seed, bool mask_active, double tau, model::TapeForward<T>* forward_out) {
  const world::Codec codec(world_cfg);
  const Tensor<T> x1 = codec.render<T>(sample.target);
  std::mt19937_64 rng(noise_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor<T> x0(x1.shape());
  for (auto& v : x0.storage()) v = static_cast<T>(normal(rng));
  Tensor<T> xt(x1.shape()), velocity(x1.shape());
  for (std::size_t i = 0; i < x1.size(); ++i) {
    xt[i] = (T{1} - t) * x0[i] + t * x1[i];
    velocity[i] = x1[i] - x0[i];
  }
  const auto streams = model::sample_streams(tape, w, cfg, world_cfg, sample.references, sample.instruction, xt, t);
  model::MaskSpec spec;
  if (mask_active) spec.tau = tau;
  auto fwd = model::forward_var(tape, w, cfg, streams, spec);
  const ad::Var loss = ad::mse(tape, *fwd.flow, velocity);
  if (forward_out) *forward_out = std::move(fwd);
  return loss;
}

template <typename T>
double flow_loss(const world::Sample& sample, double t, std::uint64_t noise_seed, const model::Weights<T>& w,
                 const world::WorldConfig& world_cfg, bool mask_active, double tau) {
  ad::Tape<T> tape(false);
  const model::WeightLayout layout(w.config);
  const auto bound = model::bind(tape, layout, w);
  const ad::Var loss =
      flow_loss_var(tape, bound, w.config, world_cfg, sample, static_cast<T>(t), noise_seed, mask_active, tau);
  return static_cast<double>(tape.value(loss)[0]);
}

template <typename T>
ad::Var alignment_loss_var(ad::Tape<T>& tape, const model::TapeForward<T>& fwd, const model::ModelConfig& cfg,
                           const world::Sample& sample, double tau, double margin, double gap) {
  std::vector<std::size_t> text_rows, vis_rows;
  for (std::size_t k = 0; k < fwd.streams.size(); ++k) {
    const auto& info = fwd.streams[k];
    const std::size_t off = fwd.layout.offset[k];
    if (info.modality == model::Modality::Text) {
      for (std::size_t r = 0; r < info.length; ++r) {
        const int id = r < info.token_ids.size() ? info.token_ids[r] : -1;
        if (id != cfg.bos_id && id != cfg.eos_id) text_rows.push_back(off + r);
      }
    } else if (info.modality == model::Modality::VisUnd) {
      for (std::size_t r = 0; r < info.length; ++r) vis_rows.push_back(off + r);
    }
  }
  if (text_rows.empty() || vis_rows.empty()) throw EmptyInputError("alignment loss needs text and visual tokens");

  // Visual tokens in reference order: target cells, distractor cells, rest.
  const auto flags = world::target_cell_flags(sample);
  std::vector<std::size_t> pos, hard, neg;
  std::size_t base = 0;
  for (std::size_t k = 0; k < flags.size(); ++k) {
    const auto& ref = sample.references[k];
    std::vector<bool> distractor(flags[k].size(), false);
    for (const auto& d : sample.distractor_subjects) {
      if (static_cast<std::size_t>(d.image) != k) continue;
      for (const auto& c : ref.subjects[static_cast<std::size_t>(d.subject)].footprint) {
        distractor[static_cast<std::size_t>(c.row * ref.cols + c.col)] = true;
      }
    }
    for (std::size_t i = 0; i < flags[k].size(); ++i) {
      (flags[k][i] ? pos : distractor[i] ? hard : neg).push_back(base + i);
    }
    base += flags[k].size();
  }
  if (base != vis_rows.size()) throw DimensionError("alignment loss: flag count does not match visual tokens");

  const ad::Var states = fwd.layer_states[static_cast<std::size_t>(cfg.mask_source_layer)];
  const ad::Var ht = ad::l2_normalize_rows(tape, ad::gather_rows(tape, states, std::span<const std::size_t>(text_rows)));
  const ad::Var hv = ad::l2_normalize_rows(tape, ad::gather_rows(tape, states, std::span<const std::size_t>(vis_rows)));
  const ad::Var s = ad::row_mean(tape, ad::matmul_nt(tape, hv, ht));
  // Each group is averaged on its own so the few target and distractor cells
  // are not drowned out by the background.
  std::optional<ad::Var> total;
  auto term = [&](const std::vector<std::size_t>& ids, T lo, T hi) {
    if (ids.empty()) return;
    const std::vector<T> los(ids.size(), lo), his(ids.size(), hi);
    const ad::Var part = ad::gather_rows(tape, s, std::span<const std::size_t>(ids));
    const ad::Var pen = ad::band_penalty(tape, part, std::span<const T>(los), std::span<const T>(his));
    total = total ? ad::add(tape, *total, pen) : pen;
  };
  term(pos, static_cast<T>(tau + margin), T{2});
  term(hard, T{-2}, static_cast<T>(tau - gap));
  term(neg, T{-2}, static_cast<T>(tau - gap));
  return *total;
}

std::vector<bool> trainable_mask(const model::WeightLayout& layout, const std::set<ParamGroup>& groups) {
  std::vector<bool> out(layout.size());
  for (std::size_t i = 0; i < layout.size(); ++i) out[i] = groups.contains(layout.specs()[i].group);
  return out;
}

namespace {

struct SampleGrad {
  std::vector<std::optional<Tensor<float>>> grads;
  LossTerms loss;
  std::string error;
};

SampleGrad sample_gradient(const StageConfig& c, const model::WeightLayout& layout, const model::Weights<float>& w,
                           const std::vector<bool>& trainable, const world::WorldConfig& world_cfg,
                           const world::Sample& sample, std::uint64_t step) {
  SampleGrad out;
  ad::Tape<float> tape(true);
  const auto bound = model::bind(tape, layout, w, trainable);
  std::mt19937_64 trng(mix(c.seed ^ kTimeTag, sample.id, step));
  const float t = static_cast<float>(std::uniform_real_distribution<double>(0.0, 1.0)(trng));
  const std::uint64_t noise_seed = mix(c.seed ^ kNoiseTag, sample.id, step);
  model::TapeForward<float> fwd;
  ad::Var total = flow_loss_var(tape, bound, w.config, world_cfg, sample, t, noise_seed, c.mask_active, c.tau, &fwd);
  out.loss.flow = tape.value(total)[0];
  if (c.align_weight > 0.0) {
    const ad::Var a = alignment_loss_var(tape, fwd, w.config, sample, c.tau, c.align_margin, c.align_gap);
    out.loss.align = tape.value(a)[0];
    total = ad::add(tape, total, ad::scale(tape, a, static_cast<float>(c.align_weight)));
  }
  tape.backward(total);
  out.grads.resize(layout.size());
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (trainable[i] && tape.has_grad(bound[i])) out.grads[i] = tape.grad(bound[i]);
  }
  return out;
}

}  // namespace

PhaseResult run_phase(const StageConfig& config, model::Weights<float> weights, const world::WorldConfig& world_cfg,
                      const std::filesystem::path& checkpoint_path) {
  config.validate();
  const auto started = std::chrono::steady_clock::now();
  const model::WeightLayout layout(weights.config);
  const auto trainable = trainable_mask(layout, config.trainable_groups);
  const auto pool = world::gen_suite(config.dataset.tasks, config.dataset.seed, config.dataset.per_task, world_cfg);

  PhaseResult result{std::move(weights), {}};
  auto& w = result.weights;
  TrainReport& report = result.report;
  report.phase = std::string(phase_name(config.phase));
  report.config_echo = to_json(config);

  OptimizerState opt;
  opt.first_moment.resize(layout.size());
  opt.second_moment.resize(layout.size());
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (!trainable[i]) continue;
    opt.first_moment[i] = Tensor<float>(w.tensors[i].shape());
    opt.second_moment[i] = Tensor<float>(w.tensors[i].shape());
  }
  std::vector<bool> touched(layout.size(), false);
  const AdamConfig adam;
  const std::size_t batch = static_cast<std::size_t>(config.batch_size);

  for (int step = 0; step < config.steps; ++step) {
    std::mt19937_64 brng(mix(config.seed ^ kBatchTag, static_cast<std::uint64_t>(step)));
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    std::vector<std::size_t> ids(batch);
    for (auto& id : ids) id = pick(brng);

    std::vector<SampleGrad> per(batch);
#pragma omp parallel for schedule(dynamic, 1)
    for (std::size_t b = 0; b < batch; ++b) {
      try {
        per[b] = sample_gradient(config, layout, w, trainable, world_cfg, pool[ids[b]],
                                 static_cast<std::uint64_t>(step));
      } catch (const std::exception& e) {
        per[b].error = e.what();
      }
    }
    for (const auto& p : per) {
      if (!p.error.empty()) throw TrainingError("step " + std::to_string(step) + ": " + p.error);
    }

    // Fixed-order reduction keeps results independent of thread count.
    const float inv = 1.0f / static_cast<float>(batch);
    LossTerms mean;
    for (const auto& p : per) {
      mean.flow += p.loss.flow / static_cast<double>(batch);
      mean.align += p.loss.align / static_cast<double>(batch);
    }
    const double total = mean.flow + config.align_weight * mean.align;
    if (!std::isfinite(total)) {
      throw TrainingError("non-finite loss at step " + std::to_string(step) + " in phase " + report.phase);
    }
    report.losses.push_back(total);
    report.flow_losses.push_back(mean.flow);
    report.align_losses.push_back(mean.align);

    ++opt.step;
    const double bc1 = 1.0 - std::pow(adam.beta1, static_cast<double>(opt.step));
    const double bc2 = 1.0 - std::pow(adam.beta2, static_cast<double>(opt.step));
    const float lr = static_cast<float>(config.learning_rate);
    for (std::size_t i = 0; i < layout.size(); ++i) {
      if (!trainable[i]) continue;
      Tensor<float> g(w.tensors[i].shape());
      bool any = false;
      for (const auto& p : per) {
        if (!p.grads[i]) continue;
        const auto& pg = *p.grads[i];
        for (std::size_t k = 0; k < g.size(); ++k) g[k] += pg[k] * inv;
        any = true;
      }
      if (!any) continue;
      auto& m = *opt.first_moment[i];
      auto& v = *opt.second_moment[i];
      auto& theta = w.tensors[i];
      for (std::size_t k = 0; k < g.size(); ++k) {
        if (!std::isfinite(g[k])) {
          throw TrainingError("non-finite gradient for " + layout.specs()[i].name + " at step " + std::to_string(step));
        }
        if (g[k] != 0.0f) touched[i] = true;
        m[k] = static_cast<float>(adam.beta1) * m[k] + static_cast<float>(1.0 - adam.beta1) * g[k];
        v[k] = static_cast<float>(adam.beta2) * v[k] + static_cast<float>(1.0 - adam.beta2) * g[k] * g[k];
        const double mh = m[k] / bc1;
        const double vh = v[k] / bc2;
        theta[k] -= static_cast<float>(lr * mh / (std::sqrt(vh) + adam.eps));
      }
    }
  }

  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (trainable[i] && !touched[i]) report.untouched_parameters.push_back(layout.specs()[i].name);
  }
  if (!checkpoint_path.empty()) {
    model::save_checkpoint(w, checkpoint_path);
    report.checkpoint_path = checkpoint_path.string();
  }
  report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

CurriculumResult run_curriculum(const StageConfig& stage1, const StageConfig& s2s1, const StageConfig& s2s2,
                                std::uint64_t init_seed, const model::ModelConfig& model_cfg,
                                const world::WorldConfig& world_cfg, const std::filesystem::path& out_dir) {
  if (stage1.phase != Phase::Stage1 || s2s1.phase != Phase::Stage2Step1 || s2s2.phase != Phase::Stage2Step2) {
    throw ConfigError("curriculum phases must be stage1, stage2_step1, stage2_step2 in order");
  }
  stage1.validate();
  s2s1.validate();
  s2s2.validate();
  CurriculumResult out;
  auto w = model::Weights<float>::init(model_cfg, init_seed);
  for (const StageConfig* c : {&stage1, &s2s1, &s2s2}) {
    std::filesystem::path ckpt;
    if (!out_dir.empty()) ckpt = out_dir / (std::string(phase_name(c->phase)) + ".ckpt");
    auto r = run_phase(*c, std::move(w), world_cfg, ckpt);
    // Resume from the saved file so each phase starts from exactly what was persisted.
    w = ckpt.empty() ? std::move(r.weights) : model::load_checkpoint(ckpt);
    out.reports.push_back(std::move(r.report));
    out.checkpoints.push_back(ckpt);
  }
  out.weights = std::move(w);
  return out;
}

#define MOTB_TRAINER_INSTANTIATE(T)                                                                            \
  template ad::Var flow_loss_var<T>(ad::Tape<T>&, const model::BoundWeights<T>&, const model::ModelConfig&,    \
                                    const world::WorldConfig&, const world::Sample&, T, std::uint64_t, bool,   \
                                    double, model::TapeForward<T>*);                                           \
  template double flow_loss<T>(const world::Sample&, double, std::uint64_t, const model::Weights<T>&,          \
                               const world::WorldConfig&, bool, double);                                       \
  template ad::Var alignment_loss_var<T>(ad::Tape<T>&, const model::TapeForward<T>&, const model::ModelConfig&, \
                                         const world::Sample&, double, double, double);

MOTB_TRAINER_INSTANTIATE(float)
MOTB_TRAINER_INSTANTIATE(double)

}  // namespace motb::trainer
