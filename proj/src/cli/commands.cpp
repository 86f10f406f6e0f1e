#include "motb/cli/commands.hpp"

#include <chrono>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "motb/errors.hpp"
#include "motb/model/checkpoint.hpp"
#include "motb/model/sampler.hpp"
#include "motb/synthworld/dataset_io.hpp"

namespace motb::cli {

namespace {

using nlohmann::json;
using trainer::StageConfig;

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw IoError("write failed for " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path.string());
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

std::string tau_tag(double tau) {
  std::ostringstream os;
  os << tau;
  return os.str();
}

std::string fixed4(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << v;
  return os.str();
}

void log(const std::string& msg) { std::cerr << "[motb] " << msg << std::endl; }

fs::path seed_dir(const fs::path& out, const char* kind, std::uint64_t seed) {
  return out / kind / ("seed" + std::to_string(seed));
}

// Relative form used in reports so two output roots produce identical bytes.
std::string display_path(const fs::path& p, const fs::path& root) {
  const fs::path rel = p.lexically_relative(root);
  if (!rel.empty() && *rel.begin() != "..") return rel.generic_string();
  return p.filename().generic_string();
}

json checkpoint_echo(const fs::path& ckpt, const fs::path& root) {
  return {{"path", display_path(ckpt, root)}, {"fnv1a64", fnv1a_hex(read_bytes(ckpt))}};
}

std::vector<world::Sample> suite_of(const EvalSpec& e, const world::WorldConfig& w) {
  return world::gen_suite(e.tasks, e.suite_seed, e.per_task, w);
}

// Training chain with provenance-based checkpoint reuse.
class Chain {
 public:
  Chain(const RunConfig& cfg, std::uint64_t init_seed, fs::path out)
      : cfg_(&cfg), init_seed_(init_seed), out_(std::move(out)) {
    provenance_ = {{"init_seed", init_seed},
                   {"model", model::to_json(cfg.model)},
                   {"world", to_json(cfg).at("world")},
                   {"phases", json::array()}};
  }

  // Runs c from the current weights into ckpt, unless ckpt already holds
  // exactly this chain. Returns true when reused.
  bool advance(const StageConfig& c, const fs::path& ckpt, const fs::path& report_stem) {
    json next = provenance_;
    next["phases"].push_back(trainer::to_json(c));
    const fs::path sidecar = ckpt.string() + ".json";
    const std::string want = next.dump(2) + "\n";
    if (fs::exists(ckpt) && fs::exists(sidecar) && read_text(sidecar) == want) {
      provenance_ = std::move(next);
      weights_.reset();
      checkpoint_ = ckpt;
      log("reusing " + ckpt.string());
      return true;
    }
    log("training " + std::string(trainer::phase_name(c.phase)) + " (" + std::to_string(c.steps) + " steps) -> " +
        ckpt.string());
    fs::create_directories(ckpt.parent_path());
    auto r = trainer::run_phase(c, weights(), cfg_->world, ckpt);
    r.report.checkpoint_path = display_path(ckpt, out_);
    json report = trainer::to_json(r.report);
    report.erase("wall_clock_seconds");
    write_text(report_stem.string() + ".json", report.dump(2) + "\n");
    write_text(report_stem.string() + ".loss.csv", trainer::loss_csv(r.report));
    write_text(report_stem.string() + ".timing.json",
               json{{"wall_clock_seconds", r.report.wall_clock_seconds}}.dump(2) + "\n");
    write_text(sidecar, want);
    log("  done in " + fixed4(r.report.wall_clock_seconds) + " s, final loss " +
        (r.report.losses.empty() ? std::string("n/a") : fixed4(r.report.losses.back())));
    provenance_ = std::move(next);
    weights_ = model::load_checkpoint(ckpt);
    checkpoint_ = ckpt;
    return false;
  }

  const model::Weights<float>& weights() {
    if (!weights_) {
      weights_ = checkpoint_.empty() ? model::Weights<float>::init(cfg_->model, init_seed_)
                                     : model::load_checkpoint(checkpoint_);
    }
    return *weights_;
  }

  const fs::path& checkpoint() const { return checkpoint_; }

 private:
  const RunConfig* cfg_;
  std::uint64_t init_seed_;
  fs::path out_;
  json provenance_;
  std::optional<model::Weights<float>> weights_;
  fs::path checkpoint_;
};

StageConfig with_seed(StageConfig c, std::uint64_t seed) {
  c.seed = seed;
  return c;
}

StageConfig refine_config(const RunConfig& cfg, std::uint64_t seed) {
  StageConfig c = with_seed(cfg.stage1, seed);
  c.steps = cfg.refine_steps;
  c.dataset.seed += 1000003;
  return c;
}

// Stage I (and the optional refinement pass) shared by train and ablate.
void run_stage1(Chain& chain, const RunConfig& cfg, std::uint64_t seed, const fs::path& out, TrainResult* r = nullptr) {
  const fs::path ck = seed_dir(out, "checkpoints", seed);
  const fs::path rep = seed_dir(out, "reports", seed);
  const bool reused = chain.advance(with_seed(cfg.stage1, seed), ck / "stage1.ckpt", rep / "train_stage1");
  if (r) {
    r->checkpoints.push_back(ck / "stage1.ckpt");
    r->reused.push_back(reused);
  }
  if (cfg.refine_steps > 0) {
    const bool again = chain.advance(refine_config(cfg, seed), ck / "stage1_refined.ckpt", rep / "train_stage1_refined");
    if (r) {
      r->checkpoints.push_back(ck / "stage1_refined.ckpt");
      r->reused.push_back(again);
    }
  }
}

eval::ScoreReport evaluate(const RunConfig& cfg, const model::Weights<float>& w, const std::vector<world::Sample>& suite,
                           const EvalSpec& spec, model::MaskPolicy policy, double tau, const fs::path& stem,
                           json echo) {
  eval::BenchmarkOptions bo;
  bo.rounds = spec.rounds;
  bo.scorings = spec.scorings;
  bo.base_seed = spec.base_seed;
  bo.sampler.steps = spec.sampler_steps;
  bo.sampler.policy = policy;
  bo.sampler.tau = tau;
  bo.suite_name = spec.name;
  std::ostringstream verdicts;
  eval::ScoreReport r = eval::run_benchmark(suite, w, cfg.world, bo, &verdicts);
  echo["benchmark"] = r.config_echo;
  r.config_echo = std::move(echo);
  write_text(stem.string() + ".json", eval::to_json(r).dump(2) + "\n");
  write_text(stem.string() + ".csv", eval::csv_header() + "\n" + eval::csv_row(r) + "\n");
  write_text(stem.string() + ".verdicts.ndjson", verdicts.str());
  return r;
}

}  // namespace

std::string fnv1a_hex(const std::vector<std::uint8_t>& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  const std::string s = read_text(path);
  return {s.begin(), s.end()};
}

std::string csv_header_ablation() { return "seed,variant,tau,COM,DIS,Overall,acc,P,R,F1"; }

GenDataResult cmd_gen_data(const RunConfig& cfg, const fs::path& out) {
  GenDataResult r;
  auto emit = [&](const std::string& name, const std::vector<world::Sample>& samples) {
    const fs::path p = out / "datasets" / (name + ".ndjson");
    fs::create_directories(p.parent_path());
    world::write_dataset(p, samples);
    r.files.push_back(p);
    log("wrote " + std::to_string(samples.size()) + " samples to " + p.string());
  };
  for (const StageConfig* s : {&cfg.stage1, &cfg.stage2_step1, &cfg.stage2_step2}) {
    emit("train_" + std::string(trainer::phase_name(s->phase)),
         world::gen_suite(s->dataset.tasks, s->dataset.seed, s->dataset.per_task, cfg.world));
  }
  emit("eval_" + cfg.eval.name, suite_of(cfg.eval, cfg.world));
  emit("ablate_" + cfg.ablate.suite.name, suite_of(cfg.ablate.suite, cfg.world));
  emit("probe", world::gen_suite(cfg.probe.tasks, cfg.probe.suite_seed, cfg.probe.per_task, cfg.world));
  return r;
}

TrainResult cmd_train(const RunConfig& cfg, const fs::path& out) {
  TrainResult r;
  Chain chain(cfg, cfg.seed, out);
  run_stage1(chain, cfg, cfg.seed, out, &r);
  const fs::path ck = seed_dir(out, "checkpoints", cfg.seed);
  const fs::path rep = seed_dir(out, "reports", cfg.seed);
  for (const StageConfig* s : {&cfg.stage2_step1, &cfg.stage2_step2}) {
    const std::string name(trainer::phase_name(s->phase));
    r.reused.push_back(chain.advance(*s, ck / (name + ".ckpt"), rep / ("train_" + name)));
    r.checkpoints.push_back(ck / (name + ".ckpt"));
  }
  write_text(rep / "run_config.json", to_json(cfg).dump(2) + "\n");
  return r;
}

fs::path cmd_generate(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& dataset, std::size_t index,
                      const fs::path& out) {
  const auto samples = world::read_dataset(dataset);
  if (index >= samples.size()) {
    throw PreconditionError("sample index " + std::to_string(index) + " outside dataset of " +
                            std::to_string(samples.size()));
  }
  const auto& s = samples[index];
  const auto w = model::load_checkpoint(checkpoint);
  model::SamplerOptions so;
  so.steps = cfg.eval.sampler_steps;
  so.tau = cfg.tau;
  so.seed = cfg.eval.base_seed ^ s.id;
  const auto g = model::sample_generate(s.references, s.instruction, so, w, cfg.world);
  json verdicts = json::array();
  for (const auto& v : eval::presence_verdicts(g.scene, s)) verdicts.push_back(eval::to_json(v));
  const json result = {{"sample_id", s.id},
                       {"task", std::string(world::task_name(s.task))},
                       {"output", world::to_json(g.scene)},
                       {"target", world::to_json(s.target)},
                       {"composition", eval::score_composition(g.scene, s)},
                       {"verdicts", verdicts},
                       {"mask", g.mask ? bridge::to_json(*g.mask) : json(nullptr)},
                       {"checkpoint", checkpoint_echo(checkpoint, out)},
                       {"config", to_json(cfg)}};
  const fs::path p = out / "reports" / ("generate_" + std::to_string(s.id) + ".json");
  write_text(p, result.dump(2) + "\n");
  return p;
}

eval::ScoreReport cmd_eval(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& suite,
                           const fs::path& out) {
  const auto w = model::load_checkpoint(checkpoint);
  EvalSpec spec = cfg.eval;
  std::vector<world::Sample> samples;
  if (suite.empty()) {
    samples = suite_of(spec, cfg.world);
  } else {
    samples = world::read_dataset(suite);
    spec.name = suite.stem().string();
  }
  log("evaluating " + std::to_string(samples.size()) + " cases x " + std::to_string(spec.rounds) + " rounds");
  json echo = {{"run", to_json(cfg)}, {"checkpoint", checkpoint_echo(checkpoint, out)}};
  const auto r = evaluate(cfg, w, samples, spec, model::MaskPolicy::Active, cfg.tau,
                          out / "reports" / ("eval_" + spec.name), std::move(echo));
  log("  " + eval::csv_row(r));
  return r;
}

AblationResult cmd_ablate(const RunConfig& cfg, const fs::path& out) {
  AblationResult result;
  const auto suite = suite_of(cfg.ablate.suite, cfg.world);
  const int budget = cfg.stage2_step1.steps + cfg.stage2_step2.steps;
  for (std::uint64_t seed : cfg.ablate.seeds) {
    const fs::path ck = seed_dir(out, "checkpoints", seed);
    const fs::path rep = seed_dir(out, "reports", seed);
    Chain base(cfg, seed, out);
    run_stage1(base, cfg, seed, out);
    auto score = [&](Chain& chain, const std::string& variant, model::MaskPolicy policy, double tau) {
      const json echo = {{"run", to_json(cfg)},
                         {"variant", variant},
                         {"seed", seed},
                         {"tau", tau},
                         {"checkpoint", checkpoint_echo(chain.checkpoint(), out)}};
      const std::string stem = "ablate_" + variant + (policy == model::MaskPolicy::Active ? "_tau" + tau_tag(tau) : "");
      auto r = evaluate(cfg, chain.weights(), suite, cfg.ablate.suite, policy, tau, rep / stem, echo);
      log("seed " + std::to_string(seed) + " " + variant + " tau " + tau_tag(tau) + ": " + eval::csv_row(r));
      return r;
    };

    // (a) Direct: one phase training both experts, mask off.
    Chain direct = base;
    StageConfig d = StageConfig::direct(budget, seed);
    d.learning_rate = cfg.stage2_step2.learning_rate;
    d.batch_size = cfg.stage2_step2.batch_size;
    d.dataset = cfg.stage2_step2.dataset;
    direct.advance(d, ck / "direct.ckpt", rep / "train_direct");
    const auto direct_report = score(direct, "direct", model::MaskPolicy::Inactive, cfg.tau);

    // (b) Two-step without the bridge: same phases, no mask, no alignment.
    Chain plain = base;
    for (const StageConfig* s : {&cfg.stage2_step1, &cfg.stage2_step2}) {
      StageConfig c = with_seed(*s, seed);
      c.mask_active = false;
      c.align_weight = 0.0;
      c.ablation = true;
      const std::string name = "wo_bridge_" + std::string(trainer::phase_name(c.phase));
      plain.advance(c, ck / (name + ".ckpt"), rep / ("train_" + name));
    }
    const auto plain_report = score(plain, "two_step_wo_bridge", model::MaskPolicy::Inactive, cfg.tau);

    for (double tau : cfg.ablate.taus) {
      // (c) Two-step with the bridge at this threshold; the configured tau
      // shares checkpoints with the train command.
      Chain bridged = base;
      for (const StageConfig* s : {&cfg.stage2_step1, &cfg.stage2_step2}) {
        StageConfig c = with_seed(*s, seed);
        c.tau = tau;
        const std::string phase(trainer::phase_name(c.phase));
        const std::string name = tau == cfg.tau ? phase : "bridge_tau" + tau_tag(tau) + "_" + phase;
        bridged.advance(c, ck / (name + ".ckpt"), rep / ("train_" + name));
      }
      const auto bridged_report = score(bridged, "two_step_w_bridge", model::MaskPolicy::Active, tau);
      result.rows.push_back({seed, "direct", tau, direct_report});
      result.rows.push_back({seed, "two_step_wo_bridge", tau, plain_report});
      result.rows.push_back({seed, "two_step_w_bridge", tau, bridged_report});
    }
  }

  auto metrics = [](const eval::ScoreReport& r) {
    return fixed4(r.composition) + "," + fixed4(r.distinction) + "," + fixed4(r.overall) + "," + fixed4(r.accuracy) +
           "," + fixed4(r.precision) + "," + fixed4(r.recall) + "," + fixed4(r.f1);
  };
  std::ostringstream rows;
  rows << csv_header_ablation() << '\n';
  for (const auto& r : result.rows) {
    rows << r.seed << ',' << r.variant << ',' << tau_tag(r.tau) << ',' << metrics(r.report) << '\n';
  }

  // variant x tau means over seeds: direct, then two-step without and with the bridge.
  std::ostringstream summary;
  summary << "variant,tau,seeds,COM,DIS,Overall,acc,P,R,F1\n";
  json summary_json = json::array();
  for (const char* variant : {"direct", "two_step_wo_bridge", "two_step_w_bridge"}) {
    for (double tau : cfg.ablate.taus) {
      eval::ScoreReport mean;
      std::size_t n = 0;
      for (const auto& r : result.rows) {
        if (r.variant != variant || r.tau != tau) continue;
        ++n;
        mean.composition += r.report.composition;
        mean.distinction += r.report.distinction;
        mean.overall += r.report.overall;
        mean.accuracy += r.report.accuracy;
        mean.precision += r.report.precision;
        mean.recall += r.report.recall;
        mean.f1 += r.report.f1;
      }
      const double k = static_cast<double>(n);
      for (double* v : {&mean.composition, &mean.distinction, &mean.overall, &mean.accuracy, &mean.precision,
                        &mean.recall, &mean.f1})
        *v /= k;
      summary << variant << ',' << tau_tag(tau) << ',' << n << ',' << metrics(mean) << '\n';
      summary_json.push_back({{"variant", variant}, {"tau", tau}, {"seeds", n}, {"distinction", mean.distinction},
                              {"composition", mean.composition}, {"overall", mean.overall}});
    }
  }
  result.rows_csv = out / "reports" / "ablation.csv";
  result.summary_csv = out / "reports" / "ablation_summary.csv";
  write_text(result.rows_csv, rows.str());
  write_text(result.summary_csv, summary.str());
  write_text(out / "reports" / "ablation.json",
             json{{"summary", summary_json}, {"config", to_json(cfg)}}.dump(2) + "\n");
  return result;
}

probe::ProbeReport cmd_probe(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& suite,
                             const fs::path& out) {
  const auto w = model::load_checkpoint(checkpoint);
  const auto samples = suite.empty()
                           ? world::gen_suite(cfg.probe.tasks, cfg.probe.suite_seed, cfg.probe.per_task, cfg.world)
                           : world::read_dataset(suite);
  probe::ProbeOptions po;
  po.fraction = cfg.probe.fraction;
  po.image_samples = cfg.probe.image_samples;
  const auto r = probe::run_probe(samples, w, cfg.world, out / "probes", po);
  write_text(out / "probes" / "config.json",
             json{{"run", to_json(cfg)}, {"checkpoint", checkpoint_echo(checkpoint, out)}}.dump(2) + "\n");
  log("probe: separated fraction " + fixed4(r.separated_fraction));
  return r;
}

int run_cli(int argc, char** argv) {
  CLI::App app{"motb: unified understanding/generation toy pipeline"};
  app.require_subcommand(1);
  std::string config_path, out_dir, checkpoint, dataset, suite;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::size_t index = 0;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON run config");
    sub->add_option("--seed", seed, "Seed for initialisation and training");
    sub->add_option("--out", out_dir, "Output root (default $MOTB_OUT_ROOT or ./runs)");
    sub->add_option("--set", overrides, "Dotted override, e.g. stages.stage1.steps=100");
  };
  auto* gen_data = app.add_subcommand("gen-data", "Write training, evaluation and probe datasets");
  auto* train = app.add_subcommand("train", "Run the three-phase curriculum");
  auto* generate = app.add_subcommand("generate", "Generate one sample from a dataset");
  auto* evaluate_cmd = app.add_subcommand("eval", "Score a checkpoint on a suite");
  auto* ablate = app.add_subcommand("ablate", "Direct / two-step / bridge ablation over seeds and taus");
  auto* probe_cmd = app.add_subcommand("probe", "Layer-wise relevance maps");
  for (auto* s : {gen_data, train, generate, evaluate_cmd, ablate, probe_cmd}) common(s);
  generate->add_option("--checkpoint", checkpoint)->required();
  generate->add_option("--dataset", dataset)->required();
  generate->add_option("--index", index);
  evaluate_cmd->add_option("--checkpoint", checkpoint)->required();
  evaluate_cmd->add_option("--suite", suite, "NDJSON suite (default: configured held-out suite)");
  probe_cmd->add_option("--checkpoint", checkpoint)->required();
  probe_cmd->add_option("--suite", suite, "NDJSON suite (default: configured probe suite)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  RunConfig cfg;
  fs::path out;
  try {
    json j = json::object();
    if (!config_path.empty()) j = parse_json_text(read_text(config_path), config_path);
    for (const auto& o : overrides) apply_override(j, o);
    if (seed) j["seed"] = *seed;
    cfg = run_config_from_json(j);
    out = !out_dir.empty() ? fs::path(out_dir) : !cfg.out.empty() ? cfg.out : default_out_root();
  } catch (const Error& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  }

  try {
    fs::create_directories(out);
    json result;
    if (gen_data->parsed()) {
      json files = json::array();
      for (const auto& f : cmd_gen_data(cfg, out).files) files.push_back(display_path(f, out));
      result = {{"datasets", files}};
    } else if (train->parsed()) {
      json files = json::array();
      for (const auto& f : cmd_train(cfg, out).checkpoints) files.push_back(display_path(f, out));
      result = {{"checkpoints", files}};
    } else if (generate->parsed()) {
      result = {{"report", display_path(cmd_generate(cfg, checkpoint, dataset, index, out), out)}};
    } else if (evaluate_cmd->parsed()) {
      const auto r = cmd_eval(cfg, checkpoint, suite, out);
      result = {{"csv", eval::csv_row(r)}};
    } else if (ablate->parsed()) {
      const auto r = cmd_ablate(cfg, out);
      result = {{"rows", display_path(r.rows_csv, out)}, {"summary", display_path(r.summary_csv, out)}};
    } else if (probe_cmd->parsed()) {
      const auto r = cmd_probe(cfg, checkpoint, suite, out);
      result = {{"separated_fraction", r.separated_fraction}};
    }
    std::cout << result.dump() << '\n';
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}

}  // namespace motb::cli
