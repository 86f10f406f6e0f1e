#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "motb/cli/commands.hpp"
#include "motb/cli/run_config.hpp"
#include "motb/errors.hpp"

namespace {

using namespace motb;
using nlohmann::json;
namespace fs = std::filesystem;

const char* kTinyConfig = R"({
  "model": {"n_layers": 2, "d_model": 16, "d_ff": 32,
            "mask_source_layer": 0, "masked_layer_lo": 1, "masked_layer_hi": 1},
  "stages": {
    "stage1": {"steps": 2, "batch_size": 2, "dataset": {"per_task": 4}},
    "stage2_step1": {"steps": 1, "batch_size": 2, "dataset": {"per_task": 2}},
    "stage2_step2": {"steps": 1, "batch_size": 2, "dataset": {"per_task": 2}}
  },
  "eval": {"per_task": 3, "rounds": 1, "scorings": 2, "sampler_steps": 2},
  "ablate": {"seeds": [1], "taus": [0.82, 0.88],
             "suite": {"per_task": 1, "rounds": 1, "scorings": 1, "sampler_steps": 2}},
  "probe": {"per_task": 3, "image_samples": 1}
})";

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "motb");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return cli::run_cli(static_cast<int>(argv.size()), argv.data());
}

class CliPipeline : public ::testing::Test {
 protected:
  void SetUp() override {
    root = fs::temp_directory_path() / "motb_cli_unit";
    fs::remove_all(root);
    fs::create_directories(root);
    std::ofstream(root / "tiny.json") << kTinyConfig;
  }
  void TearDown() override { fs::remove_all(root); }
  std::string config() const { return (root / "tiny.json").string(); }
  fs::path root;
};

TEST(Override, DottedPathsAndValues) {
  json j = json::object();
  cli::apply_override(j, "a.b=3");
  cli::apply_override(j, "a.c=hello");
  cli::apply_override(j, "d=[1,2]");
  cli::apply_override(j, "e=true");
  EXPECT_EQ(j["a"]["b"], 3);
  EXPECT_EQ(j["a"]["c"], "hello");
  EXPECT_EQ(j["d"], json::array({1, 2}));
  EXPECT_EQ(j["e"], true);
  EXPECT_THROW(cli::apply_override(j, "novalue"), ConfigError);
}

TEST(ParseJson, ReportsLineAndColumn) {
  try {
    cli::parse_json_text("{\n  \"a\": 1,\n  oops\n}", "cfg.json");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("cfg.json:3:"), std::string::npos) << e.what();
  }
}

TEST(RunConfig, DefaultsRoundTrip) {
  cli::RunConfig c;
  c.finalize();
  const auto back = cli::run_config_from_json(cli::to_json(c));
  EXPECT_EQ(cli::to_json(back), cli::to_json(c));
  EXPECT_EQ(c.stage1.steps, 500);
  EXPECT_EQ(c.stage2_step1.steps, 200);
  EXPECT_EQ(c.stage2_step2.steps, 200);
  EXPECT_EQ(c.world.rows, 6);
  EXPECT_DOUBLE_EQ(c.tau, 0.88);
}

TEST(RunConfig, SeedAndTauPropagate) {
  auto c = cli::run_config_from_json({{"seed", 9}, {"tau", 0.85}});
  EXPECT_EQ(c.stage1.seed, 9u);
  EXPECT_EQ(c.stage2_step2.seed, 9u);
  EXPECT_DOUBLE_EQ(c.stage2_step1.tau, 0.85);
}

TEST(RunConfig, Rejections) {
  EXPECT_THROW(cli::run_config_from_json({{"bogus", 1}}), ConfigError);
  EXPECT_THROW(cli::run_config_from_json({{"tau", 1.5}}), ConfigError);
  EXPECT_THROW(cli::run_config_from_json({{"stages", {{"stage1", {{"phase", "direct"}}}}}}), ConfigError);
  EXPECT_THROW(cli::run_config_from_json({{"stages", {{"stage1", {{"mask_active", true}}}}}}), ConfigError);
  EXPECT_THROW(cli::run_config_from_json({{"seed", "x"}}), ConfigError);
}

TEST(Env, DefaultOutRoot) {
  ::setenv("MOTB_OUT_ROOT", "/tmp/somewhere", 1);
  EXPECT_EQ(cli::default_out_root(), fs::path("/tmp/somewhere"));
  ::unsetenv("MOTB_OUT_ROOT");
  EXPECT_EQ(cli::default_out_root(), fs::path("runs"));
}

TEST(Helpers, Fnv1a) {
  EXPECT_EQ(cli::fnv1a_hex({}), "cbf29ce484222325");
  EXPECT_EQ(cli::fnv1a_hex({'a'}), "af63dc4c8601ec8c");
}

TEST_F(CliPipeline, ExitCodes) {
  EXPECT_EQ(run({"nonsense"}), 1);
  EXPECT_EQ(run({"train", "--config", config(), "--set", "bogus=1", "--out", root.string()}), 1);
  EXPECT_EQ(run({"train", "--config", (root / "missing.json").string()}), 1);
  EXPECT_EQ(run({"eval", "--config", config(), "--checkpoint", (root / "none.ckpt").string(), "--out",
                 (root / "o").string()}),
            2);
}

TEST_F(CliPipeline, EndToEndDeterministic) {
  auto pipeline = [&](const fs::path& out) {
    const std::string o = out.string();
    const std::string ck = (out / "checkpoints/seed1/stage2_step2.ckpt").string();
    EXPECT_EQ(run({"gen-data", "--config", config(), "--out", o}), 0);
    EXPECT_EQ(run({"train", "--config", config(), "--out", o}), 0);
    EXPECT_EQ(run({"eval", "--config", config(), "--out", o, "--checkpoint", ck}), 0);
    EXPECT_EQ(run({"probe", "--config", config(), "--out", o, "--checkpoint", ck}), 0);
    EXPECT_EQ(run({"generate", "--config", config(), "--out", o, "--checkpoint", ck, "--dataset",
                   (out / "datasets/probe.ndjson").string(), "--index", "1"}),
              0);
  };
  const fs::path a = root / "a", b = root / "b";
  pipeline(a);
  pipeline(b);
  std::size_t compared = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file() || e.path().filename().string().find("timing") != std::string::npos) continue;
    const fs::path rel = fs::relative(e.path(), a);
    ASSERT_TRUE(fs::exists(b / rel)) << rel;
    EXPECT_EQ(slurp(e.path()), slurp(b / rel)) << rel;
    ++compared;
  }
  EXPECT_GT(compared, 20u);
  for (const char* f : {"reports/eval_distinction_cross.json", "reports/eval_distinction_cross.csv",
                        "reports/eval_distinction_cross.verdicts.ndjson", "probes/summary.json",
                        "datasets/train_stage1.ndjson", "reports/seed1/train_stage1.loss.csv"})
    EXPECT_TRUE(fs::exists(a / f)) << f;
  const std::string csv = slurp(a / "reports/eval_distinction_cross.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "suite,COM,DIS,Overall,acc,P,R,F1");

  // A second train reuses every checkpoint.
  auto cfg = cli::run_config_from_json(json::parse(kTinyConfig));
  const auto again = cli::cmd_train(cfg, a);
  EXPECT_EQ(again.reused, std::vector<bool>(3, true));
  // Changing a phase retrains from that phase on.
  cfg.stage2_step2.steps = 2;
  const auto changed = cli::cmd_train(cfg, a);
  EXPECT_EQ(changed.reused, (std::vector<bool>{true, true, false}));
}

TEST_F(CliPipeline, AblationCsv) {
  auto cfg = cli::run_config_from_json(json::parse(kTinyConfig));
  const auto r = cli::cmd_ablate(cfg, root);
  EXPECT_EQ(r.rows.size(), 6u);
  const std::string rows = slurp(r.rows_csv);
  EXPECT_EQ(rows.substr(0, rows.find('\n')), cli::csv_header_ablation());
  EXPECT_EQ(std::count(rows.begin(), rows.end(), '\n'), 7);
  const std::string summary = slurp(r.summary_csv);
  EXPECT_EQ(std::count(summary.begin(), summary.end(), '\n'), 7);
  EXPECT_NE(summary.find("two_step_w_bridge,0.82,1,"), std::string::npos);
  // Shared with train: the configured tau writes the plain Stage II names.
  EXPECT_TRUE(fs::exists(root / "checkpoints/seed1/stage2_step2.ckpt"));
  EXPECT_TRUE(fs::exists(root / "checkpoints/seed1/bridge_tau0.82_stage2_step2.ckpt"));
}

}  // namespace
