#pragma once

// Pipeline commands. Each reads its inputs from files or the run config and
// writes results under the output root:
//
//   checkpoints/seed<S>/<phase>.ckpt (+ .ckpt.json provenance)
//   datasets/*.ndjson
//   reports/...
//   probes/...
//
// A checkpoint whose provenance sidecar matches the requested training chain
// (init seed, model, world and every phase config) is reused instead of
// retrained, so re-running a command with the same inputs is idempotent.

#include <filesystem>
#include <string>
#include <vector>

#include "motb/cli/run_config.hpp"
#include "motb/evalkit/evalkit.hpp"
#include "motb/probe/probe.hpp"

namespace motb::cli {

namespace fs = std::filesystem;

struct GenDataResult {
  std::vector<fs::path> files;
};
GenDataResult cmd_gen_data(const RunConfig& cfg, const fs::path& out);

struct TrainResult {
  std::vector<fs::path> checkpoints;  // in phase order; last is the final model
  std::vector<bool> reused;
};
TrainResult cmd_train(const RunConfig& cfg, const fs::path& out);

// Generates sample `index` of an NDJSON dataset and writes
// reports/generate_<id>.json.
fs::path cmd_generate(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& dataset, std::size_t index,
                      const fs::path& out);

// Evaluates on the suite file, or on the configured held-out suite when
// suite is empty. Writes reports/eval_<name>.{json,csv,verdicts.ndjson}.
eval::ScoreReport cmd_eval(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& suite,
                           const fs::path& out);

struct AblationRow {
  std::uint64_t seed = 0;
  std::string variant;  // direct | two_step_wo_bridge | two_step_w_bridge
  double tau = 0.0;
  eval::ScoreReport report;
};
struct AblationResult {
  std::vector<AblationRow> rows;
  fs::path rows_csv;
  fs::path summary_csv;
};
// {Direct, Two-step w/o bridge, Two-step w/ bridge} x taus x seeds on the
// mixed distinction suite. Only the bridge variant depends on tau; the
// other two are trained and evaluated once per seed and repeated per tau.
AblationResult cmd_ablate(const RunConfig& cfg, const fs::path& out);

probe::ProbeReport cmd_probe(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& suite,
                             const fs::path& out);

// Entry point for the motb executable. Exit codes: 0 success, 1 usage or
// configuration error, 2 runtime failure.
int run_cli(int argc, char** argv);

// Helpers shared with tests.
std::string csv_header_ablation();
std::string fnv1a_hex(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> read_bytes(const fs::path& path);

}  // namespace motb::cli
