#pragma once

#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "motb/model/sampler.hpp"
#include "motb/model/weights.hpp"
#include "motb/synthworld/world.hpp"

namespace motb::eval {

struct PresenceVerdict {
  std::uint64_t case_id = 0;
  world::SubjectQuery query;
  bool expected = false;
  bool observed = false;
};

struct Confusion {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  std::size_t total() const { return tp + fp + fn + tn; }
};

struct DistinctionScores {
  Confusion counts;
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;  // (precision + recall) / 2
  double distinction = 0.0;  // 10 * (accuracy + f1) / 2
};

// Prompt-following (fraction of targets overlapped by some output subject)
// averaged with subject consistency (shape/colour match of the present
// targets), times 10.
double score_composition(const world::Scene& output, const world::Sample& sample);

// One expected-present verdict per target, one expected-absent verdict per
// distractor of the referenced images.
std::vector<PresenceVerdict> presence_verdicts(const world::Scene& output, const world::Sample& sample);

DistinctionScores score_distinction(std::span<const PresenceVerdict> verdicts);
DistinctionScores scores_from_counts(const Confusion& c);

struct RoundEntry {
  int round = 0;
  int scoring = 0;
  double composition = 0.0;
  DistinctionScores distinction;
  double overall = 0.0;
};

struct ScoreReport {
  std::string suite;
  double composition = 0.0;
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double distinction = 0.0;
  double overall = 0.0;
  std::vector<RoundEntry> entries;
  Confusion counts;  // summed over all entries
  std::size_t cases = 0;
  std::size_t failed_cases = 0;
  nlohmann::json config_echo;
};

// Arithmetic means of the entries. The report formulas are linear, so they
// still hold on the means up to rounding.
ScoreReport aggregate(const std::vector<RoundEntry>& entries);

// Empty string when the report formulas and ranges hold.
std::string check_report(const ScoreReport& r, double tol = 1e-9);

struct BenchmarkOptions {
  int rounds = 3;
  int scorings = 3;
  std::uint64_t base_seed = 0;
  model::SamplerOptions sampler;  // seed is overridden per case and round
  std::string suite_name = "suite";
};

// Per-case verdict log lines are written to verdict_log when non-null.
ScoreReport run_benchmark(const std::vector<world::Sample>& suite, const model::Weights<float>& weights,
                          const world::WorldConfig& world_cfg, const BenchmarkOptions& opts,
                          std::ostream* verdict_log = nullptr);

nlohmann::json to_json(const ScoreReport& r);
nlohmann::json to_json(const PresenceVerdict& v);
std::string csv_header();
// suite,COM,DIS,Overall,acc,P,R,F1
std::string csv_row(const ScoreReport& r);

}  // namespace motb::eval
