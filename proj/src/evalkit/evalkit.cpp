#include "motb/evalkit/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <iomanip>
#include <sstream>

#include "motb/errors.hpp"

namespace motb::eval {

namespace {

std::uint64_t case_seed(std::uint64_t round_seed, std::uint64_t case_id) {
  std::uint64_t x = round_seed * 0x9e3779b97f4a7c15ULL + case_id + 0x632be59bd9b4e019ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

std::size_t overlap_count(const world::Subject& a, const world::Subject& b) {
  std::size_t n = 0;
  for (const auto& c : a.footprint) n += std::count(b.footprint.begin(), b.footprint.end(), c);
  return n;
}

std::string fixed(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << v;
  return os.str();
}

}  // namespace

double score_composition(const world::Scene& output, const world::Sample& sample) {
  const auto& targets = sample.target.subjects;
  if (targets.empty()) return 0.0;
  std::size_t present = 0;
  double consistency = 0.0;
  for (const auto& t : targets) {
    const world::Subject* best = nullptr;
    std::size_t best_overlap = 0;
    for (const auto& s : output.subjects) {
      const std::size_t n = overlap_count(t, s);
      if (n > best_overlap) {
        best_overlap = n;
        best = &s;
      }
    }
    if (!best) continue;
    ++present;
    consistency += ((best->shape_id == t.shape_id ? 1.0 : 0.0) + (best->color_id == t.color_id ? 1.0 : 0.0)) / 2.0;
  }
  const double pf = ratio(present, targets.size());
  const double sc = present == 0 ? 0.0 : consistency / static_cast<double>(present);
  return 10.0 * (pf + sc) / 2.0;
}

std::vector<PresenceVerdict> presence_verdicts(const world::Scene& output, const world::Sample& sample) {
  std::vector<PresenceVerdict> out;
  auto add = [&](const world::SubjectRef& ref, bool expected) {
    const auto& s = sample.references.at(static_cast<std::size_t>(ref.image)).subjects.at(static_cast<std::size_t>(ref.subject));
    PresenceVerdict v;
    v.case_id = sample.id;
    v.query = world::SubjectQuery{s.shape_id, s.color_id};
    v.expected = expected;
    v.observed = world::judge_presence(output, v.query);
    out.push_back(v);
  };
  for (const auto& r : sample.target_subjects) add(r, true);
  for (const auto& r : sample.distractor_subjects) add(r, false);
  return out;
}

DistinctionScores scores_from_counts(const Confusion& c) {
  DistinctionScores s;
  s.counts = c;
  s.accuracy = ratio(c.tp + c.tn, c.total());
  s.precision = ratio(c.tp, c.tp + c.fp);
  s.recall = ratio(c.tp, c.tp + c.fn);
  s.f1 = (s.precision + s.recall) / 2.0;
  s.distinction = 10.0 * (s.accuracy + s.f1) / 2.0;
  return s;
}

DistinctionScores score_distinction(std::span<const PresenceVerdict> verdicts) {
  if (verdicts.empty()) throw EmptyInputError("score_distinction: empty verdict list");
  Confusion c;
  for (const auto& v : verdicts) {
    if (v.expected && v.observed) ++c.tp;
    else if (!v.expected && v.observed) ++c.fp;
    else if (v.expected && !v.observed) ++c.fn;
    else ++c.tn;
  }
  return scores_from_counts(c);
}

ScoreReport aggregate(const std::vector<RoundEntry>& entries) {
  if (entries.empty()) throw EmptyInputError("aggregate: no round entries");
  ScoreReport r;
  const double n = static_cast<double>(entries.size());
  for (const auto& e : entries) {
    r.composition += e.composition / n;
    r.accuracy += e.distinction.accuracy / n;
    r.precision += e.distinction.precision / n;
    r.recall += e.distinction.recall / n;
    r.f1 += e.distinction.f1 / n;
    r.distinction += e.distinction.distinction / n;
    r.overall += e.overall / n;
    r.counts.tp += e.distinction.counts.tp;
    r.counts.fp += e.distinction.counts.fp;
    r.counts.fn += e.distinction.counts.fn;
    r.counts.tn += e.distinction.counts.tn;
  }
  r.entries = entries;
  return r;
}

std::string check_report(const ScoreReport& r, double tol) {
  auto in01 = [](double v) { return v >= 0.0 && v <= 1.0; };
  auto in010 = [](double v) { return v >= 0.0 && v <= 10.0; };
  if (!in01(r.accuracy) || !in01(r.precision) || !in01(r.recall) || !in01(r.f1)) return "rate outside [0,1]";
  if (!in010(r.composition) || !in010(r.distinction) || !in010(r.overall)) return "score outside [0,10]";
  if (std::abs(r.f1 - (r.precision + r.recall) / 2.0) > tol) return "f1 != (P+R)/2";
  if (std::abs(r.distinction - 10.0 * (r.accuracy + r.f1) / 2.0) > tol) return "distinction != 10(acc+f1)/2";
  if (std::abs(r.overall - (r.composition + r.distinction) / 2.0) > tol) return "overall != (COM+DIS)/2";
  return {};
}

ScoreReport run_benchmark(const std::vector<world::Sample>& suite, const model::Weights<float>& weights,
                          const world::WorldConfig& world_cfg, const BenchmarkOptions& opts,
                          std::ostream* verdict_log) {
  if (suite.empty()) throw EmptyInputError("run_benchmark: empty suite");
  if (opts.rounds < 1 || opts.scorings < 1) throw PreconditionError("run_benchmark: rounds and scorings must be >= 1");

  struct CaseResult {
    world::Scene output;
    std::string error;
  };
  std::vector<RoundEntry> entries;
  std::size_t failed = 0;
  for (int round = 0; round < opts.rounds; ++round) {
    const std::uint64_t round_seed = opts.base_seed + static_cast<std::uint64_t>(round);
    std::vector<CaseResult> results(suite.size());
#pragma omp parallel for schedule(dynamic, 1)
    for (std::size_t i = 0; i < suite.size(); ++i) {
      try {
        model::SamplerOptions so = opts.sampler;
        so.seed = case_seed(round_seed, suite[i].id);
        results[i].output = model::sample_generate(suite[i].references, suite[i].instruction, so, weights, world_cfg).scene;
      } catch (const std::exception& e) {
        results[i].error = e.what();
      }
    }

    for (int scoring = 0; scoring < opts.scorings; ++scoring) {
      std::vector<PresenceVerdict> verdicts;
      double composition = 0.0;
      for (std::size_t i = 0; i < suite.size(); ++i) {
        const auto& res = results[i];
        std::vector<PresenceVerdict> vs;
        double com = 0.0;
        if (res.error.empty()) {
          com = score_composition(res.output, suite[i]);
          vs = presence_verdicts(res.output, suite[i]);
        } else {
          // A failed case scores 0: every verdict is counted as wrong.
          vs = presence_verdicts(world::Scene{}, suite[i]);
          for (auto& v : vs) v.observed = !v.expected;
        }
        composition += com / static_cast<double>(suite.size());
        if (verdict_log && scoring == 0) {
          nlohmann::json line = {{"round", round}, {"case_id", suite[i].id}, {"task", std::string(world::task_name(suite[i].task))},
                                 {"composition", com}, {"verdicts", nlohmann::json::array()}};
          if (!res.error.empty()) line["error"] = res.error;
          for (const auto& v : vs) line["verdicts"].push_back(to_json(v));
          *verdict_log << line.dump() << '\n';
        }
        verdicts.insert(verdicts.end(), vs.begin(), vs.end());
      }
      RoundEntry e;
      e.round = round;
      e.scoring = scoring;
      e.composition = composition;
      e.distinction = verdicts.empty() ? DistinctionScores{} : score_distinction(verdicts);
      e.overall = (e.composition + e.distinction.distinction) / 2.0;
      entries.push_back(e);
    }
    for (const auto& res : results) failed += res.error.empty() ? 0 : 1;
  }
  ScoreReport report = aggregate(entries);
  report.suite = opts.suite_name;
  report.cases = suite.size();
  report.failed_cases = failed;
  report.config_echo = {{"rounds", opts.rounds},
                        {"scorings", opts.scorings},
                        {"base_seed", opts.base_seed},
                        {"sampler_steps", opts.sampler.steps},
                        {"mask_policy", opts.sampler.policy == model::MaskPolicy::Active ? "active" : "inactive"},
                        {"tau", opts.sampler.tau}};
  return report;
}

nlohmann::json to_json(const PresenceVerdict& v) {
  return {{"case_id", v.case_id},
          {"shape_id", v.query.shape_id},
          {"color_id", v.query.color_id},
          {"expected", v.expected},
          {"observed", v.observed}};
}

nlohmann::json to_json(const ScoreReport& r) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : r.entries) {
    entries.push_back({{"round", e.round},
                       {"scoring", e.scoring},
                       {"composition", e.composition},
                       {"accuracy", e.distinction.accuracy},
                       {"precision", e.distinction.precision},
                       {"recall", e.distinction.recall},
                       {"f1", e.distinction.f1},
                       {"distinction", e.distinction.distinction},
                       {"overall", e.overall}});
  }
  return {{"suite", r.suite},
          {"composition", r.composition},
          {"accuracy", r.accuracy},
          {"precision", r.precision},
          {"recall", r.recall},
          {"f1", r.f1},
          {"distinction", r.distinction},
          {"overall", r.overall},
          {"counts", {{"tp", r.counts.tp}, {"fp", r.counts.fp}, {"fn", r.counts.fn}, {"tn", r.counts.tn}}},
          {"cases", r.cases},
          {"failed_cases", r.failed_cases},
          {"entries", entries},
          {"config", r.config_echo}};
}

std::string csv_header() { return "suite,COM,DIS,Overall,acc,P,R,F1"; }

std::string csv_row(const ScoreReport& r) {
  return r.suite + "," + fixed(r.composition) + "," + fixed(r.distinction) + "," + fixed(r.overall) + "," +
         fixed(r.accuracy) + "," + fixed(r.precision) + "," + fixed(r.recall) + "," + fixed(r.f1);
}

}  // namespace motb::eval
