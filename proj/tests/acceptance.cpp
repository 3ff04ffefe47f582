// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit on any failure.
// Criteria 1-6 run the matching unit-test groups; 7-9 run end to end.

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "cofill/experiment.hpp"

using namespace cofill;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Proc {
  int code = -1;
  std::string out;
};

Proc run(const std::string& cmd) {
  Proc p;
  FILE* pipe = popen((cmd + " 2>&1").c_str(), "r");
  if (!pipe) return p;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof(buf), pipe)) > 0) p.out.append(buf, n);
  const int status = pclose(pipe);
  p.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return p;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

// A group of unit tests: binary, gtest filter, and how many tests it must run.
struct Group {
  const char* binary;
  const char* filter;
  int expected;
};

Outcome run_groups(const std::vector<Group>& groups, double time_limit = 0.0) {
  const auto t0 = Clock::now();
  int passed = 0, wanted = 0;
  std::string failures;
  for (const auto& g : groups) {
    wanted += g.expected;
    const auto p = run(std::string(g.binary) + " --gtest_brief=1 --gtest_filter='" + g.filter + "'");
    std::smatch m;
    const std::regex ran(R"(\[==========\] (\d+) tests? from)");
    const int count = std::regex_search(p.out, m, ran) ? std::stoi(m[1]) : 0;
    if (p.code == 0 && count == g.expected) {
      passed += count;
    } else {
      failures += std::string(" ") + fs::path(g.binary).filename().string() + ":" + g.filter +
                  " (exit " + std::to_string(p.code) + ", ran " + std::to_string(count) + "/" +
                  std::to_string(g.expected) + ")";
    }
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = failures.empty() && (time_limit <= 0.0 || secs < time_limit);
  o.detail = std::to_string(passed) + "/" + std::to_string(wanted) + " tests passed in " +
             fmt(secs, 3) + " s" + (time_limit > 0 ? " (limit " + fmt(time_limit, 3) + " s)" : "");
  if (!failures.empty()) o.detail += "; failing:" + failures;
  return o;
}

Outcome criterion_gradients() {
  return run_groups({{TEST_TENSOR_AUTODIFF, "PrimitiveGrad.*:Backward.RandomTwoLayer*", 19},
                     {TEST_GRAPH_OPS, "GraphConv.GradientsMatchFiniteDifferences", 1},
                     {TEST_CONDITIONAL_FEATURES, "BuildConditioning.GradientsMatchFiniteDifferences", 1},
                     {TEST_NOISE_PREDICTOR, "PredictNoise.TwoLayerGradientsMatchFiniteDifferences", 1}},
                    120.0);
}

Outcome criterion_diffusion() {
  return run_groups({{TEST_DIFFUSION_CORE,
                      "Schedule.QuadraticAlphaBarMatchesRecurrence:ForwardNoise.MonteCarloMoments:"
                      "ForwardNoise.VarianceIdentityWithRandomSignal:"
                      "ReverseStep.PerfectNoiseInvertsFirstStep",
                      4}});
}

Outcome criterion_dct() {
  return run_groups({{TEST_CONDITIONAL_FEATURES,
                      "Dct.ConstantSeries:Dct.OrthonormalRoundTrip:Dct.Linearity:"
                      "Dct.BasisCosineConcentratesEnergy",
                      4}});
}

Outcome criterion_causality() {
  return run_groups(
      {{TEST_CONDITIONAL_FEATURES, "Tcn.Causal", 1},
       {TEST_TENSOR_AUTODIFF, "ConvCausal.PerturbationOnlyAffectsLaterSteps", 1},
       {TEST_DATA_PIPELINE,
        "TrainingMask.ConditioningIgnoresTargetValues:ForwardInterpolate.NoLeakageFromHiddenValues", 2},
       {TEST_DIFFUSION_CORE, "Loss.InvariantToUnobservedValues", 1},
       {TEST_NOISE_PREDICTOR, "PredictNoise.AttentionWeightsDependOnlyOnConditioning", 1}});
}

Outcome criterion_graph() {
  return run_groups({{TEST_GRAPH_OPS, "NormalizeAdjacency.*", 6}});
}

Outcome criterion_metrics() {
  return run_groups({{TEST_EVALUATION,
                      "Crps.OracleCases:Crps.BoundedByEnsembleAbsoluteError:Metrics.MatchLoopOracle:"
                      "Metrics.HandCases",
                      4}});
}

RunConfig toy_config() { return load_config(fs::path(COFILL_SOURCE_DIR) / "configs" / "toy.cfg"); }

Outcome criterion_toy_recovery(const fs::path& work) {
  const RunConfig cfg = toy_config();
  const auto series = load_dataset(cfg);
  const auto t0 = Clock::now();
  const auto tr = train(series, cfg);
  const double train_secs = seconds_since(t0);
  save_checkpoint(work / "toy_checkpoint.bin", tr.checkpoint);
  csv::write_atomic(work / "toy_train_log.csv", train_log_csv(tr.log));

  const auto report =
      evaluate_checkpoint(tr.checkpoint, test_split(series), Scenario::point, default_seeds());
  csv::write_atomic(work / "toy_report.csv", report.to_csv());
  const auto co = report.for_method("cofill"), me = report.for_method("mean"),
             li = report.for_method("linear");
  int wins = 0;
  std::string per_seed;
  for (std::size_t k = 0; k < co.size(); ++k) {
    const bool win = co[k].mae < me[k].mae && co[k].mae < li[k].mae;
    wins += win;
    per_seed += " seed" + std::to_string(co[k].seed) + "=" + fmt(co[k].mae) + "/" +
                fmt(me[k].mae) + "/" + fmt(li[k].mae) + (win ? "+" : "-");
  }
  const double first = tr.log.front().loss, last = tr.log.back().loss;
  const double ratio = last / first;
  Outcome o;
  o.pass = cfg.epochs <= 50 && train_secs <= 900.0 && wins >= 4 && ratio <= 0.5;
  o.detail = std::to_string(cfg.epochs) + " epochs in " + fmt(train_secs, 4) + " s; wins " +
             std::to_string(wins) + "/5 (cofill/mean/linear MAE:" + per_seed + "); loss " +
             fmt(first) + " -> " + fmt(last) + " (ratio " + fmt(ratio, 3) + ")";
  return o;
}

Outcome criterion_reproducibility(const fs::path& work) {
  const std::string cli = COFILL_CLI_PATH;
  const std::string cfg = (fs::path(COFILL_SOURCE_DIR) / "configs" / "toy.cfg").string();
  std::vector<std::string> logs, reports, checkpoints;
  for (const char* tag : {"a", "b"}) {
    const fs::path dir = work / (std::string("repro_") + tag);
    fs::remove_all(dir);
    const auto t = run(cli + " --config " + cfg + " --seed 0 --threads 1 --set epochs=3 --out " +
                       dir.string() + " train");
    const auto e = run(cli + " --threads 1 --out " + (dir / "report.csv").string() +
                       " evaluate --checkpoint " + (dir / "checkpoint.bin").string());
    if (t.code != 0 || e.code != 0)
      return {false, std::string("run ") + tag + " failed: " + t.out + e.out};
    logs.push_back(slurp(dir / "train_log.csv"));
    reports.push_back(slurp(dir / "report.csv"));
    checkpoints.push_back(slurp(dir / "checkpoint.bin"));
  }
  Outcome o;
  o.pass = logs[0] == logs[1] && reports[0] == reports[1] && checkpoints[0] == checkpoints[1] &&
           !logs[0].empty() && !reports[0].empty();
  o.detail = std::string("train_log ") + (logs[0] == logs[1] ? "identical" : "differs") +
             ", report " + (reports[0] == reports[1] ? "identical" : "differs") + ", checkpoint " +
             (checkpoints[0] == checkpoints[1] ? "identical" : "differs");
  return o;
}

Outcome criterion_ablation(const fs::path& work) {
  RunConfig cfg = toy_config();
  cfg.epochs = 10;
  cfg.val_every = 10;
  const auto series = load_dataset(cfg);
  const std::vector<Ablation> variants{Ablation::full, Ablation::no_forward, Ablation::no_temporal,
                                       Ablation::no_frequency, Ablation::no_cross};
  const auto rows = run_ablation(series, cfg, variants, default_seeds());
  csv::write_atomic(work / "ablation.csv", ablation_csv(rows));

  bool finite = rows.size() == variants.size();
  for (const auto& r : rows) finite = finite && std::isfinite(r.metrics.mae_mean);
  bool distinct = true;
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = i + 1; j < rows.size(); ++j)
      distinct = distinct && rows[i].mae_per_seed != rows[j].mae_per_seed;

  std::string ordering;
  for (std::size_t v = 1; v < rows.size(); ++v) {
    int full_better = 0;
    for (std::size_t k = 0; k < rows[0].mae_per_seed.size(); ++k)
      full_better += rows[0].mae_per_seed[k] <= rows[v].mae_per_seed[k];
    ordering += std::string(" ") + ablation_name(rows[v].variant) + "=" +
                fmt(rows[v].metrics.mae_mean) + " (full<= in " + std::to_string(full_better) +
                "/5)";
  }
  Outcome o;
  o.pass = finite && distinct;
  o.detail = std::string("outputs ") + (distinct ? "distinct" : "NOT distinct") + "; MAE full=" +
             fmt(rows.empty() ? 0.0 : rows[0].metrics.mae_mean) + ordering +
             " [ordering reported, not asserted]";
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "cofill_acceptance";
  fs::create_directories(work);

  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> check;
  };
  const std::vector<Criterion> criteria = {
      {1, "gradient suite", criterion_gradients},
      {2, "diffusion-process suite", criterion_diffusion},
      {3, "DCT suite", criterion_dct},
      {4, "causality and no-leakage suite", criterion_causality},
      {5, "graph suite", criterion_graph},
      {6, "metric suite", criterion_metrics},
      {7, "end-to-end toy recovery", [&] { return criterion_toy_recovery(work); }},
      {8, "reproducibility", [&] { return criterion_reproducibility(work); }},
      {9, "ablation plumbing", [&] { return criterion_ablation(work); }},
  };

  int failed = 0;
  for (const auto& c : criteria) {
    Outcome o;
    try {
      o = c.check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << "criterion " << c.id << " [" << c.name << "]: " << (o.pass ? "PASS" : "FAIL")
              << " - " << o.detail << std::endl;
  }
  std::cout << (failed ? std::to_string(failed) + " criterion(s) failed" : "all criteria passed")
            << " (artifacts in " << work.string() << ")" << std::endl;
  return failed ? 1 : 0;
}
