// cofill: train, impute, evaluate, ablate, sweep and synth commands.
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "cofill/experiment.hpp"

namespace fs = std::filesystem;
using namespace cofill;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::size_t> threads;
  std::vector<std::string> overrides;  // key=value
};

RunConfig resolve_config(const Globals& g) {
  RunConfig cfg = g.config.empty() ? RunConfig{} : load_config(g.config);
  for (const auto& kv : g.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(csv::trim(kv.substr(0, eq)), csv::trim(kv.substr(eq + 1)));
  }
  if (g.seed) cfg.seed = *g.seed;
  if (g.threads) cfg.threads = *g.threads;
  cfg.validate();
  return cfg;
}

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  for (const auto& cell : csv::split(s))
    out.push_back(static_cast<std::uint64_t>(csv::parse_long(cell, "--seeds")));
  if (out.empty()) throw ConfigError("--seeds must list at least one seed");
  return out;
}

fs::path out_dir(const Globals& g) {
  fs::path dir = g.out.empty() ? fs::path("out") : fs::path(g.out);
  fs::create_directories(dir);
  return dir;
}

fs::path out_file(const Globals& g, const std::string& fallback) {
  fs::path p = g.out.empty() ? fs::path(fallback) : fs::path(g.out);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  return p;
}

SpatioTemporalSeries series_for(const Checkpoint& ck, const std::string& data_path) {
  if (data_path.empty()) return load_dataset(ck.config);
  if (!fs::exists(data_path)) throw ConfigError("data file not found: " + data_path);
  auto s = load_values(data_path);
  if (s.nodes() != ck.normalizer.mean.size())
    throw DimensionError("data has " + std::to_string(s.nodes()) +
                         " nodes, checkpoint was trained on " +
                         std::to_string(ck.normalizer.mean.size()));
  s.graph = Graph::from_adjacency(ck.adjacency);
  return s;
}

int cmd_train(const Globals& g) {
  const RunConfig cfg = resolve_config(g);
  const auto series = load_dataset(cfg);
  const auto dir = out_dir(g);
  const auto result = train(series, cfg, &std::cerr);
  save_checkpoint(dir / "checkpoint.bin", result.checkpoint);
  csv::write_atomic(dir / "train_log.csv", train_log_csv(result.log));
  std::cout << "wrote " << (dir / "checkpoint.bin").string() << " and "
            << (dir / "train_log.csv").string() << "\n";
  return 0;
}

std::string samples_csv(const std::vector<Tensor>& samples,
                        const std::vector<std::string>& timestamps) {
  std::string out = "sample,time,node,value\n";
  for (std::size_t k = 0; k < samples.size(); ++k)
    for (std::size_t l = 0; l < samples[k].dim(1); ++l)
      for (std::size_t i = 0; i < samples[k].dim(0); ++i)
        out += std::to_string(k) + "," + timestamps[l] + "," + std::to_string(i) + "," +
               csv::format_double(samples[k].at(i, l)) + "\n";
  return out;
}

int cmd_impute(const Globals& g, const std::string& ck_path, const std::string& data,
               std::size_t n_samples, const std::string& samples_path) {
  const Checkpoint ck = load_checkpoint(ck_path);
  const auto series = series_for(ck, data);
  auto model = model_from_checkpoint(ck);
  ImputeOptions opt;
  opt.n_samples = n_samples;
  opt.window_length = ck.config.time_length;
  opt.seed = g.seed.value_or(ck.config.seed);
  opt.threads = g.threads.value_or(1);
  opt.mean_coef = ck.config.mean_coef;
  const auto r =
      impute(series.values, series.mask, *model, ck.normalizer, ck.config.noise_schedule(), opt);
  const Tensor all(series.mask.shape(), 1.0);
  const auto path = out_file(g, "imputed.csv");
  csv::write_atomic(path, values_csv(r.point_estimate, all, series.timestamps));
  if (!samples_path.empty()) csv::write_atomic(samples_path, samples_csv(r.samples, series.timestamps));
  std::cout << "wrote " << path.string() << "\n";
  return 0;
}

int cmd_evaluate(const Globals& g, const std::string& ck_path, const std::string& data,
                 const std::string& scenario, const std::string& seeds, const std::string& split) {
  const Checkpoint ck = load_checkpoint(ck_path);
  const Scenario sc = parse_scenario(scenario);
  if (split != "test" && split != "all")
    throw ConfigError("invalid --split '" + split + "' (test|all)");
  auto series = series_for(ck, data);
  if (split == "test") series = test_split(series);
  const auto report =
      evaluate_checkpoint(ck, series, sc, parse_seeds(seeds), g.threads.value_or(1));
  const auto path = out_file(g, "report.csv");
  csv::write_atomic(path, report.to_csv());
  std::cout << report.to_csv();
  return 0;
}

int cmd_ablate(const Globals& g, const std::string& variants, const std::string& seeds) {
  const RunConfig cfg = resolve_config(g);
  std::vector<Ablation> vs;
  for (const auto& name : csv::split(variants)) vs.push_back(parse_ablation(name));
  if (vs.empty()) throw ConfigError("--variants must name at least one variant");
  const auto series = load_dataset(cfg);
  const auto rows = run_ablation(series, cfg, vs, parse_seeds(seeds), &std::cerr);
  const auto path = out_file(g, "ablation.csv");
  csv::write_atomic(path, ablation_csv(rows));
  std::cout << ablation_csv(rows);
  return 0;
}

int cmd_sweep(const Globals& g, const std::string& param, const std::string& values,
              const std::string& seeds) {
  const RunConfig cfg = resolve_config(g);
  std::vector<double> vs;
  for (const auto& cell : csv::split(values)) vs.push_back(csv::parse_double(cell, "--values"));
  if (vs.empty()) throw ConfigError("--values must list at least one value");
  if (param != "beta_T" && param != "d")
    throw ConfigError("parameter '" + param + "' is not sweepable (valid: beta_T, d)");
  const auto series = load_dataset(cfg);
  const auto rows = run_sweep(series, cfg, param, vs, parse_seeds(seeds), &std::cerr);
  const auto path = out_file(g, "sweep.csv");
  csv::write_atomic(path, sweep_csv(rows));
  std::cout << sweep_csv(rows);
  return 0;
}

int cmd_synth(const Globals& g) {
  const RunConfig cfg = resolve_config(g);
  const auto s = synth_dataset(cfg.synth_nodes, cfg.synth_length, cfg.seed, cfg.synth());
  const auto dir = out_dir(g);
  save_values(s, dir / "values.csv");
  csv::write_atomic(dir / "edges.csv", edge_list_csv(s.graph));
  std::cout << "wrote " << (dir / "values.csv").string() << " and "
            << (dir / "edges.csv").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatiotemporal imputation with conditional diffusion"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  app.add_option("--config", g.config, "Run configuration file")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "Seed overriding the configuration");
  app.add_option("--out", g.out, "Output directory or file");
  auto* threads_opt = app.add_option("--threads", threads, "Worker threads for sampling")
                          ->check(CLI::PositiveNumber);
  app.add_option("--set", g.overrides, "Configuration override key=value (repeatable)");

  auto* train_cmd = app.add_subcommand("train", "Train a model and write checkpoint + log");

  std::string ck_path, data, samples_path;
  std::size_t n_samples = 10;
  auto* impute_cmd = app.add_subcommand("impute", "Fill missing entries of a values CSV");
  impute_cmd->add_option("--checkpoint", ck_path)->required()->check(CLI::ExistingFile);
  impute_cmd->add_option("--data", data, "Values CSV (empty cells are missing)")->required();
  impute_cmd->add_option("--n-samples", n_samples)->check(CLI::PositiveNumber);
  impute_cmd->add_option("--samples", samples_path, "Optional per-sample archive CSV");

  std::string scenario = "point", seeds = "0,1,2,3,4", split = "test";
  auto* eval_cmd = app.add_subcommand("evaluate", "Score a checkpoint against baselines");
  eval_cmd->add_option("--checkpoint", ck_path)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", data, "Values CSV; defaults to the training dataset");
  eval_cmd->add_option("--scenario", scenario, "point or block");
  eval_cmd->add_option("--seeds", seeds, "Comma-separated mask seeds");
  eval_cmd->add_option("--split", split, "test (last 20%) or all");

  std::string variants = "full,no_forward,no_temporal,no_frequency,no_cross";
  auto* ablate_cmd = app.add_subcommand("ablate", "Train and score ablation variants");
  ablate_cmd->add_option("--variants", variants, "Comma-separated variant names");
  ablate_cmd->add_option("--seeds", seeds, "Comma-separated mask seeds");

  std::string param, values;
  auto* sweep_cmd = app.add_subcommand("sweep", "Train and score across one hyperparameter");
  sweep_cmd->add_option("--param", param, "beta_T or d")->required();
  sweep_cmd->add_option("--values", values, "Comma-separated values")->required();
  sweep_cmd->add_option("--seeds", seeds, "Comma-separated mask seeds");

  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic dataset");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  if (*seed_opt) g.seed = seed;
  if (*threads_opt) g.threads = threads;

  try {
    if (*train_cmd) return cmd_train(g);
    if (*impute_cmd) return cmd_impute(g, ck_path, data, n_samples, samples_path);
    if (*eval_cmd) return cmd_evaluate(g, ck_path, data, scenario, seeds, split);
    if (*ablate_cmd) return cmd_ablate(g, variants, seeds);
    if (*sweep_cmd) return cmd_sweep(g, param, values, seeds);
    if (*synth_cmd) return cmd_synth(g);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
