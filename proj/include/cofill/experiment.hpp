#pragma once

// Training loop, scenario evaluation, ablation and sweep orchestration.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cofill/checkpoint.hpp"
#include "cofill/config.hpp"
#include "cofill/data.hpp"
#include "cofill/diffusion.hpp"
#include "cofill/metrics.hpp"
#include "cofill/model.hpp"
#include "cofill/optim.hpp"

namespace cofill {

/// Loads the configured dataset, or synthesizes one when no data path is set.
inline SpatioTemporalSeries load_dataset(const RunConfig& cfg) {
  if (cfg.data.empty())
    return synth_dataset(cfg.synth_nodes, cfg.synth_length, cfg.seed, cfg.synth());
  if (!std::filesystem::exists(cfg.data))
    throw ConfigError("data file not found: " + cfg.data);
  if (cfg.graph.empty()) throw ConfigError("config key 'graph' is required with 'data'");
  if (!std::filesystem::exists(cfg.graph))
    throw ConfigError("graph file not found: " + cfg.graph);
  return load_series(cfg.data, cfg.graph);
}

// ---------------------------------------------------------------------------
// Training

struct TrainLogRow {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  std::optional<double> val_mae;
};

inline std::string train_log_csv(const std::vector<TrainLogRow>& rows) {
  std::string out = "epoch,step,loss,lr,val_mae\n";
  for (const auto& r : rows) {
    out += std::to_string(r.epoch) + "," + std::to_string(r.step) + "," +
           csv::format_double(r.loss) + "," + csv::format_double(r.lr) + ",";
    if (r.val_mae) out += csv::format_double(*r.val_mae);
    out += "\n";
  }
  return out;
}

struct TrainResult {
  Checkpoint checkpoint;  // best validation MAE, or the final state without validation
  std::vector<TrainLogRow> log;
};

inline Checkpoint make_checkpoint(const RunConfig& cfg, const Graph& graph, const Normalizer& norm,
                                  const ParamStore& params, std::uint64_t steps) {
  Checkpoint ck;
  ck.config = cfg;
  ck.adjacency = graph.adjacency;
  ck.normalizer = norm;
  ck.params = named_values(params);
  ck.steps = steps;
  return ck;
}

/// Rebuilds the model a checkpoint describes.
inline std::unique_ptr<CofillModel> model_from_checkpoint(const Checkpoint& ck) {
  auto model = std::make_unique<CofillModel>(ck.config.model(),
                                             Graph::from_adjacency(ck.adjacency), ck.config.seed);
  load_params(model->params(), ck.params);
  return model;
}

/// Validation MAE of the imputer under fixed Point masking of `values`.
inline std::optional<double> validation_mae(const CofillModel& model, const Normalizer& norm,
                                            const NoiseSchedule& sched, const Tensor& values,
                                            const Tensor& mask, const RunConfig& cfg) {
  auto rng = stream_rng(cfg.seed, 0x7A1u, 0);
  const Tensor hidden_mask = mask_point(mask, cfg.point_ratio, rng);
  Tensor eval(mask.shape());
  std::size_t count = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    eval[i] = (mask[i] != 0.0 && hidden_mask[i] == 0.0) ? 1.0 : 0.0;
    count += eval[i] != 0.0;
  }
  if (count == 0) return std::nullopt;
  ImputeOptions opt;
  opt.n_samples = cfg.val_samples;
  opt.window_length = cfg.time_length;
  opt.seed = cfg.seed ^ 0x5EEDull;
  opt.threads = cfg.threads;
  opt.mean_coef = cfg.mean_coef;
  const auto r = impute(values, hidden_mask, model, norm, sched, opt);
  return mae(r.point_estimate, values, eval);
}

/// Runs training on the 70% training split, validating on the next 10%.
inline TrainResult train(const SpatioTemporalSeries& series, const RunConfig& cfg,
                         std::ostream* progress = nullptr) {
  cfg.validate();
  series.validate();
  const auto split = split_70_10_20(series.length());
  const std::size_t train_len = split.train_end;
  cfg.validate_against_length(train_len);

  const SpatioTemporalSeries train_part = series.slice_time(0, train_len);
  const SpatioTemporalSeries val_part = series.slice_time(split.train_end, split.val_end);
  const Normalizer norm = Normalizer::fit(train_part.values, train_part.mask);
  const Tensor train_norm = norm.transform(zero_fill(train_part.values, train_part.mask));
  const auto windows = window(train_norm, train_part.mask, cfg.time_length, cfg.stride);

  CofillModel model(cfg.model(), series.graph, cfg.seed);
  const NoiseSchedule sched = cfg.noise_schedule();
  std::mt19937_64 rng(cfg.seed * 0x9E3779B97F4A7C15ull + 1);
  AdamState adam;
  TrainResult result;
  std::vector<Tensor> best = model.params().snapshot();
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t global_step = 0;

  std::vector<std::size_t> order(windows.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cosine_lr(static_cast<long>(epoch), static_cast<long>(cfg.epochs), cfg.lr,
                                cfg.lr_min);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t loss_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<MaskedBatch> batch;
      std::size_t total_targets = 0;
      for (std::size_t i = start; i < end; ++i) {
        const Window& w = windows[order[i]];
        auto mb = training_mask(w.values, w.mask, cfg.masking, rng);
        if (!mb || mb->target_count() == 0) continue;
        total_targets += mb->target_count();
        batch.push_back(std::move(*mb));
      }
      if (batch.empty()) continue;
      model.params().zero_grad();
      double batch_loss = 0.0;
      for (const auto& mb : batch) {
        auto draw = training_loss(mb, model, sched, rng, true);
        if (!draw) continue;
        const double weight =
            static_cast<double>(draw->targets) / static_cast<double>(total_targets);
        const double value = draw->loss.value()[0];
        if (!std::isfinite(value)) {
          std::ostringstream msg;
          msg << "non-finite training loss at epoch " << epoch + 1 << ", batch "
              << start / cfg.batch_size << ", optimizer step " << global_step
              << ", diffusion step t=" << draw->t;
          throw std::runtime_error(msg.str());
        }
        batch_loss += weight * value;
        backward(scale(draw->loss, weight));
      }
      adam_step(model.params(), adam, lr);
      ++global_step;
      loss_sum += batch_loss;
      ++loss_batches;
    }

    TrainLogRow row;
    row.epoch = epoch + 1;
    row.step = global_step;
    row.loss = loss_batches ? loss_sum / static_cast<double>(loss_batches) : 0.0;
    row.lr = lr;
    const bool last = epoch + 1 == cfg.epochs;
    if (val_part.length() > 0 && ((epoch + 1) % cfg.val_every == 0 || last))
      row.val_mae = validation_mae(model, norm, sched, val_part.values, val_part.mask, cfg);
    if (row.val_mae && *row.val_mae < best_val) {
      best_val = *row.val_mae;
      best = model.params().snapshot();
    } else if (best_val == std::numeric_limits<double>::infinity()) {
      best = model.params().snapshot();
    }
    if (progress)
      *progress << "epoch " << row.epoch << " loss " << row.loss << " lr " << row.lr
                << (row.val_mae ? " val_mae " + csv::format_double(*row.val_mae) : "") << "\n";
    result.log.push_back(row);
  }
  model.params().restore(best);
  result.checkpoint = make_checkpoint(cfg, series.graph, norm, model.params(), global_step);
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation

enum class Scenario { point, block };

inline Scenario parse_scenario(const std::string& s) {
  if (s == "point") return Scenario::point;
  if (s == "block") return Scenario::block;
  throw ConfigError("unknown scenario '" + s + "' (valid: point, block)");
}

inline const char* scenario_name(Scenario s) { return s == Scenario::point ? "point" : "block"; }

/// Hides entries of the observed mask according to the scenario.
inline Tensor scenario_mask(const Tensor& observed, Scenario sc, double point_ratio,
                            std::mt19937_64& rng) {
  if (sc == Scenario::point) return mask_point(observed, point_ratio, rng);
  BlockMaskParams p;
  p.max_len = std::min(p.max_len, observed.dim(1));
  p.min_len = std::min(p.min_len, p.max_len);
  return mask_block(observed, p, rng);
}

struct MetricRow {
  std::string scenario;
  std::string method;
  std::uint64_t seed = 0;
  double mae = 0.0, mse = 0.0, crps = 0.0;
  std::size_t n_targets = 0;
};

struct MetricSummary {
  double mae_mean = 0.0, mae_std = 0.0;
  double mse_mean = 0.0, mse_std = 0.0;
  double crps_mean = 0.0, crps_std = 0.0;
};

struct MetricReport {
  std::vector<MetricRow> rows;

  std::vector<std::string> methods() const {
    std::vector<std::string> out;
    for (const auto& r : rows)
      if (std::find(out.begin(), out.end(), r.method) == out.end()) out.push_back(r.method);
    return out;
  }

  std::vector<MetricRow> for_method(const std::string& m) const {
    std::vector<MetricRow> out;
    for (const auto& r : rows)
      if (r.method == m) out.push_back(r);
    return out;
  }

  /// Mean and sample standard deviation across seeds.
  MetricSummary summary(const std::string& method) const {
    const auto rs = for_method(method);
    MetricSummary s;
    if (rs.empty()) return s;
    auto stats = [&](auto get, double& mean, double& sd) {
      mean = 0.0;
      for (const auto& r : rs) mean += get(r);
      mean /= static_cast<double>(rs.size());
      sd = 0.0;
      if (rs.size() > 1) {
        for (const auto& r : rs) sd += (get(r) - mean) * (get(r) - mean);
        sd = std::sqrt(sd / static_cast<double>(rs.size() - 1));
      }
    };
    stats([](const MetricRow& r) { return r.mae; }, s.mae_mean, s.mae_std);
    stats([](const MetricRow& r) { return r.mse; }, s.mse_mean, s.mse_std);
    stats([](const MetricRow& r) { return r.crps; }, s.crps_mean, s.crps_std);
    return s;
  }

  /// Per-seed rows, then `mean` and `std` rows per method.
  std::string to_csv() const {
    std::string out = "scenario,method,seed,mae,mse,crps,n_targets\n";
    for (const auto& r : rows)
      out += r.scenario + "," + r.method + "," + std::to_string(r.seed) + "," +
             csv::format_double(r.mae) + "," + csv::format_double(r.mse) + "," +
             csv::format_double(r.crps) + "," + std::to_string(r.n_targets) + "\n";
    for (const auto& m : methods()) {
      const auto s = summary(m);
      const auto rs = for_method(m);
      std::size_t n = 0;
      for (const auto& r : rs) n += r.n_targets;
      out += rs[0].scenario + "," + m + ",mean," + csv::format_double(s.mae_mean) + "," +
             csv::format_double(s.mse_mean) + "," + csv::format_double(s.crps_mean) + "," +
             std::to_string(n) + "\n";
      out += rs[0].scenario + "," + m + ",std," + csv::format_double(s.mae_std) + "," +
             csv::format_double(s.mse_std) + "," + csv::format_double(s.crps_std) + "," +
             std::to_string(n) + "\n";
    }
    return out;
  }
};

/// Anything that fills the missing entries of a [N, L] series in original
/// units. Returns one or more samples.
using Imputer = std::function<std::vector<Tensor>(const Tensor& values, const Tensor& mask,
                                                  std::uint64_t seed)>;

inline Imputer cofill_imputer(const CofillModel& model, const Normalizer& norm,
                              const NoiseSchedule& sched, const RunConfig& cfg) {
  return [&model, &norm, sched, cfg](const Tensor& v, const Tensor& m, std::uint64_t seed) {
    ImputeOptions opt;
    opt.n_samples = cfg.n_samples;
    opt.window_length = cfg.time_length;
    opt.seed = seed;
    opt.threads = cfg.threads;
    opt.mean_coef = cfg.mean_coef;
    return impute(v, m, model, norm, sched, opt).samples;
  };
}

inline Imputer mean_imputer() {
  return [](const Tensor& v, const Tensor& m, std::uint64_t) {
    return std::vector<Tensor>{baseline_mean(v, m)};
  };
}

inline Imputer linear_imputer() {
  return [](const Tensor& v, const Tensor& m, std::uint64_t) {
    return std::vector<Tensor>{baseline_linear(v, m)};
  };
}

/// Masks `test` per scenario for each seed, imputes with every method, and
/// scores the point estimate (median of samples) on the hidden entries.
inline MetricReport evaluate(const std::vector<std::pair<std::string, Imputer>>& methods,
                             const SpatioTemporalSeries& test, Scenario sc, double point_ratio,
                             const std::vector<std::uint64_t>& seeds) {
  if (seeds.empty()) throw ContractError("evaluate: need at least one seed");
  MetricReport report;
  for (std::uint64_t seed : seeds) {
    std::mt19937_64 rng(seed);
    const Tensor kept = scenario_mask(test.mask, sc, point_ratio, rng);
    Tensor eval(kept.shape());
    std::size_t n = 0;
    for (std::size_t i = 0; i < eval.size(); ++i) {
      eval[i] = (test.mask[i] != 0.0 && kept[i] == 0.0) ? 1.0 : 0.0;
      n += eval[i] != 0.0;
    }
    if (n == 0) throw ContractError("evaluate: scenario hid no observed entries for seed " +
                                    std::to_string(seed));
    const Tensor masked_values = zero_fill(test.values, kept);
    for (const auto& [name, imputer] : methods) {
      const auto samples = imputer(masked_values, kept, seed);
      const Tensor point = samples.size() == 1 ? samples[0] : elementwise_median(samples);
      MetricRow row;
      row.scenario = scenario_name(sc);
      row.method = name;
      row.seed = seed;
      row.mae = mae(point, test.values, eval);
      row.mse = mse(point, test.values, eval);
      row.crps = crps_normalized(samples, test.values, eval);
      row.n_targets = n;
      report.rows.push_back(row);
    }
  }
  return report;
}

inline std::vector<std::uint64_t> default_seeds() { return {0, 1, 2, 3, 4}; }

/// Test split (last 20%) of a series.
inline SpatioTemporalSeries test_split(const SpatioTemporalSeries& s) {
  const auto split = split_70_10_20(s.length());
  return s.slice_time(split.val_end, s.length());
}

/// Scores a checkpoint together with the mean and linear baselines.
inline MetricReport evaluate_checkpoint(const Checkpoint& ck, const SpatioTemporalSeries& test,
                                        Scenario sc, const std::vector<std::uint64_t>& seeds,
                                        std::size_t threads = 1) {
  RunConfig cfg = ck.config;
  cfg.threads = threads;
  if (test.nodes() != ck.normalizer.mean.size())
    throw DimensionError("data has " + std::to_string(test.nodes()) +
                         " nodes, checkpoint was trained on " +
                         std::to_string(ck.normalizer.mean.size()));
  auto model = model_from_checkpoint(ck);
  const NoiseSchedule sched = cfg.noise_schedule();
  return evaluate({{"cofill", cofill_imputer(*model, ck.normalizer, sched, cfg)},
                   {"mean", mean_imputer()},
                   {"linear", linear_imputer()}},
                  test, sc, cfg.point_ratio, seeds);
}

// ---------------------------------------------------------------------------
// Ablation and sweeps

struct AblationRow {
  Ablation variant = Ablation::full;
  std::vector<std::uint64_t> seeds;
  MetricSummary metrics;
  std::vector<double> mae_per_seed;
  double final_loss = 0.0;
};

inline std::string seeds_label(const std::vector<std::uint64_t>& seeds) {
  std::string s;
  for (std::size_t i = 0; i < seeds.size(); ++i) s += (i ? ";" : "") + std::to_string(seeds[i]);
  return s;
}

inline std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = "variant,seeds,mae,mae_std,mse,mse_std,crps,crps_std,final_loss\n";
  for (const auto& r : rows)
    out += std::string(ablation_name(r.variant)) + "," + seeds_label(r.seeds) + "," +
           csv::format_double(r.metrics.mae_mean) + "," + csv::format_double(r.metrics.mae_std) +
           "," + csv::format_double(r.metrics.mse_mean) + "," +
           csv::format_double(r.metrics.mse_std) + "," + csv::format_double(r.metrics.crps_mean) +
           "," + csv::format_double(r.metrics.crps_std) + "," + csv::format_double(r.final_loss) +
           "\n";
  return out;
}

/// Trains and evaluates one model per variant on shared seeds (Point scenario).
inline std::vector<AblationRow> run_ablation(const SpatioTemporalSeries& series, RunConfig cfg,
                                             const std::vector<Ablation>& variants,
                                             const std::vector<std::uint64_t>& seeds,
                                             std::ostream* progress = nullptr) {
  std::vector<AblationRow> rows;
  const auto test = test_split(series);
  for (Ablation v : variants) {
    cfg.ablation = v;
    if (progress) *progress << "variant " << ablation_name(v) << "\n";
    const auto tr = train(series, cfg, progress);
    const auto report = evaluate_checkpoint(tr.checkpoint, test, Scenario::point, seeds, cfg.threads);
    AblationRow row;
    row.variant = v;
    row.seeds = seeds;
    row.metrics = report.summary("cofill");
    for (const auto& r : report.for_method("cofill")) row.mae_per_seed.push_back(r.mae);
    row.final_loss = tr.log.empty() ? 0.0 : tr.log.back().loss;
    rows.push_back(row);
  }
  return rows;
}

struct SweepRow {
  std::string param;
  double value = 0.0;
  double mae = 0.0, mse = 0.0;
};

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "param,value,mae,mse\n";
  for (const auto& r : rows)
    out += r.param + "," + csv::format_double(r.value) + "," + csv::format_double(r.mae) + "," +
           csv::format_double(r.mse) + "\n";
  return out;
}

/// One train + evaluate per value of `beta_T` (max noise level) or `d` (channels).
inline std::vector<SweepRow> run_sweep(const SpatioTemporalSeries& series, RunConfig cfg,
                                       const std::string& param, const std::vector<double>& values,
                                       const std::vector<std::uint64_t>& seeds,
                                       std::ostream* progress = nullptr) {
  if (param != "beta_T" && param != "d")
    throw ConfigError("parameter '" + param + "' is not sweepable (valid: beta_T, d)");
  std::vector<SweepRow> rows;
  const auto test = test_split(series);
  for (double v : values) {
    if (param == "beta_T") {
      cfg.beta_max = v;
    } else {
      if (v < 1.0 || v != std::floor(v)) throw ConfigError("d must be a positive integer");
      cfg.channels = static_cast<std::size_t>(v);
    }
    if (progress) *progress << "sweep " << param << " = " << v << "\n";
    const auto tr = train(series, cfg, progress);
    const auto report = evaluate_checkpoint(tr.checkpoint, test, Scenario::point, seeds, cfg.threads);
    const auto s = report.summary("cofill");
    rows.push_back({param, v, s.mae_mean, s.mse_mean});
  }
  return rows;
}

}  // namespace cofill
