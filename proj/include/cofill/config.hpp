#pragma once

// Run configuration: flat `key = value` text with `#` comments.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "cofill/csv.hpp"
#include "cofill/data.hpp"
#include "cofill/diffusion.hpp"
#include "cofill/model.hpp"

namespace cofill {

inline const char* strategy_name(MaskStrategy s) {
  switch (s) {
    case MaskStrategy::point: return "point";
    case MaskStrategy::block: return "block";
    case MaskStrategy::hybrid: return "hybrid";
  }
  return "?";
}

struct RunConfig {
  // Model and optimizer
  std::size_t batch_size = 16;
  std::size_t time_length = 24;
  std::size_t epochs = 300;
  double lr = 1e-3;
  double lr_min = 1e-5;
  std::size_t channels = 64;
  std::size_t layers = 4;
  double beta_min = 1e-4;
  double beta_max = 0.2;
  std::size_t diffusion_steps = 50;
  std::size_t virtual_nodes = 0;
  bool time_encoding = true;

  // Architecture details
  std::size_t heads = 8;
  std::size_t gcn_order = 2;
  std::size_t tcn_kernel = 3;
  double dropout = 0.1;
  std::size_t emb_dim = 128;

  // Training and sampling
  MaskStrategy masking = MaskStrategy::hybrid;
  ScheduleKind schedule = ScheduleKind::quadratic;
  MeanCoef mean_coef = MeanCoef::alpha;
  Ablation ablation = Ablation::full;
  std::size_t stride = 1;
  std::size_t n_samples = 10;
  std::size_t val_samples = 3;
  std::size_t val_every = 1;
  double point_ratio = 0.25;  // evaluation Point scenario
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  // Data
  std::string data;
  std::string graph;

  // Synthetic generator
  std::size_t synth_nodes = 6;
  std::size_t synth_length = 2000;
  double synth_period_min = 8.0;
  double synth_period_max = 24.0;
  std::size_t synth_components = 2;
  double synth_noise = 0.05;
  double synth_smoothing = 0.5;

  ModelConfig model() const {
    ModelConfig m;
    m.channels = channels;
    m.heads = heads;
    m.layers = layers;
    m.gcn_order = gcn_order;
    m.tcn_kernel = tcn_kernel;
    m.dropout = dropout;
    m.emb_dim = emb_dim;
    m.diffusion_steps = diffusion_steps;
    m.virtual_nodes = virtual_nodes;
    m.time_encoding = time_encoding;
    m.ablation = ablation;
    return m;
  }

  SynthSpec synth() const {
    SynthSpec s;
    s.period_min = synth_period_min;
    s.period_max = synth_period_max;
    s.components = synth_components;
    s.noise_std = synth_noise;
    s.smoothing = synth_smoothing;
    return s;
  }

  NoiseSchedule noise_schedule() const {
    return build_schedule(diffusion_steps, beta_min, beta_max, schedule);
  }

  void validate() const {
    auto need = [](bool ok, const std::string& msg) {
      if (!ok) throw ConfigError(msg);
    };
    need(batch_size >= 1, "batch_size must be >= 1");
    need(time_length >= 1, "time_length must be >= 1");
    need(lr > 0.0 && lr_min >= 0.0 && lr_min <= lr, "need 0 <= lr_min <= lr and lr > 0");
    need(channels >= 1, "channels must be >= 1");
    need(layers >= 1, "layers must be >= 1");
    need(heads >= 1 && channels % heads == 0,
         "channels (" + std::to_string(channels) + ") must be divisible by heads (" +
             std::to_string(heads) + ")");
    need(beta_min > 0.0 && beta_max < 1.0, "noise levels must lie in (0, 1)");
    need(beta_min <= beta_max, "beta_min must not exceed beta_max");
    need(diffusion_steps >= 1, "diffusion_steps must be >= 1");
    need(gcn_order >= 1, "gcn_order must be >= 1");
    need(tcn_kernel >= 1, "tcn_kernel must be >= 1");
    need(dropout >= 0.0 && dropout < 1.0, "dropout must lie in [0, 1)");
    need(emb_dim >= 1, "emb_dim must be >= 1");
    need(stride >= 1, "stride must be >= 1");
    need(n_samples >= 1, "n_samples must be >= 1");
    need(val_samples >= 1, "val_samples must be >= 1");
    need(val_every >= 1, "val_every must be >= 1");
    need(point_ratio >= 0.0 && point_ratio <= 1.0, "point_ratio must lie in [0, 1]");
    need(threads >= 1, "threads must be >= 1");
    need(synth_nodes >= 1 && synth_length >= 1, "synthetic sizes must be >= 1");
    need(synth_period_min > 0.0 && synth_period_min <= synth_period_max,
         "synthetic periods must satisfy 0 < min <= max");
  }

  /// Window length must fit the series it is trained on.
  void validate_against_length(std::size_t series_length) const {
    if (time_length > series_length)
      throw ConfigError("time_length " + std::to_string(time_length) +
                        " exceeds series length " + std::to_string(series_length));
  }

  void set(const std::string& key, const std::string& value);
  std::string to_text() const;
};

namespace detail {

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty())
    throw ConfigError("invalid value '" + v + "' for key '" + key + "'");
  return out;
}

struct ConfigField {
  const char* key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class T>
ConfigField number_field(const char* key, T RunConfig::*member) {
  return {key,
          [key, member](RunConfig& c, const std::string& v) { c.*member = parse_number<T>(key, v); },
          [member](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>)
              return csv::format_double(c.*member);
            else
              return std::to_string(c.*member);
          }};
}

inline ConfigField string_field(const char* key, std::string RunConfig::*member) {
  return {key, [member](RunConfig& c, const std::string& v) { c.*member = v; },
          [member](const RunConfig& c) { return c.*member; }};
}

inline const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = {
      number_field("batch_size", &RunConfig::batch_size),
      number_field("time_length", &RunConfig::time_length),
      number_field("epochs", &RunConfig::epochs),
      number_field("lr", &RunConfig::lr),
      number_field("lr_min", &RunConfig::lr_min),
      number_field("channels", &RunConfig::channels),
      number_field("layers", &RunConfig::layers),
      number_field("beta_min", &RunConfig::beta_min),
      number_field("beta_max", &RunConfig::beta_max),
      number_field("diffusion_steps", &RunConfig::diffusion_steps),
      number_field("virtual_nodes", &RunConfig::virtual_nodes),
      number_field("heads", &RunConfig::heads),
      number_field("gcn_order", &RunConfig::gcn_order),
      number_field("tcn_kernel", &RunConfig::tcn_kernel),
      number_field("dropout", &RunConfig::dropout),
      number_field("emb_dim", &RunConfig::emb_dim),
      {"masking",
       [](RunConfig& c, const std::string& v) {
         if (v == "point") c.masking = MaskStrategy::point;
         else if (v == "block") c.masking = MaskStrategy::block;
         else if (v == "hybrid") c.masking = MaskStrategy::hybrid;
         else throw ConfigError("invalid value '" + v + "' for key 'masking' (point|block|hybrid)");
       },
       [](const RunConfig& c) { return std::string(strategy_name(c.masking)); }},
      {"schedule",
       [](RunConfig& c, const std::string& v) {
         if (v == "linear") c.schedule = ScheduleKind::linear;
         else if (v == "quadratic") c.schedule = ScheduleKind::quadratic;
         else throw ConfigError("invalid value '" + v + "' for key 'schedule' (linear|quadratic)");
       },
       [](const RunConfig& c) {
         return std::string(c.schedule == ScheduleKind::linear ? "linear" : "quadratic");
       }},
      {"mean_coef",
       [](RunConfig& c, const std::string& v) {
         if (v == "alpha") c.mean_coef = MeanCoef::alpha;
         else if (v == "alpha_bar") c.mean_coef = MeanCoef::alpha_bar;
         else throw ConfigError("invalid value '" + v + "' for key 'mean_coef' (alpha|alpha_bar)");
       },
       [](const RunConfig& c) {
         return std::string(c.mean_coef == MeanCoef::alpha ? "alpha" : "alpha_bar");
       }},
      {"time_encoding",
       [](RunConfig& c, const std::string& v) {
         if (v == "true" || v == "1") c.time_encoding = true;
         else if (v == "false" || v == "0") c.time_encoding = false;
         else throw ConfigError("invalid value '" + v + "' for key 'time_encoding' (true|false)");
       },
       [](const RunConfig& c) { return std::string(c.time_encoding ? "true" : "false"); }},
      {"ablation", [](RunConfig& c, const std::string& v) { c.ablation = parse_ablation(v); },
       [](const RunConfig& c) { return std::string(ablation_name(c.ablation)); }},
      number_field("stride", &RunConfig::stride),
      number_field("n_samples", &RunConfig::n_samples),
      number_field("val_samples", &RunConfig::val_samples),
      number_field("val_every", &RunConfig::val_every),
      number_field("point_ratio", &RunConfig::point_ratio),
      number_field("seed", &RunConfig::seed),
      number_field("threads", &RunConfig::threads),
      string_field("data", &RunConfig::data),
      string_field("graph", &RunConfig::graph),
      number_field("synth_nodes", &RunConfig::synth_nodes),
      number_field("synth_length", &RunConfig::synth_length),
      number_field("synth_period_min", &RunConfig::synth_period_min),
      number_field("synth_period_max", &RunConfig::synth_period_max),
      number_field("synth_components", &RunConfig::synth_components),
      number_field("synth_noise", &RunConfig::synth_noise),
      number_field("synth_smoothing", &RunConfig::synth_smoothing),
  };
  return fields;
}

}  // namespace detail

inline void RunConfig::set(const std::string& key, const std::string& value) {
  for (const auto& f : detail::config_fields())
    if (key == f.key) {
      f.set(*this, value);
      return;
    }
  throw ConfigError("unknown config key '" + key + "'");
}

inline std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& f : detail::config_fields()) out += std::string(f.key) + " = " + f.get(*this) + "\n";
  return out;
}

/// Parses `key = value` lines onto the defaults; blank lines and `#` comments
/// are ignored. Does not validate.
inline RunConfig parse_config_text(const std::string& text, const std::string& source = "config") {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (csv::trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = csv::trim(line.substr(0, eq));
    const std::string value = csv::trim(line.substr(eq + 1));
    try {
      cfg.set(key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return cfg;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  RunConfig cfg = parse_config_text(ss.str(), path.string());
  // Relative data paths resolve against the config file's directory.
  for (std::string* p : {&cfg.data, &cfg.graph})
    if (!p->empty() && std::filesystem::path(*p).is_relative())
      *p = (path.parent_path() / *p).lexically_normal().string();
  return cfg;
}

}  // namespace cofill
