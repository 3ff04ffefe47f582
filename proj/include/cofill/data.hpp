#pragma once

// Series ingestion, normalization, missing-pattern simulation and the two
// pre-imputation fills (carry-forward interpolation and Gaussian fill).

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "cofill/csv.hpp"
#include "cofill/graph.hpp"

namespace cofill {

/// Values X [N, L], observation mask M [N, L] (1 observed, 0 missing), graph
/// and one timestamp label per step. X is meaningless where M is 0.
struct SpatioTemporalSeries {
  Tensor values;
  Tensor mask;
  Graph graph;
  std::vector<std::string> timestamps;

  std::size_t nodes() const { return values.dim(0); }
  std::size_t length() const { return values.dim(1); }

  std::size_t observed_count() const {
    std::size_t c = 0;
    for (double m : mask.data()) c += m != 0.0;
    return c;
  }

  void validate() const {
    if (values.rank() != 2 || values.shape() != mask.shape())
      throw DimensionError("series values " + shape_str(values.shape()) +
                           " and mask " + shape_str(mask.shape()) + " disagree");
    if (timestamps.size() != length())
      throw DimensionError("series has " + std::to_string(timestamps.size()) +
                           " timestamps for " + std::to_string(length()) + " steps");
    if (graph.node_count != nodes())
      throw DimensionError("graph has " + std::to_string(graph.node_count) +
                           " nodes, series has " + std::to_string(nodes()));
    for (double m : mask.data())
      if (m != 0.0 && m != 1.0) throw ContractError("mask entries must be 0 or 1");
  }

  /// Steps [begin, end) as a new series sharing the graph.
  SpatioTemporalSeries slice_time(std::size_t begin, std::size_t end) const {
    if (begin > end || end > length())
      throw ContractError("slice_time: invalid range");
    const std::size_t n = nodes(), len = end - begin;
    SpatioTemporalSeries out;
    out.values = Tensor({n, len});
    out.mask = Tensor({n, len});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t l = 0; l < len; ++l) {
        out.values.at(i, l) = values.at(i, begin + l);
        out.mask.at(i, l) = mask.at(i, begin + l);
      }
    out.graph = graph;
    out.timestamps.assign(timestamps.begin() + static_cast<long>(begin),
                          timestamps.begin() + static_cast<long>(end));
    return out;
  }
};

// ---------------------------------------------------------------------------
// Normalization

/// Per-node z-score fitted on observed entries.
struct Normalizer {
  std::vector<double> mean;
  std::vector<double> stddev;

  static constexpr double kMinStd = 1e-6;

  static Normalizer fit(const Tensor& values, const Tensor& mask) {
    const std::size_t n = values.dim(0), len = values.dim(1);
    Normalizer z;
    z.mean.assign(n, 0.0);
    z.stddev.assign(n, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0, c = 0.0;
      for (std::size_t l = 0; l < len; ++l)
        if (mask.at(i, l) != 0.0) {
          s += values.at(i, l);
          c += 1.0;
        }
      if (c == 0.0) continue;
      const double mu = s / c;
      double v = 0.0;
      for (std::size_t l = 0; l < len; ++l)
        if (mask.at(i, l) != 0.0) v += (values.at(i, l) - mu) * (values.at(i, l) - mu);
      const double sd = std::sqrt(v / c);
      z.mean[i] = mu;
      // Constant nodes keep unit scale.
      z.stddev[i] = sd >= kMinStd ? sd : 1.0;
    }
    return z;
  }

  Tensor transform(const Tensor& x) const {
    check(x);
    Tensor y = x;
    for (std::size_t i = 0; i < y.dim(0); ++i)
      for (std::size_t l = 0; l < y.dim(1); ++l)
        y.at(i, l) = (x.at(i, l) - mean[i]) / stddev[i];
    return y;
  }

  Tensor inverse(const Tensor& x) const {
    check(x);
    Tensor y = x;
    for (std::size_t i = 0; i < y.dim(0); ++i)
      for (std::size_t l = 0; l < y.dim(1); ++l)
        y.at(i, l) = x.at(i, l) * stddev[i] + mean[i];
    return y;
  }

 private:
  void check(const Tensor& x) const {
    if (x.rank() != 2 || x.dim(0) != mean.size())
      throw DimensionError("normalizer fitted for " + std::to_string(mean.size()) +
                           " nodes, got " + shape_str(x.shape()));
  }
};

// ---------------------------------------------------------------------------
// Ingestion

/// Reads a graph file, dispatching on its header: `src,dst[,weight]` edge
/// list or `node,x,y` coordinates (thresholded Gaussian kernel).
inline Graph load_graph(const std::filesystem::path& path, std::size_t node_count,
                        double coord_threshold = 0.1) {
  const auto table = csv::read(path);
  if (!table.header.empty() && table.header[0] == "node") {
    auto coords = load_coords(path);
    if (coords.size() != node_count)
      throw ParseError(path.string() + ": " + std::to_string(coords.size()) +
                       " coordinates for " + std::to_string(node_count) + " nodes");
    return build_adjacency_from_coords(coords, coord_threshold);
  }
  return load_edge_list(path, node_count);
}

/// Values CSV `time,node_0,...,node_{N-1}`; an empty cell marks a missing value.
inline SpatioTemporalSeries load_values(const std::filesystem::path& path) {
  const auto table = csv::read(path);
  if (table.header.size() < 2 || table.header[0] != "time")
    throw ParseError(path.string() + ": expected header time,node_0,...");
  if (table.rows.empty()) throw ParseError(path.string() + ": no data rows");
  const std::size_t n = table.header.size() - 1;
  const std::size_t len = table.rows.size();
  SpatioTemporalSeries s;
  s.values = Tensor({n, len});
  s.mask = Tensor({n, len});
  for (std::size_t l = 0; l < len; ++l) {
    const auto& row = table.rows[l];
    const std::string where = path.string() + ":" + std::to_string(row.line);
    if (row.cells.size() != n + 1)
      throw ParseError(where + ": expected " + std::to_string(n + 1) +
                       " columns, got " + std::to_string(row.cells.size()));
    s.timestamps.push_back(row.cells[0]);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& cell = row.cells[i + 1];
      if (cell.empty()) continue;
      s.values.at(i, l) = csv::parse_double(cell, where + " column " + std::to_string(i + 2));
      s.mask.at(i, l) = 1.0;
    }
  }
  s.graph = Graph::empty(n);
  return s;
}

inline SpatioTemporalSeries load_series(const std::filesystem::path& values_path,
                                        const std::filesystem::path& graph_path) {
  auto s = load_values(values_path);
  s.graph = load_graph(graph_path, s.nodes());
  s.validate();
  return s;
}

inline std::string values_csv(const Tensor& values, const Tensor& mask,
                              const std::vector<std::string>& timestamps) {
  std::string out = "time";
  for (std::size_t i = 0; i < values.dim(0); ++i) out += ",node_" + std::to_string(i);
  out += '\n';
  for (std::size_t l = 0; l < values.dim(1); ++l) {
    out += timestamps.at(l);
    for (std::size_t i = 0; i < values.dim(0); ++i) {
      out += ',';
      if (mask.at(i, l) != 0.0) out += csv::format_double(values.at(i, l));
    }
    out += '\n';
  }
  return out;
}

/// 0/1 mask CSV mirroring the values layout.
inline std::string mask_csv(const Tensor& mask, const std::vector<std::string>& timestamps) {
  std::string out = "time";
  for (std::size_t i = 0; i < mask.dim(0); ++i) out += ",node_" + std::to_string(i);
  out += '\n';
  for (std::size_t l = 0; l < mask.dim(1); ++l) {
    out += timestamps.at(l);
    for (std::size_t i = 0; i < mask.dim(0); ++i) out += mask.at(i, l) != 0.0 ? ",1" : ",0";
    out += '\n';
  }
  return out;
}

inline void save_values(const SpatioTemporalSeries& s, const std::filesystem::path& path) {
  csv::write_atomic(path, values_csv(s.values, s.mask, s.timestamps));
}

// ---------------------------------------------------------------------------
// Synthetic data

struct SynthSpec {
  double period_min = 8.0;
  double period_max = 24.0;
  std::size_t components = 2;
  double amplitude = 1.0;
  double noise_std = 0.05;
  double smoothing = 0.5;  // weight given to the two ring neighbours
  double offset = 10.0;    // node i is centred at offset + i
};

/// Noise-free per-node sinusoid mixture before spatial smoothing; shared by
/// synth_dataset and its closed-form tests.
struct SinusoidBank {
  struct Wave {
    double amplitude, period, phase;
  };
  std::vector<std::vector<Wave>> waves;  // per node

  double raw(std::size_t node, double t) const {
    double v = 0.0;
    for (const auto& w : waves[node])
      v += w.amplitude * std::sin(2.0 * std::numbers::pi * t / w.period + w.phase);
    return v;
  }
};

inline SinusoidBank draw_sinusoids(std::size_t n_nodes, const SynthSpec& spec,
                                   std::mt19937_64& rng) {
  std::uniform_real_distribution<double> period(spec.period_min, spec.period_max);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> amp(0.5, 1.0);
  SinusoidBank bank;
  bank.waves.resize(n_nodes);
  for (auto& node : bank.waves)
    for (std::size_t c = 0; c < spec.components; ++c) {
      const double a = amp(rng) * spec.amplitude;
      const double p = period(rng);
      node.push_back({a, p, phase(rng)});
    }
  return bank;
}

/// Fully observed ring-graph dataset: per-node sinusoids, neighbour smoothing
/// x_i = (1-w) r_i + w/2 (r_{i-1} + r_{i+1}), per-node offset and Gaussian
/// observation noise.
inline SpatioTemporalSeries synth_dataset(std::size_t n_nodes, std::size_t length,
                                          std::uint64_t seed, const SynthSpec& spec = {}) {
  if (n_nodes < 1) throw ContractError("synth_dataset: need at least one node");
  std::mt19937_64 rng(seed);
  const SinusoidBank bank = draw_sinusoids(n_nodes, spec, rng);
  std::normal_distribution<double> noise(0.0, 1.0);
  SpatioTemporalSeries s;
  s.values = Tensor({n_nodes, length});
  s.mask = Tensor({n_nodes, length}, 1.0);
  const double w = n_nodes > 1 ? spec.smoothing : 0.0;
  for (std::size_t l = 0; l < length; ++l) {
    const double t = static_cast<double>(l);
    for (std::size_t i = 0; i < n_nodes; ++i) {
      const std::size_t prev = (i + n_nodes - 1) % n_nodes, next = (i + 1) % n_nodes;
      const double smooth = (1.0 - w) * bank.raw(i, t) +
                            0.5 * w * (bank.raw(prev, t) + bank.raw(next, t));
      s.values.at(i, l) = spec.offset + static_cast<double>(i) + smooth;
    }
  }
  if (spec.noise_std > 0.0)
    for (double& v : s.values.storage()) v += spec.noise_std * noise(rng);
  for (std::size_t l = 0; l < length; ++l) s.timestamps.push_back(std::to_string(l));
  s.graph = Graph::ring(n_nodes);
  return s;
}

// ---------------------------------------------------------------------------
// Missing patterns. Each returns the observation mask after hiding entries;
// hidden entries are always a subset of the input's observed entries.

inline Tensor mask_point(const Tensor& mask, double ratio, std::mt19937_64& rng) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw ContractError("mask_point: ratio must lie in [0, 1]");
  std::bernoulli_distribution hide(ratio);
  Tensor out = mask;
  for (double& m : out.storage())
    if (m != 0.0 && hide(rng)) m = 0.0;
  return out;
}

struct BlockMaskParams {
  double point_ratio = 0.05;
  double seg_prob = 0.0015;
  std::size_t min_len = 12;
  std::size_t max_len = 48;
};

/// Point masking at point_ratio (drawn first), then per sensor and per step a
/// Bernoulli(seg_prob) segment start hiding a span of uniform length in
/// [min_len, max_len].
inline Tensor mask_block(const Tensor& mask, const BlockMaskParams& p, std::mt19937_64& rng) {
  const std::size_t n = mask.dim(0), len = mask.dim(1);
  if (p.min_len < 1 || p.min_len > p.max_len || p.max_len > len)
    throw ContractError("mask_block: need 1 <= min_len <= max_len <= L");
  if (!(p.seg_prob >= 0.0 && p.seg_prob <= 1.0))
    throw ContractError("mask_block: seg_prob must lie in [0, 1]");
  Tensor out = mask_point(mask, p.point_ratio, rng);
  std::bernoulli_distribution start(p.seg_prob);
  std::uniform_int_distribution<std::size_t> seg_len(p.min_len, p.max_len);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t l = 0; l < len; ++l)
      if (start(rng)) {
        const std::size_t end = std::min(len, l + seg_len(rng));
        for (std::size_t k = l; k < end; ++k) out.at(i, k) = 0.0;
      }
  return out;
}

// ---------------------------------------------------------------------------
// Pre-imputation

/// Carry-forward fill of the entries where mask is 0. Leading gaps take the
/// node's first observed value; an all-missing node becomes 0.
inline Tensor forward_interpolate(const Tensor& x, const Tensor& mask) {
  const std::size_t n = x.dim(0), len = x.dim(1);
  Tensor out({n, len});
  for (std::size_t i = 0; i < n; ++i) {
    std::optional<double> last;
    for (std::size_t l = 0; l < len && !last; ++l)
      if (mask.at(i, l) != 0.0) last = x.at(i, l);
    const double lead = last.value_or(0.0);
    double carry = lead;
    for (std::size_t l = 0; l < len; ++l) {
      if (mask.at(i, l) != 0.0) carry = x.at(i, l);
      out.at(i, l) = carry;
    }
  }
  return out;
}

/// Replaces entries where mask is 0 with independent N(0, 1) draws.
inline Tensor gaussian_fill(const Tensor& x, const Tensor& mask, std::mt19937_64& rng) {
  std::normal_distribution<double> z(0.0, 1.0);
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (mask[i] == 0.0) out[i] = z(rng);
  return out;
}

/// Observed values with zeros elsewhere; the conditioning input when
/// carry-forward pre-imputation is ablated.
inline Tensor zero_fill(const Tensor& x, const Tensor& mask) {
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (mask[i] == 0.0) out[i] = 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// Windows and training masks

/// Offsets of the full windows of length `win` with the given stride.
inline std::vector<std::size_t> window_offsets(std::size_t length, std::size_t win,
                                               std::size_t stride) {
  if (win == 0 || stride == 0) throw ContractError("window: length and stride must be >= 1");
  if (win > length)
    throw ContractError("window: window length " + std::to_string(win) +
                        " exceeds series length " + std::to_string(length));
  std::vector<std::size_t> out;
  for (std::size_t o = 0; o + win <= length; o += stride) out.push_back(o);
  return out;
}

struct Window {
  std::size_t offset = 0;
  Tensor values;  // [N, L_w]
  Tensor mask;
};

inline Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t len) {
  Tensor out({x.dim(0), len});
  for (std::size_t i = 0; i < x.dim(0); ++i)
    for (std::size_t l = 0; l < len; ++l) out.at(i, l) = x.at(i, begin + l);
  return out;
}

inline std::vector<Window> window(const Tensor& values, const Tensor& mask, std::size_t win,
                                  std::size_t stride) {
  std::vector<Window> out;
  for (std::size_t o : window_offsets(values.dim(1), win, stride))
    out.push_back({o, slice_cols(values, o, win), slice_cols(mask, o, win)});
  return out;
}

enum class MaskStrategy { point, block, hybrid };

struct TrainingMaskOptions {
  double point_ratio_min = 0.0;  // point strategy draws its ratio uniformly
  double point_ratio_max = 1.0;
  BlockMaskParams block{0.05, 0.05, 3, 12};  // window-scale segments
};

/// Condition/target split of one window plus its pre-imputed inputs.
struct MaskedBatch {
  Tensor values;     // normalized X [N, L_w]
  Tensor observed;   // M
  Tensor cond_mask;  // M_cond
  Tensor target_mask;
  Tensor x1;          // carry-forward fill from M_cond
  Tensor x_gauss;     // Gaussian fill outside M_cond
  std::size_t window_length = 0;
  MaskStrategy strategy_used = MaskStrategy::point;

  std::size_t target_count() const {
    std::size_t c = 0;
    for (double m : target_mask.data()) c += m != 0.0;
    return c;
  }
};

/// Builds the pre-imputed pair for a given condition mask.
inline void pre_impute(MaskedBatch& b, std::mt19937_64& rng) {
  b.x1 = forward_interpolate(b.values, b.cond_mask);
  b.x_gauss = gaussian_fill(b.values, b.cond_mask, rng);
}

/// Splits the observed entries of a window into condition and target sets.
/// Returns nullopt for a window without observed entries.
inline std::optional<MaskedBatch> training_mask(const Tensor& values, const Tensor& observed,
                                                MaskStrategy strategy, std::mt19937_64& rng,
                                                const TrainingMaskOptions& opt = {}) {
  bool any = false;
  for (double m : observed.data()) any = any || m != 0.0;
  if (!any) {
    std::cerr << "warning: skipping window with no observed entries\n";
    return std::nullopt;
  }
  MaskedBatch b;
  b.values = values;
  b.observed = observed;
  b.window_length = values.dim(1);
  if (strategy == MaskStrategy::hybrid)
    strategy = std::bernoulli_distribution(0.5)(rng) ? MaskStrategy::point : MaskStrategy::block;
  b.strategy_used = strategy;
  if (strategy == MaskStrategy::point) {
    const double ratio =
        std::uniform_real_distribution<double>(opt.point_ratio_min, opt.point_ratio_max)(rng);
    b.cond_mask = mask_point(observed, std::min(ratio, 1.0), rng);
  } else {
    BlockMaskParams p = opt.block;
    p.max_len = std::min(p.max_len, b.window_length);
    p.min_len = std::min(p.min_len, p.max_len);
    b.cond_mask = mask_block(observed, p, rng);
  }
  b.target_mask = Tensor(observed.shape());
  for (std::size_t i = 0; i < observed.size(); ++i)
    b.target_mask[i] = (observed[i] != 0.0 && b.cond_mask[i] == 0.0) ? 1.0 : 0.0;
  pre_impute(b, rng);
  return b;
}

/// Contiguous 70/10/20 split of [0, L) into train/validation/test ranges.
struct SplitRanges {
  std::size_t train_end, val_end, length;
};

inline SplitRanges split_70_10_20(std::size_t length) {
  const std::size_t train_end = length * 7 / 10;
  const std::size_t val_end = length * 8 / 10;
  return {train_end, val_end, length};
}

}  // namespace cofill
