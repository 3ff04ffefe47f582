#pragma once

// Conditional information module: latent projection of the pre-imputed
// series, a temporal stream (gated causal TCN followed by graph convolution),
// a frequency stream (DCT along time) and their cross-attention fusion.

#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "cofill/attention.hpp"
#include "cofill/graph.hpp"
#include "cofill/optim.hpp"

namespace cofill {

enum class Ablation { full, no_forward, no_temporal, no_frequency, no_cross };

inline const char* ablation_name(Ablation a) {
  switch (a) {
    case Ablation::full: return "full";
    case Ablation::no_forward: return "no_forward";
    case Ablation::no_temporal: return "no_temporal";
    case Ablation::no_frequency: return "no_frequency";
    case Ablation::no_cross: return "no_cross";
  }
  return "?";
}

inline Ablation parse_ablation(const std::string& s) {
  for (Ablation a : {Ablation::full, Ablation::no_forward, Ablation::no_temporal,
                     Ablation::no_frequency, Ablation::no_cross})
    if (s == ablation_name(a)) return a;
  throw ConfigError("unknown ablation variant '" + s +
                    "' (valid: full, no_forward, no_temporal, no_frequency, no_cross)");
}

// ---------------------------------------------------------------------------
// DCT-II along time

/// Unnormalized DCT-II matrix D[m, t] = cos(pi/T (t + 1/2) m).
inline Tensor dct_matrix(std::size_t len) {
  Tensor d({len, len});
  const double T = static_cast<double>(len);
  for (std::size_t m = 0; m < len; ++m)
    for (std::size_t t = 0; t < len; ++t)
      d.at(m, t) = std::cos(std::numbers::pi / T * (static_cast<double>(t) + 0.5) *
                            static_cast<double>(m));
  return d;
}

/// Orthonormal DCT-II: row 0 scaled by sqrt(1/T), the rest by sqrt(2/T).
/// Its transpose is its inverse.
inline Tensor dct_matrix_orthonormal(std::size_t len) {
  Tensor d = dct_matrix(len);
  const double T = static_cast<double>(len);
  for (std::size_t m = 0; m < len; ++m) {
    const double s = std::sqrt((m == 0 ? 1.0 : 2.0) / T);
    for (std::size_t t = 0; t < len; ++t) d.at(m, t) *= s;
  }
  return d;
}

enum class DctNorm { none, orthonormal, network };

/// DCT-II over the last axis of H [C, N, L]. `network` is the unnormalized
/// transform scaled by 2/L, the form consumed by the conditional module.
inline Var dct_forward(const Var& h, DctNorm norm = DctNorm::network) {
  const std::size_t len = h.shape().back();
  Tensor d = norm == DctNorm::orthonormal ? dct_matrix_orthonormal(len) : dct_matrix(len);
  if (norm == DctNorm::network)
    for (double& v : d.storage()) v *= 2.0 / static_cast<double>(len);
  return linear_along(h, Var::constant(std::move(d)), h.shape().size() - 1);
}

/// Inverse of the orthonormal DCT-II over the last axis.
inline Var dct_inverse_orthonormal(const Var& h) {
  const std::size_t len = h.shape().back();
  Tensor d = dct_matrix_orthonormal(len);
  Tensor dt({len, len});
  for (std::size_t i = 0; i < len; ++i)
    for (std::size_t j = 0; j < len; ++j) dt.at(i, j) = d.at(j, i);
  return linear_along(h, Var::constant(std::move(dt)), h.shape().size() - 1);
}

// ---------------------------------------------------------------------------
// Parameters and stages

struct CondModuleConfig {
  std::size_t channels = 64;
  std::size_t tcn_kernel = 3;
  std::size_t gcn_order = 2;
  double dropout = 0.1;
};

struct CondModuleParams {
  Var in_w, in_b;      // [d, 1], [d]
  Var tcn_p, tcn_p_b;  // [d, d, k], [d]
  Var tcn_q, tcn_q_b;
  Var gcn_w, gcn_b;    // [d, d (o + 1)], [d]
  Var wq, wk, wv;      // [d, d]

  static CondModuleParams create(ParamStore& store, const CondModuleConfig& cfg,
                                 std::mt19937_64& rng, const std::string& prefix = "cond.") {
    const std::size_t d = cfg.channels, k = cfg.tcn_kernel, o = cfg.gcn_order;
    CondModuleParams p;
    p.in_w = store.add_xavier(prefix + "in_w", {d, 1}, 1, d, rng);
    p.in_b = store.add_zeros(prefix + "in_b", {d});
    p.tcn_p = store.add_xavier(prefix + "tcn_p", {d, d, k}, d * k, d * k, rng);
    p.tcn_p_b = store.add_zeros(prefix + "tcn_p_b", {d});
    p.tcn_q = store.add_xavier(prefix + "tcn_q", {d, d, k}, d * k, d * k, rng);
    p.tcn_q_b = store.add_zeros(prefix + "tcn_q_b", {d});
    p.gcn_w = store.add_xavier(prefix + "gcn_w", {d, d * (o + 1)}, d * (o + 1), d, rng);
    p.gcn_b = store.add_zeros(prefix + "gcn_b", {d});
    p.wq = store.add_xavier(prefix + "wq", {d, d}, d, d, rng);
    p.wk = store.add_xavier(prefix + "wk", {d, d}, d, d, rng);
    p.wv = store.add_xavier(prefix + "wv", {d, d}, d, d, rng);
    return p;
  }
};

/// The same affine map applied to every (node, step) scalar: X [N, L] ->
/// [d, N, L].
inline Var input_projection(const Tensor& x, const Var& w, const Var& b) {
  if (x.rank() != 2) throw DimensionError("input_projection expects [N, L], got " + shape_str(x.shape()));
  Var in = Var::constant(x.reshaped({1, x.dim(0), x.dim(1)}));
  return add_bias(linear_along(in, w, 0), b, 0);
}

/// Gated causal convolution P * sigmoid(Q) with dropout and a residual.
inline Var tcn_forward(const Var& h, const Var& kp, const Var& bp, const Var& kq,
                       const Var& bq, double dropout_rate, std::mt19937_64& rng, bool training) {
  Var p = add_bias(conv1d_causal(h, kp, 1), bp, 0);
  Var q = add_bias(conv1d_causal(h, kq, 1), bq, 0);
  return add(dropout(hadamard(p, sigmoid(q)), dropout_rate, rng, training), h);
}

inline Var gcn_forward(const Var& h_bar, const NormalizedGraph& g, std::size_t order,
                       const Var& w, const Var& b) {
  return graph_conv(h_bar, g, order, w, b);
}

/// Single-head attention per node over time: queries from the temporal
/// stream, keys and values from the frequency stream.
inline AttentionResult cross_attention_fuse(const Var& h_tilde, const Var& h_hat, const Var& wq,
                                            const Var& wk, const Var& wv) {
  if (h_tilde.shape() != h_hat.shape())
    throw DimensionError("cross_attention_fuse: streams " + shape_str(h_tilde.shape()) +
                         " and " + shape_str(h_hat.shape()) + " disagree");
  Var q = linear_along(h_tilde, wq, 0);
  Var k = linear_along(h_hat, wk, 0);
  Var v = linear_along(h_hat, wv, 0);
  return multi_head_attention(q, k, v, 1, AttnAxis::time);
}

/// Intermediate maps of the conditional module; disabled streams stay undefined.
struct ConditionalFeatures {
  Var h_in, h_bar, h_tilde, h_hat, c_con;
};

/// Which parts of the conditional module are active.
struct StreamFlags {
  bool temporal = true;
  bool frequency = true;
  bool cross = true;  // false: the two streams are summed instead
};

inline StreamFlags stream_flags(Ablation a) {
  StreamFlags f;
  f.temporal = a != Ablation::no_temporal;
  f.frequency = a != Ablation::no_frequency;
  f.cross = a != Ablation::no_cross;
  return f;
}

/// End-to-end conditioning from the pre-imputed series X1 [N, L]. Without
/// carry-forward pre-imputation the caller passes the zero-filled masked
/// series instead.
inline ConditionalFeatures build_conditioning(const Tensor& x1, const NormalizedGraph& g,
                                              const CondModuleParams& p,
                                              const CondModuleConfig& cfg, StreamFlags flags,
                                              std::mt19937_64& rng, bool training) {
  if (!flags.temporal && !flags.frequency)
    throw ConfigError("conditioning needs at least one of the temporal and frequency streams");
  if (x1.rank() != 2 || x1.dim(0) != g.node_count())
    throw DimensionError("conditioning input " + shape_str(x1.shape()) +
                         " does not match graph with " + std::to_string(g.node_count()) +
                         " nodes");
  ConditionalFeatures f;
  f.h_in = input_projection(x1, p.in_w, p.in_b);
  if (flags.temporal) {
    f.h_bar = tcn_forward(f.h_in, p.tcn_p, p.tcn_p_b, p.tcn_q, p.tcn_q_b, cfg.dropout, rng,
                          training);
    f.h_tilde = gcn_forward(f.h_bar, g, cfg.gcn_order, p.gcn_w, p.gcn_b);
  }
  if (flags.frequency) f.h_hat = dct_forward(f.h_in, DctNorm::network);
  if (!flags.temporal) {
    f.c_con = f.h_hat;
  } else if (!flags.frequency) {
    f.c_con = f.h_tilde;
  } else if (!flags.cross) {
    f.c_con = add(f.h_tilde, f.h_hat);
  } else {
    f.c_con = cross_attention_fuse(f.h_tilde, f.h_hat, p.wq, p.wk, p.wv).out;
  }
  return f;
}

inline ConditionalFeatures build_conditioning(const Tensor& x1, const NormalizedGraph& g,
                                              const CondModuleParams& p,
                                              const CondModuleConfig& cfg, Ablation ablation,
                                              std::mt19937_64& rng, bool training) {
  return build_conditioning(x1, g, p, cfg, stream_flags(ablation), rng, training);
}

}  // namespace cofill
