#pragma once

// Noise estimation network. Each residual layer runs conditional temporal
// attention, conditional spatial attention beside a graph branch, and a
// gated activation whose output splits into residual and skip paths.

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "cofill/attention.hpp"
#include "cofill/conditional.hpp"
#include "cofill/graph.hpp"
#include "cofill/optim.hpp"

namespace cofill {

inline constexpr std::size_t kSinusoidDim = 128;

/// Sinusoidal code of a diffusion step: 64 sines then 64 cosines at
/// frequencies 10^(4 i / 63).
inline Tensor sinusoidal_step_code(std::size_t t) {
  Tensor e({kSinusoidDim});
  const std::size_t half = kSinusoidDim / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::pow(10.0, 4.0 * static_cast<double>(i) / (half - 1));
    e[i] = std::sin(static_cast<double>(t) * freq);
    e[i + half] = std::cos(static_cast<double>(t) * freq);
  }
  return e;
}

struct NoisePredictorConfig {
  std::size_t channels = 64;
  std::size_t heads = 8;
  std::size_t layers = 4;
  std::size_t gcn_order = 2;
  std::size_t emb_dim = 128;
  std::size_t diffusion_steps = 50;
  std::size_t virtual_nodes = 0;  // 0: full node attention
  bool time_encoding = true;      // position code on temporal-attention queries and keys
};

/// Fixed sinusoidal position code over the time axis, broadcast across nodes: [d, N, L].
inline Tensor time_position_code(std::size_t d, std::size_t n, std::size_t len) {
  Tensor pe({d, n, len});
  for (std::size_t c = 0; c < d; ++c) {
    const double freq = std::pow(10000.0, -static_cast<double>(c - c % 2) / static_cast<double>(d));
    for (std::size_t l = 0; l < len; ++l) {
      const double v = c % 2 ? std::cos(freq * l) : std::sin(freq * l);
      for (std::size_t i = 0; i < n; ++i) pe.at(c, i, l) = v;
    }
  }
  return pe;
}

struct NoiseLayerParams {
  Var emb_w, emb_b;        // [d, emb], [d]
  Var t_wq, t_wk, t_wv;    // temporal attention
  Var s_wq, s_wk, s_wv;    // spatial attention
  Var s_ek, s_ev;          // [k, N] virtual-node projections (k > 0 only)
  Var gcn_w, gcn_b;
  Var mlp_w1, mlp_b1, mlp_w2, mlp_b2;
  Var gate_w, gate_b;      // [2d, d]
  Var out_w, out_b;        // [2d, d]: residual then skip
};

struct NoisePredictorParams {
  Var input_w, input_b;  // [d, 2]
  Var emb_w1, emb_b1, emb_w2, emb_b2;
  std::vector<NoiseLayerParams> layers;
  Var skip_w, skip_b;    // [d, d]
  Var final_w, final_b;  // [1, d], zero initialized

  static NoisePredictorParams create(ParamStore& store, const NoisePredictorConfig& cfg,
                                     std::size_t nodes, std::mt19937_64& rng,
                                     const std::string& prefix = "eps.") {
    if (cfg.layers < 1) throw ConfigError("noise predictor needs at least one layer");
    if (cfg.heads == 0 || cfg.channels % cfg.heads != 0)
      throw ConfigError("channels (" + std::to_string(cfg.channels) +
                        ") must be divisible by heads (" + std::to_string(cfg.heads) + ")");
    const std::size_t d = cfg.channels, e = cfg.emb_dim, o = cfg.gcn_order;
    NoisePredictorParams p;
    p.input_w = store.add_xavier(prefix + "input_w", {d, 2}, 2, d, rng);
    p.input_b = store.add_zeros(prefix + "input_b", {d});
    p.emb_w1 = store.add_xavier(prefix + "emb_w1", {e, kSinusoidDim}, kSinusoidDim, e, rng);
    p.emb_b1 = store.add_zeros(prefix + "emb_b1", {e});
    p.emb_w2 = store.add_xavier(prefix + "emb_w2", {e, e}, e, e, rng);
    p.emb_b2 = store.add_zeros(prefix + "emb_b2", {e});
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      const std::string lp = prefix + "layer" + std::to_string(l) + ".";
      NoiseLayerParams L;
      L.emb_w = store.add_xavier(lp + "emb_w", {d, e}, e, d, rng);
      L.emb_b = store.add_zeros(lp + "emb_b", {d});
      L.t_wq = store.add_xavier(lp + "t_wq", {d, d}, d, d, rng);
      L.t_wk = store.add_xavier(lp + "t_wk", {d, d}, d, d, rng);
      L.t_wv = store.add_xavier(lp + "t_wv", {d, d}, d, d, rng);
      L.s_wq = store.add_xavier(lp + "s_wq", {d, d}, d, d, rng);
      L.s_wk = store.add_xavier(lp + "s_wk", {d, d}, d, d, rng);
      L.s_wv = store.add_xavier(lp + "s_wv", {d, d}, d, d, rng);
      if (cfg.virtual_nodes > 0) {
        const std::size_t k = cfg.virtual_nodes;
        L.s_ek = store.add_xavier(lp + "s_ek", {k, nodes}, nodes, k, rng);
        L.s_ev = store.add_xavier(lp + "s_ev", {k, nodes}, nodes, k, rng);
      }
      L.gcn_w = store.add_xavier(lp + "gcn_w", {d, d * (o + 1)}, d * (o + 1), d, rng);
      L.gcn_b = store.add_zeros(lp + "gcn_b", {d});
      L.mlp_w1 = store.add_xavier(lp + "mlp_w1", {d, d}, d, d, rng);
      L.mlp_b1 = store.add_zeros(lp + "mlp_b1", {d});
      L.mlp_w2 = store.add_xavier(lp + "mlp_w2", {d, d}, d, d, rng);
      L.mlp_b2 = store.add_zeros(lp + "mlp_b2", {d});
      L.gate_w = store.add_xavier(lp + "gate_w", {2 * d, d}, d, 2 * d, rng);
      L.gate_b = store.add_zeros(lp + "gate_b", {2 * d});
      L.out_w = store.add_xavier(lp + "out_w", {2 * d, d}, d, 2 * d, rng);
      L.out_b = store.add_zeros(lp + "out_b", {2 * d});
      p.layers.push_back(L);
    }
    p.skip_w = store.add_xavier(prefix + "skip_w", {d, d}, d, d, rng);
    p.skip_b = store.add_zeros(prefix + "skip_b", {d});
    p.final_w = store.add_zeros(prefix + "final_w", {1, d});
    p.final_b = store.add_zeros(prefix + "final_b", {1});
    return p;
  }
};

/// Learned step embedding: sinusoidal code -> affine+SiLU -> affine+SiLU.
inline Var step_embedding(std::size_t t, std::size_t total_steps, const NoisePredictorParams& p) {
  if (t < 1 || t > total_steps)
    throw ContractError("step_embedding: t=" + std::to_string(t) + " outside [1, " +
                        std::to_string(total_steps) + "]");
  Var code = Var::constant(sinusoidal_step_code(t).reshaped({kSinusoidDim, 1}));
  Var h = silu(add_bias(matmul(p.emb_w1, code), p.emb_b1, 0));
  h = silu(add_bias(matmul(p.emb_w2, h), p.emb_b2, 0));
  return reshape(h, {h.dim(0)});
}

/// Temporal attention whose weights come from the conditioning alone:
/// Q = C W^Q, K = C W^K, V = X W^V, attended over time per node.
inline AttentionResult temporal_attention(const Var& x, const Var& c_con, const Var& wq,
                                          const Var& wk, const Var& wv, std::size_t heads) {
  if (x.shape() != c_con.shape())
    throw DimensionError("temporal_attention: input " + shape_str(x.shape()) +
                         " and conditioning " + shape_str(c_con.shape()) + " disagree");
  return multi_head_attention(linear_along(c_con, wq, 0), linear_along(c_con, wk, 0),
                              linear_along(x, wv, 0), heads, AttnAxis::time);
}

/// Node attention per time step with Q, K from the conditioning and V from
/// X_tem. With virtual-node projections [k, N], keys and values are first
/// compressed from N nodes to k.
inline AttentionResult node_attention(const Var& x_tem, const Var& c_con, const Var& wq,
                                      const Var& wk, const Var& wv, const Var& ek,
                                      const Var& ev, std::size_t heads) {
  Var q = linear_along(c_con, wq, 0);
  Var k = linear_along(c_con, wk, 0);
  Var v = linear_along(x_tem, wv, 0);
  if (ek.defined()) {
    k = linear_along(k, ek, 1);
    v = linear_along(v, ev, 1);
  }
  return multi_head_attention(q, k, v, heads, AttnAxis::nodes);
}

/// Position-wise two-layer perceptron over channels.
inline Var channel_mlp(const Var& x, const Var& w1, const Var& b1, const Var& w2, const Var& b2) {
  Var h = relu(add_bias(linear_along(x, w1, 0), b1, 0));
  return add_bias(linear_along(h, w2, 0), b2, 0);
}

/// MLP(Norm(Attn_spa(X_tem)) + X_tem) + Norm(G(X_tem, A) + X_tem), with
/// Norm a layer norm over channels.
inline Var spatial_attention(const Var& x_tem, const Var& c_con, const NormalizedGraph& g,
                             const NoiseLayerParams& L, std::size_t heads, std::size_t gcn_order,
                             AttentionResult* weights_out = nullptr) {
  if (x_tem.shape() != c_con.shape())
    throw DimensionError("spatial_attention: input " + shape_str(x_tem.shape()) +
                         " and conditioning " + shape_str(c_con.shape()) + " disagree");
  AttentionResult attn =
      node_attention(x_tem, c_con, L.s_wq, L.s_wk, L.s_wv, L.s_ek, L.s_ev, heads);
  if (weights_out) *weights_out = attn;
  Var branch_attn =
      channel_mlp(add(layer_norm(attn.out, 0), x_tem), L.mlp_w1, L.mlp_b1, L.mlp_w2, L.mlp_b2);
  Var branch_graph = layer_norm(add(graph_conv(x_tem, g, gcn_order, L.gcn_w, L.gcn_b), x_tem), 0);
  return add(branch_attn, branch_graph);
}

/// Attention weights recorded during a forward pass, one entry per layer.
struct NoiseDiagnostics {
  std::vector<Var> temporal_weights;
  std::vector<Var> spatial_weights;
};

/// eps_theta(X1 || X~t, C_con, A, t) -> [N, L].
inline Var predict_noise(const Tensor& x1, const Tensor& x_noisy, const Var& c_con,
                         const NormalizedGraph& g, std::size_t t,
                         const NoisePredictorParams& p, const NoisePredictorConfig& cfg,
                         NoiseDiagnostics* diag = nullptr) {
  if (x1.rank() != 2 || x1.shape() != x_noisy.shape())
    throw DimensionError("predict_noise: X1 " + shape_str(x1.shape()) + " and noisy input " +
                         shape_str(x_noisy.shape()) + " disagree");
  const std::size_t n = x1.dim(0), len = x1.dim(1), d = cfg.channels;
  if (c_con.shape() != Shape{d, n, len})
    throw DimensionError("predict_noise: conditioning " + shape_str(c_con.shape()) +
                         " does not match [" + std::to_string(d) + "x" + std::to_string(n) +
                         "x" + std::to_string(len) + "]");
  if (g.node_count() != n)
    throw DimensionError("predict_noise: graph has " + std::to_string(g.node_count()) +
                         " nodes, input has " + std::to_string(n));

  Tensor in({2, n, len});
  std::copy(x1.data().begin(), x1.data().end(), in.data().begin());
  std::copy(x_noisy.data().begin(), x_noisy.data().end(), in.data().begin() + n * len);
  Var x = relu(add_bias(linear_along(Var::constant(std::move(in)), p.input_w, 0), p.input_b, 0));
  Var emb = step_embedding(t, cfg.diffusion_steps, p);
  // Attention alone is permutation-invariant in time.
  const Var c_tem =
      cfg.time_encoding ? add(c_con, Var::constant(time_position_code(d, n, len))) : c_con;

  std::vector<Var> skips;
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  for (const NoiseLayerParams& L : p.layers) {
    Var e = add_bias(matmul(L.emb_w, reshape(emb, {emb.dim(0), 1})), L.emb_b, 0);
    Var y = add_bias(x, reshape(e, {d}), 0);
    AttentionResult ta = temporal_attention(y, c_tem, L.t_wq, L.t_wk, L.t_wv, cfg.heads);
    Var x_tem = add(y, ta.out);
    AttentionResult sa;
    Var x_spa = spatial_attention(x_tem, c_con, g, L, cfg.heads, cfg.gcn_order, &sa);
    if (diag) {
      diag->temporal_weights.push_back(ta.weights);
      diag->spatial_weights.push_back(sa.weights);
    }
    Var z = add_bias(linear_along(x_spa, L.gate_w, 0), L.gate_b, 0);
    Var gated = hadamard(tanh(slice(z, 0, 0, d)), sigmoid(slice(z, 0, d, d)));
    Var o = add_bias(linear_along(gated, L.out_w, 0), L.out_b, 0);
    x = scale(add(x, slice(o, 0, 0, d)), inv_sqrt2);
    skips.push_back(slice(o, 0, d, d));
  }
  Var skip_sum = skips[0];
  for (std::size_t i = 1; i < skips.size(); ++i) skip_sum = add(skip_sum, skips[i]);
  skip_sum = scale(skip_sum, 1.0 / std::sqrt(static_cast<double>(skips.size())));
  Var h = relu(add_bias(linear_along(skip_sum, p.skip_w, 0), p.skip_b, 0));
  Var out = add_bias(linear_along(h, p.final_w, 0), p.final_b, 0);
  return reshape(out, {n, len});
}

}  // namespace cofill
