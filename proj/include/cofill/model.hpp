#pragma once

#include <cstdint>
#include <random>

#include "cofill/conditional.hpp"
#include "cofill/data.hpp"
#include "cofill/noise_predictor.hpp"

namespace cofill {

struct ModelConfig {
  std::size_t channels = 64;
  std::size_t heads = 8;
  std::size_t layers = 4;
  std::size_t gcn_order = 2;
  std::size_t tcn_kernel = 3;
  double dropout = 0.1;
  std::size_t emb_dim = 128;
  std::size_t diffusion_steps = 50;
  std::size_t virtual_nodes = 0;
  bool time_encoding = true;
  Ablation ablation = Ablation::full;

  CondModuleConfig cond() const { return {channels, tcn_kernel, gcn_order, dropout}; }
  NoisePredictorConfig eps() const {
    return {channels, heads,           layers,        gcn_order,
            emb_dim,  diffusion_steps, virtual_nodes, time_encoding};
  }
};

/// Conditional module plus noise predictor over a fixed sensor graph.
class CofillModel {
 public:
  CofillModel(const ModelConfig& cfg, const Graph& graph, std::uint64_t init_seed)
      : cfg_(cfg), graph_(normalize_adjacency(graph)) {
    std::mt19937_64 rng(init_seed);
    cond_ = CondModuleParams::create(store_, cfg_.cond(), rng);
    eps_ = NoisePredictorParams::create(store_, cfg_.eps(), graph.node_count, rng);
  }

  CofillModel(const CofillModel&) = delete;
  CofillModel& operator=(const CofillModel&) = delete;

  const ModelConfig& config() const { return cfg_; }
  const NormalizedGraph& graph() const { return graph_; }
  std::size_t nodes() const { return graph_.node_count(); }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  const CondModuleParams& cond_params() const { return cond_; }
  const NoisePredictorParams& eps_params() const { return eps_; }

  /// Series fed to the conditional module and the X1 input channel: the
  /// carry-forward fill, or the zero-filled observations when that
  /// pre-imputation is ablated.
  Tensor conditioning_input(const Tensor& values, const Tensor& cond_mask) const {
    return cfg_.ablation == Ablation::no_forward ? zero_fill(values, cond_mask)
                                                 : forward_interpolate(values, cond_mask);
  }

  Var conditioning(const Tensor& x1, std::mt19937_64& rng, bool training) const {
    return build_conditioning(x1, graph_, cond_, cfg_.cond(), cfg_.ablation, rng, training).c_con;
  }

  Var predict(const Tensor& x1, const Tensor& x_noisy, const Var& c_con, std::size_t t,
              NoiseDiagnostics* diag = nullptr) const {
    return predict_noise(x1, x_noisy, c_con, graph_, t, eps_, cfg_.eps(), diag);
  }

  /// Full forward pass: conditioning then noise estimate [N, L].
  Var predict(const Tensor& x1, const Tensor& x_noisy, std::size_t t, std::mt19937_64& rng,
              bool training, NoiseDiagnostics* diag = nullptr) const {
    return predict(x1, x_noisy, conditioning(x1, rng, training), t, diag);
  }

 private:
  ModelConfig cfg_;
  NormalizedGraph graph_;
  ParamStore store_;
  CondModuleParams cond_;
  NoisePredictorParams eps_;
};

}  // namespace cofill
