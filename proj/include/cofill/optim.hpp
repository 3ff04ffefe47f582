#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "cofill/tensor.hpp"

namespace cofill {

/// Named, ordered collection of trainable leaves. Order is registration order
/// and is what the checkpoint format serializes.
class ParamStore {
 public:
  Var add(std::string name, Tensor init) {
    for (const auto& [n, _] : params_)
      if (n == name) throw ContractError("duplicate parameter name: " + name);
    Var v = Var::leaf(std::move(init));
    params_.emplace_back(std::move(name), v);
    return v;
  }

  /// Xavier-uniform initialized matrix-like parameter.
  Var add_xavier(std::string name, Shape shape, std::size_t fan_in,
                 std::size_t fan_out, std::mt19937_64& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> u(-bound, bound);
    Tensor t(std::move(shape));
    for (double& v : t.storage()) v = u(rng);
    return add(std::move(name), std::move(t));
  }

  Var add_zeros(std::string name, Shape shape) {
    return add(std::move(name), Tensor(std::move(shape)));
  }

  std::size_t size() const { return params_.size(); }
  const std::vector<std::pair<std::string, Var>>& entries() const { return params_; }

  Var find(const std::string& name) const {
    for (const auto& [n, v] : params_)
      if (n == name) return v;
    throw ContractError("unknown parameter: " + name);
  }

  std::size_t total_elements() const {
    std::size_t total = 0;
    for (const auto& [_, v] : params_) total += v.value().size();
    return total;
  }

  void zero_grad() {
    for (auto& [_, v] : params_) v.zero_grad();
  }

  std::vector<Tensor> snapshot() const {
    std::vector<Tensor> out;
    out.reserve(params_.size());
    for (const auto& [_, v] : params_) out.push_back(v.value());
    return out;
  }

  void restore(const std::vector<Tensor>& values) {
    if (values.size() != params_.size())
      throw DimensionError("parameter snapshot has wrong entry count");
    for (std::size_t i = 0; i < values.size(); ++i) {
      Var v = params_[i].second;
      if (v.shape() != values[i].shape())
        throw DimensionError("parameter " + params_[i].first + " expects " +
                             shape_str(v.shape()) + ", got " +
                             shape_str(values[i].shape()));
      v.mutable_value() = values[i];
    }
  }

 private:
  std::vector<std::pair<std::string, Var>> params_;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  long step = 0;
};

/// One bias-corrected Adam update of `params` in place.
inline void adam_step(std::vector<Var>& params, const std::vector<Tensor>& grads,
                      AdamState& state, double lr, const AdamConfig& cfg = {}) {
  if (params.size() != grads.size())
    throw DimensionError("adam_step: parameter and gradient counts differ");
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.shape());
      state.v.emplace_back(p.shape());
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& w = params[k].mutable_value();
    const Tensor& g = grads[k];
    Tensor& m = state.m[k];
    Tensor& v = state.v[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.eps);
    }
  }
}

/// Applies Adam to every parameter of a store using its accumulated gradients.
inline void adam_step(ParamStore& store, AdamState& state, double lr,
                      const AdamConfig& cfg = {}) {
  std::vector<Var> params;
  std::vector<Tensor> grads;
  for (const auto& [_, v] : store.entries()) {
    params.push_back(v);
    grads.push_back(v.grad());
  }
  adam_step(params, grads, state, lr, cfg);
}

/// Cosine annealing from lr_max at epoch 0 to lr_min at epoch == total.
inline double cosine_lr(long epoch, long total, double lr_max, double lr_min) {
  if (total <= 0) return lr_max;
  const double frac = static_cast<double>(std::clamp(epoch, 0L, total)) /
                      static_cast<double>(total);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * frac));
}

}  // namespace cofill
