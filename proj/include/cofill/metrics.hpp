#pragma once

#include <algorithm>
#include <cmath>
#include <iostream>
#include <span>
#include <vector>

#include "cofill/tensor.hpp"

namespace cofill {

namespace detail {
inline std::size_t mask_count(const Tensor& pred, const Tensor& truth, const Tensor& mask,
                              const char* op) {
  if (pred.shape() != truth.shape() || pred.shape() != mask.shape())
    throw DimensionError(std::string(op) + ": shapes " + shape_str(pred.shape()) + ", " +
                         shape_str(truth.shape()) + ", " + shape_str(mask.shape()) +
                         " disagree");
  std::size_t c = 0;
  for (double m : mask.data()) c += m != 0.0;
  if (c == 0) throw ContractError(std::string(op) + ": empty evaluation mask");
  return c;
}
}  // namespace detail

inline double mae(const Tensor& pred, const Tensor& truth, const Tensor& mask) {
  const std::size_t c = detail::mask_count(pred, truth, mask, "mae");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (mask[i] != 0.0) acc += std::abs(pred[i] - truth[i]);
  return acc / static_cast<double>(c);
}

inline double mse(const Tensor& pred, const Tensor& truth, const Tensor& mask) {
  const std::size_t c = detail::mask_count(pred, truth, mask, "mse");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (mask[i] != 0.0) acc += (pred[i] - truth[i]) * (pred[i] - truth[i]);
  return acc / static_cast<double>(c);
}

/// Energy-form CRPS estimate of one ensemble against an observation:
/// mean|x_i - y| - 1/(2 S^2) sum_ij |x_i - x_j|. Sorting gives the pair term
/// in O(S log S).
inline double crps_samples(std::span<const double> samples, double y) {
  const std::size_t s = samples.size();
  if (s == 0) throw ContractError("crps_samples: need at least one sample");
  std::vector<double> x(samples.begin(), samples.end());
  std::sort(x.begin(), x.end());
  double abs_err = 0.0, pair = 0.0;
  for (std::size_t i = 0; i < s; ++i) {
    abs_err += std::abs(x[i] - y);
    // x_i appears with + sign i times and - sign (s-1-i) times in sum_{i<j}.
    pair += x[i] * (2.0 * static_cast<double>(i) - static_cast<double>(s) + 1.0);
  }
  const double sd = static_cast<double>(s);
  return abs_err / sd - pair / (sd * sd);
}

/// Average per-entry CRPS over the mask divided by mean |truth| there.
inline double crps_normalized(const std::vector<Tensor>& samples, const Tensor& truth,
                              const Tensor& mask) {
  if (samples.empty()) throw ContractError("crps: need at least one sample");
  const std::size_t c = detail::mask_count(samples[0], truth, mask, "crps");
  std::vector<double> ens(samples.size());
  double total = 0.0, denom = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (mask[i] == 0.0) continue;
    for (std::size_t k = 0; k < samples.size(); ++k) ens[k] = samples[k][i];
    total += crps_samples(ens, truth[i]);
    denom += std::abs(truth[i]);
  }
  const double mean_crps = total / static_cast<double>(c);
  denom /= static_cast<double>(c);
  return denom > 0.0 ? mean_crps / denom : mean_crps;
}

// ---------------------------------------------------------------------------
// Reference imputers on [N, L] series with mask 1 = observed.

/// Per-node mean of observed values at every missing entry. A node without
/// observations takes the global observed mean.
inline Tensor baseline_mean(const Tensor& values, const Tensor& mask) {
  const std::size_t n = values.dim(0), len = values.dim(1);
  double gsum = 0.0, gcount = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i)
    if (mask[i] != 0.0) {
      gsum += values[i];
      gcount += 1.0;
    }
  const double global = gcount > 0.0 ? gsum / gcount : 0.0;
  Tensor out = values;
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0, c = 0.0;
    for (std::size_t l = 0; l < len; ++l)
      if (mask.at(i, l) != 0.0) {
        s += values.at(i, l);
        c += 1.0;
      }
    if (c == 0.0) std::cerr << "warning: node " << i << " has no observations, using global mean\n";
    const double fill = c > 0.0 ? s / c : global;
    for (std::size_t l = 0; l < len; ++l)
      if (mask.at(i, l) == 0.0) out.at(i, l) = fill;
  }
  return out;
}

/// Per-node linear interpolation in time between bracketing observations;
/// boundary gaps take the nearest observation.
inline Tensor baseline_linear(const Tensor& values, const Tensor& mask) {
  const std::size_t n = values.dim(0), len = values.dim(1);
  Tensor out = baseline_mean(values, mask);  // covers all-missing nodes
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::size_t> obs;
    for (std::size_t l = 0; l < len; ++l)
      if (mask.at(i, l) != 0.0) obs.push_back(l);
    if (obs.empty()) continue;
    for (std::size_t l = 0; l < obs.front(); ++l) out.at(i, l) = values.at(i, obs.front());
    for (std::size_t l = obs.back() + 1; l < len; ++l) out.at(i, l) = values.at(i, obs.back());
    for (std::size_t k = 0; k + 1 < obs.size(); ++k) {
      const std::size_t a = obs[k], b = obs[k + 1];
      const double va = values.at(i, a), vb = values.at(i, b);
      for (std::size_t l = a + 1; l < b; ++l) {
        const double f = static_cast<double>(l - a) / static_cast<double>(b - a);
        out.at(i, l) = va + f * (vb - va);
      }
    }
  }
  return out;
}

}  // namespace cofill
