#pragma once

// Noise schedule, forward noising, the masked noise-matching objective and
// the reverse-diffusion sampler.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <optional>
#include <random>
#include <thread>
#include <vector>

#include "cofill/data.hpp"
#include "cofill/model.hpp"

namespace cofill {

enum class ScheduleKind { linear, quadratic };

/// Per-step quantities for t = 1..T, stored 0-based.
struct NoiseSchedule {
  std::vector<double> beta, alpha, alpha_bar, sigma;

  std::size_t steps() const { return beta.size(); }
  double beta_at(std::size_t t) const { return beta.at(t - 1); }
  double alpha_at(std::size_t t) const { return alpha.at(t - 1); }
  /// alpha_bar_0 = 1 by convention.
  double alpha_bar_at(std::size_t t) const { return t == 0 ? 1.0 : alpha_bar.at(t - 1); }
  double sigma_at(std::size_t t) const { return sigma.at(t - 1); }
};

/// linear: beta evenly spaced in [beta_min, beta_max]; quadratic: sqrt(beta)
/// evenly spaced. sigma_t^2 is the posterior variance
/// (1 - abar_{t-1}) / (1 - abar_t) beta_t, with sigma_1 = 0.
inline NoiseSchedule build_schedule(std::size_t T, double beta_min, double beta_max,
                                    ScheduleKind kind = ScheduleKind::quadratic) {
  if (T < 1) throw ConfigError("diffusion steps must be >= 1");
  if (!(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0))
    throw ConfigError("noise bounds must satisfy 0 < beta_min <= beta_max < 1");
  NoiseSchedule s;
  s.beta.resize(T);
  if (T == 1) {
    s.beta[0] = beta_max;
  } else {
    for (std::size_t i = 0; i < T; ++i) {
      const double f = static_cast<double>(i) / static_cast<double>(T - 1);
      if (kind == ScheduleKind::linear) {
        s.beta[i] = beta_min + f * (beta_max - beta_min);
      } else {
        const double r = std::sqrt(beta_min) + f * (std::sqrt(beta_max) - std::sqrt(beta_min));
        s.beta[i] = r * r;
      }
    }
  }
  double prod = 1.0;
  for (std::size_t i = 0; i < T; ++i) {
    s.alpha.push_back(1.0 - s.beta[i]);
    prod *= s.alpha.back();
    s.alpha_bar.push_back(prod);
  }
  for (std::size_t i = 0; i < T; ++i) {
    if (i == 0) {
      s.sigma.push_back(0.0);
      continue;
    }
    const double var = (1.0 - s.alpha_bar[i - 1]) / (1.0 - s.alpha_bar[i]) * s.beta[i];
    s.sigma.push_back(std::sqrt(var));
  }
  return s;
}

/// sqrt(abar_t) x0 + sqrt(1 - abar_t) eps; t = 0 returns x0.
inline Tensor forward_noise(const Tensor& x0, std::size_t t, const Tensor& eps,
                            const NoiseSchedule& s) {
  if (x0.shape() != eps.shape())
    throw DimensionError("forward_noise: x0 " + shape_str(x0.shape()) + " and noise " +
                         shape_str(eps.shape()) + " disagree");
  if (t > s.steps()) throw ContractError("forward_noise: t out of range");
  const double a = std::sqrt(s.alpha_bar_at(t)), b = std::sqrt(1.0 - s.alpha_bar_at(t));
  Tensor out = x0;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + b * eps[i];
  return out;
}

/// Leading coefficient of the reverse mean: 1/sqrt(alpha_t) (standard) or
/// 1/sqrt(abar_t) (the alternative printed form, kept for comparison).
enum class MeanCoef { alpha, alpha_bar };

/// One ancestral step: mu = c (x - beta_t / sqrt(1 - abar_t) eps_hat), plus
/// sigma_t z for t > 1 when `add_noise`.
inline Tensor reverse_step(const Tensor& x, std::size_t t, const Tensor& eps_hat,
                           const NoiseSchedule& s, std::mt19937_64& rng,
                           MeanCoef coef = MeanCoef::alpha, bool add_noise = true) {
  if (t < 1 || t > s.steps()) throw ContractError("reverse_step: t out of range");
  if (x.shape() != eps_hat.shape())
    throw DimensionError("reverse_step: state and noise estimate disagree");
  const double c = 1.0 / std::sqrt(coef == MeanCoef::alpha ? s.alpha_at(t) : s.alpha_bar_at(t));
  const double k = s.beta_at(t) / std::sqrt(1.0 - s.alpha_bar_at(t));
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * (x[i] - k * eps_hat[i]);
  if (add_noise && t > 1) {
    std::normal_distribution<double> z(0.0, 1.0);
    const double sigma = s.sigma_at(t);
    for (double& v : out.storage()) v += sigma * z(rng);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training objective

/// (x1, x_noisy, t) -> noise estimate [N, L].
using NoisePredictorFn = std::function<Var(const Tensor&, const Tensor&, std::size_t)>;

/// Noisy model input: condition entries keep their values, target entries are
/// forward-noised, everything else keeps its Gaussian fill.
inline Tensor noisy_input(const MaskedBatch& b, std::size_t t, const Tensor& eps,
                          const NoiseSchedule& s) {
  Tensor noised = forward_noise(b.values, t, eps, s);
  Tensor x = b.x_gauss;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (b.target_mask[i] != 0.0) x[i] = noised[i];
  return x;
}

/// Mean squared residual between eps and its estimate over target entries.
/// `x1` is the conditioning series paired with the batch.
inline Var diffusion_loss(const MaskedBatch& b, const Tensor& x1, const NoisePredictorFn& predictor,
                          const NoiseSchedule& s, std::size_t t, const Tensor& eps) {
  const std::size_t n_tgt = b.target_count();
  if (n_tgt == 0) throw ContractError("diffusion_loss: empty target mask");
  Var eps_hat = predictor(x1, noisy_input(b, t, eps, s), t);
  Var resid = sub(Var::constant(eps), eps_hat);
  Var masked = hadamard(square(resid), Var::constant(b.target_mask));
  return scale(sum(masked), 1.0 / static_cast<double>(n_tgt));
}

struct LossDraw {
  Var loss;
  std::size_t t = 0;
  std::size_t targets = 0;
};

/// Draws t ~ U{1..T} and eps ~ N(0, I), then evaluates the objective.
/// Returns nullopt (skip) when the batch has no targets.
inline std::optional<LossDraw> training_loss(const MaskedBatch& b, const CofillModel& model,
                                             const NoiseSchedule& s, std::mt19937_64& rng,
                                             bool training = true) {
  const std::size_t n_tgt = b.target_count();
  if (n_tgt == 0) return std::nullopt;
  const std::size_t t = std::uniform_int_distribution<std::size_t>(1, s.steps())(rng);
  std::normal_distribution<double> z(0.0, 1.0);
  Tensor eps(b.values.shape());
  for (double& v : eps.storage()) v = z(rng);
  const Tensor x1 = model.conditioning_input(b.values, b.cond_mask);
  NoisePredictorFn fn = [&](const Tensor& cx, const Tensor& xn, std::size_t step) {
    return model.predict(cx, xn, step, rng, training);
  };
  return LossDraw{diffusion_loss(b, x1, fn, s, t, eps), t, n_tgt};
}

// ---------------------------------------------------------------------------
// Imputation

struct ImputeOptions {
  std::size_t n_samples = 10;
  std::size_t window_length = 24;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  MeanCoef mean_coef = MeanCoef::alpha;
};

/// Reverse diffusion over one window of normalized values. Observed entries
/// (mask 1) are clamped after every step. Returns one [N, L] sample.
inline Tensor sample_window(const CofillModel& model, const Tensor& values, const Tensor& mask,
                            const NoiseSchedule& s, std::mt19937_64& rng,
                            MeanCoef coef = MeanCoef::alpha) {
  NoGradGuard no_grad;
  const Tensor x1 = model.conditioning_input(values, mask);
  // Dropout is inactive at inference, so the conditioning is step-invariant.
  const Var c_con = model.conditioning(x1, rng, false);
  Tensor x = gaussian_fill(values, mask, rng);
  for (std::size_t t = s.steps(); t >= 1; --t) {
    Var eps_hat = model.predict(x1, x, c_con, t);
    x = reverse_step(x, t, eps_hat.value(), s, rng, coef);
    for (std::size_t i = 0; i < x.size(); ++i)
      if (mask[i] != 0.0) x[i] = values[i];
  }
  return x;
}

/// Window start offsets covering [0, L): stride `win`, last window aligned to the end.
inline std::vector<std::size_t> covering_offsets(std::size_t length, std::size_t win) {
  if (length <= win) return {0};
  std::vector<std::size_t> out;
  for (std::size_t o = 0; o + win <= length; o += win) out.push_back(o);
  if (out.back() + win < length) out.push_back(length - win);
  return out;
}

inline std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b), 0xC0F1u};
  return std::mt19937_64(seq);
}

/// Samples in original units and their elementwise median.
struct ImputationResult {
  std::vector<Tensor> samples;  // S x [N, L]
  Tensor point_estimate;
  Tensor target_mask;  // 1 where the input was missing
};

inline Tensor elementwise_median(const std::vector<Tensor>& samples) {
  Tensor out(samples.at(0).shape());
  std::vector<double> buf(samples.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (std::size_t k = 0; k < samples.size(); ++k) buf[k] = samples[k][i];
    std::sort(buf.begin(), buf.end());
    const std::size_t m = buf.size() / 2;
    out[i] = buf.size() % 2 ? buf[m] : 0.5 * (buf[m - 1] + buf[m]);
  }
  return out;
}

/// Imputes every missing entry of `values` (original units, mask 1 =
/// observed). Each (window, sample) pair draws from its own seeded stream, so
/// results do not depend on the thread count.
inline ImputationResult impute(const Tensor& values, const Tensor& mask, const CofillModel& model,
                               const Normalizer& norm, const NoiseSchedule& s,
                               const ImputeOptions& opt) {
  if (values.rank() != 2 || values.shape() != mask.shape())
    throw DimensionError("impute: values and mask disagree");
  if (values.dim(0) != model.nodes())
    throw DimensionError("impute: data has " + std::to_string(values.dim(0)) +
                         " nodes, model was built for " + std::to_string(model.nodes()));
  if (opt.n_samples < 1) throw ContractError("impute: n_samples must be >= 1");
  const std::size_t n = values.dim(0), len = values.dim(1);
  ImputationResult r;
  r.target_mask = Tensor(mask.shape());
  for (std::size_t i = 0; i < mask.size(); ++i) r.target_mask[i] = mask[i] == 0.0 ? 1.0 : 0.0;
  bool any_missing = false;
  for (double m : r.target_mask.data()) any_missing = any_missing || m != 0.0;
  if (!any_missing) {
    std::cerr << "notice: input is fully observed, nothing to impute\n";
    r.samples.assign(opt.n_samples, values);
    r.point_estimate = values;
    return r;
  }

  const Tensor normed = norm.transform(zero_fill(values, mask));
  const std::size_t win = std::min(opt.window_length, len);
  const auto offsets = covering_offsets(len, win);
  std::vector<Tensor> normalized(opt.n_samples, Tensor({n, len}));

  auto run_sample = [&](std::size_t k) {
    std::size_t covered = 0;  // steps [0, covered) already written
    for (std::size_t w = 0; w < offsets.size(); ++w) {
      const std::size_t o = offsets[w];
      Tensor wv = slice_cols(normed, o, win);
      Tensor wm = slice_cols(mask, o, win);
      bool window_missing = false;
      for (double m : wm.data()) window_missing = window_missing || m == 0.0;
      Tensor out = wv;
      if (window_missing) {
        auto rng = stream_rng(opt.seed, w, k);
        out = sample_window(model, wv, wm, s, rng, opt.mean_coef);
      }
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t l = std::max(covered, o); l < o + win; ++l)
          normalized[k].at(i, l) = out.at(i, l - o);
      covered = o + win;
    }
  };

  const std::size_t threads = std::max<std::size_t>(1, std::min(opt.threads, opt.n_samples));
  if (threads == 1) {
    for (std::size_t k = 0; k < opt.n_samples; ++k) run_sample(k);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t th = 0; th < threads; ++th)
      pool.emplace_back([&, th] {
        for (std::size_t k = th; k < opt.n_samples; k += threads) run_sample(k);
      });
    for (auto& t : pool) t.join();
  }

  for (auto& sample : normalized) {
    Tensor x = norm.inverse(sample);
    for (std::size_t i = 0; i < x.size(); ++i)
      if (mask[i] != 0.0) x[i] = values[i];
    r.samples.push_back(std::move(x));
  }
  r.point_estimate = elementwise_median(r.samples);
  return r;
}

}  // namespace cofill
