#pragma once

// Central finite-difference gradient checking.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "cofill/tensor.hpp"

namespace cofill {

struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t checked = 0;
};

/// Compares backprop gradients of scalar `loss(leaves)` against central
/// differences for every leaf entry. Relative error uses
/// |a - n| / max(|a|, |n|, floor).
inline GradCheckResult grad_check(const std::function<Var()>& loss, std::vector<Var> leaves,
                                  double h = 1e-6, double floor = 1e-6) {
  for (auto& v : leaves) v.zero_grad();
  backward(loss());
  std::vector<Tensor> analytic;
  for (auto& v : leaves) analytic.push_back(v.grad());
  GradCheckResult r;
  NoGradGuard no_grad;
  for (std::size_t p = 0; p < leaves.size(); ++p) {
    Tensor& x = leaves[p].mutable_value();
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double orig = x[i];
      x[i] = orig + h;
      const double up = loss().value()[0];
      x[i] = orig - h;
      const double down = loss().value()[0];
      x[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[p][i];
      const double abs_err = std::abs(a - numeric);
      const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), floor});
      r.max_abs_error = std::max(r.max_abs_error, abs_err);
      r.max_rel_error = std::max(r.max_rel_error, rel);
      ++r.checked;
    }
  }
  return r;
}

}  // namespace cofill
