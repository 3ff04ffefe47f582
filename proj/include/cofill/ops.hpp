#pragma once

// Differentiable primitives. Every op computes its forward value eagerly and
// registers a closure that accumulates gradients into the parents that need
// them.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "cofill/tensor.hpp"

namespace cofill {

namespace detail {

inline Tensor* parent_grad(Node& n, std::size_t i) {
  Node& p = *n.parents[i];
  return p.requires_grad ? &p.grad_buffer() : nullptr;
}

inline void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

// Splits a shape around `axis` into (outer, extent, inner).
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

inline AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size())
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " +
                         shape_str(shape));
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

template <class F, class D>
Var unary(const Var& x, F f, D dfdx_from_xy) {
  const Tensor& xv = x.value();
  Tensor y(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) y[i] = f(xv[i]);
  return Var::make_result(std::move(y), {x}, [dfdx_from_xy](Node& n) {
    Tensor* gx = parent_grad(n, 0);
    if (!gx) return;
    const Tensor& xv = n.parents[0]->value;
    for (std::size_t i = 0; i < xv.size(); ++i)
      (*gx)[i] += n.grad[i] * dfdx_from_xy(xv[i], n.value[i]);
  });
}

}  // namespace detail

inline Var add(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "add");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += b.value()[i];
  return Var::make_result(std::move(y), {a, b}, [](detail::Node& n) {
    for (std::size_t p = 0; p < 2; ++p)
      if (Tensor* g = detail::parent_grad(n, p))
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i];
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "sub");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= b.value()[i];
  return Var::make_result(std::move(y), {a, b}, [](detail::Node& n) {
    if (Tensor* g = detail::parent_grad(n, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i];
    if (Tensor* g = detail::parent_grad(n, 1))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= n.grad[i];
  });
}

/// Elementwise (Hadamard) product.
inline Var hadamard(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "hadamard");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= b.value()[i];
  return Var::make_result(std::move(y), {a, b}, [](detail::Node& n) {
    const Tensor& av = n.parents[0]->value;
    const Tensor& bv = n.parents[1]->value;
    if (Tensor* g = detail::parent_grad(n, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i] * bv[i];
    if (Tensor* g = detail::parent_grad(n, 1))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i] * av[i];
  });
}

inline Var scale(const Var& x, double s) {
  Tensor y = x.value();
  for (double& v : y.storage()) v *= s;
  return Var::make_result(std::move(y), {x}, [s](detail::Node& n) {
    if (Tensor* g = detail::parent_grad(n, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += s * n.grad[i];
  });
}

/// Adds a vector along `axis`, broadcast over every other axis.
inline Var add_bias(const Var& x, const Var& b, std::size_t axis = 0) {
  const auto s = detail::split_axis(x.shape(), axis);
  if (b.value().size() != s.extent)
    throw DimensionError("add_bias: bias " + shape_str(b.shape()) +
                         " does not match axis " + std::to_string(axis) +
                         " of " + shape_str(x.shape()));
  Tensor y = x.value();
  const Tensor& bv = b.value();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t e = 0; e < s.extent; ++e)
      for (std::size_t i = 0; i < s.inner; ++i)
        y[(o * s.extent + e) * s.inner + i] += bv[e];
  return Var::make_result(std::move(y), {x, b}, [s](detail::Node& n) {
    if (Tensor* g = detail::parent_grad(n, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i];
    if (Tensor* g = detail::parent_grad(n, 1))
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t e = 0; e < s.extent; ++e)
          for (std::size_t i = 0; i < s.inner; ++i)
            (*g)[e] += n.grad[(o * s.extent + e) * s.inner + i];
  });
}

inline Var matmul(const Var& a, const Var& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() != 2 || bs.size() != 2 || as[1] != bs[0])
    throw DimensionError("matmul: incompatible shapes " + shape_str(as) +
                         " and " + shape_str(bs));
  const std::size_t m = as[0], k = as[1], p = bs[1];
  Tensor y({m, p});
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t r = 0; r < k; ++r) {
      const double air = av[i * k + r];
      for (std::size_t j = 0; j < p; ++j) y[i * p + j] += air * bv[r * p + j];
    }
  return Var::make_result(std::move(y), {a, b}, [m, k, p](detail::Node& n) {
    const Tensor& av = n.parents[0]->value;
    const Tensor& bv = n.parents[1]->value;
    if (Tensor* ga = detail::parent_grad(n, 0))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t r = 0; r < k; ++r) {
          double acc = 0.0;
          for (std::size_t j = 0; j < p; ++j)
            acc += n.grad[i * p + j] * bv[r * p + j];
          (*ga)[i * k + r] += acc;
        }
    if (Tensor* gb = detail::parent_grad(n, 1))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t r = 0; r < k; ++r) {
          const double air = av[i * k + r];
          for (std::size_t j = 0; j < p; ++j)
            (*gb)[r * p + j] += air * n.grad[i * p + j];
        }
  });
}

/// Batched product over the leading axis: [B,m,k] x [B,k,p] -> [B,m,p].
/// With `transpose_b`, b is read as [B,p,k].
inline Var bmm(const Var& a, const Var& b, bool transpose_b = false) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  const bool ok = as.size() == 3 && bs.size() == 3 && as[0] == bs[0] &&
                  (transpose_b ? as[2] == bs[2] : as[2] == bs[1]);
  if (!ok)
    throw DimensionError("bmm: incompatible shapes " + shape_str(as) + " and " +
                         shape_str(bs) + (transpose_b ? " (b transposed)" : ""));
  const std::size_t B = as[0], m = as[1], k = as[2];
  const std::size_t p = transpose_b ? bs[1] : bs[2];
  // Element (r, j) of the logical k x p right operand of batch bi.
  auto bidx = [=](std::size_t bi, std::size_t r, std::size_t j) {
    return transpose_b ? (bi * p + j) * k + r : (bi * k + r) * p + j;
  };
  Tensor y({B, m, p});
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  for (std::size_t bi = 0; bi < B; ++bi)
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < p; ++j) {
        double acc = 0.0;
        for (std::size_t r = 0; r < k; ++r)
          acc += av[(bi * m + i) * k + r] * bv[bidx(bi, r, j)];
        y[(bi * m + i) * p + j] = acc;
      }
  return Var::make_result(std::move(y), {a, b}, [=](detail::Node& n) {
    const Tensor& av = n.parents[0]->value;
    const Tensor& bv = n.parents[1]->value;
    Tensor* ga = detail::parent_grad(n, 0);
    Tensor* gb = detail::parent_grad(n, 1);
    for (std::size_t bi = 0; bi < B; ++bi)
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < p; ++j) {
          const double g = n.grad[(bi * m + i) * p + j];
          if (g == 0.0) continue;
          for (std::size_t r = 0; r < k; ++r) {
            if (ga) (*ga)[(bi * m + i) * k + r] += g * bv[bidx(bi, r, j)];
            if (gb) (*gb)[bidx(bi, r, j)] += g * av[(bi * m + i) * k + r];
          }
        }
  });
}

/// Applies a matrix along one axis: out[.., i, ..] = sum_j mat[i, j] x[.., j, ..].
/// With axis 0 on a [C,N,L] tensor this is a 1x1 convolution.
inline Var linear_along(const Var& x, const Var& mat, std::size_t axis) {
  const auto s = detail::split_axis(x.shape(), axis);
  const Shape& ms = mat.shape();
  if (ms.size() != 2 || ms[1] != s.extent)
    throw DimensionError("linear_along: matrix " + shape_str(ms) +
                         " incompatible with axis " + std::to_string(axis) +
                         " of " + shape_str(x.shape()));
  const std::size_t out_ext = ms[0];
  Shape ys = x.shape();
  ys[axis] = out_ext;
  Tensor y(ys);
  const Tensor& xv = x.value();
  const Tensor& mv = mat.value();
  const std::size_t in_ext = s.extent, inner = s.inner;
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < out_ext; ++i) {
      double* yrow = &y[(o * out_ext + i) * inner];
      for (std::size_t j = 0; j < in_ext; ++j) {
        const double w = mv[i * in_ext + j];
        if (w == 0.0) continue;
        const double* xrow = &xv[(o * in_ext + j) * inner];
        for (std::size_t q = 0; q < inner; ++q) yrow[q] += w * xrow[q];
      }
    }
  return Var::make_result(
      std::move(y), {x, mat}, [s, out_ext](detail::Node& n) {
        const Tensor& xv = n.parents[0]->value;
        const Tensor& mv = n.parents[1]->value;
        const std::size_t in_ext = s.extent, inner = s.inner;
        Tensor* gx = detail::parent_grad(n, 0);
        Tensor* gm = detail::parent_grad(n, 1);
        for (std::size_t o = 0; o < s.outer; ++o)
          for (std::size_t i = 0; i < out_ext; ++i) {
            const double* grow = &n.grad[(o * out_ext + i) * inner];
            for (std::size_t j = 0; j < in_ext; ++j) {
              const double* xrow = &xv[(o * in_ext + j) * inner];
              if (gx) {
                const double w = mv[i * in_ext + j];
                double* gxrow = &(*gx)[(o * in_ext + j) * inner];
                for (std::size_t q = 0; q < inner; ++q) gxrow[q] += w * grow[q];
              }
              if (gm) {
                double acc = 0.0;
                for (std::size_t q = 0; q < inner; ++q) acc += grow[q] * xrow[q];
                (*gm)[i * in_ext + j] += acc;
              }
            }
          }
      });
}

inline Var reshape(const Var& x, Shape shape) {
  Tensor y = x.value().reshaped(std::move(shape));
  return Var::make_result(std::move(y), {x}, [](detail::Node& n) {
    if (Tensor* g = detail::parent_grad(n, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i];
  });
}

/// Reorders axes: output axis i is input axis perm[i].
inline Var permute(const Var& x, std::vector<std::size_t> perm) {
  const Shape& xs = x.shape();
  const std::size_t r = xs.size();
  if (perm.size() != r)
    throw DimensionError("permute: rank mismatch for " + shape_str(xs));
  std::vector<bool> used(r, false);
  for (std::size_t p : perm) {
    if (p >= r || used[p]) throw DimensionError("permute: invalid permutation");
    used[p] = true;
  }
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * xs[i];
  Shape ys(r);
  std::vector<std::size_t> strides(r);  // input stride per output axis
  for (std::size_t i = 0; i < r; ++i) {
    ys[i] = xs[perm[i]];
    strides[i] = in_strides[perm[i]];
  }
  // Flat source index for every destination position.
  auto index_map = std::make_shared<std::vector<std::size_t>>(numel(ys));
  {
    std::vector<std::size_t> idx(r, 0);
    std::size_t src = 0;
    for (std::size_t dst = 0; dst < index_map->size(); ++dst) {
      (*index_map)[dst] = src;
      for (std::size_t ax = r; ax-- > 0;) {
        if (++idx[ax] < ys[ax]) {
          src += strides[ax];
          break;
        }
        src -= strides[ax] * (ys[ax] - 1);
        idx[ax] = 0;
      }
    }
  }
  Tensor y(ys);
  const Tensor& xv = x.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = xv[(*index_map)[i]];
  return Var::make_result(std::move(y), {x}, [index_map](detail::Node& n) {
    if (Tensor* g = detail::parent_grad(n, 0))
      for (std::size_t i = 0; i < index_map->size(); ++i)
        (*g)[(*index_map)[i]] += n.grad[i];
  });
}

inline Var concat(const std::vector<Var>& xs, std::size_t axis) {
  if (xs.empty()) throw DimensionError("concat: no inputs");
  Shape ys = xs[0].shape();
  if (axis >= ys.size()) throw DimensionError("concat: axis out of range");
  std::size_t total = 0;
  for (const auto& x : xs) {
    const Shape& s = x.shape();
    bool ok = s.size() == ys.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i)
      ok = i == axis || s[i] == ys[i];
    if (!ok)
      throw DimensionError("concat: axis mismatch between " +
                           shape_str(xs[0].shape()) + " and " + shape_str(s));
    total += s[axis];
  }
  ys[axis] = total;
  const auto ds = detail::split_axis(ys, axis);
  Tensor y(ys);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& x : xs) {
    offsets.push_back(off);
    const std::size_t ext = x.shape()[axis];
    const Tensor& xv = x.value();
    for (std::size_t o = 0; o < ds.outer; ++o)
      std::copy_n(&xv[o * ext * ds.inner], ext * ds.inner,
                  &y[(o * total + off) * ds.inner]);
    off += ext;
  }
  return Var::make_result(
      std::move(y), xs, [ds, total, offsets, axis](detail::Node& n) {
        for (std::size_t p = 0; p < n.parents.size(); ++p) {
          Tensor* g = detail::parent_grad(n, p);
          if (!g) continue;
          const std::size_t ext = n.parents[p]->value.shape()[axis];
          for (std::size_t o = 0; o < ds.outer; ++o)
            for (std::size_t q = 0; q < ext * ds.inner; ++q)
              (*g)[o * ext * ds.inner + q] +=
                  n.grad[(o * total + offsets[p]) * ds.inner + q];
        }
      });
}

/// Contiguous range [start, start+len) along `axis`.
inline Var slice(const Var& x, std::size_t axis, std::size_t start,
                 std::size_t len) {
  const auto s = detail::split_axis(x.shape(), axis);
  if (start + len > s.extent)
    throw DimensionError("slice: range exceeds axis of " + shape_str(x.shape()));
  Shape ys = x.shape();
  ys[axis] = len;
  Tensor y(ys);
  const Tensor& xv = x.value();
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(&xv[(o * s.extent + start) * s.inner], len * s.inner,
                &y[o * len * s.inner]);
  return Var::make_result(std::move(y), {x}, [s, start, len](detail::Node& n) {
    if (Tensor* g = detail::parent_grad(n, 0))
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t q = 0; q < len * s.inner; ++q)
          (*g)[(o * s.extent + start) * s.inner + q] += n.grad[o * len * s.inner + q];
  });
}

inline Var sigmoid(const Var& x) {
  return detail::unary(
      x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double, double y) { return y * (1.0 - y); });
}

inline Var tanh(const Var& x) {
  return detail::unary(
      x, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

inline Var relu(const Var& x) {
  return detail::unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Var silu(const Var& x) {
  return detail::unary(
      x, [](double v) { return v / (1.0 + std::exp(-v)); },
      [](double v, double) {
        const double s = 1.0 / (1.0 + std::exp(-v));
        return s * (1.0 + v * (1.0 - s));
      });
}

inline Var square(const Var& x) {
  return detail::unary(
      x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

/// Numerically stabilized softmax along `axis`.
inline Var softmax(const Var& x, std::size_t axis) {
  const auto s = detail::split_axis(x.shape(), axis);
  const Tensor& xv = x.value();
  Tensor y(x.shape());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      double mx = xv[base];
      for (std::size_t e = 1; e < s.extent; ++e)
        mx = std::max(mx, xv[base + e * s.inner]);
      double z = 0.0;
      for (std::size_t e = 0; e < s.extent; ++e) {
        const double v = std::exp(xv[base + e * s.inner] - mx);
        y[base + e * s.inner] = v;
        z += v;
      }
      for (std::size_t e = 0; e < s.extent; ++e) y[base + e * s.inner] /= z;
    }
  return Var::make_result(std::move(y), {x}, [s](detail::Node& n) {
    Tensor* g = detail::parent_grad(n, 0);
    if (!g) return;
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.extent * s.inner + i;
        double dot = 0.0;
        for (std::size_t e = 0; e < s.extent; ++e)
          dot += n.grad[base + e * s.inner] * n.value[base + e * s.inner];
        for (std::size_t e = 0; e < s.extent; ++e) {
          const std::size_t k = base + e * s.inner;
          (*g)[k] += n.value[k] * (n.grad[k] - dot);
        }
      }
  });
}

inline constexpr double kLayerNormEps = 1e-5;

/// Normalizes every slice along `axis` to zero mean and unit variance
/// (biased variance plus kLayerNormEps); no affine transform.
inline Var layer_norm(const Var& x, std::size_t axis, double eps = kLayerNormEps) {
  const auto s = detail::split_axis(x.shape(), axis);
  const Tensor& xv = x.value();
  Tensor y(x.shape());
  const std::size_t slices = s.outer * s.inner;
  auto inv_std = std::make_shared<std::vector<double>>(slices);
  const double ne = static_cast<double>(s.extent);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      double mean = 0.0;
      for (std::size_t e = 0; e < s.extent; ++e) mean += xv[base + e * s.inner];
      mean /= ne;
      double var = 0.0;
      for (std::size_t e = 0; e < s.extent; ++e) {
        const double c = xv[base + e * s.inner] - mean;
        var += c * c;
      }
      var /= ne;
      const double r = 1.0 / std::sqrt(var + eps);
      (*inv_std)[o * s.inner + i] = r;
      for (std::size_t e = 0; e < s.extent; ++e)
        y[base + e * s.inner] = (xv[base + e * s.inner] - mean) * r;
    }
  return Var::make_result(std::move(y), {x}, [s, inv_std, ne](detail::Node& n) {
    Tensor* g = detail::parent_grad(n, 0);
    if (!g) return;
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.extent * s.inner + i;
        const double r = (*inv_std)[o * s.inner + i];
        double gsum = 0.0, gysum = 0.0;
        for (std::size_t e = 0; e < s.extent; ++e) {
          const std::size_t k = base + e * s.inner;
          gsum += n.grad[k];
          gysum += n.grad[k] * n.value[k];
        }
        for (std::size_t e = 0; e < s.extent; ++e) {
          const std::size_t k = base + e * s.inner;
          (*g)[k] += r * (n.grad[k] - gsum / ne - n.value[k] * gysum / ne);
        }
      }
  });
}

/// Inverted dropout. Identity when not training or when rate is 0.
inline Var dropout(const Var& x, double rate, std::mt19937_64& rng,
                   bool training) {
  if (rate < 0.0 || rate >= 1.0)
    throw ContractError("dropout rate must lie in [0, 1)");
  if (!training || rate == 0.0) return x;
  std::bernoulli_distribution keep(1.0 - rate);
  const double s = 1.0 / (1.0 - rate);
  auto mask = std::make_shared<std::vector<double>>(x.value().size());
  Tensor y = x.value();
  for (std::size_t i = 0; i < y.size(); ++i) {
    (*mask)[i] = keep(rng) ? s : 0.0;
    y[i] *= (*mask)[i];
  }
  return Var::make_result(std::move(y), {x}, [mask](detail::Node& n) {
    if (Tensor* g = detail::parent_grad(n, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i] * (*mask)[i];
  });
}

/// Causal convolution along the last axis of x [C_in, N, L] with kernel
/// [C_out, C_in, k]. Tap j multiplies the input j*dilation steps in the past;
/// the sequence is left-padded with zeros so the output keeps length L.
inline Var conv1d_causal(const Var& x, const Var& kernel, std::size_t dilation = 1) {
  const Shape& xs = x.shape();
  const Shape& ks = kernel.shape();
  if (xs.size() != 3 || ks.size() != 3 || ks[1] != xs[0] || ks[2] == 0)
    throw DimensionError("conv1d_causal: input " + shape_str(xs) +
                         " incompatible with kernel " + shape_str(ks));
  if (dilation == 0) throw ContractError("conv1d_causal: dilation must be >= 1");
  const std::size_t cin = xs[0], nodes = xs[1], len = xs[2];
  const std::size_t cout = ks[0], taps = ks[2];
  Tensor y({cout, nodes, len});
  const Tensor& xv = x.value();
  const Tensor& kv = kernel.value();
  for (std::size_t co = 0; co < cout; ++co)
    for (std::size_t ci = 0; ci < cin; ++ci)
      for (std::size_t j = 0; j < taps; ++j) {
        const double w = kv[(co * cin + ci) * taps + j];
        const std::size_t lag = j * dilation;
        if (w == 0.0 || lag >= len) continue;
        for (std::size_t nd = 0; nd < nodes; ++nd) {
          double* yr = &y[(co * nodes + nd) * len];
          const double* xr = &xv[(ci * nodes + nd) * len];
          for (std::size_t l = lag; l < len; ++l) yr[l] += w * xr[l - lag];
        }
      }
  return Var::make_result(std::move(y), {x, kernel}, [=](detail::Node& n) {
    const Tensor& xv = n.parents[0]->value;
    const Tensor& kv = n.parents[1]->value;
    Tensor* gx = detail::parent_grad(n, 0);
    Tensor* gk = detail::parent_grad(n, 1);
    for (std::size_t co = 0; co < cout; ++co)
      for (std::size_t ci = 0; ci < cin; ++ci)
        for (std::size_t j = 0; j < taps; ++j) {
          const std::size_t lag = j * dilation;
          if (lag >= len) continue;
          const double w = kv[(co * cin + ci) * taps + j];
          double acc = 0.0;
          for (std::size_t nd = 0; nd < nodes; ++nd) {
            const double* gr = &n.grad[(co * nodes + nd) * len];
            const double* xr = &xv[(ci * nodes + nd) * len];
            for (std::size_t l = lag; l < len; ++l) {
              acc += gr[l] * xr[l - lag];
              if (gx) (*gx)[(ci * nodes + nd) * len + l - lag] += w * gr[l];
            }
          }
          if (gk) (*gk)[(co * cin + ci) * taps + j] += acc;
        }
  });
}

inline Var sum(const Var& x) {
  double acc = 0.0;
  for (double v : x.value().data()) acc += v;
  return Var::make_result(Tensor::scalar(acc), {x}, [](detail::Node& n) {
    if (Tensor* g = detail::parent_grad(n, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[0];
  });
}

inline Var mean(const Var& x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.value().size()));
}

}  // namespace cofill
