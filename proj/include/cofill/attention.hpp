#pragma once

#include <cmath>

#include "cofill/ops.hpp"

namespace cofill {

/// Axis of a [C, N, L] feature map that attention runs over.
enum class AttnAxis : std::size_t { nodes = 1, time = 2 };

struct AttentionResult {
  Var out;      // [C, N, L]
  Var weights;  // [heads * batch, S_query, S_key], rows sum to 1
};

/// Scaled dot-product attention softmax(Q K^T / sqrt(C/heads)) V along one
/// axis of channel-first maps. Q is [C, N, L]; K and V may have a different
/// extent on the attended axis (e.g. virtual nodes) but match elsewhere.
/// Channels are split into `heads` contiguous groups.
inline AttentionResult multi_head_attention(const Var& q, const Var& k, const Var& v,
                                            std::size_t heads, AttnAxis axis) {
  const Shape& qs = q.shape();
  if (qs.size() != 3 || k.shape() != v.shape() || k.shape().size() != 3)
    throw DimensionError("attention: expected [C,N,L] maps, got " + shape_str(qs) + ", " +
                         shape_str(k.shape()) + ", " + shape_str(v.shape()));
  const std::size_t c = qs[0];
  const std::size_t ax = static_cast<std::size_t>(axis);
  const std::size_t other = ax == 1 ? 2 : 1;
  if (k.dim(0) != c || k.dim(other) != qs[other])
    throw DimensionError("attention: query " + shape_str(qs) + " and key " +
                         shape_str(k.shape()) + " disagree");
  if (heads == 0 || c % heads != 0)
    throw ContractError("attention: channel count " + std::to_string(c) +
                        " not divisible by head count " + std::to_string(heads));
  const std::size_t dh = c / heads;
  const std::size_t batch = qs[other];
  const std::size_t sq = qs[ax], sk = k.dim(ax);

  // [C,N,L] -> [H, dh, N, L] -> [H, batch, S, dh] -> [H*batch, S, dh]
  const std::vector<std::size_t> to_seq =
      axis == AttnAxis::time ? std::vector<std::size_t>{0, 2, 3, 1}
                             : std::vector<std::size_t>{0, 3, 2, 1};
  auto split = [&](const Var& x, std::size_t s) {
    Var r = reshape(x, {heads, dh, x.dim(1), x.dim(2)});
    return reshape(permute(r, to_seq), {heads * batch, s, dh});
  };
  Var qh = split(q, sq);
  Var kh = split(k, sk);
  Var vh = split(v, sk);
  Var scores = scale(bmm(qh, kh, true), 1.0 / std::sqrt(static_cast<double>(dh)));
  Var w = softmax(scores, 2);
  Var o = bmm(w, vh);  // [H*batch, Sq, dh]
  o = reshape(o, {heads, batch, sq, dh});
  const std::vector<std::size_t> back =
      axis == AttnAxis::time ? std::vector<std::size_t>{0, 3, 1, 2}
                             : std::vector<std::size_t>{0, 3, 2, 1};
  o = reshape(permute(o, back), {c, qs[1], qs[2]});
  return {o, w};
}

}  // namespace cofill
