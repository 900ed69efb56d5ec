#pragma once

#include <cmath>

#include "effnas/core/ops.hpp"
#include "effnas/nn/params.hpp"

namespace effnas::nn {

/// Multi-head self-attention over x[B, N, C]:
/// per head softmax(Q K^T / sqrt(C) + bias) V, heads concatenated, then the
/// output projection. The logit scale uses the block width C.
///
/// When `probs` is non-null it receives the attention matrix [B, heads, N, N].
template <class T>
BasicTensor<T> mhsa(const BasicTensor<T>& x, const AttnParams<T>& p, BasicTensor<T>* probs = nullptr) {
  if (x.rank() != 3) throw ShapeError("mhsa expects [B,N,C], got " + to_string(x.shape()));
  const std::int64_t b = x.dim(0), n = x.dim(1), c = x.dim(2);
  if (c != p.width()) {
    throw ShapeError("mhsa: input width " + std::to_string(c) + " does not match block width " +
                     std::to_string(p.width()));
  }
  if (p.attn_bias.rank() != 3 || p.attn_bias.dim(0) != p.heads || p.attn_bias.dim(1) != p.attn_bias.dim(2)) {
    throw ShapeError("mhsa: attention bias must be [heads,N,N], got " + to_string(p.attn_bias.shape()));
  }
  if (n != p.tokens()) {
    throw ShapeError("mhsa: " + std::to_string(n) + " tokens but the attention bias table covers " +
                     std::to_string(p.tokens()));
  }
  const std::int64_t h = p.heads;
  auto split_heads = [&](const BasicTensor<T>& t, std::int64_t d) { return transpose(reshape(t, {b, n, h, d}), 1, 2); };
  auto q = split_heads(linear(x, p.q.weight, p.q.bias), p.d_qk);
  auto k = split_heads(linear(x, p.k.weight, p.k.bias), p.d_qk);
  auto v = split_heads(linear(x, p.v.weight, p.v.bias), p.d_v);
  auto logits = scale(matmul(q, transpose(k, 2, 3)), T(1) / std::sqrt(static_cast<T>(c)));
  auto attn = softmax(add(logits, p.attn_bias), -1);
  if (probs) *probs = attn;
  auto ctx = reshape(transpose(matmul(attn, v), 1, 2), {b, n, h * p.d_v});
  return linear(ctx, p.o.weight, p.o.bias);
}

}  // namespace effnas::nn
