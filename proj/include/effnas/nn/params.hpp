#pragma once

#include <cstdint>

#include "effnas/core/tensor.hpp"

namespace effnas::nn {

/// Convolution weight [C_out, C_in, k, k] with optional bias [C_out].
template <class T>
struct ConvParams {
  BasicTensor<T> weight;
  BasicTensor<T> bias;  // undefined when the conv has no bias
  int stride = 1;
  int padding = 0;

  std::int64_t out_channels() const { return weight.dim(0); }
  std::int64_t in_channels() const { return weight.dim(1); }
  std::int64_t kernel() const { return weight.dim(2); }
};

template <class T>
struct BNParams {
  BasicTensor<T> gamma, beta;
  BasicTensor<T> running_mean, running_var;  // buffers, never trained
  T eps = T(1e-5);
  T momentum = T(0.1);

  std::int64_t channels() const { return gamma.numel(); }
};

/// Affine parameters of LayerNorm (last axis) and channel-wise LayerNorm.
template <class T>
struct LNParams {
  BasicTensor<T> gamma, beta;
  T eps = T(1e-5);
};

template <class T>
struct GNParams {
  BasicTensor<T> gamma, beta;
  int groups = 1;
  T eps = T(1e-5);
};

/// y = x W + b with W stored [in, out].
template <class T>
struct LinearParams {
  BasicTensor<T> weight;
  BasicTensor<T> bias;
};

/// Multi-head self-attention with a learned additive bias per head.
/// Wq, Wk: [C, heads*d_qk]; Wv: [C, heads*d_v]; Wo: [heads*d_v, C];
/// attn_bias: [heads, N, N] for a fixed token count N.
template <class T>
struct AttnParams {
  LinearParams<T> q, k, v, o;
  BasicTensor<T> attn_bias;
  int heads = 8;
  int d_qk = 32;
  int d_v = 128;

  std::int64_t width() const { return q.weight.dim(0); }
  std::int64_t tokens() const { return attn_bias.dim(1); }
};

}  // namespace effnas::nn
