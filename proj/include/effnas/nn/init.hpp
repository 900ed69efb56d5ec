#pragma once

#include <cmath>
#include <random>

#include "effnas/nn/params.hpp"

namespace effnas::nn::init {

/// Normal(0, std) truncated to +-2 std by resampling.
template <class T, class Rng>
BasicTensor<T> trunc_normal(Shape shape, Rng& rng, double std = 0.02) {
  std::normal_distribution<double> dist(0.0, std);
  std::vector<T> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) {
    double s;
    do s = dist(rng);
    while (std::abs(s) > 2.0 * std);
    x = static_cast<T>(s);
  }
  return BasicTensor<T>(std::move(shape), std::move(v), true);
}

/// He-normal with fan_out = C_out * k * k.
template <class T, class Rng>
BasicTensor<T> kaiming_fan_out(Shape shape, Rng& rng) {
  const double fan_out = static_cast<double>(shape[0] * shape[2] * shape[3]);
  return BasicTensor<T>::randn(std::move(shape), rng, static_cast<T>(std::sqrt(2.0 / fan_out)), true);
}

template <class T, class Rng>
ConvParams<T> conv(std::int64_t cin, std::int64_t cout, int k, int stride, int padding, Rng& rng) {
  ConvParams<T> p;
  p.weight = kaiming_fan_out<T>({cout, cin, k, k}, rng);
  p.bias = BasicTensor<T>::zeros({cout}, true);
  p.stride = stride;
  p.padding = padding;
  return p;
}

template <class T>
BNParams<T> batchnorm(std::int64_t c) {
  BNParams<T> p;
  p.gamma = BasicTensor<T>::ones({c}, true);
  p.beta = BasicTensor<T>::zeros({c}, true);
  p.running_mean = BasicTensor<T>::zeros({c});
  p.running_var = BasicTensor<T>::ones({c});
  return p;
}

template <class T>
LNParams<T> layernorm(std::int64_t c) {
  return {BasicTensor<T>::ones({c}, true), BasicTensor<T>::zeros({c}, true)};
}

template <class T>
GNParams<T> groupnorm(std::int64_t c, int groups) {
  return {BasicTensor<T>::ones({c}, true), BasicTensor<T>::zeros({c}, true), groups};
}

template <class T, class Rng>
LinearParams<T> linear(std::int64_t in, std::int64_t out, Rng& rng) {
  return {trunc_normal<T>({in, out}, rng), BasicTensor<T>::zeros({out}, true)};
}

template <class T, class Rng>
AttnParams<T> attention(std::int64_t width, int heads, int d_qk, int d_v, std::int64_t tokens, Rng& rng) {
  AttnParams<T> p;
  p.q = linear<T>(width, std::int64_t{heads} * d_qk, rng);
  p.k = linear<T>(width, std::int64_t{heads} * d_qk, rng);
  p.v = linear<T>(width, std::int64_t{heads} * d_v, rng);
  p.o = linear<T>(std::int64_t{heads} * d_v, width, rng);
  p.attn_bias = trunc_normal<T>({heads, tokens, tokens}, rng);
  p.heads = heads;
  p.d_qk = d_qk;
  p.d_v = d_v;
  return p;
}

}  // namespace effnas::nn::init
