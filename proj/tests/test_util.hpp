#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "effnas/core/ops.hpp"

namespace testutil {

using effnas::BasicTensor;
using effnas::Shape;
using DTensor = BasicTensor<double>;

inline std::mt19937_64 rng_for(std::uint64_t seed) { return std::mt19937_64(seed * 0x9E3779B97F4A7C15ULL + 17); }

template <class T = float>
BasicTensor<T> randn(Shape shape, std::mt19937_64& rng, bool requires_grad = false, double stddev = 1.0) {
  return BasicTensor<T>::randn(std::move(shape), rng, static_cast<T>(stddev), requires_grad);
}

/// Random shape with `rank` dims in [lo, hi].
inline Shape random_shape(std::mt19937_64& rng, int rank, int lo = 1, int hi = 6) {
  std::uniform_int_distribution<int> d(lo, hi);
  Shape s;
  for (int i = 0; i < rank; ++i) s.push_back(d(rng));
  return s;
}

inline double max_abs_diff(std::span<const float> a, std::span<const float> b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

/// Worst relative error between reverse-mode gradients and central finite
/// differences of `loss_fn` with respect to every element of `inputs`.
/// Uses the five-point central stencil with step `eps`, whose truncation
/// error is O(eps^4).
/// The denominator is floored at 1e-3 so exactly-zero gradients compare by
/// absolute error.
inline double gradcheck(std::vector<DTensor> inputs, const std::function<DTensor()>& loss_fn, double eps = 1e-3) {
  for (auto& t : inputs) t.zero_grad();
  auto loss = loss_fn();
  effnas::backward(loss);
  std::vector<std::vector<double>> analytic;
  for (auto& t : inputs) analytic.push_back(t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end())
                                                        : std::vector<double>(t.numel(), 0.0));
  double worst = 0;
  effnas::NoGradGuard guard;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto values = inputs[i].mutable_data();
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double saved = values[j];
      auto at = [&](double offset) {
        values[j] = saved + offset;
        return loss_fn().item();
      };
      const double numeric = (8 * (at(eps) - at(-eps)) - (at(2 * eps) - at(-2 * eps))) / (12 * eps);
      values[j] = saved;
      const double a = analytic[i][j];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-3});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

/// Reduces an arbitrary output to a scalar with fixed random weights so that
/// every output element contributes a distinct gradient.
inline DTensor weighted_sum(const DTensor& y, const DTensor& w) { return effnas::sum(effnas::mul(y, w)); }

}  // namespace testutil
