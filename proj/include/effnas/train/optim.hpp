#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "effnas/core/tensor.hpp"

namespace effnas::train {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

/// Moments for one parameter list, index-aligned with it.
struct OptimState {
  AdamWConfig cfg;
  std::vector<std::vector<double>> m, v;
  std::vector<double> decay;  // per-parameter weight decay
  std::int64_t step = 0;
};

/// Fresh state for `params`. `decay` overrides the per-parameter weight
/// decay when non-empty.
template <class T>
OptimState make_state(std::span<const BasicTensor<T>> params, const AdamWConfig& cfg = {},
                      std::vector<double> decay = {}) {
  if (!decay.empty() && decay.size() != params.size()) {
    throw ShapeError("weight decay list has " + std::to_string(decay.size()) + " entries for " +
                     std::to_string(params.size()) + " parameters");
  }
  OptimState s;
  s.cfg = cfg;
  for (const auto& p : params) {
    s.m.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
    s.v.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
  }
  s.decay = decay.empty() ? std::vector<double>(params.size(), cfg.weight_decay) : std::move(decay);
  return s;
}

/// One AdamW update with decoupled weight decay and bias-corrected moments.
/// `grads[i]` may be empty, which counts as a zero gradient.
template <class T>
void adamw_step(std::span<BasicTensor<T>> params, std::span<const std::vector<T>> grads, OptimState& s, double lr) {
  if (params.size() != grads.size() || params.size() != s.m.size()) {
    throw ShapeError("adamw_step: " + std::to_string(params.size()) + " parameters, " + std::to_string(grads.size()) +
                     " gradients, " + std::to_string(s.m.size()) + " moment slots");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto n = static_cast<std::size_t>(params[i].numel());
    if (s.m[i].size() != n) throw ShapeError("adamw_step: moment size differs from parameter " + std::to_string(i));
    if (!grads[i].empty() && grads[i].size() != n) {
      throw ShapeError("adamw_step: gradient " + std::to_string(i) + " has " + std::to_string(grads[i].size()) +
                       " values, parameter has " + std::to_string(n));
    }
  }
  ++s.step;
  const auto& c = s.cfg;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(s.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(s.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].mutable_data();
    auto& m = s.m[i];
    auto& v = s.v[i];
    const double shrink = 1.0 - lr * s.decay[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double g = grads[i].empty() ? 0.0 : static_cast<double>(grads[i][k]);
      m[k] = c.beta1 * m[k] + (1 - c.beta1) * g;
      v[k] = c.beta2 * v[k] + (1 - c.beta2) * g * g;
      const double update = (m[k] / bc1) / (std::sqrt(v[k] / bc2) + c.eps);
      w[k] = static_cast<T>(static_cast<double>(w[k]) * shrink - lr * update);
    }
  }
}

/// Warmup plus cosine decay, in optimizer steps.
struct Schedule {
  double base_lr = 1e-3 * 64.0 / 1024.0;
  double min_lr = 1e-5;
  int warmup_epochs = 1;
  int total_epochs = 20;
  std::int64_t steps_per_epoch = 1;

  std::int64_t warmup_steps() const { return warmup_epochs * steps_per_epoch; }
  std::int64_t total_steps() const { return total_epochs * steps_per_epoch; }
};

/// Learning rate scaled linearly from a reference batch of 1024.
inline double scaled_lr(std::int64_t batch_size, double per_1024 = 1e-3) {
  return per_1024 * static_cast<double>(batch_size) / 1024.0;
}

inline void validate(const Schedule& s) {
  if (!(s.min_lr >= 0) || !(s.min_lr <= s.base_lr)) throw DomainError("schedule needs 0 <= min_lr <= base_lr");
  if (s.warmup_epochs < 0 || s.warmup_epochs >= s.total_epochs) {
    throw DomainError("schedule needs 0 <= warmup_epochs < total_epochs, got " + std::to_string(s.warmup_epochs) +
                      " and " + std::to_string(s.total_epochs));
  }
  if (s.steps_per_epoch < 1) throw DomainError("schedule needs at least one step per epoch");
}

/// Linear warmup from 0 to base_lr, then cosine down to min_lr at the final
/// step; later steps stay at min_lr.
inline double lr_at(std::int64_t step, const Schedule& s) {
  validate(s);
  if (step < 0) throw DomainError("learning-rate step must be non-negative");
  const auto w = s.warmup_steps(), total = s.total_steps();
  if (step < w) return s.base_lr * static_cast<double>(step) / static_cast<double>(w);
  if (step >= total) return s.min_lr;
  const double t = static_cast<double>(step - w) / static_cast<double>(total - w);
  return s.min_lr + 0.5 * (s.base_lr - s.min_lr) * (1.0 + std::cos(std::numbers::pi * t));
}

}  // namespace effnas::train
