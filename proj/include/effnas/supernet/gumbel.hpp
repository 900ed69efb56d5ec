#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "effnas/core/ops.hpp"

namespace effnas::supernet {

/// Perturbation added to the branch logits before the tempered softmax.
/// `uniform_as_written` draws eps ~ U(0,1); `standard_gumbel` draws
/// -log(-log u); `none` disables noise.
enum class NoiseKind { uniform_as_written, standard_gumbel, none };

inline const char* to_string(NoiseKind k) {
  switch (k) {
    case NoiseKind::uniform_as_written: return "uniform_as_written";
    case NoiseKind::standard_gumbel: return "standard_gumbel";
    case NoiseKind::none: return "none";
  }
  return "?";
}

using effnas::to_string;

inline NoiseKind parse_noise(std::string_view s) {
  if (s == "uniform_as_written" || s == "uniform") return NoiseKind::uniform_as_written;
  if (s == "standard_gumbel" || s == "gumbel") return NoiseKind::standard_gumbel;
  if (s == "none") return NoiseKind::none;
  throw DomainError("unknown noise kind '" + std::string(s) + "'");
}

struct GumbelConfig {
  double tau = 1.0;
  NoiseKind noise = NoiseKind::uniform_as_written;
  std::uint64_t seed = 0;
};

template <class Rng>
std::vector<double> sample_noise(std::size_t n, NoiseKind kind, Rng& rng) {
  std::vector<double> eps(n, 0.0);
  if (kind == NoiseKind::none) return eps;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& e : eps) {
    double v = u(rng);
    if (kind == NoiseKind::standard_gumbel) {
      while (v <= 0.0) v = u(rng);
      e = -std::log(-std::log(v));
    } else {
      e = v;
    }
  }
  return eps;
}

/// softmax((alpha + eps) / tau), differentiable with respect to alpha.
template <class T>
BasicTensor<T> branch_weights(const BasicTensor<T>& alpha, const std::vector<double>& eps, double tau) {
  if (!(tau > 0.0)) throw DomainError("temperature must be positive, got " + std::to_string(tau));
  if (alpha.rank() != 1 || alpha.numel() < 2) {
    throw ShapeError("branch logits must be a vector of at least two entries, got " + to_string(alpha.shape()));
  }
  if (eps.size() != static_cast<std::size_t>(alpha.numel())) throw ShapeError("noise length differs from branch count");
  std::vector<T> e(eps.begin(), eps.end());
  auto shifted = add(alpha, BasicTensor<T>(alpha.shape(), std::move(e)));
  return softmax(scale(shifted, static_cast<T>(1.0 / tau)), 0);
}

template <class T, class Rng>
BasicTensor<T> branch_weights(const BasicTensor<T>& alpha, const GumbelConfig& cfg, Rng& rng) {
  if (!(cfg.tau > 0.0)) throw DomainError("temperature must be positive, got " + std::to_string(cfg.tau));
  return branch_weights(alpha, sample_noise(static_cast<std::size_t>(alpha.numel()), cfg.noise, rng), cfg.tau);
}

/// Linear temperature schedule from `start` to `end` over `total` steps.
inline double anneal_tau(std::int64_t step, std::int64_t total, double start = 5.0, double end = 0.1) {
  if (total <= 1) return end;
  const double t = std::clamp(static_cast<double>(step) / static_cast<double>(total - 1), 0.0, 1.0);
  return start * (1.0 - t) + end * t;
}

}  // namespace effnas::supernet
