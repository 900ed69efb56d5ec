#pragma once

#include "effnas/lut/bench.hpp"
#include "effnas/lut/space_keys.hpp"
#include "effnas/slim/supernet_eval.hpp"
#include "effnas/train/trainer.hpp"

namespace effnas::search {

/// Benchmark context matching the blocks of `s`.
inline lut::BenchContext bench_context(const supernet::SearchSpace& s) {
  return {lut::mb3d_dims(s), s.norm4d, s.activation};
}

/// Table covering every key slimming over `s` can reach: the deterministic
/// cost model when `synthetic`, otherwise host measurements.
inline lut::BuildResult build_space_table(const supernet::SearchSpace& s, bool synthetic,
                                          const lut::BenchConfig& bench = {}) {
  const auto keys = lut::reachable_keys(s);
  if (synthetic) return {lut::synthetic_table(keys, lut::mb3d_dims(s)), {}, {}};
  return lut::build_table(keys, bench, bench_context(s));
}

/// Median single-image inference time of `spec` with BN folded.
inline lut::LatencyEntry measure_forward(const arch::ArchSpec& spec, const lut::BenchConfig& cfg,
                                         std::uint64_t seed = 0) {
  NoGradGuard ng;
  auto m = arch::Model<float>::instantiate(spec, seed);
  m.fold_bn();
  std::mt19937_64 rng(seed ^ 0xF0F0F0F0ULL);
  auto x = Tensor::randn({cfg.batch, 3, spec.resolution, spec.resolution}, rng);
  return lut::time_callable([&] { (void)m.forward(x, false); }, cfg).entry;
}

/// Same as `measure_forward` for an already trained model; BN is folded on
/// a copy.
inline lut::LatencyEntry measure_forward(arch::Model<float>& trained, const lut::BenchConfig& cfg,
                                         std::uint64_t seed = 0) {
  NoGradGuard ng;
  auto m = arch::Model<float>::from_checkpoint(trained.to_checkpoint());
  m.fold_bn();
  std::mt19937_64 rng(seed ^ 0xF0F0F0F0ULL);
  const auto r = m.spec().resolution;
  auto x = Tensor::randn({cfg.batch, 3, r, r}, rng);
  return lut::time_callable([&] { (void)m.forward(x, false); }, cfg).entry;
}

struct SlimRequest {
  std::optional<double> target_s;  // absolute latency budget
  double target_fraction = 0.6;    // of the initial estimate, used without target_s
  int max_iters = 200;
  supernet::ImportanceTransform transform = supernet::ImportanceTransform::softplus;
  double eval_tau = 0.1;
  std::int64_t eval_batch = 64;
};

struct SlimOutcome {
  slim::SlimResult result;
  arch::ArchSpec initial_spec;
  double target_s = 0;
  std::int64_t minimal_ps = 0;
  int evaluations = 0;
};

/// Estimated latency of the smallest network the slimming actions can reach.
inline std::int64_t minimal_estimate_ps(const supernet::SearchSpace& s, const lut::LatencyTable& t) {
  supernet::SubnetChoice c;
  c.kinds.assign(static_cast<std::size_t>(s.num_paths()), supernet::Candidate::identity);
  c.widths.fill(16);
  return lut::estimate_latency_ps(supernet::derive_arch(s, c), t);
}

/// Greedy slimming from the supernet's initial choice, scoring accuracy drop
/// on `held_out` with the shared supernet weights.
inline SlimOutcome slim_supernet(supernet::SuperNet<float>& sn, const lut::LatencyTable& table,
                                 const train::Dataset& held_out, const SlimRequest& req) {
  SlimOutcome out;
  const auto& s = sn.space();
  const auto start = slim::SlimState::from_choice(sn.initial_choice());
  out.initial_spec = supernet::derive_arch(s, start.choice);
  const auto initial_ps = lut::estimate_latency_ps(out.initial_spec, table);
  out.target_s = req.target_s ? *req.target_s : req.target_fraction * static_cast<double>(initial_ps) * 1e-12;
  out.minimal_ps = minimal_estimate_ps(s, table);
  train::detail::check_classes(s.classes, held_out);
  slim::SupernetEvaluator eval(sn, train::batches(held_out, req.eval_batch), req.eval_tau);
  slim::SlimConfig cfg;
  cfg.target_s = out.target_s;
  cfg.max_iters = req.max_iters;
  cfg.transform = req.transform;
  out.result = slim::run_slim(s, sn.alphas(), start, table, eval, cfg);
  out.evaluations = eval.calls();
  return out;
}

}  // namespace effnas::search
