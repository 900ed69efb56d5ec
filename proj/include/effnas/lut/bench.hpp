#pragma once

#include <sched.h>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <random>
#include <thread>

#include "effnas/lut/table.hpp"

namespace effnas::lut {

struct BenchConfig {
  int warmup_iters = 5;
  int measure_iters = 30;
  int batch = 1;
  int repeat_sets = 1;
};

struct BenchResult {
  LatencyEntry entry;
  bool coarse = false;  // median within 1000 timer ticks
};

struct Statistic {
  double median = 0, mad = 0;
};

inline Statistic median_mad(std::vector<double> v) {
  if (v.empty()) throw DomainError("no samples");
  auto med = [](std::vector<double>& x) {
    std::sort(x.begin(), x.end());
    const auto n = x.size();
    return n % 2 ? x[n / 2] : 0.5 * (x[n / 2 - 1] + x[n / 2]);
  };
  Statistic s;
  s.median = med(v);
  for (auto& x : v) x = std::abs(x - s.median);
  s.mad = med(v);
  return s;
}

/// Times `fn` after warmup; samples from all repeat sets are pooled.
inline BenchResult time_callable(const std::function<void()>& fn, const BenchConfig& cfg) {
  if (cfg.measure_iters < 1 || cfg.repeat_sets < 1) throw DomainError("benchmark needs at least one timed iteration");
  if (cfg.warmup_iters < 0 || cfg.batch < 1) throw DomainError("benchmark warmup must be >= 0 and batch >= 1");
  using clock = std::chrono::steady_clock;
  std::vector<double> samples;
  for (int r = 0; r < cfg.repeat_sets; ++r) {
    for (int i = 0; i < cfg.warmup_iters; ++i) fn();
    for (int i = 0; i < cfg.measure_iters; ++i) {
      const auto t0 = clock::now();
      fn();
      samples.push_back(std::chrono::duration<double>(clock::now() - t0).count());
    }
  }
  const auto st = median_mad(samples);
  const double tick = static_cast<double>(clock::period::num) / clock::period::den;
  return {{st.median, st.mad, static_cast<std::int64_t>(samples.size())}, st.median < 1000 * tick};
}

/// Network settings that affect block cost but are not part of the key.
struct BenchContext {
  Mb3dDims mb3d;
  nn::Norm4dKind norm4d = nn::Norm4dKind::bn;
  Activation activation = Activation::gelu;
};

/// Times one unit with random weights and input, single-threaded, without
/// autograd, with BN folded into the preceding convolutions.
inline BenchResult benchmark_block(const LatencyKey& k, const BenchConfig& cfg, const BenchContext& ctx = {}) {
  if (k.width < 16 || k.width % 16 != 0) throw DomainError("benchmark width must be a positive multiple of 16");
  if (k.resolution < 1 || k.exp < 1) throw DomainError("benchmark resolution and exp must be positive");
  if (cfg.measure_iters < 1) throw DomainError("benchmark needs at least one timed iteration");
  NoGradGuard ng;
  std::mt19937_64 rng(0x5eed ^ (static_cast<std::uint64_t>(k.kind) << 48) ^ (static_cast<std::uint64_t>(k.width) << 32) ^
                      (static_cast<std::uint64_t>(k.resolution) << 16) ^ static_cast<std::uint64_t>(k.exp));
  const std::int64_t b = cfg.batch, c = k.width, s = k.resolution;
  std::function<void()> fn;
  switch (k.kind) {
    case UnitKind::mb4d: {
      auto p = nn::make_mb4d<float>(c, static_cast<int>(k.exp), ctx.norm4d, rng);
      nn::fold(p);
      auto x = Tensor::randn({b, c, s, s}, rng);
      fn = [p, x, act = ctx.activation]() mutable { (void)nn::mb4d_forward(x, p, act, false); };
      break;
    }
    case UnitKind::mb3d: {
      auto p = nn::make_mb3d<float>(c, ctx.mb3d.heads, ctx.mb3d.d_qk, ctx.mb3d.d_v, static_cast<int>(k.exp), s * s, rng);
      auto x = Tensor::randn({b, s * s, c}, rng);
      fn = [p, x, act = ctx.activation]() mutable { (void)nn::mb3d_forward(x, p, act); };
      break;
    }
    case UnitKind::embed: {
      auto p = nn::make_embed<float>(k.exp, c, rng);
      nn::fold(p);
      auto x = Tensor::randn({b, k.exp, 2 * s, 2 * s}, rng);
      fn = [p, x]() mutable { (void)nn::embed_forward(x, p, false); };
      break;
    }
    case UnitKind::stem: {
      auto p = nn::make_stem<float>(k.exp, c, rng);
      nn::fold(p);
      auto x = Tensor::randn({b, 3, s, s}, rng);
      fn = [p, x, act = ctx.activation]() mutable { (void)nn::patch_embed(x, p, act, false); };
      break;
    }
    case UnitKind::head: {
      auto p = nn::make_head<float>(c, k.exp, rng);
      auto x = Tensor::randn({b, s * s, c}, rng);
      fn = [p, x]() mutable { (void)nn::head_forward(x, p); };
      break;
    }
  }
  return time_callable(fn, cfg);
}

/// Reads EFFNAS_NUM_THREADS (must be 1 when set) and EFFNAS_BENCH_CPU
/// (core index to pin the calling thread to). Returns a short description.
inline std::string apply_bench_environment() {
  if (const char* n = std::getenv("EFFNAS_NUM_THREADS"); n && std::string(n) != "1") {
    throw DomainError(std::string("latency tables are measured single-threaded; EFFNAS_NUM_THREADS=") + n);
  }
  const char* cpu = std::getenv("EFFNAS_BENCH_CPU");
  if (!cpu) return "unpinned";
  char* end = nullptr;
  const long idx = std::strtol(cpu, &end, 10);
  if (end == cpu || *end != '\0' || idx < 0 || idx >= CPU_SETSIZE) {
    throw DomainError(std::string("EFFNAS_BENCH_CPU must be a core index, got '") + cpu + "'");
  }
  cpu_set_t set;
  CPU_ZERO(&set);
  CPU_SET(static_cast<int>(idx), &set);
  if (sched_setaffinity(0, sizeof set, &set) != 0) throw DomainError("cannot pin to CPU " + std::string(cpu));
  return "pinned to cpu " + std::to_string(idx);
}

/// Identifies the measuring host: CPU model, hardware threads and compiler.
inline std::string host_fingerprint() {
  std::string model = "unknown-cpu";
  std::ifstream f("/proc/cpuinfo");
  for (std::string line; std::getline(f, line);) {
    if (line.rfind("model name", 0) == 0) {
      model = line.substr(line.find(':') + 2);
      break;
    }
  }
  std::string fp = model + ";threads=" + std::to_string(std::thread::hardware_concurrency()) + ";gcc-" +
                   std::to_string(__GNUC__) + "." + std::to_string(__GNUC_MINOR__);
  std::replace(fp.begin(), fp.end(), ',', ' ');
  return fp;
}

struct BuildResult {
  LatencyTable table;
  std::vector<std::string> errors;  // one per failed key
  std::vector<std::string> coarse;  // keys whose median is near timer resolution
};

/// Benchmarks every key. A failing key is reported and skipped so the
/// caller receives a partial table.
inline BuildResult build_table(const std::vector<LatencyKey>& keys, const BenchConfig& cfg, const BenchContext& ctx = {}) {
  if (keys.empty()) throw DomainError("latency grid must be non-empty");
  if (cfg.measure_iters < 1) throw DomainError("benchmark needs at least one timed iteration");
  BuildResult r;
  r.table.fingerprint = host_fingerprint();
  for (const auto& k : keys) {
    try {
      auto b = benchmark_block(k, cfg, ctx);
      r.table.insert(k, b.entry);
      if (b.coarse) r.coarse.push_back(to_string(k));
    } catch (const Error& e) {
      r.errors.push_back(to_string(k) + ": " + e.what());
    }
  }
  return r;
}

}  // namespace effnas::lut
