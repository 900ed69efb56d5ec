#pragma once

#include <fstream>
#include <functional>
#include <optional>

#include "effnas/arch/model.hpp"
#include "effnas/supernet/supernet.hpp"
#include "effnas/train/data.hpp"
#include "effnas/train/optim.hpp"

namespace effnas::train {

struct MetricRow {
  int epoch = 0;
  std::int64_t step = 0;
  double lr = 0, loss = 0, top1 = 0;
};

struct TrainConfig {
  int epochs = 20;
  std::int64_t batch_size = 64;
  double base_lr = scaled_lr(64);
  double min_lr = 1e-5;
  int warmup_epochs = 1;
  AdamWConfig adamw;
  std::uint64_t seed = 0;
  std::string checkpoint_path;  // written after every epoch when set
  std::string metrics_path;     // CSV rewritten after every epoch when set
  std::function<void(const MetricRow&)> on_epoch;  // progress hook
};

/// Extra knobs for joint weight and architecture training.
struct SupernetTrainConfig {
  TrainConfig base;
  double alpha_lr = 3e-3;
  double tau_start = 5.0, tau_end = 0.1;
  supernet::NoiseKind noise = supernet::NoiseKind::uniform_as_written;
};

/// One row per epoch: mean training loss and running training accuracy.
struct TrainLog {
  std::vector<MetricRow> rows;
};

inline constexpr const char* kMetricsHeader = "epoch,step,lr,loss,top1";

inline std::string metrics_csv(const TrainLog& log) {
  std::string out = std::string(kMetricsHeader) + "\n";
  char buf[160];
  for (const auto& r : log.rows) {
    std::snprintf(buf, sizeof buf, "%d,%lld,%.9g,%.9g,%.6f\n", r.epoch, static_cast<long long>(r.step), r.lr, r.loss,
                  r.top1);
    out += buf;
  }
  return out;
}

inline void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open '" + path + "' for writing");
  f << text;
  if (!f) throw Error("failed writing '" + path + "'");
}

/// Schedule for `cfg` over a training split of `samples` examples.
inline Schedule schedule_for(const TrainConfig& cfg, std::int64_t samples) {
  Schedule s;
  s.base_lr = cfg.base_lr;
  s.min_lr = cfg.min_lr;
  s.warmup_epochs = cfg.warmup_epochs;
  s.total_epochs = cfg.epochs;
  s.steps_per_epoch = (samples + cfg.batch_size - 1) / cfg.batch_size;
  validate(s);
  return s;
}

namespace detail {

inline std::int64_t count_correct(const Tensor& logits, const std::vector<int>& labels) {
  const auto k = static_cast<std::size_t>(logits.dim(1));
  const auto v = logits.data();
  std::int64_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto row = v.subspan(i * k, k);
    correct += std::max_element(row.begin(), row.end()) - row.begin() == labels[i];
  }
  return correct;
}

/// Parameters sharing one optimizer state and learning-rate rule.
struct Group {
  std::vector<Tensor> params;
  OptimState state;
  std::function<double(std::int64_t)> lr;  // step -> learning rate

  void step(std::int64_t global_step) {
    std::vector<std::vector<float>> grads;
    grads.reserve(params.size());
    for (auto& p : params) {
      auto g = p.grad();
      grads.emplace_back(g.begin(), g.end());
      p.zero_grad();
    }
    adamw_step<float>(params, grads, state, lr(global_step));
  }
};

/// Weight decay applies to matrices and kernels, not to norms or biases.
inline Group weight_group(const arch::NamedTensors<float>& named, const TrainConfig& cfg, const Schedule& s) {
  Group g;
  std::vector<double> decay;
  for (const auto& [n, t] : named) {
    g.params.push_back(t);
    decay.push_back(t.rank() >= 2 ? cfg.adamw.weight_decay : 0.0);
  }
  g.state = make_state<float>(g.params, cfg.adamw, decay);
  g.lr = [s](std::int64_t step) { return lr_at(step, s); };
  return g;
}

inline std::vector<Tensor> snapshot(const std::vector<Tensor>& params) {
  std::vector<Tensor> out;
  for (const auto& p : params) out.push_back(p.clone(false));
  return out;
}

inline void restore(std::vector<Tensor>& params, const std::vector<Tensor>& saved) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = params[i].mutable_data();
    auto src = saved[i].data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

/// Shared epoch loop. `forward(batch, step)` returns training-mode logits;
/// `checkpoint()` persists the model after a finished epoch. A non-finite
/// loss restores every tensor in `state` to the end of the last good epoch
/// and throws.
inline TrainLog fit(const Dataset& train, const TrainConfig& cfg, const Schedule& sched, std::vector<Group>& groups,
                    std::vector<Tensor> state, const std::function<Tensor(const Batch&, std::int64_t)>& forward,
                    const std::function<void()>& checkpoint) {
  if (train.size() == 0) throw DomainError("training split is empty");
  std::mt19937_64 order(cfg.seed ^ 0x5DEECE66DULL);
  TrainLog log;
  auto good = snapshot(state);
  std::int64_t step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double loss_sum = 0;
    std::int64_t correct = 0, seen = 0;
    for (const auto& b : batches(train, cfg.batch_size, &order)) {
      auto logits = forward(b, step);
      auto loss = cross_entropy(logits, b.labels);
      const double lv = static_cast<double>(loss.data()[0]);
      if (!std::isfinite(lv)) {
        restore(state, good);
        for (auto& g : groups)
          for (auto& p : g.params) p.zero_grad();
        throw NonFiniteError("training loss became non-finite at epoch " + std::to_string(epoch) + " step " +
                             std::to_string(step) + "; model restored to the end of epoch " +
                             std::to_string(epoch - 1) +
                             (cfg.checkpoint_path.empty() ? "" : ", last good checkpoint at " + cfg.checkpoint_path));
      }
      backward(loss);
      for (auto& g : groups) g.step(step);
      ++step;
      const auto n = static_cast<std::int64_t>(b.labels.size());
      loss_sum += lv * static_cast<double>(n);
      correct += count_correct(logits, b.labels);
      seen += n;
    }
    log.rows.push_back({epoch, step, lr_at(step - 1, sched), loss_sum / static_cast<double>(seen),
                        static_cast<double>(correct) / static_cast<double>(seen)});
    good = snapshot(state);
    if (checkpoint) checkpoint();
    if (cfg.on_epoch) cfg.on_epoch(log.rows.back());
    if (!cfg.metrics_path.empty()) write_file(cfg.metrics_path, metrics_csv(log));
  }
  return log;
}

inline std::vector<Tensor> all_tensors(const arch::NamedTensors<float>& named) {
  std::vector<Tensor> out;
  for (const auto& [n, t] : named) out.push_back(t);
  return out;
}

inline void check_classes(std::int64_t model_classes, const Dataset& d) {
  if (d.size() == 0) throw DomainError("evaluation split is empty");
  if (model_classes != d.classes) {
    throw DomainError("model head has " + std::to_string(model_classes) + " classes, data has " +
                      std::to_string(d.classes));
  }
}

}  // namespace detail

/// Jointly trains supernet weights and architecture logits with annealed
/// Gumbel-softmax mixing.
inline TrainLog train_supernet(supernet::SuperNet<float>& sn, const Dataset& train, const SupernetTrainConfig& cfg) {
  detail::check_classes(sn.space().classes, train);
  if (train.images.dim(2) != sn.space().resolution) {
    throw DomainError("data resolution " + std::to_string(train.images.dim(2)) + " differs from the supernet input " +
                      std::to_string(sn.space().resolution));
  }
  const auto sched = schedule_for(cfg.base, train.size());
  std::vector<detail::Group> groups;
  groups.push_back(detail::weight_group(sn.weight_parameters(), cfg.base, sched));
  detail::Group arch;
  arch.params = detail::all_tensors(sn.arch_parameters());
  arch.state = make_state<float>(arch.params, cfg.base.adamw, std::vector<double>(arch.params.size(), 0.0));
  arch.lr = [lr = cfg.alpha_lr](std::int64_t) { return lr; };
  groups.push_back(std::move(arch));
  std::mt19937_64 gumbel(cfg.base.seed ^ 0x9E3779B97F4A7C15ULL);
  const auto total = sched.total_steps();
  auto forward = [&](const Batch& b, std::int64_t step) {
    supernet::MixOptions o;
    o.gumbel.noise = cfg.noise;
    o.gumbel.tau = supernet::anneal_tau(step, total, cfg.tau_start, cfg.tau_end);
    return sn.forward(b.x, o, gumbel, true);
  };
  auto checkpoint = [&] {
    if (!cfg.base.checkpoint_path.empty()) save_checkpoint(cfg.base.checkpoint_path, sn.to_checkpoint());
  };
  std::vector<Tensor> state;
  sn.visit([&](const std::string&, Tensor& t, bool) { state.push_back(t); });
  return detail::fit(train, cfg.base, sched, groups, state, forward, checkpoint);
}

/// Trains an existing model in place.
inline TrainLog train_model(arch::Model<float>& m, const Dataset& train, const TrainConfig& cfg) {
  detail::check_classes(m.spec().classes, train);
  const auto sched = schedule_for(cfg, train.size());
  std::vector<detail::Group> groups;
  groups.push_back(detail::weight_group(m.parameters(), cfg, sched));
  auto forward = [&](const Batch& b, std::int64_t) { return m.forward(b.x, true); };
  auto checkpoint = [&] {
    if (!cfg.checkpoint_path.empty()) m.save(cfg.checkpoint_path);
  };
  return detail::fit(train, cfg, sched, groups, detail::all_tensors(m.tensors()), forward, checkpoint);
}

struct FinalResult {
  arch::Model<float> model;
  TrainLog log;
};

/// Trains `spec` from scratch.
inline FinalResult train_final(const arch::ArchSpec& spec, const Dataset& train, const TrainConfig& cfg) {
  auto m = arch::Model<float>::instantiate(spec, cfg.seed);
  auto log = train_model(m, train, cfg);
  return {std::move(m), std::move(log)};
}

/// Top-1 accuracy in inference mode.
inline double evaluate(arch::Model<float>& m, const Dataset& d, std::int64_t batch_size = 64) {
  detail::check_classes(m.spec().classes, d);
  NoGradGuard ng;
  std::int64_t correct = 0;
  for (const auto& b : batches(d, batch_size)) correct += detail::count_correct(m.forward(b.x, false), b.labels);
  return static_cast<double>(correct) / static_cast<double>(d.size());
}

/// Mean cross-entropy in inference mode.
inline double mean_loss(arch::Model<float>& m, const Dataset& d, std::int64_t batch_size = 64) {
  detail::check_classes(m.spec().classes, d);
  NoGradGuard ng;
  double sum = 0;
  for (const auto& b : batches(d, batch_size)) {
    sum += static_cast<double>(cross_entropy(m.forward(b.x, false), b.labels).data()[0]) *
           static_cast<double>(b.labels.size());
  }
  return sum / static_cast<double>(d.size());
}

/// Top-1 of the supernet under noise-free mixing at temperature `tau`.
inline double evaluate(supernet::SuperNet<float>& sn, const Dataset& d, double tau = 0.1,
                       std::int64_t batch_size = 64) {
  detail::check_classes(sn.space().classes, d);
  NoGradGuard ng;
  supernet::MixOptions o;
  o.gumbel = {tau, supernet::NoiseKind::none, 0};
  std::mt19937_64 unused(0);
  std::int64_t correct = 0;
  for (const auto& b : batches(d, batch_size)) correct += detail::count_correct(sn.forward(b.x, o, unused, false), b.labels);
  return static_cast<double>(correct) / static_cast<double>(d.size());
}

}  // namespace effnas::train
