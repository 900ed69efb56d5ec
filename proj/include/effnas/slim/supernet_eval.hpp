#pragma once

#include "effnas/slim/slim.hpp"
#include "effnas/supernet/supernet.hpp"
#include "effnas/train/data.hpp"

namespace effnas::slim {

/// Scores a slimming state on the trained supernet without retraining:
/// pinned MetaPaths are forced one-hot, the rest mix noise-free at a low
/// temperature, and narrowed stages have their lowest-L1 channels masked.
class SupernetEvaluator : public AccuracyEvaluator {
 public:
  SupernetEvaluator(supernet::SuperNet<float>& sn, std::vector<train::Batch> eval, double tau = 0.1)
      : sn_(sn), eval_(std::move(eval)), tau_(tau) {
    if (eval_.empty()) throw DomainError("accuracy-drop evaluation needs a non-empty held-out set");
    for (int j = 0; j < supernet::kStages; ++j) order_[j] = sn_.channels_by_l1(j);
  }

  supernet::MixOptions options(const SlimState& s) const {
    supernet::MixOptions o;
    o.gumbel = {tau_, supernet::NoiseKind::none, 0};
    o.force = s.pinned;
    const auto& full = sn_.space().widths;
    for (int j = 0; j < supernet::kStages; ++j) {
      const auto cut = full[j] - s.choice.widths[j];
      if (cut <= 0) continue;
      auto& m = o.masks[j];
      m.assign(static_cast<std::size_t>(full[j]), 1.0f);
      for (std::int64_t k = 0; k < cut; ++k) m[static_cast<std::size_t>(order_[j][static_cast<std::size_t>(k)])] = 0.0f;
    }
    return o;
  }

  double accuracy(const SlimState& s) override {
    NoGradGuard ng;
    const auto opt = options(s);
    std::mt19937_64 unused(0);
    std::int64_t correct = 0, total = 0;
    for (const auto& b : eval_) {
      auto logits = sn_.forward(b.x, opt, unused, false);
      const auto k = logits.dim(1);
      const auto v = logits.data();
      for (std::size_t i = 0; i < b.labels.size(); ++i) {
        const auto row = v.subspan(i * static_cast<std::size_t>(k), static_cast<std::size_t>(k));
        const auto arg = std::max_element(row.begin(), row.end()) - row.begin();
        correct += arg == b.labels[i];
      }
      total += static_cast<std::int64_t>(b.labels.size());
    }
    ++calls_;
    return static_cast<double>(correct) / static_cast<double>(total);
  }

  int calls() const { return calls_; }

 private:
  supernet::SuperNet<float>& sn_;
  std::vector<train::Batch> eval_;
  double tau_;
  std::array<std::vector<std::int64_t>, supernet::kStages> order_;
  int calls_ = 0;
};

}  // namespace effnas::slim
