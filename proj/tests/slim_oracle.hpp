#pragma once

// Exhaustive reference for the greedy slimming search on the synthetic cost
// model. The action tree is expanded to a fixed depth with its own state
// bookkeeping, latency sum and importance arithmetic; the best-first path
// through the expanded tree is the expected greedy sequence.

#include <memory>
#include <random>

#include "effnas/lut/space_keys.hpp"
#include "effnas/slim/slim.hpp"

namespace slimoracle {

using namespace effnas;

struct HandSet {
  supernet::SearchSpace space;
  std::vector<double> importance;  // per MetaPath
  int initial_3d = 2;
  double kd = 0.01, kw = 0.002, km = 0.004;

  std::vector<std::vector<double>> alphas() const {
    std::vector<std::vector<double>> a;
    for (int p = 0; p < space.num_paths(); ++p) {
      const double v = importance[static_cast<std::size_t>(p)];
      if (supernet::allows_3d(space.ref(p).stage)) {
        a.push_back({v / 2, v / 2, 1.0});
      } else {
        a.push_back({v, 1.0});
      }
    }
    return a;
  }
};

inline HandSet random_handset(std::mt19937_64& rng) {
  HandSet h;
  h.space = supernet::SearchSpace::from_arch(arch::preset("toy"));
  std::uniform_int_distribution<int> q(2, 12);
  for (int p = 0; p < h.space.num_paths(); ++p) h.importance.push_back(0.25 * q(rng));
  h.initial_3d = std::uniform_int_distribution<int>(0, h.space.paths_allowing_3d())(rng);
  return h;
}

enum Kind { K4 = 0, K3 = 1, KI = 2 };

struct Node {
  std::vector<int> kind;
  std::vector<int> dropped, converted;  // 0/1 per path
  std::array<std::int64_t, 4> width{};
};

struct Move {
  int type;  // 0 DR, 1 WR, 2 MR
  int target;
};

struct Oracle {
  HandSet h;
  lut::Mb3dDims dims;

  std::int64_t unit(const lut::LatencyKey& k) const { return lut::to_ps(lut::synthetic_entry(k, dims).median_s); }

  std::int64_t latency(const Node& n) const {
    const auto& s = h.space;
    std::int64_t t = unit({lut::UnitKind::stem, n.width[0], s.resolution, s.stem[0]});
    int p = 0;
    for (int j = 0; j < 4; ++j) {
      const auto side = s.resolution / (4 << j);
      if (j > 0) t += unit({lut::UnitKind::embed, n.width[j], side, n.width[j - 1]});
      for (int i = 0; i < s.depths[j]; ++i, ++p) {
        if (n.kind[p] == K4) t += unit({lut::UnitKind::mb4d, n.width[j], side, s.exp});
        if (n.kind[p] == K3) t += unit({lut::UnitKind::mb3d, n.width[j], side, s.exp});
      }
    }
    t += unit({lut::UnitKind::head, n.width[3], s.resolution / 32, s.classes});
    return t;
  }

  double accuracy(const Node& n) const {
    double loss = 0;
    std::array<double, 4> stage_full{};
    int p = 0;
    for (int j = 0; j < 4; ++j)
      for (int i = 0; i < h.space.depths[j]; ++i, ++p) stage_full[j] += h.importance[p];
    // A dropped path costs its removal penalty only, even if it was
    // converted earlier.
    for (std::size_t q = 0; q < n.kind.size(); ++q) {
      if (n.dropped[q]) {
        loss += h.kd * h.importance[q];
      } else if (n.converted[q]) {
        loss += h.km * h.importance[q];
      }
    }
    for (int j = 0; j < 4; ++j) loss += h.kw * stage_full[j] * static_cast<double>(h.space.widths[j] - n.width[j]) / 16.0;
    return std::clamp(1.0 - loss, 0.0, 1.0);
  }

  std::vector<Move> moves(const Node& n) const {
    std::vector<Move> out;
    int best = -1;
    for (std::size_t q = 0; q < n.kind.size(); ++q)
      if (n.kind[q] != KI && (best < 0 || h.importance[q] < h.importance[best])) best = static_cast<int>(q);
    if (best >= 0) out.push_back({0, best});
    std::array<double, 4> stage{};
    int p = 0;
    for (int j = 0; j < 4; ++j)
      for (int i = 0; i < h.space.depths[j]; ++i, ++p)
        if (n.kind[p] != KI) stage[j] += h.importance[p];
    int wj = -1;
    for (int j = 0; j < 4; ++j)
      if (n.width[j] >= 32 && (wj < 0 || stage[j] < stage[wj])) wj = j;
    if (wj >= 0) out.push_back({1, wj});
    for (std::size_t q = 0; q < n.kind.size(); ++q)
      if (n.kind[q] == K3) {
        out.push_back({2, static_cast<int>(q)});
        break;
      }
    return out;
  }

  Node apply(Node n, const Move& m) const {
    if (m.type == 0) {
      n.kind[m.target] = KI;
      n.dropped[m.target] = 1;
      n.converted[m.target] = 0;
    } else if (m.type == 1) {
      n.width[m.target] -= 16;
    } else {
      n.kind[m.target] = K4;
      n.converted[m.target] = 1;
    }
    return n;
  }

  struct TreeNode {
    Node state;
    std::int64_t lat = 0;
    double acc = 0;
    std::vector<std::pair<Move, std::unique_ptr<TreeNode>>> kids;
  };

  Node root() const {
    Node n;
    const int paths = h.space.num_paths();
    n.kind.assign(paths, K4);
    for (int i = 0; i < h.initial_3d; ++i) n.kind[paths - 1 - i] = K3;
    n.dropped.assign(paths, 0);
    n.converted.assign(paths, 0);
    for (int j = 0; j < 4; ++j) n.width[j] = h.space.widths[j];
    return n;
  }

  std::unique_ptr<TreeNode> expand(const Node& n, int depth, std::int64_t target) const {
    auto t = std::make_unique<TreeNode>();
    t->state = n;
    t->lat = latency(n);
    t->acc = accuracy(n);
    if (depth == 0 || t->lat <= target) return t;
    for (const auto& m : moves(n)) t->kids.emplace_back(m, expand(apply(n, m), depth - 1, target));
    return t;
  }

  /// Best-first walk through the fully expanded tree: at every node take the
  /// child with the lowest drop per millisecond saved; ties keep the earlier
  /// move. Children that save nothing are skipped.
  std::vector<Move> best_first(int depth, std::int64_t target, std::vector<std::int64_t>* lats = nullptr) const {
    auto tree = expand(root(), depth, target);
    std::vector<Move> seq;
    const TreeNode* cur = tree.get();
    if (lats) lats->push_back(cur->lat);
    while (!cur->kids.empty()) {
      const TreeNode* pick = nullptr;
      Move pm{};
      double best = 0;
      for (const auto& [m, kid] : cur->kids) {
        const auto saved = cur->lat - kid->lat;
        if (saved <= 0) continue;
        const double score = (cur->acc - kid->acc) / (static_cast<double>(saved) * 1e-9);
        if (!pick || score < best) {
          pick = kid.get();
          pm = m;
          best = score;
        }
      }
      if (!pick) break;
      seq.push_back(pm);
      cur = pick;
      if (lats) lats->push_back(cur->lat);
    }
    return seq;
  }

  std::int64_t minimal_latency() const {
    Node n = root();
    for (auto& k : n.kind) k = KI;
    for (auto& w : n.width) w = 16;
    return latency(n);
  }
};

inline Move to_move(const slim::SlimAction& a) {
  switch (a.kind) {
    case slim::ActionKind::depth: return {0, a.path};
    case slim::ActionKind::width: return {1, a.stage};
    case slim::ActionKind::mb3d: return {2, a.path};
  }
  return {-1, -1};
}

struct Comparison {
  bool sequence_match = true;
  bool strictly_decreasing = true;
  bool budget_ok = true;
  std::string detail;
};

/// Runs the library search and the oracle on one hand-set configuration and
/// a target set at `fraction` of the initial estimate.
inline Comparison compare(const HandSet& h, double fraction, int depth, std::string* trace_out = nullptr) {
  Comparison c;
  Oracle o{h, lut::mb3d_dims(h.space)};
  auto table = lut::synthetic_table(lut::reachable_keys(h.space), o.dims);
  auto state = slim::SlimState::from_choice(supernet::SubnetChoice::with_last_3d(h.space, h.initial_3d));
  const auto initial = lut::estimate_latency_ps(supernet::derive_arch(h.space, state.choice), table);
  const std::int64_t target_ps = static_cast<std::int64_t>(fraction * static_cast<double>(initial));
  supernet::Importance imp = supernet::importance_scores(h.space, h.alphas(), supernet::ImportanceTransform::raw);
  slim::ProxyEvaluator eval(h.space, imp, h.kd, h.kw, h.km);
  slim::SlimConfig cfg;
  cfg.target_s = static_cast<double>(target_ps) * 1e-12;
  cfg.transform = supernet::ImportanceTransform::raw;
  auto full = slim::run_slim(h.space, h.alphas(), state, table, eval, cfg);
  if (trace_out) *trace_out = slim::trace_jsonl(full, h.space);
  const auto tps = lut::to_ps(cfg.target_s);
  for (std::size_t i = 0; i < full.trace.size(); ++i) {
    const auto& st = full.trace[i];
    if (!(st.est_after_ps < st.est_before_ps)) c.strictly_decreasing = false;
    if (i > 0 && st.est_before_ps != full.trace[i - 1].est_after_ps) c.strictly_decreasing = false;
  }
  const bool reachable = o.minimal_latency() <= tps;
  if (reachable && !(full.reached && full.final_ps <= tps)) c.budget_ok = false;
  if (!arch::is_valid(full.spec)) c.budget_ok = false;
  std::vector<std::int64_t> lats;
  const auto expect = o.best_first(depth, tps, &lats);
  const auto n = std::min<std::size_t>(static_cast<std::size_t>(depth), full.trace.size());
  if (expect.size() != n) {
    c.sequence_match = false;
    c.detail = "length " + std::to_string(n) + " vs oracle " + std::to_string(expect.size());
  }
  for (std::size_t i = 0; i < std::min(n, expect.size()); ++i) {
    const auto got = to_move(full.trace[i].action);
    if (got.type != expect[i].type || got.target != expect[i].target) {
      c.sequence_match = false;
      c.detail = "step " + std::to_string(i + 1) + " differs";
      break;
    }
    if (full.trace[i].est_after_ps != lats[i + 1]) {
      c.sequence_match = false;
      c.detail = "latency at step " + std::to_string(i + 1) + " differs";
      break;
    }
  }
  return c;
}

}  // namespace slimoracle
