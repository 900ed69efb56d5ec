#pragma once

#include <cstdio>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "effnas/lut/table.hpp"
#include "effnas/supernet/space.hpp"

namespace effnas::slim {

using supernet::Candidate;
using supernet::SearchSpace;
using supernet::SubnetChoice;

/// Declaration order is the tie-break order between equally scored actions.
enum class ActionKind { depth, width, mb3d };

inline const char* to_string(ActionKind k) {
  switch (k) {
    case ActionKind::depth: return "DR";
    case ActionKind::width: return "WR";
    case ActionKind::mb3d: return "MR";
  }
  return "?";
}
using effnas::to_string;

/// DR removes MetaPath `path`; WR narrows `stage` by 16 channels; MR turns
/// the first remaining MB3D (`path`) into an MB4D.
struct SlimAction {
  ActionKind kind = ActionKind::depth;
  int path = -1;
  int stage = -1;
  bool operator==(const SlimAction&) const = default;
};

inline std::string describe(const SlimAction& a, const SearchSpace& s) {
  std::string out = to_string(a.kind);
  if (a.kind == ActionKind::width) return out + "(stage " + std::to_string(a.stage) + ")";
  const auto r = s.ref(a.path);
  return out + "(path " + std::to_string(a.path) + " = stage " + std::to_string(r.stage) + " block " +
         std::to_string(r.index) + ")";
}

/// Current subnet plus the branch each MetaPath is pinned to by earlier
/// actions (unpinned paths keep their learned mixture when evaluated).
struct SlimState {
  SubnetChoice choice;
  std::vector<std::optional<Candidate>> pinned;

  static SlimState from_choice(SubnetChoice c) {
    SlimState s;
    s.pinned.assign(c.kinds.size(), std::nullopt);
    s.choice = std::move(c);
    return s;
  }
  std::vector<bool> active() const {
    std::vector<bool> a(choice.kinds.size());
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = choice.kinds[i] != Candidate::identity;
    return a;
  }
  bool operator==(const SlimState&) const = default;
};

inline SlimState apply_action(SlimState s, const SlimAction& a) {
  switch (a.kind) {
    case ActionKind::depth:
      s.choice.kinds.at(static_cast<std::size_t>(a.path)) = Candidate::identity;
      s.pinned[static_cast<std::size_t>(a.path)] = Candidate::identity;
      break;
    case ActionKind::width:
      if (s.choice.widths.at(static_cast<std::size_t>(a.stage)) - 16 < 16) throw DomainError("stage width would drop below 16");
      s.choice.widths[static_cast<std::size_t>(a.stage)] -= 16;
      break;
    case ActionKind::mb3d:
      if (s.choice.kinds.at(static_cast<std::size_t>(a.path)) != Candidate::mb3d) throw DomainError("MR target is not an MB3D");
      s.choice.kinds[static_cast<std::size_t>(a.path)] = Candidate::mb4d;
      s.pinned[static_cast<std::size_t>(a.path)] = Candidate::mb4d;
      break;
  }
  return s;
}

/// Up to three actions: DR on the least important kept MetaPath, WR on the
/// least important stage that can still shrink, MR on the first MB3D. Ties
/// go to the lowest stage, then the lowest block.
inline std::vector<SlimAction> candidate_actions(const SlimState& s, const supernet::Importance& imp) {
  std::vector<SlimAction> out;
  int dr = -1;
  for (std::size_t p = 0; p < s.choice.kinds.size(); ++p) {
    if (s.choice.kinds[p] == Candidate::identity) continue;
    if (dr < 0 || imp.per_path[p] < imp.per_path[static_cast<std::size_t>(dr)]) dr = static_cast<int>(p);
  }
  if (dr >= 0) out.push_back({ActionKind::depth, dr, -1});
  int wr = -1;
  for (int j = 0; j < supernet::kStages; ++j) {
    if (s.choice.widths[static_cast<std::size_t>(j)] - 16 < 16) continue;
    if (wr < 0 || imp.per_stage[static_cast<std::size_t>(j)] < imp.per_stage[static_cast<std::size_t>(wr)]) wr = j;
  }
  if (wr >= 0) out.push_back({ActionKind::width, -1, wr});
  for (std::size_t p = 0; p < s.choice.kinds.size(); ++p) {
    if (s.choice.kinds[p] == Candidate::mb3d) {
      out.push_back({ActionKind::mb3d, static_cast<int>(p), -1});
      break;
    }
  }
  return out;
}

/// Accuracy of the network a slimming state describes, in [0, 1].
class AccuracyEvaluator {
 public:
  virtual ~AccuracyEvaluator() = default;
  virtual double accuracy(const SlimState& s) = 0;
};

/// Deterministic stand-in for a trained supernet: every removed piece costs
/// accuracy in proportion to a fixed importance. Used to test the search
/// logic independently of training noise.
class ProxyEvaluator : public AccuracyEvaluator {
 public:
  ProxyEvaluator(SearchSpace space, supernet::Importance imp, double depth_cost = 0.01, double width_cost = 0.002,
                 double mb3d_cost = 0.004)
      : space_(std::move(space)), imp_(std::move(imp)), kd_(depth_cost), kw_(width_cost), km_(mb3d_cost) {}

  double accuracy(const SlimState& s) override {
    double loss = 0;
    for (std::size_t p = 0; p < s.choice.kinds.size(); ++p) {
      if (s.pinned[p] == Candidate::identity) loss += kd_ * imp_.per_path[p];
      if (s.pinned[p] == Candidate::mb4d) loss += km_ * imp_.per_path[p];
    }
    for (std::size_t j = 0; j < supernet::kStages; ++j) {
      loss += kw_ * imp_.per_stage[j] * static_cast<double>(space_.widths[j] - s.choice.widths[j]) / 16.0;
    }
    return std::clamp(1.0 - loss, 0.0, 1.0);
  }

 private:
  SearchSpace space_;
  supernet::Importance imp_;
  double kd_, kw_, km_;
};

struct SlimConfig {
  double target_s = 0;
  int max_iters = 200;
  supernet::ImportanceTransform transform = supernet::ImportanceTransform::softplus;
};

struct Scored {
  SlimAction action;
  double drop = 0;
  std::int64_t saved_ps = 0;
  double score = 0;
  bool excluded = false;
};

/// Per-latency accuracy drop in fraction per millisecond.
inline double score_action(double drop, std::int64_t saved_ps) {
  if (saved_ps <= 0) throw DomainError("action saves no latency");
  return drop / (static_cast<double>(saved_ps) * 1e-9);
}

struct SlimStep {
  int step = 0;
  SlimAction action;
  supernet::Importance importance;
  std::int64_t est_before_ps = 0, est_after_ps = 0;
  double acc_before = 0, acc_after = 0, score = 0;
  std::vector<Scored> considered;
};

struct SlimResult {
  arch::ArchSpec spec;
  SlimState state;
  std::vector<SlimStep> trace;
  std::int64_t initial_ps = 0, final_ps = 0;
  bool reached = false;
  std::vector<std::string> diagnostics;
};

/// Greedy latency-driven slimming: while the estimate exceeds the target,
/// score each candidate action by accuracy drop per millisecond saved and
/// execute the cheapest one.
inline SlimResult run_slim(const SearchSpace& space, const std::vector<std::vector<double>>& alphas, SlimState state,
                       const lut::LatencyTable& table, AccuracyEvaluator& eval, const SlimConfig& cfg) {
  if (!(cfg.target_s > 0)) throw DomainError("latency target must be positive");
  if (cfg.max_iters < 0) throw DomainError("max_iters must be non-negative");
  const std::int64_t target_ps = lut::to_ps(cfg.target_s);
  SlimResult r;
  auto est = [&](const SlimState& s) { return lut::estimate_latency_ps(supernet::derive_arch(space, s.choice), table); };
  std::int64_t cur = est(state);
  r.initial_ps = cur;
  std::optional<double> base;
  while (cur > target_ps) {
    if (static_cast<int>(r.trace.size()) >= cfg.max_iters) {
      r.diagnostics.push_back("stopped after max_iters=" + std::to_string(cfg.max_iters) + " steps");
      break;
    }
    const auto imp = supernet::importance_scores(space, alphas, cfg.transform, state.active());
    const auto cands = candidate_actions(state, imp);
    if (cands.empty()) {
      r.diagnostics.push_back("target unreachable: minimal network estimates " + lut::format_double(cur * 1e-12) + " s");
      break;
    }
    if (!base) base = eval.accuracy(state);
    SlimStep step;
    step.step = static_cast<int>(r.trace.size()) + 1;
    step.importance = imp;
    step.est_before_ps = cur;
    step.acc_before = *base;
    std::optional<std::size_t> best;
    std::vector<SlimState> next_states;
    std::vector<double> next_acc;
    for (const auto& a : cands) {
      Scored sc{a};
      auto next = apply_action(state, a);
      sc.saved_ps = cur - est(next);
      next_states.push_back(next);
      if (sc.saved_ps <= 0) {
        sc.excluded = true;
        next_acc.push_back(0);
        r.diagnostics.push_back("step " + std::to_string(step.step) + ": " + describe(a, space) +
                                " excluded, it saves no latency");
        step.considered.push_back(sc);
        continue;
      }
      next_acc.push_back(eval.accuracy(next));
      sc.drop = *base - next_acc.back();
      sc.score = score_action(sc.drop, sc.saved_ps);
      step.considered.push_back(sc);
      if (!best || sc.score < step.considered[*best].score) best = step.considered.size() - 1;
    }
    if (!best) {
      r.diagnostics.push_back("target unreachable: no remaining action reduces the estimate");
      break;
    }
    const auto& chosen = step.considered[*best];
    step.action = chosen.action;
    step.score = chosen.score;
    state = next_states[*best];
    step.acc_after = next_acc[*best];
    step.est_after_ps = cur - chosen.saved_ps;
    cur = step.est_after_ps;
    base = step.acc_after;
    r.trace.push_back(std::move(step));
  }
  r.state = state;
  r.spec = supernet::derive_arch(space, state.choice);
  r.final_ps = cur;
  r.reached = cur <= target_ps;
  return r;
}

// ---------------------------------------------------------------------------
// Trace output
// ---------------------------------------------------------------------------

inline arch::Json action_json(const SlimAction& a, const SearchSpace& s) {
  arch::Json j;
  j["kind"] = to_string(a.kind);
  if (a.kind == ActionKind::width) {
    j["stage"] = a.stage;
  } else {
    j["path"] = a.path;
    j["stage"] = s.ref(a.path).stage;
    j["block"] = s.ref(a.path).index;
  }
  return j;
}

/// One JSON object per step, one step per line.
inline std::string trace_jsonl(const SlimResult& r, const SearchSpace& s) {
  std::string out;
  for (const auto& st : r.trace) {
    arch::Json j;
    j["step"] = st.step;
    j["action"] = action_json(st.action, s);
    j["est_before_ps"] = st.est_before_ps;
    j["est_after_ps"] = st.est_after_ps;
    j["acc_before"] = st.acc_before;
    j["acc_after"] = st.acc_after;
    j["score_per_ms"] = st.score;
    j["importance"] = {{"per_path", st.importance.per_path}, {"per_stage", st.importance.per_stage}};
    arch::Json cands = arch::Json::array();
    for (const auto& c : st.considered) {
      cands.push_back({{"action", action_json(c.action, s)},
                       {"drop", c.drop},
                       {"saved_ps", c.saved_ps},
                       {"score_per_ms", c.score},
                       {"excluded", c.excluded}});
    }
    j["candidates"] = cands;
    out += j.dump() + "\n";
  }
  return out;
}

inline std::string trace_table(const SlimResult& r, const SearchSpace& s) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-5s %-32s %12s %12s %9s %9s %12s\n", "step", "action", "est_before_ms", "est_after_ms",
                "acc_bef", "acc_aft", "score/ms");
  out += buf;
  for (const auto& st : r.trace) {
    std::snprintf(buf, sizeof buf, "%-5d %-32s %12.4f %12.4f %9.4f %9.4f %12.5f\n", st.step,
                  describe(st.action, s).c_str(), st.est_before_ps * 1e-9, st.est_after_ps * 1e-9, st.acc_before,
                  st.acc_after, st.score);
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "initial %.4f ms -> final %.4f ms (%s)\n", r.initial_ps * 1e-9, r.final_ps * 1e-9,
                r.reached ? "target met" : "target not met");
  out += buf;
  return out;
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path);
  f << text;
  if (!f) throw Error("write failed for " + path);
}

}  // namespace effnas::slim
