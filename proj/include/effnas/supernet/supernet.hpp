#pragma once

#include <optional>
#include <random>

#include "effnas/arch/model.hpp"
#include "effnas/supernet/gumbel.hpp"
#include "effnas/supernet/space.hpp"

namespace effnas::supernet {

/// Deep copy of a parameter record; trainable tensors keep requires_grad.
template <class T, class P>
P deep_clone(const P& p) {
  P out = p;
  nn::visit<T>("", out, [](const std::string&, BasicTensor<T>& t, bool buffer) { t = t.clone(!buffer); });
  return out;
}

template <class T>
struct MetaPath {
  PathRef ref;
  std::vector<Candidate> cands;
  BasicTensor<T> alpha;  // one logit per candidate
  nn::MB4DParams<T> mb4d;
  std::optional<nn::MB3DParams<T>> mb3d;
};

/// Per-call mixing controls. `force[p]` pins MetaPath p to one branch (the
/// branch output is used directly); `masks[j]` zeroes channels of stage j
/// at stage entry and after every MetaPath.
struct MixOptions {
  GumbelConfig gumbel;
  std::vector<std::optional<Candidate>> force;
  std::array<std::vector<float>, kStages> masks;
};

/// Single-width supernet of MetaPaths with shared block weights.
template <class T>
class SuperNet {
 public:
  static SuperNet create(const SearchSpace& space, std::uint64_t seed) {
    auto probe = derive_arch(space, 0, space.widths);
    (void)probe;  // validates the skeleton
    SuperNet sn;
    sn.space_ = space;
    std::mt19937_64 rng(seed);
    sn.stem = nn::make_stem<T>(space.stem[0], space.stem[1], rng);
    for (int j = 0; j < kStages; ++j) {
      if (j > 0) sn.embeds[j] = nn::make_embed<T>(space.widths[j - 1], space.widths[j], rng);
      const auto side = arch::ArchSpec::stage_side(space.resolution, j);
      for (int i = 0; i < space.depths[j]; ++i) {
        MetaPath<T> p;
        p.ref = {j, i};
        p.cands = candidates(j);
        p.alpha = BasicTensor<T>::zeros({static_cast<std::int64_t>(p.cands.size())}, true);
        p.mb4d = nn::make_mb4d<T>(space.widths[j], space.exp, space.norm4d, rng);
        if (allows_3d(j)) {
          p.mb3d = nn::make_mb3d<T>(space.widths[j], space.heads, space.d_qk, space.d_v, space.exp, side * side, rng);
        }
        sn.paths.push_back(std::move(p));
      }
    }
    sn.head = nn::make_head<T>(space.widths[3], space.classes, rng);
    return sn;
  }

  const SearchSpace& space() const { return space_; }

  /// Weighted mixture forward. Features switch to the token layout at the
  /// first MetaPath of stage 3 and stay there; MB4D branches in that region
  /// run on a map view of the tokens. When `weights_out` is given it
  /// receives the branch weights of every unforced MetaPath.
  BasicTensor<T> forward(const BasicTensor<T>& x, const MixOptions& opt, std::mt19937_64& rng, bool training,
                         std::vector<BasicTensor<T>>* weights_out = nullptr) {
    if (x.rank() != 4 || x.dim(1) != 3 || x.dim(2) != space_.resolution || x.dim(3) != space_.resolution) {
      throw ShapeError("supernet input must be [B,3," + std::to_string(space_.resolution) + "," +
                       std::to_string(space_.resolution) + "], got " + to_string(x.shape()));
    }
    if (!opt.force.empty() && opt.force.size() != paths.size()) throw DomainError("force list must cover every MetaPath");
    if (weights_out) weights_out->clear();
    arch::Feature<T> f{nn::patch_embed(x, stem, space_.activation, training), x.dim(2) / 4, false};
    std::size_t p = 0;
    for (int j = 0; j < kStages; ++j) {
      if (j > 0) arch::apply_embedding(f, *embeds[j], training);
      if (allows_3d(j)) f.to_tokens();
      apply_mask(f, opt.masks[j]);
      for (int i = 0; i < space_.depths[j]; ++i, ++p) {
        auto& path = paths[p];
        const std::optional<Candidate> forced = opt.force.empty() ? std::nullopt : opt.force[p];
        if (forced) {
          if (candidate_index(j, *forced) < 0) throw DomainError("forced branch is not a candidate of this MetaPath");
          f.value = run_branch(path, *forced, f, training);
        } else {
          auto w = branch_weights(path.alpha, opt.gumbel, rng);
          if (weights_out) weights_out->push_back(w);
          BasicTensor<T> mixed;
          for (std::size_t c = 0; c < path.cands.size(); ++c) {
            auto term = mul(take(w, static_cast<std::int64_t>(c)), run_branch(path, path.cands[c], f, training));
            mixed = mixed.defined() ? add(mixed, term) : term;
          }
          f.value = mixed;
        }
        apply_mask(f, opt.masks[j]);
      }
    }
    return nn::head_forward(f.value, head);
  }

  std::vector<std::vector<double>> alphas() const {
    std::vector<std::vector<double>> out;
    for (const auto& p : paths) out.emplace_back(p.alpha.data().begin(), p.alpha.data().end());
    return out;
  }

  void set_alphas(const std::vector<std::vector<double>>& a) {
    if (a.size() != paths.size()) throw DomainError("one alpha vector per MetaPath is required");
    for (std::size_t p = 0; p < paths.size(); ++p) {
      auto d = paths[p].alpha.mutable_data();
      if (a[p].size() != d.size()) throw DomainError("alpha length does not match the candidate set");
      for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<T>(a[p][i]);
    }
  }

  Importance importance(ImportanceTransform tf = ImportanceTransform::softplus,
                        const std::vector<bool>& active = {}) const {
    return importance_scores(space_, alphas(), tf, active);
  }

  /// Starting point for slimming: every MetaPath kept at full width, with
  /// MB3D on the last N late-stage paths where N counts the late-stage paths
  /// whose MB3D logit is at least their MB4D logit.
  SubnetChoice initial_choice() const {
    int n = 0;
    for (const auto& p : paths) {
      if (!allows_3d(p.ref.stage)) continue;
      const auto a = p.alpha.data();
      if (a[candidate_index(p.ref.stage, Candidate::mb3d)] >= a[candidate_index(p.ref.stage, Candidate::mb4d)]) ++n;
    }
    return SubnetChoice::with_last_3d(space_, n);
  }

  /// Standalone model holding copies of the shared weights for `choice`.
  /// Only full-width choices can reuse the supernet weights.
  arch::Model<T> derive_model(const SubnetChoice& choice) const {
    if (choice.widths != space_.widths) throw DomainError("supernet weights are shared only at full stage widths");
    auto spec = derive_arch(space_, choice);
    auto m = arch::Model<T>::instantiate(spec, 0);
    m.stem = deep_clone<T>(stem);
    for (int j = 1; j < kStages; ++j) m.stages[j].embed = deep_clone<T>(*embeds[j]);
    for (int j = 0; j < kStages; ++j) {
      std::size_t out = 0;
      for (int i = 0; i < space_.depths[j]; ++i) {
        const auto& path = paths[static_cast<std::size_t>(space_.first_path(j) + i)];
        const auto kind = choice.kinds[static_cast<std::size_t>(space_.first_path(j) + i)];
        if (kind == Candidate::mb4d) m.stages[j].blocks[out++] = deep_clone<T>(path.mb4d);
        if (kind == Candidate::mb3d) m.stages[j].blocks[out++] = deep_clone<T>(*path.mb3d);
      }
    }
    m.head = deep_clone<T>(head);
    return m;
  }

  /// Visits block weights, BN buffers and the branch logits ("paths.k.alpha").
  void visit(const nn::TensorVisitor<T>& v) {
    nn::visit<T>("stem", stem, v);
    for (int j = 1; j < kStages; ++j) nn::visit<T>("stages." + std::to_string(j) + ".embed", *embeds[j], v);
    for (std::size_t k = 0; k < paths.size(); ++k) {
      const std::string pp = "paths." + std::to_string(k);
      nn::visit<T>(pp + ".mb4d", paths[k].mb4d, v);
      if (paths[k].mb3d) nn::visit<T>(pp + ".mb3d", *paths[k].mb3d, v);
      v(pp + ".alpha", paths[k].alpha, false);
    }
    nn::visit<T>("head", head, v);
  }

  /// Trainable block weights (excludes buffers and branch logits).
  arch::NamedTensors<T> weight_parameters() {
    arch::NamedTensors<T> out;
    visit([&](const std::string& n, BasicTensor<T>& t, bool buffer) {
      if (!buffer && !is_alpha(n)) out.emplace_back(n, t);
    });
    return out;
  }

  arch::NamedTensors<T> arch_parameters() {
    arch::NamedTensors<T> out;
    for (std::size_t k = 0; k < paths.size(); ++k) out.emplace_back("paths." + std::to_string(k) + ".alpha", paths[k].alpha);
    return out;
  }

  static bool is_alpha(const std::string& name) {
    return name.size() > 6 && name.compare(name.size() - 6, 6, ".alpha") == 0;
  }

  Checkpoint to_checkpoint() {
    Checkpoint ck;
    visit([&](const std::string& n, BasicTensor<T>& t, bool) { ck.tensors.emplace_back(n, to_float(t)); });
    arch::Json meta;
    meta["schema"] = "effnas.supernet/v1";
    meta["space"] = space_to_json(space_);
    ck.metadata = meta.dump();
    return ck;
  }

  static SuperNet from_checkpoint(const Checkpoint& ck) {
    arch::Json meta;
    try {
      meta = arch::Json::parse(ck.metadata);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("supernet checkpoint metadata is not JSON: ") + e.what());
    }
    if (!meta.contains("schema") || meta["schema"] != "effnas.supernet/v1" || !meta.contains("space")) {
      throw FormatError("checkpoint does not hold a supernet");
    }
    auto sn = create(space_from_json(meta["space"]), 0);
    arch::load_named<T>(ck, [&](const nn::TensorVisitor<T>& f) { sn.visit(f); });
    return sn;
  }

  /// Output channels of stage j's entry convolution sorted by ascending L1
  /// norm (ties by index); the entry conv is the stem's second conv for the
  /// first stage and the stage embedding otherwise.
  std::vector<std::int64_t> channels_by_l1(int j) const {
    const auto& w = j == 0 ? stem.conv2.conv.weight : embeds[j]->conv.conv.weight;
    const auto cout = w.dim(0), per = w.numel() / cout;
    std::vector<double> l1(static_cast<std::size_t>(cout), 0.0);
    for (std::int64_t c = 0; c < cout; ++c)
      for (std::int64_t i = 0; i < per; ++i) l1[c] += std::abs(static_cast<double>(w[c * per + i]));
    std::vector<std::int64_t> order(static_cast<std::size_t>(cout));
    for (std::int64_t c = 0; c < cout; ++c) order[c] = c;
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return l1[a] < l1[b]; });
    return order;
  }

  nn::StemParams<T> stem;
  std::array<std::optional<nn::EmbedParams<T>>, kStages> embeds;
  std::vector<MetaPath<T>> paths;
  nn::HeadParams<T> head;

 private:
  BasicTensor<T> run_branch(MetaPath<T>& path, Candidate c, const arch::Feature<T>& f, bool training) {
    switch (c) {
      case Candidate::identity: return f.value;
      case Candidate::mb4d:
        if (f.tokens) {
          auto map = tokens_to_map(f.value, f.side, f.side);
          return map_to_tokens(nn::mb4d_forward(map, path.mb4d, space_.activation, training));
        }
        return nn::mb4d_forward(f.value, path.mb4d, space_.activation, training);
      case Candidate::mb3d:
        if (!path.mb3d || !f.tokens) throw DomainError("MB3D branch requested outside the token partition");
        return nn::mb3d_forward(f.value, *path.mb3d, space_.activation);
    }
    throw DomainError("unknown branch");
  }

  static void apply_mask(arch::Feature<T>& f, const std::vector<float>& mask) {
    if (mask.empty()) return;
    std::vector<T> m(mask.begin(), mask.end());
    const auto c = static_cast<std::int64_t>(m.size());
    if (f.tokens) {
      f.value = mul(f.value, BasicTensor<T>({c}, std::move(m)));
    } else {
      f.value = mul(f.value, BasicTensor<T>({1, c, 1, 1}, std::move(m)));
    }
  }

  SearchSpace space_;
};

}  // namespace effnas::supernet
