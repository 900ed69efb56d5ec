#pragma once

#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "effnas/arch/count.hpp"
#include "effnas/arch/io.hpp"
#include "effnas/core/checkpoint.hpp"

namespace effnas::arch {

/// A feature flowing through the network, either a [B,C,H,W] map or
/// [B,N,C] tokens with N = side * side.
template <class T>
struct Feature {
  BasicTensor<T> value;
  std::int64_t side = 0;
  bool tokens = false;

  void to_tokens() {
    if (!tokens) {
      value = map_to_tokens(value);
      tokens = true;
    }
  }
  void to_map() {
    if (tokens) {
      value = tokens_to_map(value, side, side);
      tokens = false;
    }
  }
};

/// Stride-2 embedding applied to a feature in either layout; token features
/// are converted to a map for the convolution and back afterwards.
template <class T>
void apply_embedding(Feature<T>& f, nn::EmbedParams<T>& p, bool training) {
  const bool was_tokens = f.tokens;
  f.to_map();
  f.value = nn::embed_forward(f.value, p, training);
  f.side = f.value.dim(2);
  if (was_tokens) f.to_tokens();
}

template <class T>
using NamedTensors = std::vector<std::pair<std::string, BasicTensor<T>>>;

/// Copies named tensors from a checkpoint into a visitor-exposed parameter
/// set. Names and shapes must match exactly.
template <class T>
void load_named(const Checkpoint& ck, const std::function<void(const nn::TensorVisitor<T>&)>& visit_all) {
  std::size_t matched = 0;
  visit_all([&](const std::string& name, BasicTensor<T>& t, bool) {
    const Tensor* src = ck.find(name);
    if (!src) throw FormatError("checkpoint lacks tensor '" + name + "'");
    if (src->shape() != t.shape()) {
      throw FormatError("checkpoint tensor '" + name + "' has shape " + to_string(src->shape()) + ", expected " +
                        to_string(t.shape()));
    }
    auto dst = t.mutable_data();
    auto values = src->data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(values[i]);
    ++matched;
  });
  if (matched != ck.tensors.size()) {
    throw FormatError("checkpoint has " + std::to_string(ck.tensors.size()) + " tensors, model expects " +
                      std::to_string(matched));
  }
}

/// Runnable network built from an ArchSpec.
template <class T>
class Model {
 public:
  using Block = std::variant<std::monostate, nn::MB4DParams<T>, nn::MB3DParams<T>>;
  struct Stage {
    std::optional<nn::EmbedParams<T>> embed;
    std::vector<Block> blocks;
  };

  static Model instantiate(const ArchSpec& spec, std::uint64_t seed) {
    require_valid(spec);
    Model m;
    m.spec_ = spec;
    std::mt19937_64 rng(seed);
    m.stem = nn::make_stem<T>(spec.stem[0], spec.stem[1], rng);
    for (int j = 0; j < kStages; ++j) {
      const auto& st = spec.stages[j];
      auto& out = m.stages[j];
      if (st.embedding) out.embed = nn::make_embed<T>(count::input_width(spec, j), st.width, rng);
      const auto side = spec.stage_side(j);
      for (const auto& b : st.blocks) {
        if (const auto* b4 = std::get_if<MB4D>(&b)) {
          out.blocks.emplace_back(nn::make_mb4d<T>(b4->width, b4->exp, spec.norm4d, rng));
        } else if (const auto* b3 = std::get_if<MB3D>(&b)) {
          out.blocks.emplace_back(nn::make_mb3d<T>(b3->width, b3->heads, b3->d_qk, b3->d_v, b3->exp, side * side, rng));
        } else {
          out.blocks.emplace_back(std::monostate{});
        }
      }
    }
    m.head = nn::make_head<T>(spec.stages[3].width, spec.classes, rng);
    return m;
  }

  const ArchSpec& spec() const { return spec_; }

  /// stem -> stages (one map-to-token reshape before the first MB3D) ->
  /// mean pool -> classifier. Returns logits [B, classes].
  BasicTensor<T> forward(const BasicTensor<T>& x, bool training = false) {
    if (x.rank() != 4 || x.dim(1) != 3 || x.dim(2) != x.dim(3) || x.dim(2) % 32 != 0) {
      throw ShapeError("model input must be [B,3,H,H] with H a multiple of 32, got " + to_string(x.shape()));
    }
    Feature<T> f{nn::patch_embed(x, stem, spec_.activation, training), x.dim(2) / 4, false};
    for (auto& st : stages) {
      if (st.embed) apply_embedding(f, *st.embed, training);
      for (auto& b : st.blocks) {
        if (auto* b4 = std::get_if<nn::MB4DParams<T>>(&b)) {
          f.value = nn::mb4d_forward(f.value, *b4, spec_.activation, training);
        } else if (auto* b3 = std::get_if<nn::MB3DParams<T>>(&b)) {
          f.to_tokens();
          f.value = nn::mb3d_forward(f.value, *b3, spec_.activation);
        }
      }
    }
    return nn::head_forward(f.value, head);
  }

  /// Visits every tensor with a stable qualified name; the flag marks
  /// buffers that are not trained.
  void visit(const nn::TensorVisitor<T>& v) {
    nn::visit<T>("stem", stem, v);
    for (int j = 0; j < kStages; ++j) {
      const std::string sp = "stages." + std::to_string(j);
      if (stages[j].embed) nn::visit<T>(sp + ".embed", *stages[j].embed, v);
      for (std::size_t i = 0; i < stages[j].blocks.size(); ++i) {
        const std::string bp = sp + ".blocks." + std::to_string(i);
        std::visit(
            [&](auto& p) {
              if constexpr (!std::is_same_v<std::decay_t<decltype(p)>, std::monostate>) nn::visit<T>(bp, p, v);
            },
            stages[j].blocks[i]);
      }
    }
    nn::visit<T>("head", head, v);
  }

  NamedTensors<T> tensors() {
    NamedTensors<T> out;
    visit([&](const std::string& n, BasicTensor<T>& t, bool) { out.emplace_back(n, t); });
    return out;
  }

  NamedTensors<T> parameters() {
    NamedTensors<T> out;
    visit([&](const std::string& n, BasicTensor<T>& t, bool buffer) {
      if (!buffer) out.emplace_back(n, t);
    });
    return out;
  }

  /// Folds every BN into its preceding conv for inference.
  void fold_bn() {
    nn::fold(stem);
    for (auto& st : stages) {
      if (st.embed) nn::fold(*st.embed);
      for (auto& b : st.blocks)
        if (auto* b4 = std::get_if<nn::MB4DParams<T>>(&b)) nn::fold(*b4);
    }
  }

  Checkpoint to_checkpoint() {
    Checkpoint ck;
    for (auto& [n, t] : tensors()) ck.tensors.emplace_back(n, to_float(t));
    ck.metadata = to_json(spec_, -1);
    return ck;
  }

  void load(const Checkpoint& ck) {
    load_named<T>(ck, [&](const nn::TensorVisitor<T>& f) { visit(f); });
  }

  void save(const std::string& path) { save_checkpoint(path, to_checkpoint()); }

  static Model from_checkpoint(const Checkpoint& ck) {
    auto m = instantiate(from_json(ck.metadata), 0);
    m.load(ck);
    return m;
  }

  nn::StemParams<T> stem;
  std::array<Stage, kStages> stages;
  nn::HeadParams<T> head;

 private:
  ArchSpec spec_;
};

}  // namespace effnas::arch
