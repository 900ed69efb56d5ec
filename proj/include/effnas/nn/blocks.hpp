#pragma once

#include <string>
#include <variant>

#include "effnas/nn/attention.hpp"
#include "effnas/nn/init.hpp"
#include "effnas/nn/ops.hpp"

namespace effnas::nn {

/// Normalization used after the 1x1 convolutions of MB4D blocks. `bn` is the
/// default CONV-BN design; `gn` (one group) and `ln` (channel-wise) are the
/// dynamic alternatives that cannot be folded away at inference.
enum class Norm4dKind { bn, gn, ln };

inline const char* to_string(Norm4dKind k) {
  switch (k) {
    case Norm4dKind::bn: return "bn";
    case Norm4dKind::gn: return "gn";
    case Norm4dKind::ln: return "ln";
  }
  return "?";
}
using effnas::to_string;

inline Norm4dKind parse_norm4d(std::string_view s) {
  if (s == "bn") return Norm4dKind::bn;
  if (s == "gn") return Norm4dKind::gn;
  if (s == "ln") return Norm4dKind::ln;
  throw DomainError("unknown 4D normalization '" + std::string(s) + "'");
}

/// monostate marks a BN that has been folded into the preceding conv.
template <class T>
using Norm4d = std::variant<std::monostate, BNParams<T>, GNParams<T>, LNParams<T>>;

/// A convolution followed by its normalization.
template <class T>
struct ConvNorm {
  ConvParams<T> conv;
  Norm4d<T> norm;
};

template <class T>
struct StemParams {
  ConvNorm<T> conv1, conv2;
};

/// Stride-2 3x3 downsampling between stages.
template <class T>
struct EmbedParams {
  ConvNorm<T> conv;
};

template <class T>
struct MB4DParams {
  ConvNorm<T> fc1, fc2;
  std::int64_t width() const { return fc1.conv.in_channels(); }
};

template <class T>
struct MB3DParams {
  LNParams<T> ln1;
  AttnParams<T> attn;
  LNParams<T> ln2;
  LinearParams<T> fc1, fc2;
  std::int64_t width() const { return attn.width(); }
};

template <class T>
struct HeadParams {
  LinearParams<T> fc;
};

/// Visitor callback: (qualified name, tensor, is_buffer).
template <class T>
using TensorVisitor = std::function<void(const std::string&, BasicTensor<T>&, bool)>;

// ---------------------------------------------------------------------------
// forward passes
// ---------------------------------------------------------------------------

template <class T>
BasicTensor<T> apply_norm(const BasicTensor<T>& x, Norm4d<T>& norm, bool training) {
  return std::visit(
      [&](auto& p) -> BasicTensor<T> {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, std::monostate>) {
          return x;
        } else if constexpr (std::is_same_v<P, BNParams<T>>) {
          return batchnorm(x, p, training);
        } else if constexpr (std::is_same_v<P, GNParams<T>>) {
          return groupnorm(x, p);
        } else {
          return layernorm_channels(x, p);
        }
      },
      norm);
}

template <class T>
BasicTensor<T> conv_norm(const BasicTensor<T>& x, ConvNorm<T>& cn, bool training) {
  return apply_norm(conv2d(x, cn.conv), cn.norm, training);
}

/// Convolution stem: two stride-2 3x3 convs, each followed by BN and the
/// activation. [B,3,H,W] -> [B,C1,H/4,W/4].
template <class T>
BasicTensor<T> patch_embed(const BasicTensor<T>& x, StemParams<T>& p, Activation act, bool training) {
  if (x.rank() != 4 || x.dim(1) != p.conv1.conv.in_channels()) {
    throw ShapeError("patch_embed expects [B," + std::to_string(p.conv1.conv.in_channels()) + ",H,W], got " +
                     to_string(x.shape()));
  }
  if (x.dim(2) % 4 != 0 || x.dim(3) % 4 != 0) {
    throw ShapeError("patch_embed needs H and W divisible by 4, got " + to_string(x.shape()));
  }
  auto h = activation(act, conv_norm(x, p.conv1, training));
  return activation(act, conv_norm(h, p.conv2, training));
}

template <class T>
BasicTensor<T> embed_forward(const BasicTensor<T>& x, EmbedParams<T>& p, bool training) {
  return conv_norm(x, p.conv, training);
}

/// I = Pool(x) + x; out = Norm(Conv1x1(act(Norm(Conv1x1(I))))) + I.
template <class T>
BasicTensor<T> mb4d_forward(const BasicTensor<T>& x, MB4DParams<T>& p, Activation act, bool training) {
  if (x.rank() != 4) throw ShapeError("MB4D accepts only rank-4 [B,C,H,W] input, got " + to_string(x.shape()));
  if (x.dim(1) != p.width()) {
    throw ShapeError("MB4D width mismatch: input has " + std::to_string(x.dim(1)) + " channels, block has " +
                     std::to_string(p.width()));
  }
  auto mixed = add(avgpool3x3(x), x);
  auto hidden = activation(act, conv_norm(mixed, p.fc1, training));
  return add(conv_norm(hidden, p.fc2, training), mixed);
}

/// I = x + Proj(MHSA(LN(x))); out = I + Linear(act(Linear(LN(I)))).
template <class T>
BasicTensor<T> mb3d_forward(const BasicTensor<T>& x, MB3DParams<T>& p, Activation act) {
  if (x.rank() != 3) throw ShapeError("MB3D accepts only rank-3 [B,N,C] input, got " + to_string(x.shape()));
  if (x.dim(2) != p.width()) {
    throw ShapeError("MB3D width mismatch: input has " + std::to_string(x.dim(2)) + " channels, block has " +
                     std::to_string(p.width()));
  }
  auto mixed = add(x, mhsa(layernorm(x, p.ln1), p.attn));
  auto hidden = activation(act, linear(layernorm(mixed, p.ln2), p.fc1.weight, p.fc1.bias));
  return add(mixed, linear(hidden, p.fc2.weight, p.fc2.bias));
}

/// Global average over spatial positions ([B,C,H,W]) or tokens ([B,N,C]),
/// then the classifier.
template <class T>
BasicTensor<T> head_forward(const BasicTensor<T>& x, HeadParams<T>& p) {
  BasicTensor<T> pooled;
  if (x.rank() == 4) {
    pooled = mean_axis(reshape(x, {x.dim(0), x.dim(1), x.dim(2) * x.dim(3)}), 2);
  } else if (x.rank() == 3) {
    pooled = mean_axis(x, 1);
  } else {
    throw ShapeError("head expects a 3D or 4D feature, got " + to_string(x.shape()));
  }
  return linear(pooled, p.fc.weight, p.fc.bias);
}

// ---------------------------------------------------------------------------
// construction
// ---------------------------------------------------------------------------

template <class T>
Norm4d<T> make_norm(Norm4dKind kind, std::int64_t c) {
  switch (kind) {
    case Norm4dKind::bn: return init::batchnorm<T>(c);
    case Norm4dKind::gn: return init::groupnorm<T>(c, 1);
    case Norm4dKind::ln: return init::layernorm<T>(c);
  }
  throw DomainError("unknown normalization kind");
}

template <class T, class Rng>
StemParams<T> make_stem(std::int64_t c0, std::int64_t c1, Rng& rng) {
  return {{init::conv<T>(3, c0, 3, 2, 1, rng), init::batchnorm<T>(c0)},
          {init::conv<T>(c0, c1, 3, 2, 1, rng), init::batchnorm<T>(c1)}};
}

template <class T, class Rng>
EmbedParams<T> make_embed(std::int64_t cin, std::int64_t cout, Rng& rng) {
  return {{init::conv<T>(cin, cout, 3, 2, 1, rng), init::batchnorm<T>(cout)}};
}

template <class T, class Rng>
MB4DParams<T> make_mb4d(std::int64_t width, int exp, Norm4dKind norm, Rng& rng) {
  const auto hidden = width * exp;
  return {{init::conv<T>(width, hidden, 1, 1, 0, rng), make_norm<T>(norm, hidden)},
          {init::conv<T>(hidden, width, 1, 1, 0, rng), make_norm<T>(norm, width)}};
}

template <class T, class Rng>
MB3DParams<T> make_mb3d(std::int64_t width, int heads, int d_qk, int d_v, int exp, std::int64_t tokens, Rng& rng) {
  return {init::layernorm<T>(width), init::attention<T>(width, heads, d_qk, d_v, tokens, rng), init::layernorm<T>(width),
          init::linear<T>(width, width * exp, rng), init::linear<T>(width * exp, width, rng)};
}

template <class T, class Rng>
HeadParams<T> make_head(std::int64_t width, std::int64_t classes, Rng& rng) {
  return {init::linear<T>(width, classes, rng)};
}

// ---------------------------------------------------------------------------
// traversal
// ---------------------------------------------------------------------------

template <class T>
void visit(const std::string& prefix, ConvParams<T>& p, const TensorVisitor<T>& v) {
  v(prefix + ".weight", p.weight, false);
  if (p.bias.defined()) v(prefix + ".bias", p.bias, false);
}

template <class T>
void visit(const std::string& prefix, Norm4d<T>& n, const TensorVisitor<T>& v) {
  std::visit(
      [&](auto& p) {
        using P = std::decay_t<decltype(p)>;
        if constexpr (!std::is_same_v<P, std::monostate>) {
          v(prefix + ".gamma", p.gamma, false);
          v(prefix + ".beta", p.beta, false);
          if constexpr (std::is_same_v<P, BNParams<T>>) {
            v(prefix + ".running_mean", p.running_mean, true);
            v(prefix + ".running_var", p.running_var, true);
          }
        }
      },
      n);
}

template <class T>
void visit(const std::string& prefix, ConvNorm<T>& p, const TensorVisitor<T>& v) {
  visit(prefix + ".conv", p.conv, v);
  visit(prefix + ".norm", p.norm, v);
}

template <class T>
void visit(const std::string& prefix, LNParams<T>& p, const TensorVisitor<T>& v) {
  v(prefix + ".gamma", p.gamma, false);
  v(prefix + ".beta", p.beta, false);
}

template <class T>
void visit(const std::string& prefix, LinearParams<T>& p, const TensorVisitor<T>& v) {
  v(prefix + ".weight", p.weight, false);
  if (p.bias.defined()) v(prefix + ".bias", p.bias, false);
}

template <class T>
void visit(const std::string& prefix, StemParams<T>& p, const TensorVisitor<T>& v) {
  visit(prefix + ".conv1", p.conv1, v);
  visit(prefix + ".conv2", p.conv2, v);
}

template <class T>
void visit(const std::string& prefix, EmbedParams<T>& p, const TensorVisitor<T>& v) {
  visit(prefix, p.conv, v);
}

template <class T>
void visit(const std::string& prefix, MB4DParams<T>& p, const TensorVisitor<T>& v) {
  visit(prefix + ".fc1", p.fc1, v);
  visit(prefix + ".fc2", p.fc2, v);
}

template <class T>
void visit(const std::string& prefix, MB3DParams<T>& p, const TensorVisitor<T>& v) {
  visit(prefix + ".ln1", p.ln1, v);
  visit(prefix + ".attn.q", p.attn.q, v);
  visit(prefix + ".attn.k", p.attn.k, v);
  visit(prefix + ".attn.v", p.attn.v, v);
  visit(prefix + ".attn.o", p.attn.o, v);
  v(prefix + ".attn.bias_table", p.attn.attn_bias, false);
  visit(prefix + ".ln2", p.ln2, v);
  visit(prefix + ".fc1", p.fc1, v);
  visit(prefix + ".fc2", p.fc2, v);
}

template <class T>
void visit(const std::string& prefix, HeadParams<T>& p, const TensorVisitor<T>& v) {
  visit(prefix + ".fc", p.fc, v);
}

// ---------------------------------------------------------------------------
// BN folding
// ---------------------------------------------------------------------------

/// Folds a BN into its conv; other normalizations are left untouched.
template <class T>
void fold(ConvNorm<T>& cn) {
  if (auto* bn = std::get_if<BNParams<T>>(&cn.norm)) {
    cn.conv = fold_bn_into_conv(cn.conv, *bn);
    cn.norm = std::monostate{};
  }
}

template <class T> void fold(StemParams<T>& p) { fold(p.conv1); fold(p.conv2); }
template <class T> void fold(EmbedParams<T>& p) { fold(p.conv); }
template <class T> void fold(MB4DParams<T>& p) { fold(p.fc1); fold(p.fc2); }

}  // namespace effnas::nn
