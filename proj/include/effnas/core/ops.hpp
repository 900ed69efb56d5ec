#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "effnas/core/gemm.hpp"
#include "effnas/core/tensor.hpp"

namespace effnas {

enum class BinaryOp { add, sub, mul, div };

namespace detail {

/// (outer, axis, inner) decomposition used by axis reductions and softmax.
struct AxisSplit {
  std::int64_t outer = 1, axis = 1, inner = 1;
};

inline AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.axis = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

template <class T, class F, class DF>
BasicTensor<T> unary(std::string_view name, const BasicTensor<T>& x, F&& f, DF&& df) {
  const auto in = x.data();
  std::vector<T> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  BasicTensor<T> y(x.shape(), std::move(out));
  return record(name, y, {x}, [x, df](std::span<const T> g) mutable {
    const auto in = x.data();
    std::vector<T> gx(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) gx[i] = g[i] * df(in[i]);
    accumulate(x, std::span<const T>(gx));
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Pointwise arithmetic
// ---------------------------------------------------------------------------

/// Pointwise add/sub/mul/div with trailing-dimension broadcasting (shapes are
/// right-aligned; each dimension pair must match or contain a 1). Division by
/// an exact zero is a DomainError.
template <class T>
BasicTensor<T> elementwise(BinaryOp op, const BasicTensor<T>& a, const BasicTensor<T>& b) {
  const Shape out_shape = broadcast_shapes(a.shape(), b.shape());
  const auto av = a.data();
  const auto bv = b.data();
  if (op == BinaryOp::div && std::any_of(bv.begin(), bv.end(), [](T v) { return v == T(0); })) {
    throw DomainError("division by zero in elementwise div");
  }
  std::vector<T> out(static_cast<std::size_t>(numel(out_shape)));
  const auto sa = broadcast_strides(a.shape(), out_shape);
  const auto sb = broadcast_strides(b.shape(), out_shape);
  auto apply = [op](T x, T y) {
    switch (op) {
      case BinaryOp::add: return x + y;
      case BinaryOp::sub: return x - y;
      case BinaryOp::mul: return x * y;
      case BinaryOp::div: return x / y;
    }
    return T(0);
  };
  if (a.shape() == b.shape()) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = apply(av[i], bv[i]);
  } else {
    for_each_broadcast(out_shape, sa, sb,
                       [&](std::int64_t o, std::int64_t ia, std::int64_t ib) { out[o] = apply(av[ia], bv[ib]); });
  }
  static constexpr const char* names[] = {"add", "sub", "mul", "div"};
  BasicTensor<T> y(out_shape, std::move(out));
  return detail::record(names[static_cast<int>(op)], y, {a, b},
                        [a, b, op, out_shape, sa, sb](std::span<const T> g) mutable {
                          const bool need_a = a.requires_grad(), need_b = b.requires_grad();
                          std::vector<T> ga(need_a ? a.numel() : 0, T(0)), gb(need_b ? b.numel() : 0, T(0));
                          const auto av = a.data();
                          const auto bv = b.data();
                          for_each_broadcast(out_shape, sa, sb, [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
                            const T go = g[o];
                            switch (op) {
                              case BinaryOp::add:
                                if (need_a) ga[ia] += go;
                                if (need_b) gb[ib] += go;
                                break;
                              case BinaryOp::sub:
                                if (need_a) ga[ia] += go;
                                if (need_b) gb[ib] -= go;
                                break;
                              case BinaryOp::mul:
                                if (need_a) ga[ia] += go * bv[ib];
                                if (need_b) gb[ib] += go * av[ia];
                                break;
                              case BinaryOp::div:
                                if (need_a) ga[ia] += go / bv[ib];
                                if (need_b) gb[ib] -= go * av[ia] / (bv[ib] * bv[ib]);
                                break;
                            }
                          });
                          if (need_a) detail::accumulate(a, std::span<const T>(ga));
                          if (need_b) detail::accumulate(b, std::span<const T>(gb));
                        });
}

template <class T>
BasicTensor<T> elementwise(BinaryOp op, const BasicTensor<T>& a, T b) {
  return elementwise(op, a, BasicTensor<T>::scalar(b));
}

template <class T> BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) { return elementwise(BinaryOp::add, a, b); }
template <class T> BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) { return elementwise(BinaryOp::sub, a, b); }
template <class T> BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) { return elementwise(BinaryOp::mul, a, b); }
template <class T> BasicTensor<T> div(const BasicTensor<T>& a, const BasicTensor<T>& b) { return elementwise(BinaryOp::div, a, b); }

template <class T> BasicTensor<T> operator+(const BasicTensor<T>& a, const BasicTensor<T>& b) { return add(a, b); }
template <class T> BasicTensor<T> operator-(const BasicTensor<T>& a, const BasicTensor<T>& b) { return sub(a, b); }
template <class T> BasicTensor<T> operator*(const BasicTensor<T>& a, const BasicTensor<T>& b) { return mul(a, b); }
template <class T> BasicTensor<T> operator/(const BasicTensor<T>& a, const BasicTensor<T>& b) { return div(a, b); }

/// x * s, cheaper than the broadcasting path.
template <class T>
BasicTensor<T> scale(const BasicTensor<T>& x, T s) {
  return detail::unary<T>("scale", x, [s](T v) { return v * s; }, [s](T) { return s; });
}

template <class T>
BasicTensor<T> add_scalar(const BasicTensor<T>& x, T s) {
  return detail::unary<T>("add_scalar", x, [s](T v) { return v + s; }, [](T) { return T(1); });
}

template <class T>
BasicTensor<T> square(const BasicTensor<T>& x) {
  return detail::unary<T>("square", x, [](T v) { return v * v; }, [](T v) { return T(2) * v; });
}

template <class T>
BasicTensor<T> exp(const BasicTensor<T>& x) {
  return detail::unary<T>("exp", x, [](T v) { return std::exp(v); }, [](T v) { return std::exp(v); });
}

// ---------------------------------------------------------------------------
// Layout
// ---------------------------------------------------------------------------

/// Same values, new shape. Element count must be preserved.
template <class T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape new_shape) {
  check_shape(new_shape);
  if (numel(new_shape) != x.numel()) {
    throw ShapeError("cannot reshape " + to_string(x.shape()) + " into " + to_string(new_shape));
  }
  BasicTensor<T> y(std::move(new_shape), x.to_vector());
  return detail::record("reshape", y, {x}, [x](std::span<const T> g) mutable { detail::accumulate(x, g); });
}

/// Swaps two axes (materialized copy).
template <class T>
BasicTensor<T> transpose(const BasicTensor<T>& x, std::int64_t axis0, std::int64_t axis1) {
  const auto d0 = normalize_axis(axis0, x.rank());
  const auto d1 = normalize_axis(axis1, x.rank());
  Shape out_shape = x.shape();
  std::swap(out_shape[d0], out_shape[d1]);
  auto in_strides = contiguous_strides(x.shape());
  std::swap(in_strides[d0], in_strides[d1]);  // input strides seen in output index order
  std::vector<std::int64_t> zero(out_shape.size(), 0);
  std::vector<T> out(static_cast<std::size_t>(x.numel()));
  const auto xv = x.data();
  for_each_broadcast(out_shape, in_strides, zero, [&](std::int64_t o, std::int64_t i, std::int64_t) { out[o] = xv[i]; });
  BasicTensor<T> y(out_shape, std::move(out));
  return detail::record("transpose", y, {x}, [x, out_shape, in_strides, zero](std::span<const T> g) mutable {
    std::vector<T> gx(static_cast<std::size_t>(x.numel()));
    for_each_broadcast(out_shape, in_strides, zero, [&](std::int64_t o, std::int64_t i, std::int64_t) { gx[i] += g[o]; });
    detail::accumulate(x, std::span<const T>(gx));
  });
}

/// [B,C,H,W] -> [B,H*W,C], the single 4D-to-3D transition.
template <class T>
BasicTensor<T> map_to_tokens(const BasicTensor<T>& x) {
  if (x.rank() != 4) throw ShapeError("map_to_tokens expects [B,C,H,W], got " + to_string(x.shape()));
  const auto b = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  return transpose(reshape(x, {b, c, hw}), 1, 2);
}

/// [B,N,C] -> [B,C,H,W] with N == H*W.
template <class T>
BasicTensor<T> tokens_to_map(const BasicTensor<T>& x, std::int64_t h, std::int64_t w) {
  if (x.rank() != 3 || x.dim(1) != h * w) {
    throw ShapeError("tokens_to_map expects [B," + std::to_string(h * w) + ",C], got " + to_string(x.shape()));
  }
  return reshape(transpose(x, 1, 2), {x.dim(0), x.dim(2), h, w});
}

/// Element `index` of a 1D tensor as a rank-0 tensor.
template <class T>
BasicTensor<T> take(const BasicTensor<T>& x, std::int64_t index) {
  if (index < 0 || index >= x.numel()) throw ShapeError("take index out of range");
  auto y = BasicTensor<T>::scalar(x[index]);
  return detail::record("take", y, {x}, [xt = BasicTensor<T>(x), index](std::span<const T> g) mutable {
    if (!xt.requires_grad()) return;
    xt.grad_buffer()[static_cast<std::size_t>(index)] += g[0];
  });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <class T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  T total = T(0);
  for (T v : x.data()) total += v;
  auto y = BasicTensor<T>::scalar(total);
  return detail::record("sum", y, {x}, [x](std::span<const T> g) mutable {
    std::vector<T> gx(static_cast<std::size_t>(x.numel()), g[0]);
    detail::accumulate(x, std::span<const T>(gx));
  });
}

template <class T>
BasicTensor<T> mean(const BasicTensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

/// Mean over one axis, which is removed from the shape.
template <class T>
BasicTensor<T> mean_axis(const BasicTensor<T>& x, std::int64_t axis) {
  const auto ax = normalize_axis(axis, x.rank());
  const auto s = detail::split_at(x.shape(), ax);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(ax));
  std::vector<T> out(static_cast<std::size_t>(s.outer * s.inner), T(0));
  const auto xv = x.data();
  const T inv = T(1) / static_cast<T>(s.axis);
  for (std::int64_t o = 0; o < s.outer; ++o)
    for (std::int64_t a = 0; a < s.axis; ++a)
      for (std::int64_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += xv[(o * s.axis + a) * s.inner + i];
  for (auto& v : out) v *= inv;
  BasicTensor<T> y(out_shape, std::move(out));
  return detail::record("mean_axis", y, {x}, [x, s, inv](std::span<const T> g) mutable {
    std::vector<T> gx(static_cast<std::size_t>(x.numel()));
    for (std::int64_t o = 0; o < s.outer; ++o)
      for (std::int64_t a = 0; a < s.axis; ++a)
        for (std::int64_t i = 0; i < s.inner; ++i) gx[(o * s.axis + a) * s.inner + i] = g[o * s.inner + i] * inv;
    detail::accumulate(x, std::span<const T>(gx));
  });
}

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

/// Batched matrix product [..., M, K] x [..., K, N] -> [..., M, N]; leading
/// dimensions broadcast.
template <class T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.rank() < 2 || b.rank() < 2 || a.dim(-1) != b.dim(-2)) {
    throw ShapeError("matmul dimension mismatch: " + to_string(a.shape()) + " @ " + to_string(b.shape()));
  }
  const std::int64_t m = a.dim(-2), k = a.dim(-1), n = b.dim(-1);
  const Shape a_batch(a.shape().begin(), a.shape().end() - 2);
  const Shape b_batch(b.shape().begin(), b.shape().end() - 2);
  Shape batch;
  try {
    batch = broadcast_shapes(a_batch, b_batch);
  } catch (const ShapeError&) {
    throw ShapeError("matmul batch dimensions mismatch: " + to_string(a.shape()) + " @ " + to_string(b.shape()));
  }
  const auto sa = broadcast_strides(a_batch, batch);
  const auto sb = broadcast_strides(b_batch, batch);
  // per-batch offsets in units of matrices
  std::vector<std::pair<std::int64_t, std::int64_t>> pairs;
  pairs.reserve(static_cast<std::size_t>(numel(batch)));
  for_each_broadcast(batch, sa, sb, [&](std::int64_t, std::int64_t ia, std::int64_t ib) { pairs.emplace_back(ia, ib); });
  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<T> out(static_cast<std::size_t>(numel(out_shape)));
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    kernels::gemm(av.data() + pairs[p].first * m * k, bv.data() + pairs[p].second * k * n,
                  out.data() + static_cast<std::int64_t>(p) * m * n, m, n, k, false, false, false);
  }
  BasicTensor<T> y(out_shape, std::move(out));
  return detail::record("matmul", y, {a, b}, [a, b, pairs, m, n, k](std::span<const T> g) mutable {
    const auto av = a.data();
    const auto bv = b.data();
    if (a.requires_grad()) {
      std::vector<T> ga(static_cast<std::size_t>(a.numel()), T(0));
      for (std::size_t p = 0; p < pairs.size(); ++p)
        kernels::gemm(g.data() + static_cast<std::int64_t>(p) * m * n, bv.data() + pairs[p].second * k * n,
                      ga.data() + pairs[p].first * m * k, m, k, n, false, true, true);
      detail::accumulate(a, std::span<const T>(ga));
    }
    if (b.requires_grad()) {
      std::vector<T> gb(static_cast<std::size_t>(b.numel()), T(0));
      for (std::size_t p = 0; p < pairs.size(); ++p)
        kernels::gemm(av.data() + pairs[p].first * m * k, g.data() + static_cast<std::int64_t>(p) * m * n,
                      gb.data() + pairs[p].second * k * n, k, n, m, true, false, true);
      detail::accumulate(b, std::span<const T>(gb));
    }
  });
}

/// x[..., in] * W[in, out] + bias[out].
template <class T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias = {}) {
  if (weight.rank() != 2 || x.rank() < 1 || x.dim(-1) != weight.dim(0)) {
    throw ShapeError("linear: input " + to_string(x.shape()) + " does not match weight " + to_string(weight.shape()));
  }
  const std::int64_t in = weight.dim(0), outf = weight.dim(1);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != outf)) {
    throw ShapeError("linear: bias " + to_string(bias.shape()) + " does not match " + std::to_string(outf) + " outputs");
  }
  const std::int64_t rows = x.numel() / in;
  Shape out_shape = x.shape();
  out_shape.back() = outf;
  std::vector<T> out(static_cast<std::size_t>(rows * outf));
  kernels::gemm(x.data().data(), weight.data().data(), out.data(), rows, outf, in, false, false, false);
  if (bias.defined()) {
    const auto bv = bias.data();
    for (std::int64_t r = 0; r < rows; ++r)
      for (std::int64_t j = 0; j < outf; ++j) out[r * outf + j] += bv[j];
  }
  BasicTensor<T> y(out_shape, std::move(out));
  std::vector<BasicTensor<T>> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return detail::record("linear", y, std::move(inputs), [x, weight, bias, rows, in, outf](std::span<const T> g) mutable {
    if (x.requires_grad()) {
      std::vector<T> gx(static_cast<std::size_t>(rows * in));
      kernels::gemm(g.data(), weight.data().data(), gx.data(), rows, in, outf, false, true, false);
      detail::accumulate(x, std::span<const T>(gx));
    }
    if (weight.requires_grad()) {
      std::vector<T> gw(static_cast<std::size_t>(in * outf));
      kernels::gemm(x.data().data(), g.data(), gw.data(), in, outf, rows, true, false, false);
      detail::accumulate(weight, std::span<const T>(gw));
    }
    if (bias.defined() && bias.requires_grad()) {
      std::vector<T> gb(static_cast<std::size_t>(outf), T(0));
      for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t j = 0; j < outf; ++j) gb[j] += g[r * outf + j];
      detail::accumulate(bias, std::span<const T>(gb));
    }
  });
}

// ---------------------------------------------------------------------------
// Softmax family
// ---------------------------------------------------------------------------

/// Max-subtracted softmax along `axis`.
template <class T>
BasicTensor<T> softmax(const BasicTensor<T>& x, std::int64_t axis = -1) {
  const auto ax = normalize_axis(axis, x.rank());
  const auto s = detail::split_at(x.shape(), ax);
  const auto xv = x.data();
  std::vector<T> out(xv.size());
  for (std::int64_t o = 0; o < s.outer; ++o) {
    for (std::int64_t i = 0; i < s.inner; ++i) {
      const auto at = [&](std::int64_t a) { return (o * s.axis + a) * s.inner + i; };
      T mx = xv[at(0)];
      for (std::int64_t a = 1; a < s.axis; ++a) mx = std::max(mx, xv[at(a)]);
      T total = T(0);
      for (std::int64_t a = 0; a < s.axis; ++a) total += (out[at(a)] = std::exp(xv[at(a)] - mx));
      for (std::int64_t a = 0; a < s.axis; ++a) out[at(a)] /= total;
    }
  }
  BasicTensor<T> y(x.shape(), out);
  return detail::record("softmax", y, {x}, [x, s, probs = std::move(out)](std::span<const T> g) mutable {
    std::vector<T> gx(probs.size());
    for (std::int64_t o = 0; o < s.outer; ++o) {
      for (std::int64_t i = 0; i < s.inner; ++i) {
        const auto at = [&](std::int64_t a) { return (o * s.axis + a) * s.inner + i; };
        T dot = T(0);
        for (std::int64_t a = 0; a < s.axis; ++a) dot += g[at(a)] * probs[at(a)];
        for (std::int64_t a = 0; a < s.axis; ++a) gx[at(a)] = probs[at(a)] * (g[at(a)] - dot);
      }
    }
    detail::accumulate(x, std::span<const T>(gx));
  });
}

/// Mean negative log-likelihood of `labels` under softmax(logits[B, K]).
template <class T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, std::span<const int> labels) {
  if (logits.rank() != 2) throw ShapeError("cross_entropy expects [B,K] logits, got " + to_string(logits.shape()));
  const std::int64_t b = logits.dim(0), k = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != b) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " + std::to_string(b));
  }
  for (int label : labels) {
    if (label < 0 || label >= k) {
      throw DomainError("label " + std::to_string(label) + " outside [0, " + std::to_string(k) + ")");
    }
  }
  const auto lv = logits.data();
  std::vector<T> probs(lv.size());
  T loss = T(0);
  for (std::int64_t r = 0; r < b; ++r) {
    const T* row = lv.data() + r * k;
    const T mx = *std::max_element(row, row + k);
    T total = T(0);
    for (std::int64_t j = 0; j < k; ++j) total += (probs[r * k + j] = std::exp(row[j] - mx));
    for (std::int64_t j = 0; j < k; ++j) probs[r * k + j] /= total;
    loss -= row[labels[r]] - mx - std::log(total);
  }
  loss /= static_cast<T>(b);
  auto y = BasicTensor<T>::scalar(loss);
  std::vector<int> label_copy(labels.begin(), labels.end());
  return detail::record("cross_entropy", y, {logits},
                        [logits, probs = std::move(probs), label_copy, b, k](std::span<const T> g) mutable {
                          std::vector<T> gx(probs.size());
                          const T s = g[0] / static_cast<T>(b);
                          for (std::int64_t r = 0; r < b; ++r)
                            for (std::int64_t j = 0; j < k; ++j)
                              gx[r * k + j] = s * (probs[r * k + j] - (j == label_copy[r] ? T(1) : T(0)));
                          detail::accumulate(logits, std::span<const T>(gx));
                        });
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

enum class Activation { gelu, relu, hardswish };

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::gelu: return "gelu";
    case Activation::relu: return "relu";
    case Activation::hardswish: return "hardswish";
  }
  return "?";
}

inline Activation parse_activation(std::string_view name) {
  if (name == "gelu") return Activation::gelu;
  if (name == "relu") return Activation::relu;
  if (name == "hardswish") return Activation::hardswish;
  throw DomainError("unknown activation '" + std::string(name) + "'");
}

template <class T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  return detail::unary<T>("relu", x, [](T v) { return v > T(0) ? v : T(0); },
                          [](T v) { return v > T(0) ? T(1) : T(0); });
}

/// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
template <class T>
BasicTensor<T> gelu(const BasicTensor<T>& x) {
  constexpr T c = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
  constexpr T k = static_cast<T>(0.044715);
  return detail::unary<T>(
      "gelu", x, [](T v) { return T(0.5) * v * (T(1) + std::tanh(c * (v + k * v * v * v))); },
      [](T v) {
        const T t = std::tanh(c * (v + k * v * v * v));
        return T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * c * (T(1) + T(3) * k * v * v);
      });
}

/// x * relu6(x + 3) / 6.
template <class T>
BasicTensor<T> hardswish(const BasicTensor<T>& x) {
  return detail::unary<T>(
      "hardswish", x,
      [](T v) {
        const T r6 = std::clamp(v + T(3), T(0), T(6));
        return v * r6 / T(6);
      },
      [](T v) {
        if (v <= T(-3)) return T(0);
        if (v >= T(3)) return T(1);
        return (T(2) * v + T(3)) / T(6);
      });
}

template <class T>
BasicTensor<T> activation(Activation kind, const BasicTensor<T>& x) {
  switch (kind) {
    case Activation::gelu: return gelu(x);
    case Activation::relu: return relu(x);
    case Activation::hardswish: return hardswish(x);
  }
  throw DomainError("unknown activation kind");
}

}  // namespace effnas
