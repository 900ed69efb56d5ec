#pragma once

#include <cmath>
#include <vector>

#include "effnas/core/ops.hpp"
#include "effnas/nn/params.hpp"

namespace effnas::nn {

namespace detail {

struct ConvGeometry {
  std::int64_t batch, cin, h, w, cout, k, stride, pad, ho, wo;
  bool pointwise() const { return k == 1 && stride == 1 && pad == 0; }
  std::int64_t col_rows() const { return cin * k * k; }
  std::int64_t col_cols() const { return ho * wo; }
};

template <class T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
  for (std::int64_t c = 0; c < g.cin; ++c)
    for (std::int64_t i = 0; i < g.k; ++i)
      for (std::int64_t j = 0; j < g.k; ++j) {
        T* row = cols + ((c * g.k + i) * g.k + j) * g.ho * g.wo;
        for (std::int64_t oy = 0; oy < g.ho; ++oy) {
          const std::int64_t iy = oy * g.stride - g.pad + i;
          for (std::int64_t ox = 0; ox < g.wo; ++ox) {
            const std::int64_t ix = ox * g.stride - g.pad + j;
            row[oy * g.wo + ox] =
                (iy >= 0 && iy < g.h && ix >= 0 && ix < g.w) ? x[(c * g.h + iy) * g.w + ix] : T(0);
          }
        }
      }
}

template <class T>
void col2im(const T* cols, const ConvGeometry& g, T* x) {
  for (std::int64_t c = 0; c < g.cin; ++c)
    for (std::int64_t i = 0; i < g.k; ++i)
      for (std::int64_t j = 0; j < g.k; ++j) {
        const T* row = cols + ((c * g.k + i) * g.k + j) * g.ho * g.wo;
        for (std::int64_t oy = 0; oy < g.ho; ++oy) {
          const std::int64_t iy = oy * g.stride - g.pad + i;
          if (iy < 0 || iy >= g.h) continue;
          for (std::int64_t ox = 0; ox < g.wo; ++ox) {
            const std::int64_t ix = ox * g.stride - g.pad + j;
            if (ix >= 0 && ix < g.w) x[(c * g.h + iy) * g.w + ix] += row[oy * g.wo + ox];
          }
        }
      }
}

/// Shared normalization kernel over a [B, C, S] view. `group_of(b, c, s)`
/// selects the statistics group of each element; gamma/beta are per channel.
template <class T, class GroupOf>
BasicTensor<T> normalize(std::string_view name, const BasicTensor<T>& x, std::int64_t b, std::int64_t c,
                         std::int64_t s, std::int64_t groups, GroupOf group_of, const BasicTensor<T>& gamma,
                         const BasicTensor<T>& beta, T eps, std::vector<T>* batch_mean = nullptr,
                         std::vector<T>* batch_var = nullptr) {
  const auto xv = x.data();
  std::vector<T> mean(static_cast<std::size_t>(groups), T(0)), var(mean.size(), T(0));
  std::vector<std::int64_t> count(mean.size(), 0);
  for (std::int64_t ib = 0; ib < b; ++ib)
    for (std::int64_t ic = 0; ic < c; ++ic)
      for (std::int64_t is = 0; is < s; ++is) {
        const auto gidx = group_of(ib, ic, is);
        mean[gidx] += xv[(ib * c + ic) * s + is];
        ++count[gidx];
      }
  for (std::int64_t g = 0; g < groups; ++g) mean[g] /= static_cast<T>(count[g]);
  for (std::int64_t ib = 0; ib < b; ++ib)
    for (std::int64_t ic = 0; ic < c; ++ic)
      for (std::int64_t is = 0; is < s; ++is) {
        const auto gidx = group_of(ib, ic, is);
        const T d = xv[(ib * c + ic) * s + is] - mean[gidx];
        var[gidx] += d * d;
      }
  for (std::int64_t g = 0; g < groups; ++g) var[g] /= static_cast<T>(count[g]);
  if (batch_mean) *batch_mean = mean;
  if (batch_var) *batch_var = var;
  std::vector<T> invstd(mean.size());
  for (std::int64_t g = 0; g < groups; ++g) invstd[g] = T(1) / std::sqrt(var[g] + eps);

  const auto gv = gamma.data();
  const auto bv = beta.data();
  std::vector<T> xhat(xv.size()), out(xv.size());
  for (std::int64_t ib = 0; ib < b; ++ib)
    for (std::int64_t ic = 0; ic < c; ++ic)
      for (std::int64_t is = 0; is < s; ++is) {
        const auto i = (ib * c + ic) * s + is;
        const auto gidx = group_of(ib, ic, is);
        xhat[i] = (xv[i] - mean[gidx]) * invstd[gidx];
        out[i] = gv[ic] * xhat[i] + bv[ic];
      }
  BasicTensor<T> y(x.shape(), std::move(out));
  return effnas::detail::record(
      name, y, {x, gamma, beta},
      [x, gamma, beta, b, c, s, groups, group_of, xhat = std::move(xhat), invstd = std::move(invstd),
       count = std::move(count)](std::span<const T> g) mutable {
        const auto gv = gamma.data();
        std::vector<T> sum_dxhat(static_cast<std::size_t>(groups), T(0)), sum_dxhat_xhat(sum_dxhat.size(), T(0));
        std::vector<T> ggamma(static_cast<std::size_t>(c), T(0)), gbeta(ggamma.size(), T(0));
        for (std::int64_t ib = 0; ib < b; ++ib)
          for (std::int64_t ic = 0; ic < c; ++ic)
            for (std::int64_t is = 0; is < s; ++is) {
              const auto i = (ib * c + ic) * s + is;
              const auto gidx = group_of(ib, ic, is);
              const T dxhat = g[i] * gv[ic];
              sum_dxhat[gidx] += dxhat;
              sum_dxhat_xhat[gidx] += dxhat * xhat[i];
              ggamma[ic] += g[i] * xhat[i];
              gbeta[ic] += g[i];
            }
        if (x.requires_grad()) {
          std::vector<T> gx(xhat.size());
          for (std::int64_t ib = 0; ib < b; ++ib)
            for (std::int64_t ic = 0; ic < c; ++ic)
              for (std::int64_t is = 0; is < s; ++is) {
                const auto i = (ib * c + ic) * s + is;
                const auto gidx = group_of(ib, ic, is);
                const T n = static_cast<T>(count[gidx]);
                const T dxhat = g[i] * gv[ic];
                gx[i] = invstd[gidx] / n * (n * dxhat - sum_dxhat[gidx] - xhat[i] * sum_dxhat_xhat[gidx]);
              }
          effnas::detail::accumulate(x, std::span<const T>(gx));
        }
        effnas::detail::accumulate(gamma, std::span<const T>(ggamma));
        effnas::detail::accumulate(beta, std::span<const T>(gbeta));
      });
}

/// Inference-mode BN on a [B, C, S] view: a per-channel affine transform
/// built from the running statistics.
template <class T>
BasicTensor<T> batchnorm_inference(const BasicTensor<T>& x, const BNParams<T>& p, std::int64_t b, std::int64_t c,
                                   std::int64_t s) {
  const auto xv = x.data();
  const auto gv = p.gamma.data();
  const auto bv = p.beta.data();
  const auto mv = p.running_mean.data();
  const auto vv = p.running_var.data();
  std::vector<T> invstd(static_cast<std::size_t>(c));
  for (std::int64_t ic = 0; ic < c; ++ic) invstd[ic] = T(1) / std::sqrt(vv[ic] + p.eps);
  std::vector<T> out(xv.size());
  for (std::int64_t ib = 0; ib < b; ++ib)
    for (std::int64_t ic = 0; ic < c; ++ic) {
      const T a = gv[ic] * invstd[ic];
      const T d = bv[ic] - mv[ic] * a;
      for (std::int64_t is = 0; is < s; ++is) {
        const auto i = (ib * c + ic) * s + is;
        out[i] = xv[i] * a + d;
      }
    }
  BasicTensor<T> y(x.shape(), std::move(out));
  return effnas::detail::record(
      "batchnorm_eval", y, {x, p.gamma, p.beta},
      [x, gamma = p.gamma, beta = p.beta, mean = p.running_mean, b, c, s,
       invstd = std::move(invstd)](std::span<const T> g) mutable {
        const auto xv = x.data();
        const auto gv = gamma.data();
        const auto mv = mean.data();
        std::vector<T> gx(xv.size()), ggamma(static_cast<std::size_t>(c), T(0)), gbeta(ggamma.size(), T(0));
        for (std::int64_t ib = 0; ib < b; ++ib)
          for (std::int64_t ic = 0; ic < c; ++ic)
            for (std::int64_t is = 0; is < s; ++is) {
              const auto i = (ib * c + ic) * s + is;
              gx[i] = g[i] * gv[ic] * invstd[ic];
              ggamma[ic] += g[i] * (xv[i] - mv[ic]) * invstd[ic];
              gbeta[ic] += g[i];
            }
        effnas::detail::accumulate(x, std::span<const T>(gx));
        effnas::detail::accumulate(gamma, std::span<const T>(ggamma));
        effnas::detail::accumulate(beta, std::span<const T>(gbeta));
      });
}

}  // namespace detail

/// Cross-correlation of x[B, C_in, H, W] with p.weight[C_out, C_in, k, k].
template <class T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const ConvParams<T>& p) {
  if (x.rank() != 4) throw ShapeError("conv2d expects [B,C,H,W] input, got " + to_string(x.shape()));
  if (p.weight.rank() != 4 || p.weight.dim(2) != p.weight.dim(3)) {
    throw ShapeError("conv2d weight must be [C_out,C_in,k,k], got " + to_string(p.weight.shape()));
  }
  if (p.stride < 1 || p.padding < 0) throw DomainError("conv2d needs stride >= 1 and padding >= 0");
  detail::ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), p.weight.dim(0), p.weight.dim(2), p.stride,
                         p.padding, 0, 0};
  if (g.cin != p.weight.dim(1)) {
    throw ShapeError("conv2d channel mismatch: input has " + std::to_string(g.cin) + " channels, weight expects " +
                     std::to_string(p.weight.dim(1)));
  }
  const std::int64_t hspan = g.h + 2 * g.pad - g.k, wspan = g.w + 2 * g.pad - g.k;
  if (hspan < 0 || wspan < 0) {
    throw ShapeError("conv2d output size is not positive for input " + to_string(x.shape()));
  }
  g.ho = hspan / g.stride + 1;
  g.wo = wspan / g.stride + 1;
  if (p.bias.defined() && p.bias.numel() != g.cout) throw ShapeError("conv2d bias size mismatch");

  const auto xv = x.data();
  const auto wv = p.weight.data();
  std::vector<T> out(static_cast<std::size_t>(g.batch * g.cout * g.ho * g.wo));
  std::vector<T> cols(g.pointwise() ? 0 : static_cast<std::size_t>(g.col_rows() * g.col_cols()));
  for (std::int64_t n = 0; n < g.batch; ++n) {
    const T* xn = xv.data() + n * g.cin * g.h * g.w;
    const T* src = xn;
    if (!g.pointwise()) {
      detail::im2col(xn, g, cols.data());
      src = cols.data();
    }
    kernels::gemm(wv.data(), src, out.data() + n * g.cout * g.ho * g.wo, g.cout, g.col_cols(), g.col_rows(), false,
                  false, false);
  }
  if (p.bias.defined()) {
    const auto bv = p.bias.data();
    const auto plane = g.ho * g.wo;
    for (std::int64_t n = 0; n < g.batch; ++n)
      for (std::int64_t c = 0; c < g.cout; ++c) {
        T* o = out.data() + (n * g.cout + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) o[i] += bv[c];
      }
  }
  BasicTensor<T> y({g.batch, g.cout, g.ho, g.wo}, std::move(out));
  std::vector<BasicTensor<T>> inputs{x, p.weight};
  if (p.bias.defined()) inputs.push_back(p.bias);
  return effnas::detail::record(
      "conv2d", y, std::move(inputs), [x, w = p.weight, bias = p.bias, g](std::span<const T> gout) mutable {
        const auto xv = x.data();
        const auto wv = w.data();
        const auto plane = g.ho * g.wo;
        std::vector<T> cols(g.pointwise() ? 0 : static_cast<std::size_t>(g.col_rows() * g.col_cols()));
        std::vector<T> gw(w.requires_grad() ? static_cast<std::size_t>(w.numel()) : 0, T(0));
        std::vector<T> gx(x.requires_grad() ? static_cast<std::size_t>(x.numel()) : 0, T(0));
        std::vector<T> gcols(x.requires_grad() && !g.pointwise() ? cols.size() : 0);
        for (std::int64_t n = 0; n < g.batch; ++n) {
          const T* gn = gout.data() + n * g.cout * plane;
          const T* xn = xv.data() + n * g.cin * g.h * g.w;
          if (w.requires_grad()) {
            const T* src = xn;
            if (!g.pointwise()) {
              detail::im2col(xn, g, cols.data());
              src = cols.data();
            }
            kernels::gemm(gn, src, gw.data(), g.cout, g.col_rows(), plane, false, true, true);
          }
          if (x.requires_grad()) {
            T* gxn = gx.data() + n * g.cin * g.h * g.w;
            if (g.pointwise()) {
              kernels::gemm(wv.data(), gn, gxn, g.cin, plane, g.cout, true, false, true);
            } else {
              kernels::gemm(wv.data(), gn, gcols.data(), g.col_rows(), plane, g.cout, true, false, false);
              detail::col2im(gcols.data(), g, gxn);
            }
          }
        }
        if (w.requires_grad()) effnas::detail::accumulate(w, std::span<const T>(gw));
        if (x.requires_grad()) effnas::detail::accumulate(x, std::span<const T>(gx));
        if (bias.defined() && bias.requires_grad()) {
          std::vector<T> gb(static_cast<std::size_t>(g.cout), T(0));
          for (std::int64_t n = 0; n < g.batch; ++n)
            for (std::int64_t c = 0; c < g.cout; ++c) {
              const T* gp = gout.data() + (n * g.cout + c) * plane;
              for (std::int64_t i = 0; i < plane; ++i) gb[c] += gp[i];
            }
          effnas::detail::accumulate(bias, std::span<const T>(gb));
        }
      });
}

/// Batch normalization over axis 1 of x[B, C, ...]. Training mode normalizes
/// with biased batch statistics and folds them into the running buffers
/// (unbiased variance, PyTorch momentum convention). Inference mode uses the
/// running buffers.
template <class T>
BasicTensor<T> batchnorm(const BasicTensor<T>& x, BNParams<T>& p, bool training) {
  if (x.rank() < 2 || x.dim(1) != p.channels()) {
    throw ShapeError("batchnorm: input " + to_string(x.shape()) + " does not have " + std::to_string(p.channels()) +
                     " channels");
  }
  const std::int64_t b = x.dim(0), c = x.dim(1), s = x.numel() / (b * c);
  if (!training) return detail::batchnorm_inference(x, p, b, c, s);
  std::vector<T> bmean, bvar;
  auto y = detail::normalize<T>(
      "batchnorm", x, b, c, s, c, [](std::int64_t, std::int64_t ic, std::int64_t) { return ic; }, p.gamma, p.beta,
      p.eps, &bmean, &bvar);
  const auto n = b * s;
  const T unbias = n > 1 ? static_cast<T>(n) / static_cast<T>(n - 1) : T(1);
  auto rm = p.running_mean.mutable_data();
  auto rv = p.running_var.mutable_data();
  for (std::int64_t ic = 0; ic < c; ++ic) {
    rm[ic] = (T(1) - p.momentum) * rm[ic] + p.momentum * bmean[ic];
    rv[ic] = (T(1) - p.momentum) * rv[ic] + p.momentum * bvar[ic] * unbias;
  }
  return y;
}

/// Returns a conv whose output equals batchnorm(conv2d(x, conv), bn, inference)
/// for every x: w' = w * gamma / sqrt(var + eps), b' = (b - mean) * gamma / sqrt(var + eps) + beta.
template <class T>
ConvParams<T> fold_bn_into_conv(const ConvParams<T>& conv, const BNParams<T>& bn) {
  const auto cout = conv.out_channels();
  if (bn.channels() != cout) {
    throw ShapeError("fold_bn_into_conv: BN has " + std::to_string(bn.channels()) + " channels, conv produces " +
                     std::to_string(cout));
  }
  const auto per_out = conv.weight.numel() / cout;
  std::vector<T> w = conv.weight.to_vector();
  std::vector<T> b(static_cast<std::size_t>(cout));
  const auto gv = bn.gamma.data();
  const auto bv = bn.beta.data();
  const auto mv = bn.running_mean.data();
  const auto vv = bn.running_var.data();
  for (std::int64_t c = 0; c < cout; ++c) {
    const T scale = gv[c] / std::sqrt(vv[c] + bn.eps);
    for (std::int64_t i = 0; i < per_out; ++i) w[c * per_out + i] *= scale;
    const T bias = conv.bias.defined() ? conv.bias[c] : T(0);
    b[c] = (bias - mv[c]) * scale + bv[c];
  }
  ConvParams<T> folded;
  folded.weight = BasicTensor<T>(conv.weight.shape(), std::move(w));
  folded.bias = BasicTensor<T>({cout}, std::move(b));
  folded.stride = conv.stride;
  folded.padding = conv.padding;
  return folded;
}

/// LayerNorm over the last axis. A constant row maps to beta (xhat = 0).
template <class T>
BasicTensor<T> layernorm(const BasicTensor<T>& x, const LNParams<T>& p) {
  const std::int64_t c = x.dim(-1);
  if (p.gamma.numel() != c || p.beta.numel() != c) {
    throw ShapeError("layernorm: last dim " + std::to_string(c) + " does not match parameters of size " +
                     std::to_string(p.gamma.numel()));
  }
  const std::int64_t rows = x.numel() / c;
  return detail::normalize<T>(
      "layernorm", x, rows, c, 1, rows, [](std::int64_t ib, std::int64_t, std::int64_t) { return ib; }, p.gamma,
      p.beta, p.eps);
}

/// Channel-wise LayerNorm of x[B, C, H, W]: statistics over C at every pixel.
template <class T>
BasicTensor<T> layernorm_channels(const BasicTensor<T>& x, const LNParams<T>& p) {
  if (x.rank() != 4 || x.dim(1) != p.gamma.numel()) {
    throw ShapeError("layernorm_channels: input " + to_string(x.shape()) + " does not match parameters");
  }
  const std::int64_t b = x.dim(0), c = x.dim(1), s = x.dim(2) * x.dim(3);
  return detail::normalize<T>(
      "layernorm_channels", x, b, c, s, b * s, [s](std::int64_t ib, std::int64_t, std::int64_t is) { return ib * s + is; },
      p.gamma, p.beta, p.eps);
}

/// GroupNorm of x[B, C, ...] with C split into p.groups contiguous groups.
template <class T>
BasicTensor<T> groupnorm(const BasicTensor<T>& x, const GNParams<T>& p) {
  if (x.rank() < 2 || x.dim(1) != p.gamma.numel()) {
    throw ShapeError("groupnorm: input " + to_string(x.shape()) + " does not match parameters");
  }
  const std::int64_t b = x.dim(0), c = x.dim(1), s = x.numel() / (b * c);
  if (p.groups < 1 || c % p.groups != 0) {
    throw DomainError("groupnorm: " + std::to_string(c) + " channels not divisible into " + std::to_string(p.groups) +
                      " groups");
  }
  const std::int64_t groups = p.groups, per = c / groups;
  return detail::normalize<T>(
      "groupnorm", x, b, c, s, b * groups,
      [groups, per](std::int64_t ib, std::int64_t ic, std::int64_t) { return ib * groups + ic / per; }, p.gamma, p.beta,
      p.eps);
}

/// 3x3 average pool, stride 1, padding 1; the divisor counts only cells
/// inside the input, so a constant field stays constant.
template <class T>
BasicTensor<T> avgpool3x3(const BasicTensor<T>& x) {
  if (x.rank() != 4) throw ShapeError("avgpool3x3 expects [B,C,H,W], got " + to_string(x.shape()));
  const std::int64_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto xv = x.data();
  std::vector<T> count(static_cast<std::size_t>(h * w));
  for (std::int64_t i = 0; i < h; ++i)
    for (std::int64_t j = 0; j < w; ++j) {
      const auto rows = std::min<std::int64_t>(i + 1, h - 1) - std::max<std::int64_t>(i - 1, 0) + 1;
      const auto colsn = std::min<std::int64_t>(j + 1, w - 1) - std::max<std::int64_t>(j - 1, 0) + 1;
      count[i * w + j] = static_cast<T>(rows * colsn);
    }
  std::vector<T> out(xv.size());
  for (std::int64_t p = 0; p < planes; ++p) {
    const T* src = xv.data() + p * h * w;
    T* dst = out.data() + p * h * w;
    for (std::int64_t i = 0; i < h; ++i)
      for (std::int64_t j = 0; j < w; ++j) {
        T acc = T(0);
        for (std::int64_t di = std::max<std::int64_t>(i - 1, 0); di <= std::min<std::int64_t>(i + 1, h - 1); ++di)
          for (std::int64_t dj = std::max<std::int64_t>(j - 1, 0); dj <= std::min<std::int64_t>(j + 1, w - 1); ++dj)
            acc += src[di * w + dj];
        dst[i * w + j] = acc / count[i * w + j];
      }
  }
  BasicTensor<T> y(x.shape(), std::move(out));
  return effnas::detail::record("avgpool3x3", y, {x}, [x, planes, h, w, count](std::span<const T> g) mutable {
    std::vector<T> gx(static_cast<std::size_t>(x.numel()), T(0));
    for (std::int64_t p = 0; p < planes; ++p) {
      const T* gp = g.data() + p * h * w;
      T* dst = gx.data() + p * h * w;
      for (std::int64_t i = 0; i < h; ++i)
        for (std::int64_t j = 0; j < w; ++j) {
          const T v = gp[i * w + j] / count[i * w + j];
          for (std::int64_t di = std::max<std::int64_t>(i - 1, 0); di <= std::min<std::int64_t>(i + 1, h - 1); ++di)
            for (std::int64_t dj = std::max<std::int64_t>(j - 1, 0); dj <= std::min<std::int64_t>(j + 1, w - 1); ++dj)
              dst[di * w + dj] += v;
        }
    }
    effnas::detail::accumulate(x, std::span<const T>(gx));
  });
}

}  // namespace effnas::nn
