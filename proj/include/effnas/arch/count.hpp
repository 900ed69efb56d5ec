#pragma once

#include <cstdint>

#include "effnas/arch/spec.hpp"

namespace effnas::arch {

/// Trainable parameters and non-trained buffers (BN running statistics).
struct ParamCount {
  std::int64_t trainable = 0;
  std::int64_t buffers = 0;
  std::int64_t total() const { return trainable + buffers; }
  ParamCount& operator+=(const ParamCount& o) {
    trainable += o.trainable;
    buffers += o.buffers;
    return *this;
  }
  bool operator==(const ParamCount&) const = default;
};

inline ParamCount operator+(ParamCount a, const ParamCount& b) { return a += b; }

namespace count {

inline ParamCount conv(std::int64_t cin, std::int64_t cout, std::int64_t k) { return {cin * cout * k * k + cout, 0}; }
inline ParamCount linear(std::int64_t in, std::int64_t out) { return {in * out + out, 0}; }
inline ParamCount batchnorm(std::int64_t c) { return {2 * c, 2 * c}; }
inline ParamCount affine_norm(std::int64_t c) { return {2 * c, 0}; }

inline ParamCount norm4d(nn::Norm4dKind kind, std::int64_t c) {
  return kind == nn::Norm4dKind::bn ? batchnorm(c) : affine_norm(c);
}

inline ParamCount stem(const ArchSpec& s) {
  return conv(3, s.stem[0], 3) + batchnorm(s.stem[0]) + conv(s.stem[0], s.stem[1], 3) + batchnorm(s.stem[1]);
}

inline ParamCount embedding(std::int64_t cin, std::int64_t cout) { return conv(cin, cout, 3) + batchnorm(cout); }

inline ParamCount head(std::int64_t width, std::int64_t classes) { return linear(width, classes); }

/// Parameters of one block; `tokens` sizes the MB3D attention-bias table.
inline ParamCount block(const BlockSpec& b, std::int64_t tokens, nn::Norm4dKind norm) {
  if (const auto* m = std::get_if<MB4D>(&b)) {
    const auto c = m->width, h = c * m->exp;
    return conv(c, h, 1) + norm4d(norm, h) + conv(h, c, 1) + norm4d(norm, c);
  }
  if (const auto* m = std::get_if<MB3D>(&b)) {
    const auto c = m->width, qk = std::int64_t{m->heads} * m->d_qk, v = std::int64_t{m->heads} * m->d_v;
    return affine_norm(c) + linear(c, qk) + linear(c, qk) + linear(c, v) + linear(v, c) +
           ParamCount{m->heads * tokens * tokens, 0} + affine_norm(c) + linear(c, c * m->exp) + linear(c * m->exp, c);
  }
  return {};
}

inline std::int64_t conv_macs(std::int64_t cin, std::int64_t cout, std::int64_t k, std::int64_t out_side) {
  return cin * cout * k * k * out_side * out_side;
}

/// Multiply-accumulates of one block at spatial side `side` (pooling and
/// normalization count zero).
inline std::int64_t block_macs(const BlockSpec& b, std::int64_t side) {
  const auto n = side * side;
  if (const auto* m = std::get_if<MB4D>(&b)) return 2 * m->width * m->width * m->exp * n;
  if (const auto* m = std::get_if<MB3D>(&b)) {
    const std::int64_t c = m->width, h = m->heads, dqk = m->d_qk, dv = m->d_v;
    const auto qkv = 2 * n * c * h * dqk + n * c * h * dv;
    const auto attn = h * n * n * dqk + h * n * n * dv;
    const auto proj = n * h * dv * c;
    const auto mlp = 2 * n * c * c * m->exp;
    return qkv + attn + proj + mlp;
  }
  return 0;
}

inline std::int64_t stem_macs(const ArchSpec& s, std::int64_t res) {
  return conv_macs(3, s.stem[0], 3, res / 2) + conv_macs(s.stem[0], s.stem[1], 3, res / 4);
}

inline std::int64_t embedding_macs(std::int64_t cin, std::int64_t cout, std::int64_t out_side) {
  return conv_macs(cin, cout, 3, out_side);
}

inline std::int64_t input_width(const ArchSpec& s, int j) { return j == 0 ? s.stem[1] : s.stages[j - 1].width; }

}  // namespace count

struct StageCount {
  ParamCount params;
  std::int64_t macs = 0;
};

struct CountReport {
  ParamCount stem, head;
  std::int64_t stem_macs = 0, head_macs = 0;
  std::array<StageCount, kStages> stages;
  ParamCount params() const {
    auto p = stem + head;
    for (const auto& s : stages) p += s.params;
    return p;
  }
  std::int64_t macs() const {
    auto m = stem_macs + head_macs;
    for (const auto& s : stages) m += s.macs;
    return m;
  }
};

/// Per-stage breakdown. MACs are per image at input side `res`; the
/// attention-bias tables are sized for the architecture's own resolution.
inline CountReport count_report(const ArchSpec& spec, std::int64_t res) {
  CountReport r;
  r.stem = count::stem(spec);
  r.stem_macs = count::stem_macs(spec, res);
  for (int j = 0; j < kStages; ++j) {
    const auto& st = spec.stages[j];
    auto& out = r.stages[j];
    const auto side = ArchSpec::stage_side(res, j);
    const auto own_side = spec.stage_side(j);
    if (st.embedding) {
      out.params += count::embedding(count::input_width(spec, j), st.width);
      out.macs += count::embedding_macs(count::input_width(spec, j), st.width, side);
    }
    for (const auto& b : st.blocks) {
      out.params += count::block(b, own_side * own_side, spec.norm4d);
      out.macs += count::block_macs(b, side);
    }
  }
  r.head = count::head(spec.stages[3].width, spec.classes);
  r.head_macs = spec.stages[3].width * spec.classes;
  return r;
}

inline ParamCount count_params(const ArchSpec& spec) {
  require_valid(spec);
  return count_report(spec, spec.resolution).params();
}

inline std::int64_t count_macs(const ArchSpec& spec, std::int64_t res) {
  require_valid(spec);
  if (res < 32 || res % 32 != 0) throw DomainError("resolution " + std::to_string(res) + " is not a positive multiple of 32");
  return count_report(spec, res).macs();
}
inline std::int64_t count_macs(const ArchSpec& spec) { return count_macs(spec, spec.resolution); }

}  // namespace effnas::arch
