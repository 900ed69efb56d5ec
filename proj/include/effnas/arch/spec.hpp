#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "effnas/nn/blocks.hpp"

namespace effnas::arch {

inline constexpr int kStages = 4;

struct MB4D {
  std::int64_t width = 0;
  int exp = 4;
  bool operator==(const MB4D&) const = default;
};

struct MB3D {
  std::int64_t width = 0;
  int heads = 8;
  int d_qk = 32;
  int d_v = 128;
  int exp = 4;
  bool operator==(const MB3D&) const = default;
};

struct Identity {
  bool operator==(const Identity&) const = default;
};

using BlockSpec = std::variant<MB4D, MB3D, Identity>;

inline bool is_mb4d(const BlockSpec& b) { return std::holds_alternative<MB4D>(b); }
inline bool is_mb3d(const BlockSpec& b) { return std::holds_alternative<MB3D>(b); }
inline bool is_identity(const BlockSpec& b) { return std::holds_alternative<Identity>(b); }

inline const char* kind_name(const BlockSpec& b) {
  return is_mb4d(b) ? "MB4D" : is_mb3d(b) ? "MB3D" : "Identity";
}

struct StageSpec {
  std::int64_t width = 0;
  std::vector<BlockSpec> blocks;
  /// Stride-2 3x3 conv + BN from the previous stage's width.
  bool embedding = false;
  bool operator==(const StageSpec&) const = default;
};

struct ArchSpec {
  std::string name;
  std::array<std::int64_t, 2> stem{};
  std::array<StageSpec, kStages> stages;
  std::int64_t classes = 1000;
  std::int64_t resolution = 224;
  Activation activation = Activation::gelu;
  nn::Norm4dKind norm4d = nn::Norm4dKind::bn;

  bool operator==(const ArchSpec&) const = default;

  /// Spatial side length of stage `j` for an input of side `res`.
  static std::int64_t stage_side(std::int64_t res, int j) { return res / (std::int64_t{4} << j); }
  std::int64_t stage_side(int j) const { return stage_side(resolution, j); }

  std::int64_t depth() const {
    std::int64_t m = 0;
    for (const auto& s : stages)
      for (const auto& b : s.blocks) m += is_identity(b) ? 0 : 1;
    return m;
  }
  std::int64_t count_mb3d() const {
    std::int64_t n = 0;
    for (const auto& s : stages)
      for (const auto& b : s.blocks) n += is_mb3d(b) ? 1 : 0;
    return n;
  }
};

struct Violation {
  std::string path;
  std::string message;
};

inline std::string to_string(const Violation& v) { return v.path.empty() ? v.message : v.path + ": " + v.message; }
using effnas::to_string;

/// Structural checks. Never throws; an empty result means the architecture is valid.
inline std::vector<Violation> validate(const ArchSpec& spec) {
  std::vector<Violation> out;
  auto add = [&](std::string path, std::string msg) { out.push_back({std::move(path), std::move(msg)}); };
  for (int i = 0; i < 2; ++i) {
    if (spec.stem[i] < 1) add("stem[" + std::to_string(i) + "]", "stem width must be positive");
  }
  if (spec.stem[1] != spec.stages[0].width) {
    add("stem[1]", "stem output width " + std::to_string(spec.stem[1]) + " differs from the first stage width " +
                       std::to_string(spec.stages[0].width));
  }
  if (spec.classes < 1) add("classes", "at least one class is required");
  if (spec.resolution < 32 || spec.resolution % 32 != 0) {
    add("resolution", "input resolution " + std::to_string(spec.resolution) + " is not a positive multiple of 32");
  }
  bool seen_3d = false;
  for (int j = 0; j < kStages; ++j) {
    const auto& st = spec.stages[j];
    const std::string sp = "stages[" + std::to_string(j) + "]";
    if (st.width < 16) add(sp + ".width", "width " + std::to_string(st.width) + " is below 16");
    if (j == 0 && st.embedding) add(sp + ".embedding", "the first stage is fed by the stem and has no embedding");
    if (j > 0 && !st.embedding) add(sp + ".embedding", "stages after the first need a downsampling embedding");
    for (std::size_t i = 0; i < st.blocks.size(); ++i) {
      const auto& b = st.blocks[i];
      const std::string bp = sp + ".blocks[" + std::to_string(i) + "]";
      if (is_identity(b)) continue;
      const std::int64_t w = is_mb4d(b) ? std::get<MB4D>(b).width : std::get<MB3D>(b).width;
      const int exp = is_mb4d(b) ? std::get<MB4D>(b).exp : std::get<MB3D>(b).exp;
      if (w < 16) add(bp + ".width", "width " + std::to_string(w) + " is below 16");
      if (w != st.width) {
        add(bp + ".width", "block width " + std::to_string(w) + " differs from stage width " + std::to_string(st.width));
      }
      if (exp < 1) add(bp + ".exp", "expansion ratio must be positive");
      if (const auto* m = std::get_if<MB3D>(&b)) {
        if (j < 2) add(bp, "3D block in early stage");
        if (m->heads < 1 || m->d_qk < 1 || m->d_v < 1) add(bp, "heads, d_qk and d_v must be positive");
        seen_3d = true;
      } else if (seen_3d) {
        add(bp, "dimension inconsistency: MB4D after MB3D");
      }
    }
  }
  return out;
}

inline bool is_valid(const ArchSpec& spec) { return validate(spec).empty(); }

/// Throws DomainError listing every violation.
inline void require_valid(const ArchSpec& spec) {
  auto v = validate(spec);
  if (v.empty()) return;
  std::string msg = "invalid architecture";
  for (const auto& e : v) msg += "\n  " + to_string(e);
  throw DomainError(msg);
}

struct PresetShape {
  std::array<std::int64_t, 2> stem;
  std::array<std::int64_t, 4> widths;
  std::array<int, 4> depths4d;
  int last_stage_3d;
  int heads, d_qk, d_v, exp;
  std::int64_t classes, resolution;
};

inline ArchSpec build_preset(std::string name, const PresetShape& p) {
  ArchSpec s;
  s.name = std::move(name);
  s.stem = p.stem;
  s.classes = p.classes;
  s.resolution = p.resolution;
  for (int j = 0; j < kStages; ++j) {
    auto& st = s.stages[j];
    st.width = p.widths[j];
    st.embedding = j > 0;
    for (int i = 0; i < p.depths4d[j]; ++i) st.blocks.push_back(MB4D{st.width, p.exp});
  }
  for (int i = 0; i < p.last_stage_3d; ++i) {
    s.stages[3].blocks.push_back(MB3D{p.widths[3], p.heads, p.d_qk, p.d_v, p.exp});
  }
  return s;
}

inline std::vector<std::string> preset_names() { return {"L1", "L3", "L7", "toy"}; }

/// Published EfficientFormer configurations plus a small 64x64 variant used
/// for desk-scale search and training.
inline ArchSpec preset(std::string_view name) {
  if (name == "L1") return build_preset("L1", {{24, 48}, {48, 96, 224, 448}, {3, 2, 6, 3}, 1, 8, 32, 128, 4, 1000, 224});
  if (name == "L3") return build_preset("L3", {{32, 64}, {64, 128, 320, 512}, {4, 4, 12, 3}, 3, 8, 32, 128, 4, 1000, 224});
  if (name == "L7") return build_preset("L7", {{48, 96}, {96, 192, 384, 768}, {6, 6, 18, 0}, 8, 8, 32, 128, 4, 1000, 224});
  if (name == "toy") return build_preset("toy", {{16, 32}, {32, 48, 64, 96}, {2, 2, 3, 1}, 2, 2, 16, 32, 4, 4, 64});
  throw DomainError("unknown preset '" + std::string(name) + "' (known: L1, L3, L7, toy)");
}

}  // namespace effnas::arch
