#pragma once

#include <set>

#include "effnas/lut/table.hpp"
#include "effnas/supernet/space.hpp"

namespace effnas::lut {

/// Widths a stage can take under repeated 16-channel reductions.
inline std::vector<std::int64_t> reachable_widths(std::int64_t max_width) {
  std::vector<std::int64_t> out;
  for (auto w = max_width; w >= 16; w -= 16) out.push_back(w);
  return out;
}

/// Every key a slimming run over `space` can look up.
inline std::vector<LatencyKey> reachable_keys(const supernet::SearchSpace& s) {
  std::set<LatencyKey> keys;
  std::array<std::vector<std::int64_t>, arch::kStages> w;
  for (int j = 0; j < arch::kStages; ++j) w[j] = reachable_widths(s.widths[j]);
  for (auto c : w[0]) keys.insert(stem_key(s.stem[0], c, s.resolution));
  for (int j = 0; j < arch::kStages; ++j) {
    const auto side = arch::ArchSpec::stage_side(s.resolution, j);
    for (auto c : w[j]) {
      keys.insert({UnitKind::mb4d, c, side, s.exp});
      if (supernet::allows_3d(j)) keys.insert({UnitKind::mb3d, c, side, s.exp});
      if (j > 0)
        for (auto cin : w[j - 1]) keys.insert(embed_key(cin, c, side));
    }
  }
  for (auto c : w[3]) keys.insert(head_key(c, arch::ArchSpec::stage_side(s.resolution, 3), s.classes));
  return {keys.begin(), keys.end()};
}

inline Mb3dDims mb3d_dims(const supernet::SearchSpace& s) { return {s.heads, s.d_qk, s.d_v}; }

}  // namespace effnas::lut
