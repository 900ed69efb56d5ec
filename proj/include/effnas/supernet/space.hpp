#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "effnas/arch/io.hpp"
#include "effnas/arch/spec.hpp"

namespace effnas::supernet {

using arch::kStages;

/// Branch kinds of a MetaPath. Candidate order inside a path is
/// [MB4D, I] for the first two stages and [MB4D, MB3D, I] for the last two.
enum class Candidate { mb4d, mb3d, identity };

inline const char* to_string(Candidate c) {
  switch (c) {
    case Candidate::mb4d: return "MB4D";
    case Candidate::mb3d: return "MB3D";
    case Candidate::identity: return "I";
  }
  return "?";
}

using effnas::to_string;

inline bool allows_3d(int stage) { return stage >= 2; }

inline std::vector<Candidate> candidates(int stage) {
  if (allows_3d(stage)) return {Candidate::mb4d, Candidate::mb3d, Candidate::identity};
  return {Candidate::mb4d, Candidate::identity};
}

/// Index of `c` in the candidate list of `stage`, or -1.
inline int candidate_index(int stage, Candidate c) {
  const auto cs = candidates(stage);
  for (std::size_t i = 0; i < cs.size(); ++i)
    if (cs[i] == c) return static_cast<int>(i);
  return -1;
}

struct PathRef {
  int stage = 0;
  int index = 0;  // position within the stage
  bool operator==(const PathRef&) const = default;
};

/// Weight-free skeleton of a supernet: maximal widths and depths plus the
/// fixed MB3D hyper-parameters.
struct SearchSpace {
  std::string name = "space";
  std::array<std::int64_t, 2> stem{16, 32};
  std::array<std::int64_t, kStages> widths{32, 48, 64, 96};
  std::array<int, kStages> depths{2, 2, 3, 3};
  int heads = 2, d_qk = 16, d_v = 32, exp = 4;
  std::int64_t classes = 4, resolution = 64;
  Activation activation = Activation::gelu;
  nn::Norm4dKind norm4d = nn::Norm4dKind::bn;

  bool operator==(const SearchSpace&) const = default;

  int num_paths() const {
    int n = 0;
    for (int d : depths) n += d;
    return n;
  }
  /// Flat index of the first path of `stage`.
  int first_path(int stage) const {
    int n = 0;
    for (int j = 0; j < stage; ++j) n += depths[j];
    return n;
  }
  PathRef ref(int flat) const {
    for (int j = 0; j < kStages; ++j) {
      if (flat < depths[j]) return {j, flat};
      flat -= depths[j];
    }
    throw DomainError("MetaPath index out of range");
  }
  int flat(PathRef r) const { return first_path(r.stage) + r.index; }
  int paths_allowing_3d() const { return depths[2] + depths[3]; }

  /// Skeleton taken from a concrete architecture: widths, per-stage depth
  /// (every block becomes a MetaPath) and the MB3D settings of its first
  /// MB3D block, if any.
  static SearchSpace from_arch(const arch::ArchSpec& a) {
    SearchSpace s;
    s.name = a.name;
    s.stem = a.stem;
    s.classes = a.classes;
    s.resolution = a.resolution;
    s.activation = a.activation;
    s.norm4d = a.norm4d;
    bool found = false;
    for (int j = 0; j < kStages; ++j) {
      s.widths[j] = a.stages[j].width;
      s.depths[j] = static_cast<int>(a.stages[j].blocks.size());
      for (const auto& b : a.stages[j].blocks) {
        if (const auto* m = std::get_if<arch::MB4D>(&b)) s.exp = m->exp;
        if (const auto* m = std::get_if<arch::MB3D>(&b); m && !found) {
          s.heads = m->heads;
          s.d_qk = m->d_qk;
          s.d_v = m->d_v;
          found = true;
        }
      }
    }
    return s;
  }
};

/// Concrete pick for every MetaPath plus per-stage widths.
struct SubnetChoice {
  std::vector<Candidate> kinds;
  std::array<std::int64_t, kStages> widths{};
  bool operator==(const SubnetChoice&) const = default;

  /// Every path kept at maximal width, with the last `n3d` paths of the
  /// two late stages set to MB3D.
  static SubnetChoice with_last_3d(const SearchSpace& s, int n3d) {
    if (n3d < 0 || n3d > s.paths_allowing_3d()) {
      throw DomainError("cannot place " + std::to_string(n3d) + " MB3D blocks in " +
                        std::to_string(s.paths_allowing_3d()) + " late-stage MetaPaths");
    }
    SubnetChoice c;
    c.widths = s.widths;
    c.kinds.assign(static_cast<std::size_t>(s.num_paths()), Candidate::mb4d);
    for (int i = 0; i < n3d; ++i) c.kinds[c.kinds.size() - 1 - static_cast<std::size_t>(i)] = Candidate::mb3d;
    return c;
  }
};

/// Materializes a choice into an ArchSpec; Identity paths are dropped and the
/// stem output follows the first stage width.
/// Throws DomainError when the result violates the placement rules.
inline arch::ArchSpec derive_arch(const SearchSpace& s, const SubnetChoice& c) {
  if (static_cast<int>(c.kinds.size()) != s.num_paths()) {
    throw DomainError("choice covers " + std::to_string(c.kinds.size()) + " MetaPaths, space has " +
                      std::to_string(s.num_paths()));
  }
  arch::ArchSpec a;
  a.name = s.name;
  a.stem = {s.stem[0], c.widths[0]};
  a.classes = s.classes;
  a.resolution = s.resolution;
  a.activation = s.activation;
  a.norm4d = s.norm4d;
  for (int j = 0; j < kStages; ++j) {
    auto& st = a.stages[j];
    st.width = c.widths[j];
    st.embedding = j > 0;
    if (c.widths[j] > s.widths[j]) throw DomainError("stage width exceeds the supernet width");
    for (int i = 0; i < s.depths[j]; ++i) {
      const auto kind = c.kinds[static_cast<std::size_t>(s.first_path(j) + i)];
      if (kind == Candidate::mb4d) st.blocks.push_back(arch::MB4D{c.widths[j], s.exp});
      if (kind == Candidate::mb3d) {
        if (!allows_3d(j)) throw DomainError("invalid choice: MB3D selected in stage " + std::to_string(j + 1));
        st.blocks.push_back(arch::MB3D{c.widths[j], s.heads, s.d_qk, s.d_v, s.exp});
      }
    }
  }
  auto v = arch::validate(a);
  if (!v.empty()) throw DomainError("invalid choice combination: " + arch::to_string(v.front()));
  return a;
}

inline arch::ArchSpec derive_arch(const SearchSpace& s, int last_n_3d, const std::array<std::int64_t, kStages>& widths) {
  auto c = SubnetChoice::with_last_3d(s, last_n_3d);
  c.widths = widths;
  return derive_arch(s, c);
}

/// Maps branch logits to positive values before the importance ratio.
/// `softplus` keeps ratios defined for any real logits; `raw` uses the
/// logits directly and requires a positive identity logit.
enum class ImportanceTransform { softplus, raw };

struct Importance {
  std::vector<double> per_path;
  std::array<double, kStages> per_stage{};
};

inline double softplus(double x) { return x > 30 ? x : std::log1p(std::exp(x)); }

/// Importance of each MetaPath: a(4D)/a(I) in stages 1-2 and
/// (a(3D)+a(4D))/a(I) in stages 3-4, with a = transform(alpha). Stage
/// scores sum the scores of the paths flagged in `active` (all when empty).
inline Importance importance_scores(const SearchSpace& s, const std::vector<std::vector<double>>& alphas,
                                    ImportanceTransform tf = ImportanceTransform::softplus,
                                    const std::vector<bool>& active = {}) {
  if (static_cast<int>(alphas.size()) != s.num_paths()) throw DomainError("one alpha vector per MetaPath is required");
  Importance imp;
  imp.per_path.resize(alphas.size());
  for (std::size_t p = 0; p < alphas.size(); ++p) {
    const auto ref = s.ref(static_cast<int>(p));
    const auto& a = alphas[p];
    if (a.size() != candidates(ref.stage).size()) throw DomainError("alpha length does not match the candidate set");
    auto f = [&](double x) { return tf == ImportanceTransform::softplus ? softplus(x) : x; };
    const double ident = f(a[static_cast<std::size_t>(candidate_index(ref.stage, Candidate::identity))]);
    if (!(ident > 0.0)) {
      throw DomainError("identity branch weight of MetaPath " + std::to_string(p) +
                        " is not positive; the raw importance ratio is undefined");
    }
    double num = f(a[static_cast<std::size_t>(candidate_index(ref.stage, Candidate::mb4d))]);
    if (allows_3d(ref.stage)) num += f(a[static_cast<std::size_t>(candidate_index(ref.stage, Candidate::mb3d))]);
    imp.per_path[p] = num / ident;
    if (active.empty() || active[p]) imp.per_stage[static_cast<std::size_t>(ref.stage)] += imp.per_path[p];
  }
  return imp;
}

inline arch::Json space_to_json(const SearchSpace& s) {
  arch::Json j;
  j["schema"] = "effnas.space/v1";
  j["name"] = s.name;
  j["stem"] = {s.stem[0], s.stem[1]};
  j["widths"] = s.widths;
  j["depths"] = s.depths;
  j["heads"] = s.heads;
  j["d_qk"] = s.d_qk;
  j["d_v"] = s.d_v;
  j["exp"] = s.exp;
  j["classes"] = s.classes;
  j["resolution"] = s.resolution;
  j["activation"] = effnas::to_string(s.activation);
  j["norm4d"] = nn::to_string(s.norm4d);
  return j;
}

inline SearchSpace space_from_json(const arch::Json& j) {
  try {
    if (j.at("schema").get<std::string>() != "effnas.space/v1") throw FormatError("unsupported search-space schema");
    SearchSpace s;
    s.name = j.at("name").get<std::string>();
    s.stem = j.at("stem").get<std::array<std::int64_t, 2>>();
    s.widths = j.at("widths").get<std::array<std::int64_t, kStages>>();
    s.depths = j.at("depths").get<std::array<int, kStages>>();
    s.heads = j.at("heads").get<int>();
    s.d_qk = j.at("d_qk").get<int>();
    s.d_v = j.at("d_v").get<int>();
    s.exp = j.at("exp").get<int>();
    s.classes = j.at("classes").get<std::int64_t>();
    s.resolution = j.at("resolution").get<std::int64_t>();
    s.activation = parse_activation(j.at("activation").get<std::string>());
    s.norm4d = nn::parse_norm4d(j.at("norm4d").get<std::string>());
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed search space: ") + e.what());
  }
}

}  // namespace effnas::supernet
