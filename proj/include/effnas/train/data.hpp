#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "effnas/arch/io.hpp"
#include "effnas/core/checkpoint.hpp"

namespace effnas::train {

enum class DatasetKind { quadrant_pattern, gaussian_blob };

inline const char* to_string(DatasetKind k) {
  return k == DatasetKind::quadrant_pattern ? "quadrant-pattern" : "gaussian-blob";
}
using effnas::to_string;

inline DatasetKind parse_dataset_kind(std::string_view s) {
  if (s == "quadrant-pattern") return DatasetKind::quadrant_pattern;
  if (s == "gaussian-blob") return DatasetKind::gaussian_blob;
  throw DomainError("unknown dataset kind '" + std::string(s) + "' (expected quadrant-pattern or gaussian-blob)");
}

/// Synthetic image classification task. Each image is its class template
/// plus `noise`-scaled perturbations, so `noise = 0` yields the templates.
struct DatasetSpec {
  DatasetKind kind = DatasetKind::quadrant_pattern;
  int classes = 4;
  std::int64_t resolution = 64;
  std::int64_t train = 1024, val = 256, test = 512;
  std::uint64_t seed = 0;
  double noise = 0.6;
  bool operator==(const DatasetSpec&) const = default;
};

struct Batch {
  Tensor x;
  std::vector<int> labels;
};

struct Dataset {
  Tensor images;  // [N,3,R,R]; undefined when the split is empty
  std::vector<int> labels;
  int classes = 0;
  std::int64_t size() const { return static_cast<std::int64_t>(labels.size()); }
};

struct Splits {
  DatasetSpec spec;
  Dataset train, val, test;
};

inline void validate(const DatasetSpec& s) {
  if (s.classes < 2) throw DomainError("a dataset needs at least two classes");
  if (s.resolution < 32 || s.resolution % 32 != 0) {
    throw DomainError("dataset resolution " + std::to_string(s.resolution) + " is not a positive multiple of 32");
  }
  if (s.train < 0 || s.val < 0 || s.test < 0) throw DomainError("split sizes must be non-negative");
  if (!(s.noise >= 0)) throw DomainError("noise must be non-negative");
}

namespace detail {

inline std::uint64_t mix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Grid side for the quadrant task: the smallest g with g*g >= classes.
inline int grid_side(int classes) {
  int g = 1;
  while (g * g < classes) ++g;
  return g;
}

/// Class template, one plane per channel.
inline std::vector<float> make_template(const DatasetSpec& s, int label) {
  const auto r = s.resolution;
  std::vector<float> img(static_cast<std::size_t>(3 * r * r), 0.0f);
  if (s.kind == DatasetKind::quadrant_pattern) {
    const int g = grid_side(s.classes);
    const auto cell = r / g;
    const auto cy = (label / g) * cell, cx = (label % g) * cell;
    for (int c = 0; c < 3; ++c)
      for (std::int64_t y = cy; y < cy + cell; ++y)
        for (std::int64_t x = cx; x < cx + cell; ++x) {
          const bool on = ((y / 4) + (x / 4)) % 2 == 0;
          img[static_cast<std::size_t>((c * r + y) * r + x)] = (on ? 1.0f : 0.5f) * (1.0f + 0.25f * c);
        }
  } else {
    const double angle = 2 * M_PI * label / s.classes;
    const double cy = r * (0.5 + 0.3 * std::sin(angle)), cx = r * (0.5 + 0.3 * std::cos(angle));
    const double sigma = r / 10.0;
    for (int c = 0; c < 3; ++c)
      for (std::int64_t y = 0; y < r; ++y)
        for (std::int64_t x = 0; x < r; ++x) {
          const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
          img[static_cast<std::size_t>((c * r + y) * r + x)] = static_cast<float>((1.0 + 0.25 * c) * std::exp(-d2 / (2 * sigma * sigma)));
        }
  }
  return img;
}

}  // namespace detail

/// Global sample indices of [first, first+count) in their seeded split
/// order. The label of a sample is its global index mod classes, which keeps
/// every split balanced.
inline std::vector<std::int64_t> sample_order(const DatasetSpec& s, std::int64_t first, std::int64_t count) {
  std::vector<std::int64_t> order(static_cast<std::size_t>(count));
  std::iota(order.begin(), order.end(), first);
  std::mt19937_64 shuffle(detail::mix(s.seed ^ 0xD1B54A32D192ED03ULL) ^ static_cast<std::uint64_t>(first));
  std::shuffle(order.begin(), order.end(), shuffle);
  return order;
}

/// Samples [first, first+count) of the global sample stream; each sample
/// has its own generator, so splits are disjoint and order independent.
inline Dataset generate_range(const DatasetSpec& s, std::int64_t first, std::int64_t count) {
  validate(s);
  Dataset d;
  d.classes = s.classes;
  if (count == 0) return d;
  const auto r = s.resolution, plane = r * r;
  std::vector<std::vector<float>> templates;
  for (int k = 0; k < s.classes; ++k) templates.push_back(detail::make_template(s, k));
  std::vector<float> data(static_cast<std::size_t>(count * 3 * plane));
  const auto order = sample_order(s, first, count);
  for (std::int64_t n = 0; n < count; ++n) {
    const auto gidx = order[static_cast<std::size_t>(n)];
    const int label = static_cast<int>(gidx % s.classes);
    d.labels.push_back(label);
    std::mt19937_64 rng(detail::mix(s.seed * 0x100000001B3ULL + static_cast<std::uint64_t>(gidx)));
    std::normal_distribution<float> gauss(0.0f, 1.0f);
    std::uniform_real_distribution<float> unif(0.0f, 1.0f);
    float* out = data.data() + n * 3 * plane;
    const auto& t = templates[static_cast<std::size_t>(label)];
    const float amp = 1.0f + static_cast<float>(s.noise) * (unif(rng) - 0.5f);
    for (std::int64_t i = 0; i < 3 * plane; ++i) out[i] = amp * t[static_cast<std::size_t>(i)];
    if (s.noise > 0) {
      // A weaker copy of a different class pattern acts as a distractor.
      const int other = (label + 1 + static_cast<int>(unif(rng) * (s.classes - 1))) % s.classes;
      const float w = 0.5f * static_cast<float>(std::min(1.0, s.noise)) * unif(rng);
      const auto& o = templates[static_cast<std::size_t>(other)];
      for (std::int64_t i = 0; i < 3 * plane; ++i) out[i] += w * o[static_cast<std::size_t>(i)] + static_cast<float>(s.noise) * gauss(rng);
    }
  }
  d.images = Tensor({count, 3, r, r}, std::move(data));
  return d;
}

inline Splits gen_synthetic(const DatasetSpec& s) {
  validate(s);
  return {s, generate_range(s, 0, s.train), generate_range(s, s.train, s.val), generate_range(s, s.train + s.val, s.test)};
}

/// Copies samples `idx` into one batch.
inline Batch gather(const Dataset& d, const std::vector<std::int64_t>& idx) {
  const auto per = d.images.numel() / std::max<std::int64_t>(1, d.size());
  std::vector<float> x(static_cast<std::size_t>(per) * idx.size());
  Batch b;
  const auto src = d.images.data();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(src.begin() + idx[i] * per, per, x.begin() + static_cast<std::ptrdiff_t>(i * per));
    b.labels.push_back(d.labels[static_cast<std::size_t>(idx[i])]);
  }
  Shape shape = d.images.shape();
  shape[0] = static_cast<std::int64_t>(idx.size());
  b.x = Tensor(shape, std::move(x));
  return b;
}

/// Consecutive batches; the last one may be short. A non-null `rng`
/// shuffles the sample order first.
inline std::vector<Batch> batches(const Dataset& d, std::int64_t batch_size, std::mt19937_64* rng = nullptr) {
  if (batch_size < 1) throw DomainError("batch size must be positive");
  std::vector<std::int64_t> order(static_cast<std::size_t>(d.size()));
  std::iota(order.begin(), order.end(), 0);
  if (rng) std::shuffle(order.begin(), order.end(), *rng);
  std::vector<Batch> out;
  for (std::int64_t i = 0; i < d.size(); i += batch_size) {
    const auto end = std::min(d.size(), i + batch_size);
    out.push_back(gather(d, {order.begin() + i, order.begin() + end}));
  }
  return out;
}

inline arch::Json dataset_spec_json(const DatasetSpec& s) {
  return {{"schema", "effnas.dataset/v1"}, {"kind", to_string(s.kind)}, {"classes", s.classes},
          {"resolution", s.resolution},    {"train", s.train},           {"val", s.val},
          {"test", s.test},                {"seed", s.seed},             {"noise", s.noise}};
}

inline DatasetSpec dataset_spec_from_json(const arch::Json& j) {
  try {
    if (j.at("schema") != "effnas.dataset/v1") throw FormatError("unsupported dataset schema");
    DatasetSpec s;
    s.kind = parse_dataset_kind(j.at("kind").get<std::string>());
    s.classes = j.at("classes").get<int>();
    s.resolution = j.at("resolution").get<std::int64_t>();
    s.train = j.at("train").get<std::int64_t>();
    s.val = j.at("val").get<std::int64_t>();
    s.test = j.at("test").get<std::int64_t>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.noise = j.at("noise").get<double>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed dataset spec: ") + e.what());
  }
}

/// Dataset cache in the checkpoint format; labels are stored as floats.
inline Checkpoint to_checkpoint(const Splits& s) {
  Checkpoint ck;
  auto put = [&](const std::string& name, const Dataset& d) {
    if (d.size() == 0) return;
    ck.tensors.emplace_back(name + ".images", d.images);
    std::vector<float> l(d.labels.begin(), d.labels.end());
    ck.tensors.emplace_back(name + ".labels", Tensor({d.size()}, std::move(l)));
  };
  put("train", s.train);
  put("val", s.val);
  put("test", s.test);
  ck.metadata = dataset_spec_json(s.spec).dump();
  return ck;
}

inline Splits from_checkpoint(const Checkpoint& ck) {
  arch::Json meta;
  try {
    meta = arch::Json::parse(ck.metadata);
  } catch (const nlohmann::json::exception&) {
    throw FormatError("dataset cache metadata is not JSON");
  }
  Splits s;
  s.spec = dataset_spec_from_json(meta);
  auto get = [&](const std::string& name) {
    Dataset d;
    d.classes = s.spec.classes;
    if (!ck.find(name + ".images") && !ck.find(name + ".labels")) return d;
    d.images = ck.at(name + ".images");
    for (float v : ck.at(name + ".labels").data()) {
      const int l = static_cast<int>(v);
      if (l < 0 || l >= d.classes || static_cast<float>(l) != v) throw FormatError("dataset cache has a bad label");
      d.labels.push_back(l);
    }
    if (d.images.rank() != 4 || d.images.dim(0) != d.size()) throw FormatError("dataset cache images/labels disagree");
    return d;
  };
  s.train = get("train");
  s.val = get("val");
  s.test = get("test");
  return s;
}

inline void save_dataset(const std::string& path, const Splits& s) { save_checkpoint(path, to_checkpoint(s)); }
inline Splits load_dataset(const std::string& path) { return from_checkpoint(load_checkpoint(path)); }

}  // namespace effnas::train
