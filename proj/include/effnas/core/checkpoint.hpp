#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "effnas/core/tensor.hpp"

namespace effnas {

/// Named float32 tensors plus an optional free-form metadata section.
///
/// On-disk layout (all integers little-endian):
///
///     magic      8 bytes  "EFFNASCK"
///     version    u32      1
///     count      u32      number of tensors
///     count x {
///       name_len u32, name bytes (UTF-8)
///       rank     u32, dims i64[rank]
///       data     f32[prod(dims)] (IEEE-754 bit patterns)
///     }
///     meta_len   u32, meta bytes (UTF-8, usually JSON; 0 when absent)
struct Checkpoint {
  std::vector<std::pair<std::string, Tensor>> tensors;
  std::string metadata;

  const Tensor* find(std::string_view name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }
  const Tensor& at(std::string_view name) const {
    if (const auto* t = find(name)) return *t;
    throw FormatError("checkpoint has no tensor named '" + std::string(name) + "'");
  }
};

inline constexpr std::array<char, 8> kCheckpointMagic{'E', 'F', 'F', 'N', 'A', 'S', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

class ByteWriter {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <class U>
  void le(U v) {
    static_assert(std::is_unsigned_v<U>);
    for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  std::vector<unsigned char> take() { return std::move(out_); }

 private:
  std::vector<unsigned char> out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const unsigned char> in) : in_(in) {}
  void raw(void* p, std::size_t n) {
    need(n);
    std::memcpy(p, in_.data() + pos_, n);
    pos_ += n;
  }
  template <class U>
  U le() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(in_[pos_ + i]) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > in_.size()) throw FormatError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  std::span<const unsigned char> in_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<unsigned char> encode_checkpoint(const Checkpoint& ckpt) {
  detail::ByteWriter w;
  w.raw(kCheckpointMagic.data(), kCheckpointMagic.size());
  w.le<std::uint32_t>(kCheckpointVersion);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    w.le<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    w.raw(name.data(), name.size());
    w.le<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.le<std::uint64_t>(static_cast<std::uint64_t>(d));
    for (float v : t.data()) w.le<std::uint32_t>(std::bit_cast<std::uint32_t>(v));
  }
  w.le<std::uint32_t>(static_cast<std::uint32_t>(ckpt.metadata.size()));
  w.raw(ckpt.metadata.data(), ckpt.metadata.size());
  return w.take();
}

inline Checkpoint decode_checkpoint(std::span<const unsigned char> bytes) {
  detail::ByteReader r(bytes);
  std::array<char, 8> magic{};
  r.raw(magic.data(), magic.size());
  if (magic != kCheckpointMagic) throw FormatError("not a checkpoint file (bad magic)");
  const auto version = r.le<std::uint32_t>();
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ckpt;
  const auto count = r.le<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name(r.le<std::uint32_t>(), '\0');
    r.raw(name.data(), name.size());
    const auto rank = r.le<std::uint32_t>();
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::int64_t>(r.le<std::uint64_t>());
    check_shape(shape);
    std::vector<float> data(static_cast<std::size_t>(effnas::numel(shape)));
    for (auto& v : data) v = std::bit_cast<float>(r.le<std::uint32_t>());
    ckpt.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  ckpt.metadata.assign(r.le<std::uint32_t>(), '\0');
  r.raw(ckpt.metadata.data(), ckpt.metadata.size());
  if (!r.done()) throw FormatError("trailing bytes after checkpoint");
  return ckpt;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const auto bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

/// Converts any-precision tensor to the float32 storage type.
template <class T>
Tensor to_float(const BasicTensor<T>& t) {
  if constexpr (std::is_same_v<T, float>) {
    return t.detach();
  } else {
    std::vector<float> v(t.data().begin(), t.data().end());
    return Tensor(t.shape(), std::move(v));
  }
}

}  // namespace effnas
