#pragma once

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "effnas/arch/count.hpp"
#include "effnas/arch/spec.hpp"

namespace effnas::lut {

/// Kind of a measured unit. Besides the two MetaBlocks, the fixed parts of
/// the network are timed too so that a sum over entries covers a whole
/// forward pass.
enum class UnitKind { mb4d, mb3d, embed, stem, head };

inline const char* to_string(UnitKind k) {
  switch (k) {
    case UnitKind::mb4d: return "MB4D";
    case UnitKind::mb3d: return "MB3D";
    case UnitKind::embed: return "Embed";
    case UnitKind::stem: return "Stem";
    case UnitKind::head: return "Head";
  }
  return "?";
}
using effnas::to_string;

inline UnitKind parse_unit_kind(std::string_view s) {
  if (s == "MB4D") return UnitKind::mb4d;
  if (s == "MB3D") return UnitKind::mb3d;
  if (s == "Embed") return UnitKind::embed;
  if (s == "Stem") return UnitKind::stem;
  if (s == "Head") return UnitKind::head;
  throw DomainError("unknown unit kind '" + std::string(s) + "' (expected MB4D, MB3D, Embed, Stem or Head)");
}

/// Table key. `width` is the output channel count and `resolution` the
/// output side length, except for Stem where it is the input side. The
/// `exp` column carries the expansion ratio for MetaBlocks, the input width
/// for Embed, the first stem width for Stem and the class count for Head.
struct LatencyKey {
  UnitKind kind = UnitKind::mb4d;
  std::int64_t width = 0;
  std::int64_t resolution = 0;
  std::int64_t exp = 0;

  auto tie() const { return std::tie(kind, width, resolution, exp); }
  bool operator==(const LatencyKey& o) const { return tie() == o.tie(); }
  bool operator<(const LatencyKey& o) const { return tie() < o.tie(); }
};

inline std::string to_string(const LatencyKey& k) {
  return std::string(to_string(k.kind)) + "(width=" + std::to_string(k.width) + ", res=" + std::to_string(k.resolution) +
         ", exp=" + std::to_string(k.exp) + ")";
}

struct LatencyEntry {
  double median_s = 0;
  double mad_s = 0;
  std::int64_t samples = 0;
  bool operator==(const LatencyEntry&) const = default;
};

/// Attention shape shared by every MB3D entry of a table.
struct Mb3dDims {
  int heads = 2, d_qk = 16, d_v = 32;
};

struct LatencyTable {
  std::map<LatencyKey, LatencyEntry> entries;
  std::string fingerprint;

  bool operator==(const LatencyTable&) const = default;

  const LatencyEntry* find(const LatencyKey& k) const {
    auto it = entries.find(k);
    return it == entries.end() ? nullptr : &it->second;
  }
  void insert(const LatencyKey& k, const LatencyEntry& e) {
    if (!(e.median_s > 0)) throw DomainError("latency of " + to_string(k) + " must be positive");
    entries[k] = e;
  }
};

inline LatencyKey stem_key(std::int64_t c0, std::int64_t c1, std::int64_t res) { return {UnitKind::stem, c1, res, c0}; }
inline LatencyKey embed_key(std::int64_t cin, std::int64_t cout, std::int64_t side) {
  return {UnitKind::embed, cout, side, cin};
}
inline LatencyKey head_key(std::int64_t width, std::int64_t side, std::int64_t classes) {
  return {UnitKind::head, width, side, classes};
}

/// One summand of a whole-network estimate.
struct LatencyTerm {
  std::string where;
  LatencyKey key;
};

/// Every table lookup needed to estimate `spec`, in forward order.
inline std::vector<LatencyTerm> latency_terms(const arch::ArchSpec& spec) {
  arch::require_valid(spec);
  std::vector<LatencyTerm> out;
  out.push_back({"stem", stem_key(spec.stem[0], spec.stem[1], spec.resolution)});
  for (int j = 0; j < arch::kStages; ++j) {
    const auto& st = spec.stages[j];
    const auto side = spec.stage_side(j);
    const std::string sp = "stages." + std::to_string(j);
    if (st.embedding) out.push_back({sp + ".embed", embed_key(arch::count::input_width(spec, j), st.width, side)});
    for (std::size_t i = 0; i < st.blocks.size(); ++i) {
      const auto& b = st.blocks[i];
      const std::string bp = sp + ".blocks." + std::to_string(i);
      if (const auto* m = std::get_if<arch::MB4D>(&b)) out.push_back({bp, {UnitKind::mb4d, m->width, side, m->exp}});
      if (const auto* m = std::get_if<arch::MB3D>(&b)) out.push_back({bp, {UnitKind::mb3d, m->width, side, m->exp}});
    }
  }
  out.push_back({"head", head_key(spec.stages[3].width, spec.stage_side(3), spec.classes)});
  return out;
}

/// Median in whole picoseconds; estimates sum these so that adding a unit
/// changes the total by exactly its entry.
inline std::int64_t to_ps(double seconds) { return std::llround(seconds * 1e12); }

/// Sum of table medians over stem, embeddings, blocks and head, in
/// picoseconds. Exact keys only; every missing key is listed in the error.
inline std::int64_t estimate_latency_ps(const arch::ArchSpec& spec, const LatencyTable& table) {
  std::int64_t total = 0;
  std::vector<std::string> missing;
  for (const auto& t : latency_terms(spec)) {
    if (const auto* e = table.find(t.key)) {
      total += to_ps(e->median_s);
    } else {
      missing.push_back(t.where + " " + to_string(t.key));
    }
  }
  if (!missing.empty()) {
    std::string msg = "latency table lacks " + std::to_string(missing.size()) + " key(s):";
    for (const auto& m : missing) msg += "\n  " + m;
    throw DomainError(msg);
  }
  return total;
}

inline double estimate_latency(const arch::ArchSpec& spec, const LatencyTable& table) {
  return static_cast<double>(estimate_latency_ps(spec, table)) * 1e-12;
}

/// Multiply-accumulates of one unit; the basis of the synthetic cost model.
inline std::int64_t unit_macs(const LatencyKey& k, const Mb3dDims& d) {
  using namespace arch::count;
  switch (k.kind) {
    case UnitKind::mb4d: return block_macs(arch::MB4D{k.width, static_cast<int>(k.exp)}, k.resolution);
    case UnitKind::mb3d:
      return block_macs(arch::MB3D{k.width, d.heads, d.d_qk, d.d_v, static_cast<int>(k.exp)}, k.resolution);
    case UnitKind::embed: return embedding_macs(k.exp, k.width, k.resolution);
    case UnitKind::stem: return conv_macs(3, k.exp, 3, k.resolution / 2) + conv_macs(k.exp, k.width, 3, k.resolution / 4);
    case UnitKind::head: return k.width * k.exp;
  }
  return 0;
}

inline constexpr const char* kSyntheticFingerprint = "synthetic-v1";

/// Deterministic cost model, not a measurement: a per-kind fixed overhead
/// plus a per-kind cost per multiply-accumulate.
inline LatencyEntry synthetic_entry(const LatencyKey& k, const Mb3dDims& d) {
  static constexpr double kOverhead[] = {20e-6, 40e-6, 10e-6, 15e-6, 5e-6};
  static constexpr double kPerMac[] = {1.0e-9, 1.5e-9, 1.2e-9, 1.2e-9, 1.0e-9};
  const auto i = static_cast<std::size_t>(k.kind);
  return {kOverhead[i] + kPerMac[i] * static_cast<double>(unit_macs(k, d)), 0.0, 0};
}

inline LatencyTable synthetic_table(const std::vector<LatencyKey>& keys, const Mb3dDims& d) {
  LatencyTable t;
  t.fingerprint = kSyntheticFingerprint;
  for (const auto& k : keys) t.insert(k, synthetic_entry(k, d));
  return t;
}

/// Cartesian product of kinds x widths x resolutions with a fixed `exp`.
inline std::vector<LatencyKey> grid_keys(const std::vector<UnitKind>& kinds, const std::vector<std::int64_t>& widths,
                                         const std::vector<std::int64_t>& resolutions, std::int64_t exp) {
  if (kinds.empty() || widths.empty() || resolutions.empty()) throw DomainError("latency grid must be non-empty");
  std::vector<LatencyKey> out;
  for (auto k : kinds)
    for (auto w : widths) {
      if (w < 16 || w % 16 != 0) throw DomainError("grid width " + std::to_string(w) + " is not a positive multiple of 16");
      for (auto r : resolutions) {
        if (r < 1) throw DomainError("grid resolution must be positive");
        out.push_back({k, w, r, exp});
      }
    }
  return out;
}

// ---------------------------------------------------------------------------
// CSV persistence
// ---------------------------------------------------------------------------

inline constexpr const char* kCsvHeader = "kind,width,resolution,exp,median_s,mad_s,samples,fingerprint";

inline std::string format_double(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::string to_csv(const LatencyTable& t) {
  std::string out = std::string(kCsvHeader) + "\n";
  for (const auto& [k, e] : t.entries) {
    out += std::string(to_string(k.kind)) + "," + std::to_string(k.width) + "," + std::to_string(k.resolution) + "," +
           std::to_string(k.exp) + "," + format_double(e.median_s) + "," + format_double(e.mad_s) + "," +
           std::to_string(e.samples) + "," + t.fingerprint + "\n";
  }
  return out;
}

struct CsvLoad {
  LatencyTable table;
  std::vector<std::string> warnings;
};

/// Parses a table. When `expected_fingerprint` is non-empty and differs
/// from the stored one, a warning is returned instead of failing.
inline CsvLoad from_csv(const std::string& text, const std::string& expected_fingerprint = "") {
  CsvLoad res;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  auto fail = [&](const std::string& msg) { throw FormatError("latency CSV line " + std::to_string(lineno) + ": " + msg); };
  bool have_fp = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno == 1) {
      if (line != kCsvHeader) fail("expected header '" + std::string(kCsvHeader) + "'");
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 8) fail("expected 8 fields, got " + std::to_string(f.size()));
    auto integer = [&](const std::string& s, const char* what) {
      std::int64_t v = 0;
      auto r = std::from_chars(s.data(), s.data() + s.size(), v);
      if (r.ec != std::errc() || r.ptr != s.data() + s.size()) fail(std::string("bad ") + what + " '" + s + "'");
      return v;
    };
    auto real = [&](const std::string& s, const char* what) {
      double v = 0;
      auto r = std::from_chars(s.data(), s.data() + s.size(), v);
      if (r.ec != std::errc() || r.ptr != s.data() + s.size()) fail(std::string("bad ") + what + " '" + s + "'");
      return v;
    };
    LatencyKey k;
    try {
      k.kind = parse_unit_kind(f[0]);
    } catch (const DomainError& e) {
      fail(e.what());
    }
    k.width = integer(f[1], "width");
    k.resolution = integer(f[2], "resolution");
    k.exp = integer(f[3], "exp");
    LatencyEntry e{real(f[4], "median_s"), real(f[5], "mad_s"), integer(f[6], "samples")};
    if (!(e.median_s > 0)) fail("median_s must be positive");
    if (k.width < 16 || k.width % 16 != 0) fail("width " + f[1] + " is not a multiple of 16");
    if (res.table.entries.count(k)) fail("duplicate key " + to_string(k));
    if (!have_fp) {
      res.table.fingerprint = f[7];
      have_fp = true;
    } else if (f[7] != res.table.fingerprint) {
      fail("mixed fingerprints '" + res.table.fingerprint + "' and '" + f[7] + "'");
    }
    res.table.entries[k] = e;
  }
  if (lineno == 0) throw FormatError("latency CSV is empty");
  if (!expected_fingerprint.empty() && have_fp && res.table.fingerprint != expected_fingerprint) {
    res.warnings.push_back("table was measured on '" + res.table.fingerprint + "', this host is '" +
                           expected_fingerprint + "'");
  }
  return res;
}

inline void save_csv(const LatencyTable& t, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path);
  f << to_csv(t);
  if (!f) throw Error("write failed for " + path);
}

inline CsvLoad load_csv(const std::string& path, const std::string& expected_fingerprint = "") {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot read " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return from_csv(ss.str(), expected_fingerprint);
}

}  // namespace effnas::lut
