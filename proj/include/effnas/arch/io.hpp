#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include "effnas/arch/spec.hpp"
#include <json.hpp>

namespace effnas::arch {

inline constexpr const char* kArchSchema = "effnas.arch/v1";

using Json = nlohmann::ordered_json;

inline Json block_to_json(const BlockSpec& b) {
  Json j;
  j["type"] = kind_name(b);
  if (const auto* m = std::get_if<MB4D>(&b)) {
    j["width"] = m->width;
    j["exp"] = m->exp;
  } else if (const auto* m = std::get_if<MB3D>(&b)) {
    j["width"] = m->width;
    j["heads"] = m->heads;
    j["d_qk"] = m->d_qk;
    j["d_v"] = m->d_v;
    j["exp"] = m->exp;
  }
  return j;
}

inline Json to_json_value(const ArchSpec& s) {
  Json j;
  j["schema"] = kArchSchema;
  j["name"] = s.name;
  j["resolution"] = s.resolution;
  j["classes"] = s.classes;
  j["activation"] = to_string(s.activation);
  j["norm4d"] = nn::to_string(s.norm4d);
  j["stem"] = {s.stem[0], s.stem[1]};
  j["stages"] = Json::array();
  for (const auto& st : s.stages) {
    Json js;
    js["width"] = st.width;
    js["embedding"] = st.embedding;
    js["blocks"] = Json::array();
    for (const auto& b : st.blocks) js["blocks"].push_back(block_to_json(b));
    j["stages"].push_back(std::move(js));
  }
  return j;
}

inline std::string to_json(const ArchSpec& s, int indent = 2) { return to_json_value(s).dump(indent); }

namespace detail {

class JsonReader {
 public:
  [[noreturn]] static void fail(const std::string& path, const std::string& msg) {
    throw FormatError(path.empty() ? msg : path + ": " + msg);
  }

  static std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

  static const Json& field(const Json& obj, const std::string& path, const char* key) {
    if (!obj.is_object()) fail(path, "expected an object");
    auto it = obj.find(key);
    if (it == obj.end()) fail(path, std::string("missing required key \"") + key + "\"");
    return *it;
  }

  static std::int64_t integer(const Json& v, const std::string& path) {
    if (!v.is_number_integer()) fail(path, "expected an integer");
    return v.get<std::int64_t>();
  }

  static std::int64_t integer(const Json& obj, const std::string& path, const char* key) {
    return integer(field(obj, path, key), join(path, key));
  }

  static std::int64_t integer_or(const Json& obj, const std::string& path, const char* key, std::int64_t fallback) {
    return obj.contains(key) ? integer(obj, path, key) : fallback;
  }

  static std::string text(const Json& obj, const std::string& path, const char* key) {
    const auto& v = field(obj, path, key);
    if (!v.is_string()) fail(join(path, key), "expected a string");
    return v.get<std::string>();
  }
};

inline BlockSpec block_from_json(const Json& j, const std::string& path) {
  using R = JsonReader;
  const auto type = R::text(j, path, "type");
  if (type == "Identity") return Identity{};
  if (type == "MB4D") {
    return MB4D{R::integer(j, path, "width"), static_cast<int>(R::integer_or(j, path, "exp", 4))};
  }
  if (type == "MB3D") {
    MB3D m;
    m.width = R::integer(j, path, "width");
    m.heads = static_cast<int>(R::integer_or(j, path, "heads", 8));
    m.d_qk = static_cast<int>(R::integer_or(j, path, "d_qk", 32));
    m.d_v = static_cast<int>(R::integer_or(j, path, "d_v", 128));
    m.exp = static_cast<int>(R::integer_or(j, path, "exp", 4));
    return m;
  }
  R::fail(R::join(path, "type"), "unknown block variant \"" + type + "\" (expected MB4D, MB3D or Identity)");
}

}  // namespace detail

/// Parses a v1 architecture document. Errors name the offending field,
/// e.g. `stages[2].blocks[0].type: unknown block variant "MB5D"`.
inline ArchSpec from_json_value(const Json& j) {
  using R = detail::JsonReader;
  if (!j.is_object()) R::fail("", "architecture document must be a JSON object");
  const auto schema = R::text(j, "", "schema");
  if (schema != kArchSchema) R::fail("schema", "unsupported schema \"" + schema + "\" (expected " + kArchSchema + ")");
  ArchSpec s;
  s.name = j.contains("name") ? R::text(j, "", "name") : "";
  s.resolution = R::integer(j, "", "resolution");
  s.classes = R::integer(j, "", "classes");
  try {
    if (j.contains("activation")) s.activation = parse_activation(R::text(j, "", "activation"));
  } catch (const DomainError& e) {
    R::fail("activation", e.what());
  }
  try {
    if (j.contains("norm4d")) s.norm4d = nn::parse_norm4d(R::text(j, "", "norm4d"));
  } catch (const DomainError& e) {
    R::fail("norm4d", e.what());
  }
  const auto& stem = R::field(j, "", "stem");
  if (!stem.is_array() || stem.size() != 2) R::fail("stem", "expected an array of two widths");
  for (int i = 0; i < 2; ++i) s.stem[i] = R::integer(stem[i], "stem[" + std::to_string(i) + "]");
  const auto& stages = R::field(j, "", "stages");
  if (!stages.is_array() || stages.size() != kStages) R::fail("stages", "expected an array of exactly 4 stages");
  for (int k = 0; k < kStages; ++k) {
    const std::string sp = "stages[" + std::to_string(k) + "]";
    const auto& js = stages[k];
    auto& st = s.stages[k];
    st.width = R::integer(js, sp, "width");
    const auto& emb = R::field(js, sp, "embedding");
    if (!emb.is_boolean()) R::fail(sp + ".embedding", "expected a boolean");
    st.embedding = emb.get<bool>();
    const auto& blocks = R::field(js, sp, "blocks");
    if (!blocks.is_array()) R::fail(sp + ".blocks", "expected an array");
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      st.blocks.push_back(detail::block_from_json(blocks[i], sp + ".blocks[" + std::to_string(i) + "]"));
    }
  }
  return s;
}

inline ArchSpec from_json(std::string_view text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("malformed JSON: ") + e.what());
  }
  return from_json_value(j);
}

inline ArchSpec load_arch(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open architecture file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

inline void save_arch(const std::string& path, const ArchSpec& s) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write architecture file " + path);
  out << to_json(s) << '\n';
}

}  // namespace effnas::arch
