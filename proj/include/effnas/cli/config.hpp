#pragma once

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "effnas/arch/io.hpp"

namespace effnas::cli {

/// Reads a flat run configuration: either one JSON object or key=value
/// lines with '#' comments. Keys may use '_' or '-'.
inline std::vector<std::pair<std::string, std::string>> read_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot read config file " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  const std::string text = ss.str();
  std::vector<std::pair<std::string, std::string>> out;
  auto norm = [](std::string k) {
    std::replace(k.begin(), k.end(), '_', '-');
    return k;
  };
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    arch::Json j;
    try {
      j = arch::Json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError("config " + path + " is not valid JSON: " + e.what());
    }
    for (const auto& [k, v] : j.items()) {
      if (v.is_object() || v.is_array() || v.is_null()) {
        throw FormatError("config " + path + ": key '" + k + "' must hold a scalar");
      }
      out.emplace_back(norm(k), v.is_string() ? v.get<std::string>() : v.dump());
    }
    return out;
  }
  std::istringstream in(text);
  int line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw FormatError("config " + path + " line " + std::to_string(line_no) + ": expected key=value");
    }
    auto trim = [](std::string s) {
      const auto l = s.find_first_not_of(" \t\r");
      const auto r = s.find_last_not_of(" \t\r");
      return l == std::string::npos ? std::string() : s.substr(l, r - l + 1);
    };
    auto key = trim(line.substr(0, eq));
    if (key.empty()) throw FormatError("config " + path + " line " + std::to_string(line_no) + ": empty key");
    out.emplace_back(norm(key), trim(line.substr(eq + 1)));
  }
  return out;
}

/// Splices `--config FILE` entries into the argument list as `--key=value`
/// ahead of the explicit flags; keys already given on the command line are
/// skipped so explicit flags win.
inline std::vector<std::string> merge_config(std::vector<std::string> args) {
  std::string path;
  std::size_t at = args.size(), width = 0;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[i + 1];
      at = i;
      width = 2;
      break;
    }
    if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
      at = i;
      width = 1;
      break;
    }
  }
  if (width == 0) return args;
  args.erase(args.begin() + static_cast<std::ptrdiff_t>(at), args.begin() + static_cast<std::ptrdiff_t>(at + width));
  auto given = [&](const std::string& key) {
    const auto flag = "--" + key;
    return std::any_of(args.begin(), args.end(),
                       [&](const std::string& a) { return a == flag || a.rfind(flag + "=", 0) == 0; });
  };
  std::vector<std::string> extra;
  for (const auto& [k, v] : read_config(path))
    if (!given(k)) extra.push_back("--" + k + "=" + v);
  args.insert(args.begin() + static_cast<std::ptrdiff_t>(at), extra.begin(), extra.end());
  return args;
}

/// Every long option of `app` with its resolved value; multi-valued options
/// become arrays.
inline arch::Json resolved_config(const CLI::App& app, const std::string& command) {
  arch::Json opts = arch::Json::object();
  for (const auto* o : app.get_options()) {
    if (o->get_lnames().empty()) continue;
    const auto& name = o->get_lnames().front();
    if (name.rfind("help", 0) == 0) continue;
    std::vector<std::string> vals = o->count() > 0 ? o->results() : std::vector<std::string>{};
    if (vals.empty()) {
      const auto d = o->get_default_str();
      if (!d.empty()) vals.push_back(d);
    }
    if (o->get_type_size() == 0 && vals.empty()) vals.push_back("false");
    if (o->get_expected_max() > 1) {
      opts[name] = vals;
    } else if (vals.empty()) {
      opts[name] = nullptr;
    } else {
      opts[name] = vals.back();
    }
  }
  return {{"command", command}, {"options", opts}};
}

}  // namespace effnas::cli
