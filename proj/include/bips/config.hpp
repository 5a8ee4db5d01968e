#pragma once

// Flat `key=value` configuration files.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "bips/errors.hpp"

namespace bips {

using KeyValueMap = std::map<std::string, std::string>;

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline KeyValueMap parse_key_values(const std::string& text) {
  KeyValueMap kv;
  std::istringstream in(text);
  std::string line;
  int no = 0;
  while (std::getline(in, line)) {
    ++no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(no) + ": expected key=value");
    const auto key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("line " + std::to_string(no) + ": empty key");
    if (!kv.emplace(key, trim(line.substr(eq + 1))).second)
      throw ConfigError("line " + std::to_string(no) + ": repeated key '" + key + "'");
  }
  return kv;
}

inline KeyValueMap read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str());
}

// Typed lookups over a KeyValueMap; finish() rejects keys nobody asked for.
class ConfigReader {
 public:
  explicit ConfigReader(const KeyValueMap& kv) : kv_(kv) {}

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    auto it = kv_.find(key);
    if (it == kv_.end()) return;
    out = convert<T>(key, it->second);
  }

  void finish() const {
    for (const auto& [k, v] : kv_)
      if (!seen_.count(k)) throw ConfigError("unknown config key '" + k + "'");
  }

 private:
  template <typename T>
  static T convert(const std::string& key, const std::string& v) {
    try {
      std::size_t used = 0;
      T out{};
      if constexpr (std::is_same_v<T, std::string>) {
        return v;
      } else if constexpr (std::is_same_v<T, bool>) {
        if (v == "true" || v == "1") return true;
        if (v == "false" || v == "0") return false;
        throw ConfigError("");
      } else if constexpr (std::is_floating_point_v<T>) {
        out = static_cast<T>(std::stod(v, &used));
      } else if constexpr (std::is_unsigned_v<T>) {
        out = static_cast<T>(std::stoull(v, &used));
      } else {
        out = static_cast<T>(std::stoll(v, &used));
      }
      if (used != v.size()) throw ConfigError("");
      return out;
    } catch (const std::exception&) {
      throw ConfigError("bad value '" + v + "' for key '" + key + "'");
    }
  }

  const KeyValueMap& kv_;
  std::set<std::string> seen_;
};

}  // namespace bips
