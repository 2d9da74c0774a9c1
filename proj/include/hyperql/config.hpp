#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>

#include "json.hpp"

namespace hyperql {

using Json = nlohmann::json;

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

inline Json load_json_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::filesystem::filesystem_error("cannot open config", path,
                                                  std::make_error_code(std::errc::no_such_file_or_directory));
  try {
    return Json::parse(f);
  } catch (const Json::parse_error& e) {
    throw ConfigError("config parse error in " + path.string() + ": " + e.what());
  }
}

// Every key in cfg must exist in the reference layout with a compatible
// type; unknown keys are rejected with their full path.
inline void validate_config(const Json& cfg, const Json& reference, const std::string& path = "") {
  for (auto it = cfg.begin(); it != cfg.end(); ++it) {
    const std::string key_path = path.empty() ? it.key() : path + "." + it.key();
    if (!reference.contains(it.key())) {
      throw ConfigError("unknown config key: " + key_path);
    }
    const Json& ref = reference.at(it.key());
    if (it.value().is_object() != ref.is_object()) {
      throw ConfigError("config key has wrong structure: " + key_path);
    }
    if (it.value().is_object()) validate_config(it.value(), ref, key_path);
  }
}

// Merge user values over defaults (objects recursively, scalars replace).
inline void merge_config(Json& base, const Json& over) {
  for (auto it = over.begin(); it != over.end(); ++it) {
    if (it.value().is_object() && base.contains(it.key()) && base[it.key()].is_object()) {
      merge_config(base[it.key()], it.value());
    } else {
      base[it.key()] = it.value();
    }
  }
}

// One dotted override, e.g. ("trainer.batch", "100"). Values parse as JSON
// when possible and fall back to strings.
inline void apply_override(Json& cfg, const std::string& dotted, const std::string& value) {
  Json* node = &cfg;
  std::string rest = dotted;
  std::string walked;
  while (true) {
    const size_t dot = rest.find('.');
    const std::string key = rest.substr(0, dot);
    walked = walked.empty() ? key : walked + "." + key;
    if (!node->contains(key)) throw ConfigError("unknown config key: " + walked);
    if (dot == std::string::npos) {
      Json parsed = Json::parse(value, nullptr, false);
      (*node)[key] = parsed.is_discarded() ? Json(value) : parsed;
      return;
    }
    node = &(*node)[key];
    if (!node->is_object()) throw ConfigError("config key is not a section: " + walked);
    rest = rest.substr(dot + 1);
  }
}

// Output root: the HYPERQL_OUT environment variable, when set, re-roots
// every relative out_dir.
inline std::filesystem::path resolve_out_dir(const std::string& configured) {
  std::filesystem::path out(configured);
  const char* root = std::getenv("HYPERQL_OUT");
  if (root && *root && out.is_relative()) return std::filesystem::path(root) / out;
  return out;
}

}  // namespace hyperql
