#pragma once

#include <initializer_list>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "gbemt/errors.hpp"

namespace gbemt::detail {

// Unknown keys are hard errors; absent keys keep their defaults.
inline void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                       const std::string& context) {
  if (!j.is_object()) throw ConfigError(context + ": expected a JSON object");
  std::set<std::string> known(allowed.begin(), allowed.end());
  for (const auto& [key, _] : j.items()) {
    if (known.count(key) == 0) throw ConfigError(context + ": unknown key '" + key + "'");
  }
}

template <typename T>
void read_key(const nlohmann::json& j, const char* key, T& out, const std::string& context) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->template get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(context + ": bad value for '" + key + "': " + e.what());
  }
}

}  // namespace gbemt::detail
