/*
 * Copyright 2026 The BevGraph Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <initializer_list>
#include <string>
#include <string_view>

#include <json.hpp>

#include "bevgraph/errors.h"

namespace bevgraph::jsonutil {

// Rejects keys outside `allowed` so that typos in config files fail loudly.
inline void require_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed,
                         std::string_view where) {
  if (!j.is_object()) throw ConfigError(std::string(where) + ": expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (std::string_view a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError(std::string(where) + ": unknown field '" + key + "'");
  }
}

// Reads `key` into `out` if present; `out` keeps its default otherwise.
template <typename T>
void read(const nlohmann::json& j, const char* key, T& out, std::string_view where) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->template get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string(where) + "." + key + ": " + e.what());
  }
}

}  // namespace bevgraph::jsonutil
