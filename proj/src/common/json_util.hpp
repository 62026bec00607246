/*
 * Copyright 2026 The DRA Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */


#ifndef DRA_SRC_COMMON_JSON_UTIL_HPP
#define DRA_SRC_COMMON_JSON_UTIL_HPP

#include <algorithm>
#include <initializer_list>
#include <string>

#include <json.hpp>

#include "dra/error.hpp"

namespace dra::jsonutil {

inline void require_object(const nlohmann::json& j, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
}

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known,
                           const std::string& where) {
  require_object(j, where);
  for (const auto& item : j.items()) {
    if (std::none_of(known.begin(), known.end(),
                     [&](const char* k) { return item.key() == k; })) {
      throw ConfigError(where + ": unknown field '" + item.key() + "'");
    }
  }
}

}  // namespace dra::jsonutil

#endif  // DRA_SRC_COMMON_JSON_UTIL_HPP
