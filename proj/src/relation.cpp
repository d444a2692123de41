/*
 * Copyright 2026 The knowsel Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "knowsel/relation.hpp"

namespace knowsel {

std::string_view relation_name(Relation r) {
  switch (r) {
    case Relation::kXIntent: return "xIntent";
    case Relation::kXNeed: return "xNeed";
    case Relation::kXWant: return "xWant";
    case Relation::kXEffect: return "xEffect";
    case Relation::kXReact: return "xReact";
  }
  return "?";
}

std::optional<Relation> parse_relation(std::string_view name) {
  for (auto r : kRelations)
    if (relation_name(r) == name) return r;
  return std::nullopt;
}

}  // namespace knowsel
