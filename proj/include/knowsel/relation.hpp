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

#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace knowsel {

/// The five person-X commonsense relations, in tie-break order.
enum class Relation : std::size_t { kXIntent = 0, kXNeed, kXWant, kXEffect, kXReact };

inline constexpr std::size_t kNumRelations = 5;
inline constexpr std::array<Relation, kNumRelations> kRelations = {
    Relation::kXIntent, Relation::kXNeed, Relation::kXWant, Relation::kXEffect,
    Relation::kXReact};

std::string_view relation_name(Relation r);
std::optional<Relation> parse_relation(std::string_view name);

inline std::size_t index_of(Relation r) { return static_cast<std::size_t>(r); }

/// Commonsense inferences for one example, one list per relation.
struct KnowledgeBundle {
  std::array<std::vector<std::string>, kNumRelations> inferences;

  std::vector<std::string>& operator[](Relation r) { return inferences[index_of(r)]; }
  const std::vector<std::string>& operator[](Relation r) const {
    return inferences[index_of(r)];
  }
  bool operator==(const KnowledgeBundle&) const = default;
};

}  // namespace knowsel
