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

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "knowsel/corpus.hpp"
#include "knowsel/relation.hpp"
#include "knowsel/vocab.hpp"

namespace knowsel {

/// Pre-generated commonsense inferences keyed by example id. Iteration
/// follows load order.
class KnowledgeStore {
 public:
  /// Throws ValidationError on a duplicate id.
  void insert(std::string id, KnowledgeBundle bundle);
  const KnowledgeBundle* find(const std::string& id) const;
  std::size_t size() const { return order_.size(); }
  bool empty() const { return order_.empty(); }
  const std::vector<std::string>& ids() const { return order_; }

 private:
  std::map<std::string, KnowledgeBundle> bundles_;
  std::vector<std::string> order_;
};

/// Reads the five relation arrays from a JSON object. Missing or unknown
/// relation keys raise SchemaError naming `id`.
KnowledgeBundle bundle_from_json(const nlohmann::json& object, const std::string& id,
                                 bool allow_extra_keys);
nlohmann::ordered_json bundle_to_json(const KnowledgeBundle& bundle);

KnowledgeStore parse_store(std::istream& in);
KnowledgeStore load_store(const std::filesystem::path& path);
/// One line per record, keys in the order id, xIntent, xNeed, xWant,
/// xEffect, xReact.
void save_store(const KnowledgeStore& store, std::ostream& out);

/// [CLS] [REL] tok(cs_1) [SEP] tok(cs_2) ... truncated to `max_len` tokens.
std::vector<TokenId> build_relation_sequence(const KnowledgeBundle& bundle, Relation relation,
                                             const Vocabulary& vocab, std::size_t max_len);

enum class MissingKnowledge { kStrict, kEmptyBundle };

struct AttachReport {
  std::size_t attached = 0;
  std::size_t missing = 0;  // examples that fell back to an empty bundle
};

/// Gives every example its bundle from the store. Under kStrict, ids absent
/// from the store raise DataError listing them.
AttachReport attach(const KnowledgeStore& store, Corpus& corpus, MissingKnowledge policy);

}  // namespace knowsel
