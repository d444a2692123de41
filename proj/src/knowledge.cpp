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

#include "knowsel/knowledge.hpp"

#include <fstream>
#include <istream>
#include <ostream>

#include "knowsel/error.hpp"

namespace knowsel {

void KnowledgeStore::insert(std::string id, KnowledgeBundle bundle) {
  if (bundles_.count(id)) throw ValidationError("knowledge: duplicate id '" + id + "'");
  order_.push_back(id);
  bundles_.emplace(std::move(id), std::move(bundle));
}

const KnowledgeBundle* KnowledgeStore::find(const std::string& id) const {
  auto it = bundles_.find(id);
  return it == bundles_.end() ? nullptr : &it->second;
}

KnowledgeBundle bundle_from_json(const nlohmann::json& object, const std::string& id,
                                 bool allow_extra_keys) {
  if (!object.is_object()) throw SchemaError("knowledge for '" + id + "' is not an object");
  KnowledgeBundle bundle;
  for (auto r : kRelations) {
    const std::string key(relation_name(r));
    auto it = object.find(key);
    if (it == object.end()) {
      throw SchemaError("knowledge for '" + id + "' lacks relation " + key);
    }
    if (!it->is_array()) throw SchemaError("knowledge for '" + id + "': " + key + " is not a list");
    for (const auto& s : *it) {
      if (!s.is_string()) {
        throw SchemaError("knowledge for '" + id + "': " + key + " holds a non-string");
      }
      bundle[r].push_back(s.get<std::string>());
    }
  }
  if (!allow_extra_keys) {
    for (const auto& [key, value] : object.items()) {
      if (key == "id") continue;
      if (!parse_relation(key)) {
        throw SchemaError("knowledge for '" + id + "': unknown relation key '" + key + "'");
      }
    }
  }
  return bundle;
}

nlohmann::ordered_json bundle_to_json(const KnowledgeBundle& bundle) {
  nlohmann::ordered_json out = nlohmann::ordered_json::object();
  for (auto r : kRelations) out[std::string(relation_name(r))] = bundle[r];
  return out;
}

KnowledgeStore parse_store(std::istream& in) {
  KnowledgeStore store;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json record;
    try {
      record = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError("knowledge line " + std::to_string(lineno) + ": " + e.what());
    }
    if (!record.is_object() || !record.contains("id") || !record["id"].is_string()) {
      throw ParseError("knowledge line " + std::to_string(lineno) + ": record needs a string id");
    }
    auto id = record["id"].get<std::string>();
    store.insert(id, bundle_from_json(record, id, /*allow_extra_keys=*/false));
  }
  return store;
}

KnowledgeStore load_store(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open knowledge file " + path.string());
  return parse_store(in);
}

void save_store(const KnowledgeStore& store, std::ostream& out) {
  for (const auto& id : store.ids()) {
    nlohmann::ordered_json record = nlohmann::ordered_json::object();
    record["id"] = id;
    const auto bundle = bundle_to_json(*store.find(id));
    for (const auto& [key, value] : bundle.items()) record[key] = value;
    out << record.dump() << '\n';
  }
}

std::vector<TokenId> build_relation_sequence(const KnowledgeBundle& bundle, Relation relation,
                                             const Vocabulary& vocab, std::size_t max_len) {
  std::vector<TokenId> seq = {kCls, relation_token(relation)};
  const auto& items = bundle[relation];
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i > 0) seq.push_back(kSep);
    const auto ids = vocab.encode(items[i]);
    seq.insert(seq.end(), ids.begin(), ids.end());
  }
  if (seq.size() > max_len) seq.resize(std::max<std::size_t>(max_len, 2));
  return seq;
}

AttachReport attach(const KnowledgeStore& store, Corpus& corpus, MissingKnowledge policy) {
  AttachReport report;
  std::vector<std::string> missing;
  for (const auto& ex : corpus)
    if (!store.find(ex.id) && !ex.knowledge) missing.push_back(ex.id);
  if (!missing.empty() && policy == MissingKnowledge::kStrict) {
    std::string list;
    for (std::size_t i = 0; i < missing.size() && i < 20; ++i) list += (i ? ", " : "") + missing[i];
    if (missing.size() > 20) list += ", ...";
    throw DataError("knowledge missing for " + std::to_string(missing.size()) + " example(s): " + list);
  }
  for (auto& ex : corpus) {
    if (const auto* bundle = store.find(ex.id)) {
      ex.knowledge = *bundle;
      ++report.attached;
    } else if (ex.knowledge) {
      ++report.attached;
    } else {
      ex.knowledge = KnowledgeBundle{};
      ++report.missing;
    }
  }
  return report;
}

}  // namespace knowsel
