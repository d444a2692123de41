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

#include "knowsel/vocab.hpp"

#include <algorithm>
#include <cctype>

#include "knowsel/error.hpp"

namespace knowsel {

namespace {

const std::vector<std::string>& special_tokens() {
  static const std::vector<std::string> specials = {
      "[PAD]", "[UNK]", "[BOS]", "[EOS]", "[CLS]", "[SEP]",
      "[xIntent]", "[xNeed]", "[xWant]", "[xEffect]", "[xReact]"};
  return specials;
}

bool is_word_char(unsigned char c) { return std::isalnum(c) || c == '\'' || c >= 0x80; }

}  // namespace

TokenId relation_token(Relation r) {
  return kFirstRelationToken + static_cast<TokenId>(index_of(r));
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) out.push_back(std::move(current));
    current.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (is_word_char(c)) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else {
      flush();
      out.emplace_back(1, ch);
    }
  }
  flush();
  return out;
}

Vocabulary::Vocabulary() : Vocabulary({}, {}) {}

Vocabulary::Vocabulary(std::vector<std::string> tokens, std::vector<std::string> emotions) {
  for (const auto& s : special_tokens()) {
    token_to_id_.emplace(s, static_cast<TokenId>(id_to_token_.size()));
    id_to_token_.push_back(s);
  }
  for (auto& t : tokens) {
    if (t.empty() || token_to_id_.count(t)) continue;
    token_to_id_.emplace(t, static_cast<TokenId>(id_to_token_.size()));
    id_to_token_.push_back(std::move(t));
  }

  std::sort(emotions.begin(), emotions.end());
  emotions.erase(std::unique(emotions.begin(), emotions.end()), emotions.end());
  emotions_ = std::move(emotions);
  for (std::size_t i = 0; i < emotions_.size(); ++i) emotion_to_index_.emplace(emotions_[i], i);
}

TokenId Vocabulary::id(std::string_view token) const {
  auto it = token_to_id_.find(std::string(token));
  return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size()) {
    throw ContractError("vocabulary: id " + std::to_string(id) + " out of range");
  }
  return id_to_token_[static_cast<std::size_t>(id)];
}

bool Vocabulary::contains(std::string_view token) const {
  return token_to_id_.count(std::string(token)) > 0;
}

std::vector<TokenId> Vocabulary::encode(std::string_view text) const {
  std::vector<TokenId> ids;
  for (const auto& t : tokenize(text)) ids.push_back(id(t));
  return ids;
}

std::string Vocabulary::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId i : ids) {
    if (i >= 0 && static_cast<std::size_t>(i) < kNumSpecialTokens && i != kUnk) continue;
    if (!out.empty()) out.push_back(' ');
    out += token(i);
  }
  return out;
}

std::size_t Vocabulary::emotion_index(std::string_view label) const {
  auto it = emotion_to_index_.find(std::string(label));
  if (it == emotion_to_index_.end()) {
    throw ContractError("unknown emotion label '" + std::string(label) + "'");
  }
  return it->second;
}

const std::string& Vocabulary::emotion_label(std::size_t index) const {
  if (index >= emotions_.size()) throw ContractError("emotion index out of range");
  return emotions_[index];
}

std::vector<std::string> Vocabulary::regular_tokens() const {
  return {id_to_token_.begin() + kNumSpecialTokens, id_to_token_.end()};
}

}  // namespace knowsel
