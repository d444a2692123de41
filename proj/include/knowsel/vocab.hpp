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

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "knowsel/relation.hpp"

namespace knowsel {

using TokenId = std::int64_t;

// Fixed special-token ids.
inline constexpr TokenId kPad = 0;
inline constexpr TokenId kUnk = 1;
inline constexpr TokenId kBos = 2;
inline constexpr TokenId kEos = 3;
inline constexpr TokenId kCls = 4;
inline constexpr TokenId kSep = 5;
inline constexpr TokenId kFirstRelationToken = 6;
inline constexpr std::size_t kNumSpecialTokens = 11;

TokenId relation_token(Relation r);

/// Lowercases and splits on whitespace; every punctuation character becomes
/// its own token. Apostrophes stay inside words ("don't").
std::vector<std::string> tokenize(std::string_view text);

/// Token and emotion-label maps. Specials occupy ids 0..10.
class Vocabulary {
 public:
  Vocabulary();

  /// `tokens` excludes the specials; `emotions` is sorted on construction.
  Vocabulary(std::vector<std::string> tokens, std::vector<std::string> emotions);

  std::size_t size() const { return id_to_token_.size(); }
  TokenId id(std::string_view token) const;
  const std::string& token(TokenId id) const;
  bool contains(std::string_view token) const;

  std::vector<TokenId> encode(std::string_view text) const;
  /// Space-joined tokens, specials dropped.
  std::string decode(std::span<const TokenId> ids) const;

  std::size_t num_emotions() const { return emotions_.size(); }
  /// Throws ContractError for unknown labels.
  std::size_t emotion_index(std::string_view label) const;
  const std::string& emotion_label(std::size_t index) const;
  const std::vector<std::string>& emotion_labels() const { return emotions_; }

  /// Non-special tokens in id order.
  std::vector<std::string> regular_tokens() const;

  bool operator==(const Vocabulary& other) const {
    return id_to_token_ == other.id_to_token_ && emotions_ == other.emotions_;
  }

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, TokenId> token_to_id_;
  std::vector<std::string> emotions_;
  std::unordered_map<std::string, std::size_t> emotion_to_index_;
};

}  // namespace knowsel
