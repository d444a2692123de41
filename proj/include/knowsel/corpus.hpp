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
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "knowsel/relation.hpp"
#include "knowsel/vocab.hpp"

namespace knowsel {

/// One conversation: dialogue history, gold emotion and gold response.
struct DialogueExample {
  std::string id;
  std::vector<std::string> context;
  std::string emotion;
  std::string response;
  std::optional<KnowledgeBundle> knowledge;

  bool operator==(const DialogueExample&) const = default;
};

using Corpus = std::vector<DialogueExample>;

/// JSON-lines reader; errors carry 1-based line numbers.
Corpus parse_corpus(std::istream& in);
Corpus load_corpus(const std::filesystem::path& path);
void save_corpus(const Corpus& corpus, std::ostream& out);

/// Tokens below `min_freq` occurrences are left out (and encode to UNK).
/// Knowledge inferences attached to examples count towards frequencies.
Vocabulary build_vocab(const Corpus& corpus, std::size_t min_freq);

struct EncodedExample {
  std::string id;
  std::vector<TokenId> context;
  std::array<std::vector<TokenId>, kNumRelations> relations;
  std::vector<TokenId> target;  // BOS ... EOS
  std::size_t emotion = 0;
};

inline constexpr std::size_t kDefaultMaxSource = 256;
inline constexpr std::size_t kDefaultMaxTarget = 64;

/// Context is [CLS] u1 [SEP] u2 ... keeping the most recent tokens when it
/// exceeds `max_src`. Target is [BOS] y [EOS] capped at `max_tgt`.
EncodedExample encode_example(const DialogueExample& example, const Vocabulary& vocab,
                              std::size_t max_src = kDefaultMaxSource,
                              std::size_t max_tgt = kDefaultMaxTarget);

struct SplitRatios {
  double train = 0.8;
  double valid = 0.1;
  double test = 0.1;
};

struct Splits {
  Corpus train;
  Corpus valid;
  Corpus test;
};

Splits split(const Corpus& corpus, const SplitRatios& ratios, std::uint64_t seed);

/// Rectangular PAD-filled id matrix. `pad_mask[i]` is 1 exactly where PAD
/// was inserted.
struct PaddedIds {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<TokenId> ids;
  std::vector<std::uint8_t> pad_mask;

  std::vector<TokenId> unpadded(std::size_t row) const;
};

struct Batch {
  std::vector<std::string> ids;
  PaddedIds context;
  std::array<PaddedIds, kNumRelations> relations;
  PaddedIds target;
  std::vector<std::size_t> emotions;

  std::size_t size() const { return ids.size(); }
  EncodedExample example(std::size_t row) const;
};

/// Consecutive batches in input order; the last one may be partial.
std::vector<Batch> make_batches(const std::vector<EncodedExample>& examples,
                                std::size_t batch_size);

}  // namespace knowsel
