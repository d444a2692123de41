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
#include <cstdint>
#include <string>
#include <vector>

#include "knowsel/corpus.hpp"
#include "knowsel/knowledge.hpp"

namespace knowsel {

// Toy corpus with a known answer for knowledge selection. The designated
// relation names the gold emotion; every other relation names an emotion
// outside the gold one's pair (emotions are paired 0-1, 2-3, ...). The
// context names the emotion too, either exactly or only through a cue word
// shared by the pair, and can be made noisy.
struct SynthOptions {
  std::size_t size = 32;
  std::size_t num_emotions = 4;  // 1..32
  std::uint64_t seed = 0;
  Relation designated = Relation::kXReact;
  /// Knowledge inferences repeat the pair cue of the emotion they name.
  bool cue_in_knowledge = false;
  /// The context names the exact emotion instead of its pair.
  bool exact_context = true;
  /// Probability that the context cue points at the partner emotion.
  double context_noise = 0.0;
  /// Probability that an example's informative relation is a random
  /// non-designated one instead.
  double swap_rate = 0.0;
};

struct SynthData {
  Corpus corpus;  // knowledge is not attached inline
  KnowledgeStore store;
  std::vector<std::string> emotions;
};

/// The 32 EmpatheticDialogues labels in alphabetical order.
const std::vector<std::string>& dialogue_emotions();

/// Round-robin emotions, so every label appears when size >= num_emotions.
SynthData synth_corpus(const SynthOptions& options);

}  // namespace knowsel
