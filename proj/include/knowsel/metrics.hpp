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
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace knowsel {

using Tokens = std::vector<std::string>;

/// exp(mean(nlls)).
double perplexity(std::span<const double> token_nlls);

/// Corpus-level BLEU-n: clipped counts are summed over the corpus before
/// dividing; zero numerators are floored at 1e-9.
double bleu(const std::vector<Tokens>& hyps, const std::vector<Tokens>& refs, int n);

/// Sentence-level ROUGE-n F1 with clipped overlap. Returns 0 when either side
/// has no n-grams.
double rouge_n(const Tokens& hyp, const Tokens& ref, int n);

/// Mean of the sentence scores.
double rouge_n(const std::vector<Tokens>& hyps, const std::vector<Tokens>& refs, int n);

/// Distinct n-grams over total n-grams across all hypotheses.
double distinct_n(const std::vector<Tokens>& hyps, int n);

double emotion_accuracy(std::span<const std::size_t> preds, std::span<const std::size_t> golds);

struct EvalReport {
  double ppl = 1.0;
  std::array<double, 4> bleu{};
  double rouge1_f = 0.0;
  double rouge2_f = 0.0;
  double dist1 = 0.0;
  double dist2 = 0.0;
  double emo_accuracy = 0.0;
  std::size_t examples = 0;
  std::size_t tokens = 0;
};

struct EvalInputs {
  std::vector<Tokens> hyps;
  std::vector<Tokens> refs;
  std::vector<double> token_nlls;
  std::vector<std::size_t> predicted_emotions;
  std::vector<std::size_t> gold_emotions;
};

/// Scores everything at once. Dist-n is 0 when the hypotheses have no n-grams.
EvalReport score(const EvalInputs& inputs);

nlohmann::ordered_json to_json(const EvalReport& report);

}  // namespace knowsel
