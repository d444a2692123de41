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
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "knowsel/relation.hpp"
#include "knowsel/tensor.hpp"

namespace knowsel {

/// Linear emotion head: logits = z^T theta with theta of shape [d, q].
struct EmotionClassifier {
  Tensor theta;

  std::size_t dim() const { return theta.shape().at(0); }
  std::size_t num_emotions() const { return theta.shape().at(1); }
};

/// Point-wise sum of a knowledge vector and the context CLS vector.
Tensor fuse(const Tensor& z_r, const Tensor& z_ctx_cls);

/// Emotion logits for a [1, d] (or [d]) representation; differentiable.
Tensor emotion_logits(const EmotionClassifier& clf, const Tensor& z);
/// softmax(theta^T z) as a [1, q] tensor.
Tensor classify_emotion(const EmotionClassifier& clf, const Tensor& z);

/// -log P(label).
double emotion_loss_supervised(std::span<const double> p_emo, std::size_t label);

/// Cross-entropy of the knowledge distribution softmax(theta^T z_j) against
/// the context distribution softmax(theta^T z_ctx) taken as the target.
double relation_divergence(const EmotionClassifier& clf, std::span<const double> z_j,
                           std::span<const double> z_ctx_cls);

struct DivergenceGradient {
  double value = 0.0;
  std::vector<double> gradient;  // d f_j / d z_j
};

/// relation_divergence together with its gradient in z_j (context held fixed).
DivergenceGradient relation_divergence_with_gradient(const EmotionClassifier& clf,
                                                     std::span<const double> z_j,
                                                     std::span<const double> z_ctx_cls);

struct RelationCandidate {
  Relation relation;
  std::vector<double> cls;  // Z_r[0]
};

struct WorkspaceState {
  std::vector<RelationCandidate> candidates;
  std::vector<double> context_cls;
};

struct Elimination {
  std::size_t iteration;  // 1-based
  Relation relation;
  double loss;
};

struct IterationSnapshot {
  std::size_t iteration;
  std::vector<Relation> candidates;
  std::vector<double> losses;
  std::vector<double> lambda;
  std::vector<double> delta;  // accumulated after this iteration
};

struct WorkspaceTrace {
  std::vector<Elimination> eliminations;
  Relation winner = Relation::kXIntent;
  std::vector<IterationSnapshot> iterations;

  /// "xEffect → xReact → ... → winner": eliminations in order, then the winner.
  std::string selection_process() const;
};

struct CompetitionResult {
  Relation winner;
  std::vector<double> delta;
  WorkspaceTrace trace;
};

/// Repeatedly drops the candidate whose emotion distribution diverges most
/// from the context's, accumulating delta -= G^T lambda from the simplex QP
/// over the surviving candidates. Ties go to the earliest relation in
/// xIntent, xNeed, xWant, xEffect, xReact order.
CompetitionResult competition(const WorkspaceState& state, const EmotionClassifier& clf);

/// h_k + delta on every row. delta is a constant (no gradient flows into it).
Tensor broadcast(const Tensor& h_k, std::span<const double> delta);

struct TraceRecord {
  std::string example_id;
  WorkspaceTrace trace;
};

/// CSV: example_id,iteration,eliminated_relation,loss_value,winner
void write_trace_csv(std::ostream& out, std::span<const TraceRecord> records);

}  // namespace knowsel
