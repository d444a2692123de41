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

#include "knowsel/workspace.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>

#include "knowsel/error.hpp"
#include "knowsel/simplex_qp.hpp"

namespace knowsel {

namespace {

Tensor as_row(std::span<const double> v) { return Tensor::row({v.begin(), v.end()}); }

Tensor as_row(const Tensor& z) {
  if (z.rank() == 1) return reshape(z, {1, z.numel()});
  return z;
}

void require_dim(std::size_t got, std::size_t want, const char* what) {
  if (got != want) {
    throw DimensionError(std::string(what) + ": expected dimension " + std::to_string(want) +
                         ", got " + std::to_string(got));
  }
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

Tensor fuse(const Tensor& z_r, const Tensor& z_ctx_cls) {
  if (z_r.shape() != z_ctx_cls.shape()) {
    throw DimensionError("fuse: shapes " + shape_string(z_r.shape()) + " and " +
                         shape_string(z_ctx_cls.shape()) + " differ");
  }
  return add(z_r, z_ctx_cls);
}

Tensor emotion_logits(const EmotionClassifier& clf, const Tensor& z) {
  const Tensor row = as_row(z);
  require_dim(row.cols(), clf.dim(), "classify_emotion");
  return matmul(row, clf.theta);
}

Tensor classify_emotion(const EmotionClassifier& clf, const Tensor& z) {
  return softmax(emotion_logits(clf, z));
}

double emotion_loss_supervised(std::span<const double> p_emo, std::size_t label) {
  if (label >= p_emo.size()) {
    throw ContractError("emotion label " + std::to_string(label) + " outside " +
                        std::to_string(p_emo.size()) + " categories");
  }
  const double p = p_emo[label];
  if (!(p > 0.0)) throw NumericError("emotion probability of the gold label is zero");
  return -std::log(p);
}

DivergenceGradient relation_divergence_with_gradient(const EmotionClassifier& clf,
                                                     std::span<const double> z_j,
                                                     std::span<const double> z_ctx_cls) {
  require_dim(z_j.size(), clf.dim(), "relation_divergence");
  require_dim(z_ctx_cls.size(), clf.dim(), "relation_divergence");
  // Closed form, independent of the thread's grad mode:
  // d/dz [-sum_k p_k log q_k(z)] = theta (q - p) with q = softmax(theta^T z).
  NoGradGuard no_grad;
  const Tensor p = classify_emotion(clf, as_row(z_ctx_cls));
  const Tensor logits = emotion_logits(clf, as_row(z_j));
  const Tensor q = softmax(logits);
  const double value = soft_cross_entropy(logits, p).item();
  const auto theta = clf.theta.data();
  const auto pv = p.data(), qv = q.data();
  const std::size_t d = clf.dim(), k = clf.num_emotions();
  std::vector<double> gradient(d, 0.0);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t c = 0; c < k; ++c) gradient[i] += theta[i * k + c] * (qv[c] - pv[c]);
  return {value, std::move(gradient)};
}

double relation_divergence(const EmotionClassifier& clf, std::span<const double> z_j,
                           std::span<const double> z_ctx_cls) {
  require_dim(z_j.size(), clf.dim(), "relation_divergence");
  require_dim(z_ctx_cls.size(), clf.dim(), "relation_divergence");
  NoGradGuard no_grad;
  const Tensor target = classify_emotion(clf, as_row(z_ctx_cls));
  return soft_cross_entropy(emotion_logits(clf, as_row(z_j)), target).item();
}

std::string WorkspaceTrace::selection_process() const {
  std::string out;
  for (const auto& e : eliminations) {
    out += relation_name(e.relation);
    out += " → ";
  }
  out += relation_name(winner);
  return out;
}

CompetitionResult competition(const WorkspaceState& state, const EmotionClassifier& clf) {
  if (state.candidates.empty()) throw ContractError("competition: no knowledge candidates");
  const std::size_t d = clf.dim();
  require_dim(state.context_cls.size(), d, "competition");

  std::vector<RelationCandidate> pool = state.candidates;
  std::vector<double> delta(d, 0.0);
  WorkspaceTrace trace;
  std::size_t iteration = 0;

  while (pool.size() > 1) {
    ++iteration;
    std::vector<double> losses;
    std::vector<std::vector<double>> grads;
    for (const auto& c : pool) {
      auto fg = relation_divergence_with_gradient(clf, c.cls, state.context_cls);
      losses.push_back(fg.value);
      grads.push_back(std::move(fg.gradient));
    }

    const QPProblem problem(grads, losses);
    const QPSolution sol = solve_simplex_qp(problem);
    for (std::size_t k = 0; k < d; ++k) delta[k] += sol.delta[k];
    for (double v : delta) {
      if (!std::isfinite(v)) throw NumericError("competition: non-finite accumulated direction");
    }

    std::size_t worst = 0;
    for (std::size_t j = 1; j < pool.size(); ++j) {
      const bool higher = losses[j] > losses[worst];
      const bool tie_earlier = losses[j] == losses[worst] &&
                               index_of(pool[j].relation) < index_of(pool[worst].relation);
      if (higher || tie_earlier) worst = j;
    }

    IterationSnapshot snap;
    snap.iteration = iteration;
    for (const auto& c : pool) snap.candidates.push_back(c.relation);
    snap.losses = losses;
    snap.lambda = sol.lambda;
    snap.delta = delta;
    trace.iterations.push_back(std::move(snap));
    trace.eliminations.push_back({iteration, pool[worst].relation, losses[worst]});
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(worst));
  }

  trace.winner = pool.front().relation;
  return {trace.winner, std::move(delta), std::move(trace)};
}

Tensor broadcast(const Tensor& h_k, std::span<const double> delta) {
  require_dim(delta.size(), h_k.cols(), "broadcast");
  if (h_k.rank() == 1) return add(h_k, Tensor::from({delta.size()}, {delta.begin(), delta.end()}));
  return add(h_k, as_row(delta));
}

void write_trace_csv(std::ostream& out, std::span<const TraceRecord> records) {
  out << "example_id,iteration,eliminated_relation,loss_value,winner\n";
  for (const auto& rec : records) {
    const auto winner = relation_name(rec.trace.winner);
    if (rec.trace.eliminations.empty()) {
      out << rec.example_id << ",0,,," << winner << '\n';
      continue;
    }
    for (const auto& e : rec.trace.eliminations) {
      out << rec.example_id << ',' << e.iteration << ',' << relation_name(e.relation) << ','
          << format_double(e.loss) << ',' << winner << '\n';
    }
  }
}

}  // namespace knowsel
