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

#include "knowsel/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "knowsel/error.hpp"

namespace knowsel {

namespace {

constexpr double kNumeratorFloor = 1e-9;

using NGram = std::vector<std::string>;

std::map<NGram, std::size_t> ngram_counts(const Tokens& t, int n) {
  std::map<NGram, std::size_t> out;
  const auto k = static_cast<std::size_t>(n);
  if (t.size() < k) return out;
  for (std::size_t i = 0; i + k <= t.size(); ++i) ++out[NGram(t.begin() + i, t.begin() + i + k)];
  return out;
}

std::size_t clipped_overlap(const std::map<NGram, std::size_t>& hyp,
                            const std::map<NGram, std::size_t>& ref) {
  std::size_t hits = 0;
  for (const auto& [g, c] : hyp) {
    auto it = ref.find(g);
    if (it != ref.end()) hits += std::min(c, it->second);
  }
  return hits;
}

std::size_t total(const std::map<NGram, std::size_t>& counts) {
  std::size_t s = 0;
  for (const auto& [g, c] : counts) s += c;
  return s;
}

void check_order(int n, int max) {
  if (n < 1 || n > max) throw ContractError("n-gram order " + std::to_string(n) + " out of range");
}

}  // namespace

double perplexity(std::span<const double> token_nlls) {
  if (token_nlls.empty()) throw ContractError("perplexity: no tokens");
  double sum = 0.0;
  for (double v : token_nlls) {
    if (!std::isfinite(v)) throw ContractError("perplexity: non-finite token NLL");
    sum += v;
  }
  return std::exp(sum / static_cast<double>(token_nlls.size()));
}

double bleu(const std::vector<Tokens>& hyps, const std::vector<Tokens>& refs, int n) {
  check_order(n, 4);
  if (hyps.size() != refs.size()) throw ContractError("bleu: hypothesis/reference count mismatch");
  std::vector<double> matched(static_cast<std::size_t>(n), 0.0);
  std::vector<double> possible(static_cast<std::size_t>(n), 0.0);
  double hyp_len = 0.0, ref_len = 0.0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    hyp_len += static_cast<double>(hyps[i].size());
    ref_len += static_cast<double>(refs[i].size());
    for (int k = 1; k <= n; ++k) {
      const auto h = ngram_counts(hyps[i], k);
      matched[k - 1] += static_cast<double>(clipped_overlap(h, ngram_counts(refs[i], k)));
      possible[k - 1] += static_cast<double>(total(h));
    }
  }
  if (hyp_len == 0.0) return 0.0;
  double log_sum = 0.0;
  for (int k = 0; k < n; ++k) {
    const double p = std::max(matched[k], kNumeratorFloor) / std::max(possible[k], 1.0);
    log_sum += std::log(p);
  }
  const double bp = hyp_len < ref_len ? std::exp(1.0 - ref_len / hyp_len) : 1.0;
  return bp * std::exp(log_sum / n);
}

double rouge_n(const Tokens& hyp, const Tokens& ref, int n) {
  check_order(n, 1 << 20);
  const auto h = ngram_counts(hyp, n);
  const auto r = ngram_counts(ref, n);
  const double th = static_cast<double>(total(h)), tr = static_cast<double>(total(r));
  if (th == 0.0 || tr == 0.0) return 0.0;
  const double overlap = static_cast<double>(clipped_overlap(h, r));
  if (overlap == 0.0) return 0.0;
  const double p = overlap / th, rc = overlap / tr;
  return 2.0 * p * rc / (p + rc);
}

double rouge_n(const std::vector<Tokens>& hyps, const std::vector<Tokens>& refs, int n) {
  if (hyps.size() != refs.size()) throw ContractError("rouge: hypothesis/reference count mismatch");
  if (hyps.empty()) throw ContractError("rouge: no examples");
  double sum = 0.0;
  for (std::size_t i = 0; i < hyps.size(); ++i) sum += rouge_n(hyps[i], refs[i], n);
  return sum / static_cast<double>(hyps.size());
}

double distinct_n(const std::vector<Tokens>& hyps, int n) {
  check_order(n, 1 << 20);
  std::set<NGram> unique;
  std::size_t count = 0;
  for (const auto& h : hyps) {
    for (const auto& [g, c] : ngram_counts(h, n)) {
      unique.insert(g);
      count += c;
    }
  }
  if (count == 0) throw ContractError("distinct_n: no n-grams");
  return static_cast<double>(unique.size()) / static_cast<double>(count);
}

double emotion_accuracy(std::span<const std::size_t> preds, std::span<const std::size_t> golds) {
  if (preds.size() != golds.size()) throw ContractError("emotion_accuracy: length mismatch");
  if (preds.empty()) throw ContractError("emotion_accuracy: no examples");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == golds[i];
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

EvalReport score(const EvalInputs& in) {
  EvalReport r;
  r.examples = in.hyps.size();
  r.tokens = in.token_nlls.size();
  r.ppl = perplexity(in.token_nlls);
  for (int n = 1; n <= 4; ++n) r.bleu[n - 1] = bleu(in.hyps, in.refs, n);
  r.rouge1_f = rouge_n(in.hyps, in.refs, 1);
  r.rouge2_f = rouge_n(in.hyps, in.refs, 2);
  auto dist = [&](int n) {
    try {
      return distinct_n(in.hyps, n);
    } catch (const ContractError&) {
      return 0.0;
    }
  };
  r.dist1 = dist(1);
  r.dist2 = dist(2);
  r.emo_accuracy = emotion_accuracy(in.predicted_emotions, in.gold_emotions);
  return r;
}

nlohmann::ordered_json to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["ppl"] = r.ppl;
  j["bleu"] = r.bleu;
  j["rouge1_f"] = r.rouge1_f;
  j["rouge2_f"] = r.rouge2_f;
  j["dist1"] = r.dist1;
  j["dist2"] = r.dist2;
  j["emo_accuracy"] = r.emo_accuracy;
  j["counts"] = {{"examples", r.examples}, {"tokens", r.tokens}};
  return j;
}

}  // namespace knowsel
