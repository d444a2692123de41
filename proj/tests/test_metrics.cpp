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

#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "knowsel/error.hpp"
#include "knowsel/metrics.hpp"
#include "knowsel/vocab.hpp"

using namespace knowsel;

namespace {

Tokens t(const char* text) { return tokenize(text); }

std::vector<Tokens> random_corpus(std::size_t n, std::uint64_t seed) {
  static const char* words[] = {"a", "b", "c", "d", "e", "f"};
  std::mt19937_64 rng(seed);
  std::vector<Tokens> out(n);
  for (auto& s : out) {
    const std::size_t len = 1 + rng() % 7;
    for (std::size_t i = 0; i < len; ++i) s.push_back(words[rng() % 6]);
  }
  return out;
}

}  // namespace

TEST_CASE("perplexity") {
  CHECK(perplexity(std::vector<double>{0, 0, 0}) == 1.0);
  CHECK(perplexity(std::vector<double>(4, std::log(10.0))) == doctest::Approx(10.0).epsilon(1e-14));
  CHECK(perplexity(std::vector<double>{0, 2 * std::log(10.0)}) == doctest::Approx(10.0).epsilon(1e-14));
  CHECK_THROWS_AS(perplexity(std::vector<double>{}), ContractError);
  CHECK_THROWS_AS(perplexity(std::vector<double>{NAN}), ContractError);
}

TEST_CASE("bleu") {
  const std::vector<Tokens> refs = {t("the cat sat"), t("a dog ran home")};
  for (int n = 1; n <= 4; ++n) CHECK(bleu(refs, refs, n) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(bleu({t("the cat")}, {t("the cat sat")}, 2) == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
  CHECK(bleu({t("the cat")}, {t("the cat sat")}, 2) == doctest::Approx(0.6065).epsilon(1e-4));
  CHECK(bleu({t("x y z")}, {t("the cat sat")}, 1) <= 1e-4);
  CHECK(bleu({t("x y z")}, {t("the cat sat")}, 4) <= 1e-4);
  // Clipping: "the the the" matches "the" only once.
  CHECK(bleu({t("the the the")}, {t("the cat sat")}, 1) == doctest::Approx(1.0 / 3));
  CHECK(bleu({Tokens{}}, {t("a")}, 1) == 0.0);
  CHECK_THROWS_AS(bleu({t("a")}, {}, 1), ContractError);
  CHECK_THROWS_AS(bleu({t("a")}, {t("a")}, 5), ContractError);
  CHECK_THROWS_AS(bleu({t("a")}, {t("a")}, 0), ContractError);
}

TEST_CASE("rouge") {
  CHECK(rouge_n(t("a b c"), t("a b c"), 1) == 1.0);
  CHECK(rouge_n(t("a b c"), t("a b c"), 2) == 1.0);
  CHECK(rouge_n(t("a b c"), t("a b d"), 1) == doctest::Approx(2.0 / 3).epsilon(1e-15));
  CHECK(rouge_n(t("a b c"), t("a b d"), 2) == doctest::Approx(0.5));
  CHECK(rouge_n(t("a"), t("a b"), 2) == 0.0);
  CHECK(rouge_n(Tokens{}, Tokens{}, 1) == 0.0);
  CHECK(rouge_n(std::vector<Tokens>{t("a b c"), t("x")}, std::vector<Tokens>{t("a b d"), t("x")}, 1) ==
        doctest::Approx((2.0 / 3 + 1.0) / 2));
}

TEST_CASE("distinct") {
  CHECK(distinct_n({t("a b a b")}, 1) == 0.5);
  CHECK(distinct_n({t("a b a b")}, 2) == doctest::Approx(2.0 / 3).epsilon(1e-15));
  CHECK(distinct_n({t("a b c"), t("d e")}, 1) == 1.0);
  CHECK_THROWS_AS(distinct_n({t("a")}, 2), ContractError);
}

TEST_CASE("emotion accuracy") {
  const std::vector<std::size_t> gold = {0, 1, 2, 3};
  CHECK(emotion_accuracy(gold, gold) == 1.0);
  CHECK(emotion_accuracy(std::vector<std::size_t>{1, 0, 3, 2}, gold) == 0.0);
  CHECK(emotion_accuracy(std::vector<std::size_t>{0, 0, 0, 0}, gold) == 0.25);
  CHECK_THROWS_AS(emotion_accuracy(std::vector<std::size_t>{0}, gold), ContractError);
  CHECK_THROWS_AS(emotion_accuracy(std::vector<std::size_t>{}, std::vector<std::size_t>{}), ContractError);
}

TEST_CASE("metric properties") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto hyps = random_corpus(12, seed), refs = random_corpus(12, seed + 1000);
    const double b2 = bleu(hyps, refs, 2), b4 = bleu(hyps, refs, 4);
    const double r1 = rouge_n(hyps, refs, 1), d1 = distinct_n(hyps, 1);
    CHECK(b2 == bleu(hyps, refs, 2));  // bitwise stable

    std::vector<std::size_t> order(hyps.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), std::mt19937_64(seed));
    std::vector<Tokens> ph, pr;
    for (auto i : order) {
      ph.push_back(hyps[i]);
      pr.push_back(refs[i]);
    }
    CHECK(bleu(ph, pr, 2) == b2);
    CHECK(bleu(ph, pr, 4) == b4);
    CHECK(rouge_n(ph, pr, 1) == doctest::Approx(r1).epsilon(1e-14));
    CHECK(distinct_n(ph, 1) == d1);

    hyps.push_back(hyps.front());
    CHECK(distinct_n(hyps, 1) <= d1);
    CHECK(b2 >= 0.0);
    CHECK(b2 <= 1.0);
  }
}

TEST_CASE("score and report") {
  EvalInputs in;
  in.hyps = {t("the cat"), t("a b a b")};
  in.refs = {t("the cat sat"), t("a b a b")};
  in.token_nlls = {0.0, 2 * std::log(10.0)};
  in.predicted_emotions = {0, 1};
  in.gold_emotions = {0, 2};
  const auto r = score(in);
  CHECK(r.ppl == doctest::Approx(10.0));
  CHECK(r.bleu[0] == doctest::Approx(bleu(in.hyps, in.refs, 1)));
  CHECK(r.rouge1_f == doctest::Approx(rouge_n(in.hyps, in.refs, 1)));
  CHECK(r.dist1 == distinct_n(in.hyps, 1));
  CHECK(r.emo_accuracy == 0.5);
  CHECK(r.examples == 2);
  CHECK(r.tokens == 2);
  const auto j = to_json(r);
  for (const char* key : {"ppl", "bleu", "rouge1_f", "rouge2_f", "dist1", "dist2", "emo_accuracy", "counts"})
    CHECK(j.contains(key));
  CHECK(j["bleu"].size() == 4);
  CHECK(j["counts"]["examples"] == 2);

  in.hyps = {Tokens{}, Tokens{}};
  CHECK(score(in).dist1 == 0.0);
}
