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

#include <cmath>
#include <numeric>

#include "doctest.h"
#include "knowsel/error.hpp"
#include "knowsel/model.hpp"
#include "test_util.hpp"

using namespace knowsel;
using knowsel::testing::random_example;
using knowsel::testing::random_tensor;
using knowsel::testing::tiny_config;

namespace {

RefineGateParams gate_params(std::size_t d, std::uint64_t seed) {
  RefineGateParams g;
  g.w = random_tensor({2 * d, 1}, seed);
  g.norm = {random_tensor({d}, seed + 1, 0.5, 1.5), random_tensor({d}, seed + 2)};
  g.linear = {random_tensor({d, d}, seed + 3), random_tensor({d}, seed + 4)};
  return g;
}

Tensor param(const Model& m, const std::string& name) {
  for (const auto& [n, t] : m.parameters())
    if (n == name) return t;
  throw ContractError("no parameter " + name);
}

}  // namespace

TEST_CASE("refine gate identities") {
  const std::size_t d = 4;
  const Tensor h_k = random_tensor({3, d}, 1), h_c = random_tensor({3, d}, 2);
  auto g = gate_params(d, 10);

  SUBCASE("alpha forced to 0 returns h_c bitwise") {
    for (auto norm : {RefineNorm::kLayerNorm, RefineNorm::kLinear}) {
      const auto out = refine_gate(h_k, h_c, g, norm, 1e-5, GateHook{1.0, -1e4});
      CHECK(out.to_vector() == h_c.to_vector());
    }
  }
  SUBCASE("w = 0 gives alpha = 0.5") {
    g.w = Tensor::zeros({2 * d, 1});
    for (double a : refine_gate_alpha(h_k, h_c, g.w).to_vector()) CHECK(a == 0.5);
    const auto out = refine_gate(h_k, h_c, g, RefineNorm::kLayerNorm, 1e-5).to_vector();
    const auto normed = layer_norm(h_k, g.norm.gain, g.norm.bias, 1e-5).to_vector();
    for (std::size_t i = 0; i < out.size(); ++i)
      CHECK(out[i] == doctest::Approx(0.5 * normed[i] + 0.5 * h_c.at(i)).epsilon(1e-14));
  }
  SUBCASE("alpha forced to 1 returns the normalized knowledge") {
    const auto out = refine_gate(h_k, h_c, g, RefineNorm::kLinear, 1e-5, GateHook{1.0, 1e4});
    const auto lin = g.linear(h_k).to_vector();
    for (std::size_t i = 0; i < lin.size(); ++i) CHECK(out.to_vector()[i] == doctest::Approx(lin[i]));
  }
  SUBCASE("gradient") {
    const auto f = [&](const Tensor& x) {
      return sum(refine_gate(x, h_c, g, RefineNorm::kLayerNorm, 1e-5));
    };
    CHECK(grad_check(f, h_k, 1e-6) < 1e-6);
  }
  CHECK_THROWS_AS(refine_gate(random_tensor({2, d}, 3), h_c, g, RefineNorm::kLinear, 1e-5),
                  DimensionError);
}

TEST_CASE("nll_loss and joint_loss") {
  const Tensor logits = Tensor::from({2, 3}, {0, 0, 0, 1, 2, 3});
  const std::vector<TokenId> both = {1, 2}, one = {1, kPad};
  CHECK(nll_loss(logits, one).item() == doctest::Approx(std::log(3.0)));
  const double second = -std::log(std::exp(3.0) / (std::exp(1.0) + std::exp(2.0) + std::exp(3.0)));
  CHECK(nll_loss(logits, both).item() == doctest::Approx((std::log(3.0) + second) / 2));
  CHECK(joint_loss(2.0, 4.0, 0.5) == 4.0);
  CHECK(joint_loss(2.0, 4.0, 0.0) == 2.0);
  CHECK(joint_loss(Tensor::scalar(2.0), Tensor::scalar(4.0), 1.0).item() == 6.0);
}

TEST_CASE("model config") {
  auto c = tiny_config();
  CHECK_NOTHROW(c.validate());
  const auto back = ModelConfig::from_json(nlohmann::json::parse(c.to_json().dump()));
  CHECK(back.to_json() == c.to_json());
  auto legacy = nlohmann::json::parse(c.to_json().dump());
  legacy.erase("emotion_input");
  CHECK(ModelConfig::from_json(legacy).emotion_input == EmotionInput::kWinner);

  auto bad = c;
  bad.num_heads = 3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.vocab_size = 5;
  CHECK_THROWS_AS(Model(bad, 0), ConfigError);
  bad = c;
  bad.gamma = -1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("initialization is seeded") {
  const Model a(tiny_config(), 7), b(tiny_config(), 7), c(tiny_config(), 8);
  REQUIRE(a.parameters().size() == b.parameters().size());
  bool differs = false;
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    CHECK(a.parameters()[i].first == b.parameters()[i].first);
    CHECK(a.parameters()[i].second.to_vector() == b.parameters()[i].second.to_vector());
    differs |= a.parameters()[i].second.to_vector() != c.parameters()[i].second.to_vector();
  }
  CHECK(differs);
  CHECK(a.parameter_count() > 0);

  auto shared = tiny_config();
  shared.share_encoders = true;
  CHECK(Model(shared, 7).parameter_count() < a.parameter_count());
}

TEST_CASE("forward shapes and outputs") {
  const auto cfg = tiny_config();
  const Model m(cfg, 1);
  const auto ex = random_example(cfg.vocab_size, cfg.num_emotions, 3);
  const auto out = m.forward(ex);
  CHECK(out.logits.shape() == Shape{ex.target.size() - 1, cfg.vocab_size});
  CHECK(out.p_emo.shape() == Shape{1, cfg.num_emotions});
  const auto p = out.p_emo.to_vector();
  CHECK(std::accumulate(p.begin(), p.end(), 0.0) == doctest::Approx(1.0));
  CHECK(out.predicted_emotion() < cfg.num_emotions);
  CHECK(out.token_nll.size() == ex.target.size() - 1);
  const double mean = std::accumulate(out.token_nll.begin(), out.token_nll.end(), 0.0) /
                      static_cast<double>(out.token_nll.size());
  CHECK(mean == doctest::Approx(out.nll.item()).epsilon(1e-12));
  CHECK(out.loss.item() == doctest::Approx(out.nll.item() + cfg.gamma * out.emo.item()));
  CHECK(out.emo.item() == doctest::Approx(-std::log(p[ex.emotion])));

  CHECK(out.selection.active);
  CHECK(out.selection.trace.eliminations.size() == 4);
  CHECK(out.selection.delta.size() == cfg.d_model);
  CHECK(out.selection.trace.winner == out.selection.winner);

  auto bad = ex;
  bad.emotion = cfg.num_emotions;
  CHECK_THROWS_AS(m.forward(bad), ContractError);
  bad = ex;
  bad.target = {kBos};
  CHECK_THROWS_AS(m.forward(bad), ContractError);
}

TEST_CASE("selector disabled") {
  auto cfg = tiny_config();
  cfg.adaptive_selection = false;
  const Model m(cfg, 1);
  const auto out = m.forward(random_example(cfg.vocab_size, cfg.num_emotions, 4));
  CHECK_FALSE(out.selection.active);
  CHECK(out.selection.delta == std::vector<double>(cfg.d_model, 0.0));
  CHECK(out.selection.trace.eliminations.empty());

  const auto ex = random_example(cfg.vocab_size, cfg.num_emotions, 4);
  const auto knowledge = m.encode_knowledge(ex.relations);
  std::size_t rows = 0;
  for (const auto& z : knowledge.per_relation) rows += z.rows();
  CHECK(m.knowledge_memory(knowledge, out.selection).rows() == rows);
}

TEST_CASE("winner feeds the emotion head") {
  const auto cfg = tiny_config();
  const Model m(cfg, 2);
  const auto ex = random_example(cfg.vocab_size, cfg.num_emotions, 5);
  const Tensor z_ctx = m.encode_context(ex.context);
  const auto knowledge = m.encode_knowledge(ex.relations);
  const Selection sel = m.select(z_ctx, knowledge);
  const auto expected =
      emotion_logits(m.classifier(), fuse(knowledge.cls(sel.winner), slice(z_ctx, 0, 0, 1)));
  CHECK(m.emotion_logits(z_ctx, knowledge, sel).to_vector() == expected.to_vector());
  CHECK(m.knowledge_memory(knowledge, sel).to_vector() ==
        knowledge.per_relation[index_of(sel.winner)].to_vector());
}

TEST_CASE("theta receives gradient only through the emotion loss") {
  const auto cfg = tiny_config();
  const Model m(cfg, 3);
  const auto ex = random_example(cfg.vocab_size, cfg.num_emotions, 6);
  Tensor theta = param(m, "emotion.theta");

  const auto first = m.forward(ex);
  backward(first.nll);
  for (double g : theta.grad()) CHECK(g == 0.0);

  // Reusing the selection reproduces the same graph.
  for (const auto& entry : m.parameters()) Tensor(entry.second).zero_grad();
  ForwardOptions reuse;
  reuse.selection = &first.selection;
  const auto again = m.forward(ex, reuse);
  CHECK(again.loss.item() == first.loss.item());
  backward(again.emo);
  const auto emo_grad = theta.grad();
  CHECK(std::any_of(emo_grad.begin(), emo_grad.end(), [](double g) { return g != 0.0; }));

  auto zero_gamma = cfg;
  zero_gamma.gamma = 0.0;
  const Model z(zero_gamma, 3);
  backward(z.forward(ex).loss);
  for (double g : param(z, "emotion.theta").grad()) CHECK(g == 0.0);
}

TEST_CASE("full model gradient with a frozen selection") {
  for (auto norm : {RefineNorm::kLayerNorm, RefineNorm::kLinear}) {
    auto cfg = tiny_config();
    cfg.refine_norm = norm;
    const Model m(cfg, 4);
    const auto ex = random_example(cfg.vocab_size, cfg.num_emotions, 7);
    const auto sel = m.forward(ex).selection;
    for (const char* part : {"decoder.0.gate", "emotion.theta", "knowledge_encoder.0.ln_ffn"}) {
      const auto check = knowsel::testing::model_gradient_check(m, ex, sel, 1e-6, part);
      INFO(part << " worst " << check.worst_parameter);
      CHECK(check.coordinates > 0);
      CHECK(check.max_error < 1e-6);
    }
  }
}

TEST_CASE("generate") {
  const auto cfg = tiny_config();
  const Model m(cfg, 5);
  const auto ex = random_example(cfg.vocab_size, cfg.num_emotions, 8);
  Selection s1, s2;
  std::size_t e1 = 99, e2 = 98;
  const auto a = m.generate(ex, 6, &s1, &e1);
  const auto b = m.generate(ex, 6, &s2, &e2);
  CHECK(a == b);
  CHECK(e1 == e2);
  CHECK(e1 < cfg.num_emotions);
  CHECK(s1.delta == s2.delta);
  CHECK(s1.trace.selection_process() == s2.trace.selection_process());
  CHECK(a.size() <= 6);
  CHECK_FALSE(a.empty());
  for (std::size_t i = 0; i + 1 < a.size(); ++i) CHECK(a[i] != kEos);
}
