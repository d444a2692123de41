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
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "knowsel/corpus.hpp"
#include "knowsel/tensor.hpp"
#include "knowsel/vocab.hpp"
#include "knowsel/workspace.hpp"

namespace knowsel {

/// What the refine gate applies to the rectified knowledge before blending.
enum class RefineNorm { kLayerNorm, kLinear };

/// Which knowledge vector is fused with the context CLS for emotion
/// classification when the selector runs.
enum class EmotionInput { kWinner, kAverage };

/// "layer_norm" | "linear"; ConfigError otherwise.
RefineNorm parse_refine_norm(std::string_view name);
/// "winner" | "average"; ConfigError otherwise.
EmotionInput parse_emotion_input(std::string_view name);

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t num_emotions = 0;
  std::size_t d_model = 64;
  std::size_t num_layers = 2;
  std::size_t num_heads = 2;
  std::size_t ffn_dim = 0;  // 0 means 4 * d_model
  std::size_t max_source = kDefaultMaxSource;
  std::size_t max_target = kDefaultMaxTarget;
  double gamma = 1.0;
  double ln_eps = 1e-5;
  RefineNorm refine_norm = RefineNorm::kLayerNorm;
  EmotionInput emotion_input = EmotionInput::kWinner;
  /// false: no competition, delta = 0, decoder attends to all five relations.
  bool adaptive_selection = true;
  /// Knowledge sequences reuse the context encoder's weights.
  bool share_encoders = false;

  std::size_t ffn_width() const { return ffn_dim ? ffn_dim : 4 * d_model; }
  std::size_t max_positions() const { return std::max(max_source, max_target); }
  void validate() const;

  nlohmann::ordered_json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]
  Tensor operator()(const Tensor& x) const;
};

struct LayerNormParams {
  Tensor gain;
  Tensor bias;
};

struct AttentionParams {
  Linear query, key, value, output;
};

struct FeedForwardParams {
  Linear up, down;
};

struct EncoderLayerParams {
  AttentionParams self_attn;
  LayerNormParams ln_attn;
  FeedForwardParams ffn;
  LayerNormParams ln_ffn;
};

struct RefineGateParams {
  Tensor w;             // [2d, 1]
  LayerNormParams norm;  // RefineNorm::kLayerNorm
  Linear linear;         // RefineNorm::kLinear
};

struct DecoderLayerParams {
  AttentionParams self_attn;
  LayerNormParams ln_self;
  AttentionParams context_attn;
  LayerNormParams ln_context;
  AttentionParams knowledge_attn;
  RefineGateParams gate;
  FeedForwardParams ffn;
  LayerNormParams ln_ffn;
};

/// Test hook on the gate pre-activation: alpha = sigmoid(scale * w.[h;h] + shift).
struct GateHook {
  double logit_scale = 1.0;
  double logit_shift = 0.0;
};

/// alpha * N(h_tilde_k) + (1 - alpha) * h_c with alpha = sigmoid(w . [h_tilde_k; h_c])
/// per row, N being layer normalization or a linear map.
Tensor refine_gate(const Tensor& h_tilde_k, const Tensor& h_c, const RefineGateParams& gate,
                   RefineNorm norm, double ln_eps, const GateHook& hook = {});

/// Per-row gate values alpha, [T, 1].
Tensor refine_gate_alpha(const Tensor& h_tilde_k, const Tensor& h_c, const Tensor& w,
                         const GateHook& hook = {});

/// Mean over non-PAD targets of -log softmax(logits)[target].
Tensor nll_loss(const Tensor& logits, std::span<const TokenId> targets);

double joint_loss(double l_nll, double l_emo, double gamma);
Tensor joint_loss(const Tensor& l_nll, const Tensor& l_emo, double gamma);

struct KnowledgeEncoding {
  std::array<Tensor, kNumRelations> per_relation;  // Z_r, [l_r, d]
  Tensor average_cls;                              // z_r, [1, d]

  Tensor cls(Relation r) const;
};

/// Output of the competition, held as constants.
struct Selection {
  Relation winner = Relation::kXIntent;
  std::vector<double> delta;
  WorkspaceTrace trace;
  bool active = true;  // false when the selector is disabled
};

struct DecodeOptions {
  GateHook gate;
  bool knowledge_block = true;  // false: context-only decoder
};

struct ForwardOptions {
  /// Reuse a previously computed selection instead of running competition.
  const Selection* selection = nullptr;
  DecodeOptions decode;
};

struct ForwardOutput {
  Tensor logits;  // [T, V]
  Tensor p_emo;   // [1, q]
  Tensor nll;
  Tensor emo;
  Tensor loss;
  Selection selection;
  std::vector<double> token_nll;  // per non-PAD target token

  std::size_t predicted_emotion() const;
};

class Model {
 public:
  Model(ModelConfig config, std::uint64_t seed);

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return config_; }

  /// Every parameter in declaration order.
  const std::vector<std::pair<std::string, Tensor>>& parameters() const { return params_; }
  std::size_t parameter_count() const;
  EmotionClassifier classifier() const { return {theta_}; }
  const std::vector<DecoderLayerParams>& decoder_layers() const { return decoder_; }

  /// [L, d]; row 0 is the CLS summary.
  Tensor encode_context(std::span<const TokenId> ids) const;
  KnowledgeEncoding encode_knowledge(
      const std::array<std::vector<TokenId>, kNumRelations>& relation_ids) const;

  /// Runs the competition on detached CLS vectors.
  Selection select(const Tensor& z_ctx, const KnowledgeEncoding& knowledge) const;

  /// Knowledge-attention memory and the delta used by the decoder.
  Tensor knowledge_memory(const KnowledgeEncoding& knowledge, const Selection& selection) const;

  /// Teacher-forced logits [T, V] for `inputs` (BOS-prefixed).
  Tensor decode(std::span<const TokenId> inputs, const Tensor& z_ctx, const Tensor& memory,
                std::span<const double> delta, const DecodeOptions& options = {}) const;

  /// Emotion logits [1, q] given the selection.
  Tensor emotion_logits(const Tensor& z_ctx, const KnowledgeEncoding& knowledge,
                        const Selection& selection) const;

  ForwardOutput forward(const EncodedExample& example, const ForwardOptions& options = {}) const;

  /// Greedy decoding from BOS; stops after EOS (which is kept) or `max_len` tokens.
  std::vector<TokenId> generate(const EncodedExample& example, std::size_t max_len,
                                Selection* selection_out = nullptr,
                                std::size_t* predicted_emotion = nullptr) const;

  /// How many inputs were cut to fit the positional table.
  std::size_t truncation_warnings() const { return truncations_.load(); }

 private:
  Tensor embed(std::span<const TokenId> ids) const;
  Tensor encoder_stack(const std::vector<EncoderLayerParams>& layers, const Tensor& x) const;
  Tensor attention(const AttentionParams& p, const Tensor& queries, const Tensor& memory,
                   bool causal) const;
  Tensor feed_forward(const FeedForwardParams& p, const Tensor& x) const;
  Tensor norm(const LayerNormParams& p, const Tensor& x) const;

  ModelConfig config_;
  std::vector<std::pair<std::string, Tensor>> params_;
  Tensor token_embedding_;
  Tensor position_embedding_;
  std::vector<EncoderLayerParams> context_encoder_;
  std::vector<EncoderLayerParams> knowledge_encoder_;
  std::vector<DecoderLayerParams> decoder_;
  Tensor theta_;
  Linear output_;
  mutable std::atomic<std::size_t> truncations_{0};
};

}  // namespace knowsel
