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

#include "knowsel/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "knowsel/error.hpp"

namespace knowsel {

namespace {

constexpr double kMaskValue = -1e9;

class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  // Uniform on (-a, a), built from raw engine bits for portability.
  std::vector<double> uniform(std::size_t n, double a) {
    std::vector<double> v(n);
    for (auto& x : v) {
      const double u = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
      x = a * (2.0 * u - 1.0);
    }
    return v;
  }

 private:
  std::mt19937_64 rng_;
};

std::string_view refine_norm_name(RefineNorm n) {
  return n == RefineNorm::kLinear ? "linear" : "layer_norm";
}

std::string_view emotion_input_name(EmotionInput e) {
  return e == EmotionInput::kAverage ? "average" : "winner";
}

std::vector<TokenId> shifted_labels(std::span<const TokenId> target) {
  return {target.begin() + 1, target.end()};
}

}  // namespace

// ---- config ---------------------------------------------------------------

RefineNorm parse_refine_norm(std::string_view name) {
  if (name == "layer_norm") return RefineNorm::kLayerNorm;
  if (name == "linear") return RefineNorm::kLinear;
  throw ConfigError("model config: unknown refine_norm '" + std::string(name) + "'");
}

EmotionInput parse_emotion_input(std::string_view name) {
  if (name == "winner") return EmotionInput::kWinner;
  if (name == "average") return EmotionInput::kAverage;
  throw ConfigError("model config: unknown emotion_input '" + std::string(name) + "'");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (vocab_size < kNumSpecialTokens) fail("vocab_size must cover the special tokens");
  if (num_emotions == 0) fail("num_emotions must be positive");
  if (d_model == 0) fail("d_model must be positive");
  if (num_layers == 0) fail("num_layers must be positive");
  if (num_heads == 0 || d_model % num_heads != 0) fail("num_heads must divide d_model");
  if (max_source < 2 || max_target < 2) fail("length caps must be at least 2");
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) fail("gamma must be finite and >= 0");
  if (!(ln_eps > 0.0)) fail("ln_eps must be positive");
}

nlohmann::ordered_json ModelConfig::to_json() const {
  nlohmann::ordered_json j;
  j["vocab_size"] = vocab_size;
  j["num_emotions"] = num_emotions;
  j["d_model"] = d_model;
  j["num_layers"] = num_layers;
  j["num_heads"] = num_heads;
  j["ffn_dim"] = ffn_dim;
  j["max_source"] = max_source;
  j["max_target"] = max_target;
  j["gamma"] = gamma;
  j["ln_eps"] = ln_eps;
  j["refine_norm"] = refine_norm_name(refine_norm);
  j["emotion_input"] = emotion_input_name(emotion_input);
  j["adaptive_selection"] = adaptive_selection;
  j["share_encoders"] = share_encoders;
  return j;
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.num_emotions = j.at("num_emotions").get<std::size_t>();
    c.d_model = j.at("d_model").get<std::size_t>();
    c.num_layers = j.at("num_layers").get<std::size_t>();
    c.num_heads = j.at("num_heads").get<std::size_t>();
    c.ffn_dim = j.value("ffn_dim", std::size_t{0});
    c.max_source = j.value("max_source", kDefaultMaxSource);
    c.max_target = j.value("max_target", kDefaultMaxTarget);
    c.gamma = j.value("gamma", 1.0);
    c.ln_eps = j.value("ln_eps", 1e-5);
    c.refine_norm = parse_refine_norm(j.value("refine_norm", std::string("layer_norm")));
    c.emotion_input = parse_emotion_input(j.value("emotion_input", std::string("winner")));
    c.adaptive_selection = j.value("adaptive_selection", true);
    c.share_encoders = j.value("share_encoders", false);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  return c;
}

// ---- building blocks ------------------------------------------------------

Tensor Linear::operator()(const Tensor& x) const { return add(matmul(x, weight), bias); }

Tensor refine_gate_alpha(const Tensor& h_tilde_k, const Tensor& h_c, const Tensor& w,
                         const GateHook& hook) {
  if (h_tilde_k.shape() != h_c.shape() || h_c.rank() != 2) {
    throw DimensionError("refine_gate: h_tilde_k " + shape_string(h_tilde_k.shape()) +
                         " and h_c " + shape_string(h_c.shape()) + " must match");
  }
  if (w.numel() != 2 * h_c.cols()) {
    throw DimensionError("refine_gate: w needs " + std::to_string(2 * h_c.cols()) + " entries");
  }
  Tensor logits = matmul(concat({h_tilde_k, h_c}, 1), reshape(w, {w.numel(), 1}));
  if (hook.logit_scale != 1.0) logits = scale(logits, hook.logit_scale);
  if (hook.logit_shift != 0.0) logits = add(logits, Tensor::from({1}, {hook.logit_shift}));
  return sigmoid(logits);
}

Tensor refine_gate(const Tensor& h_tilde_k, const Tensor& h_c, const RefineGateParams& gate,
                   RefineNorm norm, double ln_eps, const GateHook& hook) {
  const Tensor alpha = refine_gate_alpha(h_tilde_k, h_c, gate.w, hook);
  const std::size_t rows = h_c.rows(), d = h_c.cols();
  const Tensor alpha_full = matmul(alpha, Tensor::full({1, d}, 1.0));
  const Tensor normed = norm == RefineNorm::kLinear
                            ? gate.linear(h_tilde_k)
                            : layer_norm(h_tilde_k, gate.norm.gain, gate.norm.bias, ln_eps);
  const Tensor keep = sub(Tensor::full({rows, d}, 1.0), alpha_full);
  return add(mul(alpha_full, normed), mul(keep, h_c));
}

Tensor nll_loss(const Tensor& logits, std::span<const TokenId> targets) {
  std::vector<std::int64_t> masked(targets.begin(), targets.end());
  for (auto& t : masked)
    if (t == kPad) t = -1;
  return cross_entropy(logits, masked);
}

double joint_loss(double l_nll, double l_emo, double gamma) { return l_nll + gamma * l_emo; }

Tensor joint_loss(const Tensor& l_nll, const Tensor& l_emo, double gamma) {
  return add(l_nll, scale(l_emo, gamma));
}

Tensor KnowledgeEncoding::cls(Relation r) const {
  return slice(per_relation[index_of(r)], 0, 0, 1);
}

std::size_t ForwardOutput::predicted_emotion() const {
  const auto p = p_emo.data();
  return static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
}

// ---- model ----------------------------------------------------------------

Model::Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Initializer init(seed);
  const std::size_t d = config_.d_model;
  const std::size_t f = config_.ffn_width();

  auto add_param = [&](const std::string& name, Shape shape, std::vector<double> values) {
    Tensor t = Tensor::parameter(std::move(shape), std::move(values));
    params_.emplace_back(name, t);
    return t;
  };
  auto xavier = [&](const std::string& name, std::size_t in, std::size_t out) {
    const double a = std::sqrt(6.0 / static_cast<double>(in + out));
    return add_param(name, {in, out}, init.uniform(in * out, a));
  };
  auto linear = [&](const std::string& name, std::size_t in, std::size_t out) {
    Linear l;
    l.weight = xavier(name + ".weight", in, out);
    l.bias = add_param(name + ".bias", {out}, std::vector<double>(out, 0.0));
    return l;
  };
  auto norm = [&](const std::string& name) {
    LayerNormParams p;
    p.gain = add_param(name + ".gain", {d}, std::vector<double>(d, 1.0));
    p.bias = add_param(name + ".bias", {d}, std::vector<double>(d, 0.0));
    return p;
  };
  auto attention = [&](const std::string& name) {
    AttentionParams p;
    p.query = linear(name + ".query", d, d);
    p.key = linear(name + ".key", d, d);
    p.value = linear(name + ".value", d, d);
    p.output = linear(name + ".output", d, d);
    return p;
  };
  auto ffn = [&](const std::string& name) {
    FeedForwardParams p;
    p.up = linear(name + ".up", d, f);
    p.down = linear(name + ".down", f, d);
    return p;
  };
  auto encoder = [&](const std::string& prefix) {
    std::vector<EncoderLayerParams> layers;
    for (std::size_t i = 0; i < config_.num_layers; ++i) {
      const std::string name = prefix + "." + std::to_string(i);
      EncoderLayerParams l;
      l.self_attn = attention(name + ".self_attn");
      l.ln_attn = norm(name + ".ln_attn");
      l.ffn = ffn(name + ".ffn");
      l.ln_ffn = norm(name + ".ln_ffn");
      layers.push_back(std::move(l));
    }
    return layers;
  };

  const double emb = std::sqrt(3.0 / static_cast<double>(d));
  token_embedding_ = add_param("embed.token", {config_.vocab_size, d},
                               init.uniform(config_.vocab_size * d, emb));
  position_embedding_ = add_param("embed.position", {config_.max_positions(), d},
                                  init.uniform(config_.max_positions() * d, emb));
  context_encoder_ = encoder("context_encoder");
  knowledge_encoder_ = config_.share_encoders ? context_encoder_ : encoder("knowledge_encoder");
  for (std::size_t i = 0; i < config_.num_layers; ++i) {
    const std::string name = "decoder." + std::to_string(i);
    DecoderLayerParams l;
    l.self_attn = attention(name + ".self_attn");
    l.ln_self = norm(name + ".ln_self");
    l.context_attn = attention(name + ".context_attn");
    l.ln_context = norm(name + ".ln_context");
    l.knowledge_attn = attention(name + ".knowledge_attn");
    l.gate.w = xavier(name + ".gate.w", 2 * d, 1);
    if (config_.refine_norm == RefineNorm::kLinear) {
      l.gate.linear = linear(name + ".gate.linear", d, d);
    } else {
      l.gate.norm = norm(name + ".gate.norm");
    }
    l.ffn = ffn(name + ".ffn");
    l.ln_ffn = norm(name + ".ln_ffn");
    decoder_.push_back(std::move(l));
  }
  theta_ = xavier("emotion.theta", d, config_.num_emotions);
  output_ = linear("output", d, config_.vocab_size);
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) n += t.numel();
  return n;
}

Tensor Model::embed(std::span<const TokenId> ids) const {
  const Tensor tokens = embedding(token_embedding_, ids);
  const Tensor positions = slice(position_embedding_, 0, 0, ids.size());
  return add(tokens, positions);
}

Tensor Model::norm(const LayerNormParams& p, const Tensor& x) const {
  return layer_norm(x, p.gain, p.bias, config_.ln_eps);
}

Tensor Model::attention(const AttentionParams& p, const Tensor& queries, const Tensor& memory,
                        bool causal) const {
  const Tensor q = p.query(queries);
  const Tensor k = p.key(memory);
  const Tensor v = p.value(memory);
  const std::size_t heads = config_.num_heads;
  const std::size_t dh = config_.d_model / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const std::size_t tq = queries.rows(), tk = memory.rows();

  Tensor mask;
  if (causal) {
    std::vector<double> m(tq * tk, 0.0);
    for (std::size_t i = 0; i < tq; ++i)
      for (std::size_t j = i + 1; j < tk; ++j) m[i * tk + j] = kMaskValue;
    mask = Tensor::from({tq, tk}, std::move(m));
  }
  std::vector<Tensor> outputs;
  outputs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const Tensor qh = heads == 1 ? q : slice(q, 1, h * dh, (h + 1) * dh);
    const Tensor kh = heads == 1 ? k : slice(k, 1, h * dh, (h + 1) * dh);
    const Tensor vh = heads == 1 ? v : slice(v, 1, h * dh, (h + 1) * dh);
    Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
    if (causal) scores = add(scores, mask);
    outputs.push_back(matmul(softmax(scores), vh));
  }
  const Tensor merged = heads == 1 ? outputs.front() : concat(outputs, 1);
  return p.output(merged);
}

Tensor Model::feed_forward(const FeedForwardParams& p, const Tensor& x) const {
  return p.down(relu(p.up(x)));
}

Tensor Model::encoder_stack(const std::vector<EncoderLayerParams>& layers, const Tensor& x) const {
  Tensor h = x;
  for (const auto& l : layers) {
    h = norm(l.ln_attn, add(h, attention(l.self_attn, h, h, /*causal=*/false)));
    h = norm(l.ln_ffn, add(h, feed_forward(l.ffn, h)));
  }
  return h;
}

Tensor Model::encode_context(std::span<const TokenId> ids) const {
  if (ids.empty() || ids.front() != kCls) {
    throw ContractError("encode_context: input must start with [CLS]");
  }
  const std::size_t cap = config_.max_positions();
  if (ids.size() <= cap) return encoder_stack(context_encoder_, embed(ids));
  ++truncations_;
  std::vector<TokenId> kept;
  kept.reserve(cap);
  kept.push_back(kCls);
  kept.insert(kept.end(), ids.end() - static_cast<std::ptrdiff_t>(cap - 1), ids.end());
  return encoder_stack(context_encoder_, embed(kept));
}

KnowledgeEncoding Model::encode_knowledge(
    const std::array<std::vector<TokenId>, kNumRelations>& relation_ids) const {
  KnowledgeEncoding enc;
  std::vector<Tensor> cls_rows;
  const std::size_t cap = config_.max_positions();
  for (auto r : kRelations) {
    const auto& ids = relation_ids[index_of(r)];
    if (ids.empty()) {
      throw ContractError("encode_knowledge: relation " + std::string(relation_name(r)) +
                          " is missing");
    }
    if (ids.front() != kCls) {
      throw ContractError("encode_knowledge: relation sequences must start with [CLS]");
    }
    std::span<const TokenId> view(ids);
    if (view.size() > cap) {
      ++truncations_;
      view = view.first(cap);
    }
    enc.per_relation[index_of(r)] = encoder_stack(knowledge_encoder_, embed(view));
    cls_rows.push_back(enc.cls(r));
  }
  enc.average_cls = mean_rows(concat(cls_rows, 0));
  return enc;
}

Selection Model::select(const Tensor& z_ctx, const KnowledgeEncoding& knowledge) const {
  Selection sel;
  if (!config_.adaptive_selection) {
    sel.active = false;
    sel.delta.assign(config_.d_model, 0.0);
    return sel;
  }
  WorkspaceState state;
  const auto ctx = z_ctx.data();
  state.context_cls.assign(ctx.begin(), ctx.begin() + static_cast<std::ptrdiff_t>(config_.d_model));
  for (auto r : kRelations) {
    const auto z = knowledge.per_relation[index_of(r)].data();
    state.candidates.push_back(
        {r, std::vector<double>(z.begin(), z.begin() + static_cast<std::ptrdiff_t>(config_.d_model))});
  }
  auto result = competition(state, EmotionClassifier{theta_.detach()});
  sel.winner = result.winner;
  sel.delta = std::move(result.delta);
  sel.trace = std::move(result.trace);
  return sel;
}

Tensor Model::knowledge_memory(const KnowledgeEncoding& knowledge, const Selection& selection) const {
  if (selection.active) return knowledge.per_relation[index_of(selection.winner)];
  return concat({knowledge.per_relation.begin(), knowledge.per_relation.end()}, 0);
}

Tensor Model::decode(std::span<const TokenId> inputs, const Tensor& z_ctx, const Tensor& memory,
                     std::span<const double> delta, const DecodeOptions& options) const {
  if (inputs.empty()) throw ContractError("decode: empty target");
  if (delta.size() != config_.d_model) throw DimensionError("decode: delta has the wrong size");
  std::span<const TokenId> view = inputs;
  if (view.size() > config_.max_positions()) {
    ++truncations_;
    view = view.first(config_.max_positions());
  }
  Tensor h = embed(view);
  for (const auto& l : decoder_) {
    h = norm(l.ln_self, add(h, attention(l.self_attn, h, h, /*causal=*/true)));
    const Tensor h_c = norm(l.ln_context, add(h, attention(l.context_attn, h, z_ctx, false)));
    Tensor refined = h_c;
    if (options.knowledge_block) {
      const Tensor h_k = attention(l.knowledge_attn, h_c, memory, false);
      refined = refine_gate(broadcast(h_k, delta), h_c, l.gate, config_.refine_norm,
                            config_.ln_eps, options.gate);
    }
    h = norm(l.ln_ffn, add(refined, feed_forward(l.ffn, refined)));
  }
  return output_(h);
}

Tensor Model::emotion_logits(const Tensor& z_ctx, const KnowledgeEncoding& knowledge,
                             const Selection& selection) const {
  const Tensor ctx_cls = slice(z_ctx, 0, 0, 1);
  const bool use_winner = selection.active && config_.emotion_input == EmotionInput::kWinner;
  const Tensor z_k = use_winner ? knowledge.cls(selection.winner) : knowledge.average_cls;
  return knowsel::emotion_logits(EmotionClassifier{theta_}, fuse(z_k, ctx_cls));
}

ForwardOutput Model::forward(const EncodedExample& example, const ForwardOptions& options) const {
  if (example.target.size() < 2) throw ContractError("forward: target needs BOS and EOS");
  if (example.emotion >= config_.num_emotions) throw ContractError("forward: emotion out of range");
  ForwardOutput out;
  const Tensor z_ctx = encode_context(example.context);
  const KnowledgeEncoding knowledge = encode_knowledge(example.relations);
  out.selection = options.selection ? *options.selection : select(z_ctx, knowledge);

  const Tensor memory = knowledge_memory(knowledge, out.selection);
  const std::span<const TokenId> target(example.target);
  out.logits = decode(target.first(target.size() - 1), z_ctx, memory, out.selection.delta,
                      options.decode);
  const auto labels = shifted_labels(target);
  out.nll = nll_loss(out.logits, labels);

  const Tensor emo_logits = emotion_logits(z_ctx, knowledge, out.selection);
  out.p_emo = softmax(emo_logits.detach());
  const std::array<std::int64_t, 1> gold = {static_cast<std::int64_t>(example.emotion)};
  out.emo = cross_entropy(emo_logits, gold);
  out.loss = joint_loss(out.nll, out.emo, config_.gamma);

  const std::size_t vocab = config_.vocab_size;
  const auto logits = out.logits.data();
  for (std::size_t t = 0; t < labels.size(); ++t) {
    if (labels[t] == kPad) continue;
    const double* row = logits.data() + t * vocab;
    const double mx = *std::max_element(row, row + vocab);
    double z = 0.0;
    for (std::size_t c = 0; c < vocab; ++c) z += std::exp(row[c] - mx);
    out.token_nll.push_back(mx + std::log(z) - row[static_cast<std::size_t>(labels[t])]);
  }
  return out;
}

std::vector<TokenId> Model::generate(const EncodedExample& example, std::size_t max_len,
                                     Selection* selection_out,
                                     std::size_t* predicted_emotion) const {
  if (max_len > config_.max_target) {
    throw ContractError("generate: max_len " + std::to_string(max_len) + " exceeds the target cap " +
                        std::to_string(config_.max_target));
  }
  NoGradGuard no_grad;
  const Tensor z_ctx = encode_context(example.context);
  const KnowledgeEncoding knowledge = encode_knowledge(example.relations);
  Selection selection = select(z_ctx, knowledge);
  const Tensor memory = knowledge_memory(knowledge, selection);

  if (predicted_emotion) {
    const Tensor emo = emotion_logits(z_ctx, knowledge, selection);
    const auto logits = emo.data();
    *predicted_emotion =
        static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  }

  std::vector<TokenId> inputs = {kBos};
  std::vector<TokenId> generated;
  while (generated.size() < max_len && inputs.size() <= config_.max_positions()) {
    const Tensor logits = decode(inputs, z_ctx, memory, selection.delta);
    const auto data = logits.data();
    const std::size_t vocab = config_.vocab_size;
    const double* last = data.data() + (inputs.size() - 1) * vocab;
    const auto next = static_cast<TokenId>(std::max_element(last, last + vocab) - last);
    generated.push_back(next);
    if (next == kEos) break;
    inputs.push_back(next);
  }
  if (selection_out) *selection_out = std::move(selection);
  return generated;
}

}  // namespace knowsel
