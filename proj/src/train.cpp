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

#include "knowsel/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "knowsel/error.hpp"

namespace knowsel {

Adam::Adam(std::vector<Tensor> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  if (!(options_.lr > 0.0)) throw ConfigError("learning rate must be positive");
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void Adam::step() {
  ++t_;
  double clip = 1.0;
  if (options_.max_grad_norm > 0.0) {
    double sq = 0.0;
    for (auto& p : params_)
      if (p.has_grad())
        for (double g : p.mutable_grad()) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm > options_.max_grad_norm) clip = options_.max_grad_norm / norm;
  }
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k];
    if (!p.has_grad()) continue;
    auto g = p.mutable_grad();
    auto x = p.mutable_data();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double gi = g[i] * clip;
      m[i] = b1 * m[i] + (1.0 - b1) * gi;
      v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
      x[i] -= options_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + options_.eps);
      if (!std::isfinite(x[i])) throw NumericError("optimizer produced a non-finite parameter");
    }
  }
  zero_grad();
}

namespace {

std::vector<Tensor> parameter_handles(const Model& model) {
  std::vector<Tensor> out;
  for (const auto& [name, t] : model.parameters()) out.push_back(t);
  return out;
}

std::vector<std::vector<double>> snapshot(const Model& model) {
  std::vector<std::vector<double>> out;
  for (const auto& [name, t] : model.parameters()) out.push_back(t.to_vector());
  return out;
}

void restore(Model& model, const std::vector<std::vector<double>>& values) {
  const auto& params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor t = params[i].second;
    std::copy(values[i].begin(), values[i].end(), t.mutable_data().begin());
  }
}

void check_finite_loss(const LossBreakdown& l) {
  if (!std::isfinite(l.loss) || !std::isfinite(l.nll) || !std::isfinite(l.emo)) {
    throw NumericError("training diverged: non-finite loss");
  }
}

}  // namespace

LossBreakdown train_step(Model& model, Adam& optimizer, const Batch& batch) {
  if (batch.size() == 0) throw ContractError("train_step: empty batch");
  std::vector<Tensor> losses;
  LossBreakdown out;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto fwd = model.forward(batch.example(i));
    losses.push_back(fwd.loss);
    out.nll += fwd.nll.item();
    out.emo += fwd.emo.item();
  }
  Tensor total = losses.front();
  for (std::size_t i = 1; i < losses.size(); ++i) total = add(total, losses[i]);
  const double n = static_cast<double>(batch.size());
  total = scale(total, 1.0 / n);
  out.loss = total.item();
  out.nll /= n;
  out.emo /= n;
  check_finite_loss(out);
  backward(total);
  optimizer.step();
  return out;
}

LossBreakdown evaluate_loss(const Model& model, const std::vector<EncodedExample>& examples) {
  if (examples.empty()) throw ContractError("evaluate_loss: no examples");
  NoGradGuard no_grad;
  LossBreakdown out;
  for (const auto& ex : examples) {
    const auto fwd = model.forward(ex);
    out.loss += fwd.loss.item();
    out.nll += fwd.nll.item();
    out.emo += fwd.emo.item();
  }
  const double n = static_cast<double>(examples.size());
  out.loss /= n;
  out.nll /= n;
  out.emo /= n;
  return out;
}

std::vector<std::size_t> predict_emotions(const Model& model,
                                          const std::vector<EncodedExample>& examples) {
  NoGradGuard no_grad;
  std::vector<std::size_t> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) {
    const Tensor z_ctx = model.encode_context(ex.context);
    const auto knowledge = model.encode_knowledge(ex.relations);
    const auto selection = model.select(z_ctx, knowledge);
    const Tensor emo = model.emotion_logits(z_ctx, knowledge, selection);
    const auto logits = emo.data();
    out.push_back(static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) -
                                           logits.begin()));
  }
  return out;
}

TrainResult train(Model& model, const std::vector<EncodedExample>& train_set,
                  const std::vector<EncodedExample>& valid_set, const TrainOptions& options,
                  const std::function<void(const StepLog&)>& on_step,
                  const std::function<void(const EpochLog&)>& on_epoch) {
  if (train_set.empty()) throw ContractError("train: empty training set");
  if (options.batch_size == 0) throw ConfigError("batch size must be positive");
  Adam optimizer(parameter_handles(model), options.adam);
  std::mt19937_64 rng(options.seed);
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainResult result;
  double best_valid = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> best_params;
  std::size_t bad_epochs = 0;
  std::size_t step = 0;
  bool capped = false;

  for (std::size_t epoch = 1; epoch <= options.epochs && !capped; ++epoch) {
    if (options.shuffle) {
      for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng() % (i + 1)]);
    }
    std::vector<EncodedExample> shuffled;
    shuffled.reserve(order.size());
    for (auto i : order) shuffled.push_back(train_set[i]);

    EpochLog log;
    log.epoch = epoch;
    std::size_t epoch_steps = 0;
    for (const auto& batch : make_batches(shuffled, options.batch_size)) {
      StepLog s;
      s.step = ++step;
      s.epoch = epoch;
      s.loss = train_step(model, optimizer, batch);
      log.train.loss += s.loss.loss;
      log.train.nll += s.loss.nll;
      log.train.emo += s.loss.emo;
      ++epoch_steps;
      result.steps.push_back(s);
      if (on_step) on_step(s);
      if (options.max_steps && step >= options.max_steps) {
        capped = true;
        break;
      }
    }
    const double k = static_cast<double>(std::max<std::size_t>(epoch_steps, 1));
    log.train.loss /= k;
    log.train.nll /= k;
    log.train.emo /= k;

    if (!valid_set.empty()) {
      log.valid = evaluate_loss(model, valid_set);
      check_finite_loss(*log.valid);
      if (log.valid->loss < best_valid) {
        best_valid = log.valid->loss;
        best_params = snapshot(model);
        result.best_epoch = epoch;
        log.improved = true;
        bad_epochs = 0;
      } else {
        ++bad_epochs;
      }
    } else {
      result.best_epoch = epoch;
      log.improved = true;
    }
    result.epochs.push_back(log);
    if (on_epoch) on_epoch(log);
    if (!valid_set.empty() && bad_epochs >= options.patience) {
      result.early_stopped = true;
      break;
    }
  }
  if (!best_params.empty()) restore(model, best_params);
  return result;
}

}  // namespace knowsel
