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
#include <functional>
#include <optional>
#include <vector>

#include "knowsel/corpus.hpp"
#include "knowsel/model.hpp"

namespace knowsel {

struct AdamOptions {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double max_grad_norm = 0.0;  // 0 disables clipping
};

class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamOptions options);

  /// Applies one update from the accumulated gradients, then clears them.
  void step();
  void zero_grad();
  std::size_t steps() const { return t_; }
  const AdamOptions& options() const { return options_; }

 private:
  std::vector<Tensor> params_;
  AdamOptions options_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

struct LossBreakdown {
  double loss = 0.0;
  double nll = 0.0;
  double emo = 0.0;
};

struct StepLog {
  std::size_t step = 0;  // 1-based
  std::size_t epoch = 0;
  LossBreakdown loss;
};

struct EpochLog {
  std::size_t epoch = 0;
  LossBreakdown train;  // mean of the epoch's step losses
  std::optional<LossBreakdown> valid;
  bool improved = false;
};

struct TrainOptions {
  AdamOptions adam;
  std::size_t batch_size = 16;
  std::size_t epochs = 5;
  std::size_t max_steps = 0;  // 0: no cap
  std::size_t patience = 1;   // epochs without validation improvement
  std::uint64_t seed = 0;
  bool shuffle = true;
};

struct TrainResult {
  std::vector<StepLog> steps;
  std::vector<EpochLog> epochs;
  std::size_t best_epoch = 0;
  bool early_stopped = false;
};

/// Mean joint loss over the batch, one backward pass, one optimizer update.
LossBreakdown train_step(Model& model, Adam& optimizer, const Batch& batch);

/// Mean losses without recording gradients.
LossBreakdown evaluate_loss(const Model& model, const std::vector<EncodedExample>& examples);

/// Argmax emotion per example under the model's selection path.
std::vector<std::size_t> predict_emotions(const Model& model,
                                          const std::vector<EncodedExample>& examples);

/// Epoch loop with per-epoch shuffling and early stopping on validation loss.
/// When validation data is present the best epoch's parameters are restored.
TrainResult train(Model& model, const std::vector<EncodedExample>& train_set,
                  const std::vector<EncodedExample>& valid_set, const TrainOptions& options,
                  const std::function<void(const StepLog&)>& on_step = {},
                  const std::function<void(const EpochLog&)>& on_epoch = {});

}  // namespace knowsel
