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
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace knowsel {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {
struct Node;
}  // namespace detail

/// Dense row-major float64 array with optional reverse-mode gradient.
///
/// A Tensor is a cheap handle; copies alias the same storage. Values are
/// fixed once constructed, with one exception: leaves created with
/// `Tensor::parameter` may be updated in place by an optimizer. Every value
/// stored is finite; operations raise NumericError otherwise.
class Tensor {
 public:
  Tensor();

  static Tensor scalar(double value);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from(Shape shape, std::vector<double> data);
  /// Row matrix [1, n].
  static Tensor row(std::vector<double> data);
  /// Leaf that accumulates gradients.
  static Tensor parameter(Shape shape, std::vector<double> data);

  const Shape& shape() const;
  std::size_t rank() const;
  std::size_t numel() const;
  /// Size of axis 0 for rank-2 tensors.
  std::size_t rows() const;
  /// Size of the trailing axis.
  std::size_t cols() const;

  std::span<const double> data() const&;
  // A temporary owns the only handle; its span would dangle.
  std::span<const double> data() const&& = delete;
  double item() const;
  double at(std::size_t i) const;
  double at(std::size_t r, std::size_t c) const;
  std::vector<double> to_vector() const;

  bool requires_grad() const;
  bool is_leaf() const;
  bool has_grad() const;
  /// Gradient buffer; zeros if nothing has been accumulated.
  std::vector<double> grad() const;
  void zero_grad();

  /// In-place access for parameter updates. Only valid on leaves.
  std::span<double> mutable_data();
  std::span<double> mutable_grad();

  /// Same values, no gradient history.
  Tensor detach() const;

  std::uint64_t id() const;
  const std::shared_ptr<detail::Node>& node() const { return node_; }

  explicit Tensor(std::shared_ptr<detail::Node> node);

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

using BackwardFn = std::function<void(Node& out)>;

struct Node {
  std::uint64_t id = 0;
  std::string_view op = "leaf";
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  bool leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;

  std::vector<double>& grad_buffer();
};

/// Builds the output node of an operation. Records parents and the backward
/// rule only when grad mode is on and some parent requires a gradient.
Tensor make_result(std::string_view op, Shape shape, std::vector<double> data,
                   std::vector<Tensor> parents, BackwardFn backward);

}  // namespace detail

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Topologically ordered record of the operations reachable from a root.
class Tape {
 public:
  struct Entry {
    std::uint64_t id;
    std::string_view op;
    std::vector<std::uint64_t> inputs;
  };

  static Tape record(const Tensor& root);

  std::span<const Entry> entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  /// Runs the backward rules in reverse order, seeding the root with 1.
  /// Intermediate gradient buffers are released afterwards.
  void backward();

 private:
  std::vector<std::shared_ptr<detail::Node>> nodes_;
  std::vector<Entry> entries_;
};

/// Accumulates d(loss)/d(leaf) into every reachable leaf's grad buffer.
void backward(const Tensor& loss);

// ---- primitives -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

/// Elementwise sum. `b` may also be a vector ([n] or [1, n]) added to every
/// row of a rank-2 `a`.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin,
             std::size_t end);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Mean over rows of a rank-2 tensor: [m, n] -> [1, n].
Tensor mean_rows(const Tensor& a);

/// Softmax over the trailing axis, max-subtracted.
Tensor softmax(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);

/// Normalizes over the trailing axis, then applies gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps);

/// Rows of `table` selected by `ids`: [len(ids), d].
Tensor embedding(const Tensor& table, std::span<const std::int64_t> ids);

/// Mean over rows of -log softmax(logits)[row, target]. Rows whose target is
/// negative are skipped.
Tensor cross_entropy(const Tensor& logits, std::span<const std::int64_t> targets);

/// Mean over rows of -sum_k target[row, k] * log softmax(logits)[row, k].
Tensor soft_cross_entropy(const Tensor& logits, const Tensor& target_probs);

// ---- finite differences ---------------------------------------------------

using ScalarFn = std::function<Tensor(const Tensor&)>;

/// Max over coordinates of |analytic - central difference| / max(1, |analytic|)
/// for f evaluated at `point`.
double grad_check(const ScalarFn& f, const Tensor& point, double eps);

}  // namespace knowsel
