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

#include "knowsel/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "knowsel/error.hpp"

namespace knowsel {

namespace {

std::atomic<std::uint64_t> g_next_id{1};
thread_local bool t_grad_enabled = true;

std::shared_ptr<detail::Node> new_node(Shape shape, std::vector<double> data) {
  auto node = std::make_shared<detail::Node>();
  node->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  node->shape = std::move(shape);
  node->data = std::move(data);
  return node;
}

void check_finite(std::string_view op, std::span<const double> data) {
  for (double v : data) {
    if (!std::isfinite(v)) {
      throw NumericError("non-finite value produced by " + std::string(op));
    }
  }
}

// (rows, cols) view of a tensor of rank <= 2.
struct Matrix2 {
  std::size_t rows;
  std::size_t cols;
};

Matrix2 as_matrix(const Shape& s, std::string_view op) {
  switch (s.size()) {
    case 0:
      return {1, 1};
    case 1:
      return {1, s[0]};
    case 2:
      return {s[0], s[1]};
    default:
      throw DimensionError(std::string(op) + ": rank > 2 unsupported, got " +
                           shape_string(s));
  }
}

void require_rank2(const Tensor& t, std::string_view op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected rank-2 tensor, got " +
                         shape_string(t.shape()));
  }
}

bool is_row_vector_of(const Tensor& b, std::size_t n) {
  const auto& s = b.shape();
  return (s.size() == 1 && s[0] == n) || (s.size() == 2 && s[0] == 1 && s[1] == n);
}

enum class Broadcast { kNone, kRow };

Broadcast binary_layout(const Tensor& a, const Tensor& b, std::string_view op) {
  if (a.shape() == b.shape()) return Broadcast::kNone;
  if (a.rank() == 2 && is_row_vector_of(b, a.cols())) {
    return Broadcast::kRow;
  }
  throw DimensionError(std::string(op) + ": shapes " + shape_string(a.shape()) +
                       " and " + shape_string(b.shape()) + " are incompatible");
}

detail::Node& parent(detail::Node& out, std::size_t i) { return *out.parents[i]; }

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::vector<double>& detail::Node::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

// ---- Tensor ---------------------------------------------------------------

Tensor::Tensor() : node_(new_node({}, {0.0})) {}

Tensor::Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

Tensor Tensor::scalar(double value) { return from({}, {value}); }

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  const auto n = shape_numel(shape);
  return from(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::from(Shape shape, std::vector<double> data) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("shape " + shape_string(shape) + " does not hold " +
                         std::to_string(data.size()) + " values");
  }
  check_finite("Tensor::from", data);
  return Tensor(new_node(std::move(shape), std::move(data)));
}

Tensor Tensor::row(std::vector<double> data) {
  const auto n = data.size();
  return from({1, n}, std::move(data));
}

Tensor Tensor::parameter(Shape shape, std::vector<double> data) {
  Tensor t = from(std::move(shape), std::move(data));
  t.node_->requires_grad = true;
  return t;
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::rank() const { return node_->shape.size(); }
std::size_t Tensor::numel() const { return node_->data.size(); }

std::size_t Tensor::rows() const {
  if (rank() != 2) throw DimensionError("rows() needs a rank-2 tensor");
  return node_->shape[0];
}

std::size_t Tensor::cols() const {
  if (rank() == 0) return 1;
  return node_->shape.back();
}

std::span<const double> Tensor::data() const& { return node_->data; }

double Tensor::item() const {
  if (numel() != 1) {
    throw DimensionError("item() on tensor of shape " + shape_string(shape()));
  }
  return node_->data[0];
}

double Tensor::at(std::size_t i) const { return node_->data.at(i); }

double Tensor::at(std::size_t r, std::size_t c) const {
  return node_->data.at(r * cols() + c);
}

std::vector<double> Tensor::to_vector() const { return node_->data; }

bool Tensor::requires_grad() const { return node_->requires_grad; }
bool Tensor::is_leaf() const { return node_->leaf; }
bool Tensor::has_grad() const { return !node_->grad.empty(); }

std::vector<double> Tensor::grad() const {
  if (node_->grad.empty()) return std::vector<double>(numel(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.clear(); }

std::span<double> Tensor::mutable_data() {
  if (!node_->leaf) throw ContractError("mutable_data() on a non-leaf tensor");
  return node_->data;
}

std::span<double> Tensor::mutable_grad() { return node_->grad_buffer(); }

Tensor Tensor::detach() const { return Tensor(new_node(shape(), node_->data)); }

std::uint64_t Tensor::id() const { return node_->id; }

// ---- recording ------------------------------------------------------------

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

Tensor detail::make_result(std::string_view op, Shape shape,
                           std::vector<double> data, std::vector<Tensor> parents,
                           BackwardFn backward) {
  check_finite(op, data);
  auto node = new_node(std::move(shape), std::move(data));
  node->op = op;
  const bool track =
      t_grad_enabled && std::any_of(parents.begin(), parents.end(),
                                    [](const Tensor& p) { return p.requires_grad(); });
  if (track) {
    node->requires_grad = true;
    node->leaf = false;
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

Tape Tape::record(const Tensor& root) {
  Tape tape;
  if (!root.requires_grad()) return tape;
  // Iterative post-order DFS; each node is emitted once, after its parents.
  std::unordered_set<const detail::Node*> visited;
  std::vector<std::pair<std::shared_ptr<detail::Node>, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      auto p = node->parents[next++];
      if (p->requires_grad && visited.insert(p.get()).second) {
        stack.emplace_back(std::move(p), 0);
      }
      continue;
    }
    Entry entry{node->id, node->op, {}};
    for (const auto& p : node->parents) entry.inputs.push_back(p->id);
    tape.entries_.push_back(std::move(entry));
    tape.nodes_.push_back(node);
    stack.pop_back();
  }
  return tape;
}

void Tape::backward() {
  if (nodes_.empty()) return;
  auto& root = *nodes_.back();
  if (root.data.size() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " +
                        shape_string(root.shape));
  }
  root.grad_buffer()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    auto& node = **it;
    if (node.backward && !node.grad.empty()) node.backward(node);
  }
  for (auto& node : nodes_) {
    if (!node->leaf) {
      node->grad.clear();
      node->grad.shrink_to_fit();
    }
  }
}

void backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " +
                        shape_string(loss.shape()));
  }
  Tape::record(loss).backward();
}

// ---- primitives -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions differ: " +
                         shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  const auto A = a.data();
  const auto B = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      if (av == 0.0) continue;
      const double* brow = B.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return detail::make_result(
      "matmul", {m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& o) {
        auto& pa = parent(o, 0);
        auto& pb = parent(o, 1);
        const auto& g = o.grad;
        if (pa.requires_grad) {
          auto& ga = pa.grad_buffer();
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t p = 0; p < k; ++p) {
              double acc = 0.0;
              for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * pb.data[p * n + j];
              ga[i * k + p] += acc;
            }
          }
        }
        if (pb.requires_grad) {
          auto& gb = pb.grad_buffer();
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t p = 0; p < k; ++p) {
              const double av = pa.data[i * k + p];
              if (av == 0.0) continue;
              for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * g[i * n + j];
            }
          }
        }
      });
}

Tensor transpose(const Tensor& a) {
  require_rank2(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  const auto A = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = A[i * n + j];
  return detail::make_result("transpose", {n, m}, std::move(out), {a},
                             [m, n](detail::Node& o) {
                               auto& ga = parent(o, 0).grad_buffer();
                               for (std::size_t i = 0; i < m; ++i)
                                 for (std::size_t j = 0; j < n; ++j)
                                   ga[i * n + j] += o.grad[j * m + i];
                             });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: " + shape_string(a.shape()) + " -> " +
                         shape_string(shape));
  }
  return detail::make_result("reshape", std::move(shape), a.to_vector(), {a},
                             [](detail::Node& o) {
                               auto& ga = parent(o, 0).grad_buffer();
                               for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += o.grad[i];
                             });
}

namespace {

Tensor add_like(const Tensor& a, const Tensor& b, double sign, std::string_view op) {
  const auto layout = binary_layout(a, b, op);
  const auto A = a.data();
  const auto B = b.data();
  std::vector<double> out(A.begin(), A.end());
  const std::size_t n = b.numel();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += sign * B[i % n];
  return detail::make_result(
      op, a.shape(), std::move(out), {a, b}, [sign, n, layout](detail::Node& o) {
        auto& pa = parent(o, 0);
        auto& pb = parent(o, 1);
        if (pa.requires_grad) {
          auto& ga = pa.grad_buffer();
          for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += o.grad[i];
        }
        if (pb.requires_grad) {
          auto& gb = pb.grad_buffer();
          if (layout == Broadcast::kNone) {
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += sign * o.grad[i];
          } else {
            for (std::size_t i = 0; i < o.grad.size(); ++i) gb[i % n] += sign * o.grad[i];
          }
        }
      });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return add_like(a, b, 1.0, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return add_like(a, b, -1.0, "sub"); }

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("mul: shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()) + " differ");
  }
  const auto A = a.data();
  const auto B = b.data();
  std::vector<double> out(A.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] * B[i];
  return detail::make_result("mul", a.shape(), std::move(out), {a, b},
                             [](detail::Node& o) {
                               auto& pa = parent(o, 0);
                               auto& pb = parent(o, 1);
                               if (pa.requires_grad) {
                                 auto& ga = pa.grad_buffer();
                                 for (std::size_t i = 0; i < ga.size(); ++i)
                                   ga[i] += o.grad[i] * pb.data[i];
                               }
                               if (pb.requires_grad) {
                                 auto& gb = pb.grad_buffer();
                                 for (std::size_t i = 0; i < gb.size(); ++i)
                                   gb[i] += o.grad[i] * pa.data[i];
                               }
                             });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out = a.to_vector();
  for (auto& v : out) v *= factor;
  return detail::make_result("scale", a.shape(), std::move(out), {a},
                             [factor](detail::Node& o) {
                               auto& ga = parent(o, 0).grad_buffer();
                               for (std::size_t i = 0; i < ga.size(); ++i)
                                 ga[i] += factor * o.grad[i];
                             });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const auto rank = parts.front().rank();
  if (rank == 1) {
    if (axis != 0) throw DimensionError("concat: axis out of range for rank 1");
    std::vector<double> out;
    std::vector<std::size_t> offsets;
    for (const auto& p : parts) {
      if (p.rank() != 1) throw DimensionError("concat: mixed ranks");
      offsets.push_back(out.size());
      out.insert(out.end(), p.data().begin(), p.data().end());
    }
    const auto total = out.size();
    return detail::make_result("concat", {total}, std::move(out), parts,
                               [offsets](detail::Node& o) {
                                 for (std::size_t k = 0; k < o.parents.size(); ++k) {
                                   auto& pk = *o.parents[k];
                                   if (!pk.requires_grad) continue;
                                   auto& g = pk.grad_buffer();
                                   for (std::size_t i = 0; i < g.size(); ++i)
                                     g[i] += o.grad[offsets[k] + i];
                                 }
                               });
  }
  if (rank != 2 || axis > 1) {
    throw DimensionError("concat: supports rank-1 or rank-2 tensors on axis 0/1");
  }
  const std::size_t fixed = axis == 0 ? parts.front().cols() : parts.front().rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2) throw DimensionError("concat: mixed ranks");
    const std::size_t other = axis == 0 ? p.cols() : p.rows();
    if (other != fixed) {
      throw DimensionError("concat: mismatched shape " + shape_string(p.shape()));
    }
    total += axis == 0 ? p.rows() : p.cols();
  }
  const std::size_t rows = axis == 0 ? total : fixed;
  const std::size_t cols = axis == 0 ? fixed : total;
  std::vector<double> out(rows * cols);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const auto D = p.data();
    if (axis == 0) {
      std::copy(D.begin(), D.end(), out.begin() + static_cast<std::ptrdiff_t>(off * cols));
      off += p.rows();
    } else {
      const std::size_t pc = p.cols();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < pc; ++c) out[r * cols + off + c] = D[r * pc + c];
      off += pc;
    }
  }
  return detail::make_result(
      "concat", {rows, cols}, std::move(out), parts,
      [offsets, axis, cols, rows](detail::Node& o) {
        for (std::size_t k = 0; k < o.parents.size(); ++k) {
          auto& pk = *o.parents[k];
          if (!pk.requires_grad) continue;
          auto& g = pk.grad_buffer();
          if (axis == 0) {
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[offsets[k] * cols + i];
          } else {
            const std::size_t pc = pk.shape[1];
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t c = 0; c < pc; ++c)
                g[r * pc + c] += o.grad[r * cols + offsets[k] + c];
          }
        }
      });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
  if (a.rank() == 0 || a.rank() > 2 || axis >= a.rank()) {
    throw DimensionError("slice: bad axis for shape " + shape_string(a.shape()));
  }
  if (begin > end || end > a.shape()[axis]) {
    throw DimensionError("slice: range [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") out of bounds for " +
                         shape_string(a.shape()));
  }
  const auto A = a.data();
  if (a.rank() == 1) {
    std::vector<double> out(A.begin() + static_cast<std::ptrdiff_t>(begin),
                            A.begin() + static_cast<std::ptrdiff_t>(end));
    return detail::make_result("slice", {end - begin}, std::move(out), {a},
                               [begin](detail::Node& o) {
                                 auto& g = parent(o, 0).grad_buffer();
                                 for (std::size_t i = 0; i < o.grad.size(); ++i)
                                   g[begin + i] += o.grad[i];
                               });
  }
  const std::size_t rows = a.rows(), cols = a.cols();
  const std::size_t orows = axis == 0 ? end - begin : rows;
  const std::size_t ocols = axis == 1 ? end - begin : cols;
  const std::size_t r0 = axis == 0 ? begin : 0;
  const std::size_t c0 = axis == 1 ? begin : 0;
  std::vector<double> out(orows * ocols);
  for (std::size_t r = 0; r < orows; ++r)
    for (std::size_t c = 0; c < ocols; ++c) out[r * ocols + c] = A[(r0 + r) * cols + c0 + c];
  return detail::make_result("slice", {orows, ocols}, std::move(out), {a},
                             [orows, ocols, r0, c0, cols](detail::Node& o) {
                               auto& g = parent(o, 0).grad_buffer();
                               for (std::size_t r = 0; r < orows; ++r)
                                 for (std::size_t c = 0; c < ocols; ++c)
                                   g[(r0 + r) * cols + c0 + c] += o.grad[r * ocols + c];
                             });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return detail::make_result("sum", {}, {s}, {a}, [](detail::Node& o) {
    auto& g = parent(o, 0).grad_buffer();
    for (auto& v : g) v += o.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw DimensionError("mean: empty tensor");
  const double n = static_cast<double>(a.numel());
  double s = 0.0;
  for (double v : a.data()) s += v;
  return detail::make_result("mean", {}, {s / n}, {a}, [n](detail::Node& o) {
    auto& g = parent(o, 0).grad_buffer();
    for (auto& v : g) v += o.grad[0] / n;
  });
}

Tensor mean_rows(const Tensor& a) {
  require_rank2(a, "mean_rows");
  const std::size_t m = a.rows(), n = a.cols();
  if (m == 0) throw DimensionError("mean_rows: no rows");
  std::vector<double> out(n, 0.0);
  const auto A = a.data();
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[c] += A[r * n + c];
  for (auto& v : out) v /= static_cast<double>(m);
  return detail::make_result("mean_rows", {1, n}, std::move(out), {a},
                             [m, n](detail::Node& o) {
                               auto& g = parent(o, 0).grad_buffer();
                               const double inv = 1.0 / static_cast<double>(m);
                               for (std::size_t r = 0; r < m; ++r)
                                 for (std::size_t c = 0; c < n; ++c)
                                   g[r * n + c] += o.grad[c] * inv;
                             });
}

namespace {

void softmax_row(const double* x, double* y, std::size_t n) {
  double mx = x[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, x[i]);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = std::exp(x[i] - mx);
    z += y[i];
  }
  for (std::size_t i = 0; i < n; ++i) y[i] /= z;
}

// log-softmax of one row; returns log-sum-exp.
double log_softmax_row(const double* x, double* out, std::size_t n) {
  double mx = x[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, x[i]);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) z += std::exp(x[i] - mx);
  const double lse = mx + std::log(z);
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] - lse;
  return lse;
}

}  // namespace

Tensor softmax(const Tensor& x) {
  const auto [rows, cols] = as_matrix(x.shape(), "softmax");
  if (x.rank() == 0 || cols == 0) throw DimensionError("softmax: empty input");
  std::vector<double> out(x.numel());
  const auto X = x.data();
  for (std::size_t r = 0; r < rows; ++r) softmax_row(X.data() + r * cols, out.data() + r * cols, cols);
  return detail::make_result("softmax", x.shape(), std::move(out), {x},
                             [rows = rows, cols = cols](detail::Node& o) {
                               auto& g = parent(o, 0).grad_buffer();
                               for (std::size_t r = 0; r < rows; ++r) {
                                 const double* y = o.data.data() + r * cols;
                                 const double* go = o.grad.data() + r * cols;
                                 double dot = 0.0;
                                 for (std::size_t c = 0; c < cols; ++c) dot += go[c] * y[c];
                                 for (std::size_t c = 0; c < cols; ++c)
                                   g[r * cols + c] += y[c] * (go[c] - dot);
                               }
                             });
}

Tensor log(const Tensor& x) {
  std::vector<double> out(x.numel());
  const auto X = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(X[i]);
  return detail::make_result("log", x.shape(), std::move(out), {x}, [](detail::Node& o) {
    auto& p = parent(o, 0);
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] / p.data[i];
  });
}

Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.numel());
  const auto X = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = X[i];
    if (v >= 0) {
      out[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      out[i] = e / (1.0 + e);
    }
  }
  return detail::make_result("sigmoid", x.shape(), std::move(out), {x},
                             [](detail::Node& o) {
                               auto& g = parent(o, 0).grad_buffer();
                               for (std::size_t i = 0; i < g.size(); ++i) {
                                 const double y = o.data[i];
                                 g[i] += o.grad[i] * y * (1.0 - y);
                               }
                             });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out = x.to_vector();
  for (auto& v : out) v = v > 0.0 ? v : 0.0;
  return detail::make_result("relu", x.shape(), std::move(out), {x}, [](detail::Node& o) {
    auto& p = parent(o, 0);
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (p.data[i] > 0.0) g[i] += o.grad[i];
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (!(eps > 0.0)) throw ContractError("layer_norm: eps must be positive");
  const auto [rows, d] = as_matrix(x.shape(), "layer_norm");
  if (x.rank() == 0 || d == 0) throw DimensionError("layer_norm: empty trailing axis");
  if (gain.numel() != d || bias.numel() != d) {
    throw DimensionError("layer_norm: gain/bias must have " + std::to_string(d) +
                         " entries");
  }
  const auto X = x.data();
  const auto Gn = gain.data();
  const auto Bs = bias.data();
  std::vector<double> out(x.numel());
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = X.data() + r * d;
    double mu = 0.0;
    for (std::size_t c = 0; c < d; ++c) mu += xr[c];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[r] = inv;
    for (std::size_t c = 0; c < d; ++c) {
      xhat[r * d + c] = (xr[c] - mu) * inv;
      out[r * d + c] = xhat[r * d + c] * Gn[c] + Bs[c];
    }
  }
  return detail::make_result(
      "layer_norm", x.shape(), std::move(out), {x, gain, bias},
      [rows = rows, d = d, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node& o) {
        auto& px = parent(o, 0);
        auto& pg = parent(o, 1);
        auto& pb = parent(o, 2);
        const double dn = static_cast<double>(d);
        if (pg.requires_grad) {
          auto& gg = pg.grad_buffer();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < d; ++c) gg[c] += o.grad[r * d + c] * xhat[r * d + c];
        }
        if (pb.requires_grad) {
          auto& gb = pb.grad_buffer();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < d; ++c) gb[c] += o.grad[r * d + c];
        }
        if (px.requires_grad) {
          auto& gx = px.grad_buffer();
          for (std::size_t r = 0; r < rows; ++r) {
            double s1 = 0.0, s2 = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
              const double gh = o.grad[r * d + c] * pg.data[c];
              s1 += gh;
              s2 += gh * xhat[r * d + c];
            }
            for (std::size_t c = 0; c < d; ++c) {
              const double gh = o.grad[r * d + c] * pg.data[c];
              gx[r * d + c] += inv_std[r] / dn * (dn * gh - s1 - xhat[r * d + c] * s2);
            }
          }
        }
      });
}

Tensor embedding(const Tensor& table, std::span<const std::int64_t> ids) {
  require_rank2(table, "embedding");
  const std::size_t vocab = table.rows(), d = table.cols();
  std::vector<double> out(ids.size() * d);
  const auto T = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw ContractError("embedding: id " + std::to_string(ids[i]) +
                          " outside table of " + std::to_string(vocab) + " rows");
    }
    std::copy_n(T.begin() + static_cast<std::ptrdiff_t>(ids[i] * static_cast<std::int64_t>(d)), d,
                out.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  std::vector<std::int64_t> idv(ids.begin(), ids.end());
  return detail::make_result("embedding", {ids.size(), d}, std::move(out), {table},
                             [idv = std::move(idv), d](detail::Node& o) {
                               auto& g = parent(o, 0).grad_buffer();
                               for (std::size_t i = 0; i < idv.size(); ++i) {
                                 const auto base = static_cast<std::size_t>(idv[i]) * d;
                                 for (std::size_t c = 0; c < d; ++c) g[base + c] += o.grad[i * d + c];
                               }
                             });
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::int64_t> targets) {
  const auto [rows, cols] = as_matrix(logits.shape(), "cross_entropy");
  if (targets.size() != rows) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) +
                         " targets for " + std::to_string(rows) + " rows");
  }
  const auto L = logits.data();
  std::vector<double> logp(logits.numel());
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    log_softmax_row(L.data() + r * cols, logp.data() + r * cols, cols);
    if (targets[r] < 0) continue;
    if (static_cast<std::size_t>(targets[r]) >= cols) {
      throw ContractError("cross_entropy: target " + std::to_string(targets[r]) +
                          " out of range");
    }
    total -= logp[r * cols + static_cast<std::size_t>(targets[r])];
    ++count;
  }
  if (count == 0) throw ContractError("cross_entropy: every target is masked");
  const double n = static_cast<double>(count);
  std::vector<std::int64_t> tv(targets.begin(), targets.end());
  return detail::make_result(
      "cross_entropy", {}, {total / n}, {logits},
      [logp = std::move(logp), tv = std::move(tv), rows = rows, cols = cols, n](detail::Node& o) {
        auto& g = parent(o, 0).grad_buffer();
        const double go = o.grad[0] / n;
        for (std::size_t r = 0; r < rows; ++r) {
          if (tv[r] < 0) continue;
          for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += go * std::exp(logp[r * cols + c]);
          g[r * cols + static_cast<std::size_t>(tv[r])] -= go;
        }
      });
}

Tensor soft_cross_entropy(const Tensor& logits, const Tensor& target_probs) {
  if (logits.shape() != target_probs.shape()) {
    throw DimensionError("soft_cross_entropy: shapes " + shape_string(logits.shape()) +
                         " and " + shape_string(target_probs.shape()) + " differ");
  }
  const auto [rows, cols] = as_matrix(logits.shape(), "soft_cross_entropy");
  const auto L = logits.data();
  const auto P = target_probs.data();
  std::vector<double> logp(logits.numel());
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    log_softmax_row(L.data() + r * cols, logp.data() + r * cols, cols);
    for (std::size_t c = 0; c < cols; ++c) total -= P[r * cols + c] * logp[r * cols + c];
  }
  const double n = static_cast<double>(rows);
  return detail::make_result(
      "soft_cross_entropy", {}, {total / n}, {logits, target_probs},
      [logp = std::move(logp), rows = rows, cols = cols, n](detail::Node& o) {
        auto& pl = parent(o, 0);
        auto& pt = parent(o, 1);
        const double go = o.grad[0] / n;
        if (pl.requires_grad) {
          auto& g = pl.grad_buffer();
          for (std::size_t r = 0; r < rows; ++r) {
            double mass = 0.0;
            for (std::size_t c = 0; c < cols; ++c) mass += pt.data[r * cols + c];
            for (std::size_t c = 0; c < cols; ++c)
              g[r * cols + c] += go * (mass * std::exp(logp[r * cols + c]) - pt.data[r * cols + c]);
          }
        }
        if (pt.requires_grad) {
          auto& g = pt.grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] -= go * logp[i];
        }
      });
}

double grad_check(const ScalarFn& f, const Tensor& point, double eps) {
  if (!(eps > 0.0) || eps > 1e-2) throw ContractError("grad_check: eps must lie in (0, 1e-2]");
  Tensor x = Tensor::parameter(point.shape(), point.to_vector());
  Tensor y = f(x);
  if (y.numel() != 1) throw ContractError("grad_check: f must return a scalar");
  backward(y);
  const auto analytic = x.grad();
  const auto base = point.to_vector();
  double worst = 0.0;
  NoGradGuard no_grad;
  for (std::size_t i = 0; i < base.size(); ++i) {
    auto plus = base;
    auto minus = base;
    plus[i] += eps;
    minus[i] -= eps;
    const double fp = f(Tensor::from(point.shape(), std::move(plus))).item();
    const double fm = f(Tensor::from(point.shape(), std::move(minus))).item();
    const double numeric = (fp - fm) / (2.0 * eps);
    if (!std::isfinite(numeric)) throw NumericError("grad_check: non-finite difference");
    const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace knowsel
