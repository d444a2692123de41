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

#include "knowsel/simplex_qp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "knowsel/error.hpp"

namespace knowsel {

namespace {

constexpr double kSimplexTol = 1e-8;
constexpr double kPivotTol = 1e-10;
constexpr double kMaxGridPoints = 1e7;

void require_finite(std::span<const double> values, const char* what) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string("QP: non-finite entry in ") + what);
  }
}

// Solves the dense system in place with partial pivoting. Returns false when
// a pivot falls below the relative tolerance.
bool solve_linear(std::vector<double>& a, std::vector<double>& b, std::size_t n) {
  double scale = 0.0;
  for (double v : a) scale = std::max(scale, std::abs(v));
  if (scale == 0.0) return false;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a[r * n + col]) > std::abs(a[pivot * n + col])) pivot = r;
    if (std::abs(a[pivot * n + col]) <= kPivotTol * scale) return false;
    if (pivot != col) {
      for (std::size_t c = 0; c < n; ++c) std::swap(a[col * n + c], a[pivot * n + c]);
      std::swap(b[col], b[pivot]);
    }
    for (std::size_t r = col + 1; r < n; ++r) {
      const double factor = a[r * n + col] / a[col * n + col];
      if (factor == 0.0) continue;
      for (std::size_t c = col; c < n; ++c) a[r * n + c] -= factor * a[col * n + c];
      b[r] -= factor * b[col];
    }
  }
  for (std::size_t i = n; i-- > 0;) {
    double acc = b[i];
    for (std::size_t c = i + 1; c < n; ++c) acc -= a[i * n + c] * b[c];
    b[i] = acc / a[i * n + i];
  }
  return true;
}

// Subsets of {0..n-1} ordered by size, then lexicographically.
std::vector<std::vector<std::size_t>> faces_in_order(std::size_t n) {
  std::vector<std::vector<std::size_t>> faces;
  for (std::size_t k = 1; k <= n; ++k) {
    std::vector<std::size_t> idx(k);
    for (std::size_t i = 0; i < k; ++i) idx[i] = i;
    while (true) {
      faces.push_back(idx);
      std::size_t i = k;
      while (i > 0 && idx[i - 1] == n - k + i - 1) --i;
      if (i == 0) break;
      ++idx[i - 1];
      for (std::size_t j = i; j < k; ++j) idx[j] = idx[j - 1] + 1;
    }
  }
  return faces;
}

QPSolution finish(const QPProblem& problem, std::vector<double> lambda) {
  QPSolution sol;
  sol.delta = descent_direction(problem.gradients(), lambda);
  sol.objective = problem.objective(lambda);
  sol.kkt_residual = kkt_residual(problem, lambda);
  for (std::size_t i = 0; i < lambda.size(); ++i)
    if (lambda[i] > 0.0) sol.active_set.push_back(i);
  sol.lambda = std::move(lambda);
  return sol;
}

double binomial(std::size_t n, std::size_t k) {
  double r = 1.0;
  for (std::size_t i = 1; i <= k; ++i) r = r * static_cast<double>(n - k + i) / static_cast<double>(i);
  return r;
}

}  // namespace

GradientMatrix GradientMatrix::from_rows(const std::vector<std::vector<double>>& rows) {
  GradientMatrix m;
  m.rows = rows.size();
  m.cols = rows.empty() ? 0 : rows.front().size();
  for (const auto& r : rows) {
    if (r.size() != m.cols) throw DimensionError("GradientMatrix: ragged rows");
    m.values.insert(m.values.end(), r.begin(), r.end());
  }
  return m;
}

std::span<const double> GradientMatrix::row(std::size_t j) const {
  return std::span<const double>(values).subspan(j * cols, cols);
}

QPProblem::QPProblem(const std::vector<std::vector<double>>& gradients, std::vector<double> losses)
    : QPProblem(GradientMatrix::from_rows(gradients), std::move(losses)) {}

QPProblem::QPProblem(GradientMatrix gradients, std::vector<double> losses)
    : gradients_(std::move(gradients)), losses_(std::move(losses)) {
  const std::size_t n = losses_.size();
  if (n == 0) throw ContractError("QP: at least one objective required");
  if (n > kMaxObjectives) {
    throw CapacityError("QP: " + std::to_string(n) + " objectives exceed the limit of " +
                        std::to_string(kMaxObjectives));
  }
  if (gradients_.rows != n || gradients_.values.size() != gradients_.rows * gradients_.cols) {
    throw DimensionError("QP: gradient rows (" + std::to_string(gradients_.rows) +
                         ") must match loss count (" + std::to_string(n) + ")");
  }
  require_finite(gradients_.values, "G");
  require_finite(losses_, "f");
  gram_.assign(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      double acc = 0.0;
      const auto ri = gradients_.row(i);
      const auto rj = gradients_.row(j);
      for (std::size_t c = 0; c < gradients_.cols; ++c) acc += ri[c] * rj[c];
      gram_[i * n + j] = acc;
      gram_[j * n + i] = acc;
    }
  }
}

double QPProblem::objective(std::span<const double> lambda) const {
  const std::size_t n = num_objectives();
  if (lambda.size() != n) throw DimensionError("QP: lambda has the wrong length");
  double quad = 0.0, lin = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double qi = 0.0;
    for (std::size_t j = 0; j < n; ++j) qi += gram_[i * n + j] * lambda[j];
    quad += lambda[i] * qi;
    lin += losses_[i] * lambda[i];
  }
  return 0.5 * quad - lin;
}

std::vector<double> descent_direction(const GradientMatrix& gradients,
                                      std::span<const double> lambda) {
  if (lambda.size() != gradients.rows) {
    throw DimensionError("descent_direction: " + std::to_string(lambda.size()) +
                         " weights for " + std::to_string(gradients.rows) + " rows");
  }
  std::vector<double> delta(gradients.cols, 0.0);
  for (std::size_t j = 0; j < gradients.rows; ++j) {
    const auto r = gradients.row(j);
    for (std::size_t c = 0; c < gradients.cols; ++c) delta[c] -= lambda[j] * r[c];
  }
  return delta;
}

double kkt_residual(const QPProblem& problem, std::span<const double> lambda) {
  const std::size_t n = problem.num_objectives();
  if (lambda.size() != n) throw DimensionError("kkt_residual: lambda has the wrong length");
  require_finite(lambda, "lambda");
  double total = 0.0, most_negative = 0.0;
  for (double l : lambda) {
    total += l;
    most_negative = std::min(most_negative, l);
  }
  const double feasibility = std::max(std::abs(total - 1.0), -most_negative);
  if (feasibility > kSimplexTol) {
    throw ContractError("kkt_residual: lambda is off the simplex by " + std::to_string(feasibility));
  }
  // g = G G^T l - f; at the optimum g equals the multiplier nu on the support
  // and is at least nu elsewhere.
  const auto& q = problem.gram();
  const auto f = problem.losses();
  std::vector<double> g(n);
  double nu = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double qi = 0.0;
    for (std::size_t j = 0; j < n; ++j) qi += q[i * n + j] * lambda[j];
    g[i] = qi - f[i];
    nu += lambda[i] * g[i];
  }
  double residual = feasibility;
  for (std::size_t i = 0; i < n; ++i) {
    const double l = std::max(lambda[i], 0.0);
    residual = std::max(residual, nu - g[i]);
    residual = std::max(residual, l * std::abs(g[i] - nu));
  }
  return residual;
}

QPSolution solve_simplex_qp(const QPProblem& problem) {
  const std::size_t n = problem.num_objectives();
  const auto& q = problem.gram();
  const auto f = problem.losses();

  std::vector<double> best;
  double best_obj = std::numeric_limits<double>::infinity();
  // A minimal-support optimum always has a nonsingular face system, so faces
  // whose KKT matrix is singular can be skipped without losing the optimum.
  for (const auto& face : faces_in_order(n)) {
    const std::size_t k = face.size();
    const std::size_t m = k + 1;
    std::vector<double> a(m * m, 0.0);
    std::vector<double> b(m, 0.0);
    for (std::size_t r = 0; r < k; ++r) {
      for (std::size_t c = 0; c < k; ++c) a[r * m + c] = q[face[r] * n + face[c]];
      a[r * m + k] = -1.0;
      a[k * m + r] = 1.0;
      b[r] = f[face[r]];
    }
    b[k] = 1.0;
    if (!solve_linear(a, b, m)) continue;

    std::vector<double> lambda(n, 0.0);
    bool feasible = true;
    double total = 0.0;
    for (std::size_t r = 0; r < k; ++r) {
      if (b[r] < -1e-12) {
        feasible = false;
        break;
      }
      lambda[face[r]] = std::max(b[r], 0.0);
      total += lambda[face[r]];
    }
    if (!feasible || total <= 0.0) continue;
    for (auto& l : lambda) l /= total;

    const double obj = problem.objective(lambda);
    const double tol = 1e-12 * std::max(1.0, std::abs(best_obj));
    if (best.empty() || obj < best_obj - tol) {
      best = std::move(lambda);
      best_obj = obj;
    }
  }
  if (best.empty()) throw NumericError("QP: no feasible face found");
  return finish(problem, std::move(best));
}

QPSolution brute_force_qp(const QPProblem& problem, double resolution) {
  if (!(resolution > 0.0) || resolution > 1.0) {
    throw ContractError("brute_force_qp: resolution must lie in (0, 1]");
  }
  const std::size_t n = problem.num_objectives();
  const auto steps = static_cast<std::size_t>(std::ceil(1.0 / resolution - 1e-9));
  if (binomial(steps + n - 1, n - 1) > kMaxGridPoints) {
    throw CapacityError("brute_force_qp: grid exceeds 10^7 points");
  }
  const auto& q = problem.gram();
  const auto f = problem.losses();
  const double h = 1.0 / static_cast<double>(steps);

  std::vector<std::size_t> counts(n, 0);
  std::vector<std::size_t> best_counts;
  double best_obj = std::numeric_limits<double>::infinity();

  auto consider = [&](const std::vector<std::size_t>& c, double obj) {
    if (obj < best_obj) {
      best_obj = obj;
      best_counts = c;
    }
  };

  if (n == 1) {
    counts[0] = steps;
    consider(counts, problem.objective(std::vector<double>{1.0}));
  } else {
    // The last two coordinates split the remainder as (t, R - t); for a fixed
    // prefix the objective is a quadratic in t, evaluated at every grid t.
    const std::size_t a = n - 2, b = n - 1;
    std::vector<double> u(n), qu(n);
    auto leaf = [&](std::size_t remaining) {
      for (std::size_t i = 0; i < n; ++i) u[i] = static_cast<double>(counts[i]) * h;
      u[a] = 0.0;
      u[b] = static_cast<double>(remaining) * h;
      double uqu = 0.0, fu = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += q[i * n + j] * u[j];
        qu[i] = acc;
        uqu += u[i] * acc;
        fu += f[i] * u[i];
      }
      // v = e_a - e_b
      const double vqu = qu[a] - qu[b];
      const double vqv = q[a * n + a] - 2.0 * q[a * n + b] + q[b * n + b];
      const double fv = f[a] - f[b];
      const double c0 = 0.5 * uqu - fu;
      const double c1 = vqu - fv;
      const double c2 = 0.5 * vqv;
      for (std::size_t t = 0; t <= remaining; ++t) {
        const double s = static_cast<double>(t) * h;
        const double obj = c0 + s * (c1 + s * c2);
        if (obj < best_obj) {
          best_obj = obj;
          counts[a] = t;
          counts[b] = remaining - t;
          best_counts = counts;
        }
      }
      counts[a] = counts[b] = 0;
    };
    auto recurse = [&](auto&& self, std::size_t i, std::size_t remaining) -> void {
      if (i == a) {
        leaf(remaining);
        return;
      }
      for (std::size_t k = 0; k <= remaining; ++k) {
        counts[i] = k;
        self(self, i + 1, remaining - k);
      }
      counts[i] = 0;
    };
    recurse(recurse, 0, steps);
  }

  std::vector<double> lambda(n);
  for (std::size_t i = 0; i < n; ++i) lambda[i] = static_cast<double>(best_counts[i]) * h;
  QPSolution sol;
  sol.delta = descent_direction(problem.gradients(), lambda);
  sol.objective = problem.objective(lambda);
  // Grid points sit on the simplex only up to rounding of k/N.
  double total = 0.0;
  for (double l : lambda) total += l;
  std::vector<double> normalized = lambda;
  for (auto& l : normalized) l /= total;
  sol.kkt_residual = kkt_residual(problem, normalized);
  for (std::size_t i = 0; i < n; ++i)
    if (lambda[i] > 0.0) sol.active_set.push_back(i);
  sol.lambda = std::move(lambda);
  return sol;
}

}  // namespace knowsel
