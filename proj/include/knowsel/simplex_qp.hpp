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
#include <span>
#include <vector>

namespace knowsel {

/// Row-major J x d matrix; row j is the gradient of objective j.
struct GradientMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  static GradientMatrix from_rows(const std::vector<std::vector<double>>& rows);
  std::span<const double> row(std::size_t j) const;
};

/// minimize 1/2 l^T G G^T l - f^T l  subject to  sum(l) = 1, l >= 0.
class QPProblem {
 public:
  static constexpr std::size_t kMaxObjectives = 16;

  QPProblem(GradientMatrix gradients, std::vector<double> losses);
  QPProblem(const std::vector<std::vector<double>>& gradients, std::vector<double> losses);

  std::size_t num_objectives() const { return losses_.size(); }
  std::size_t dim() const { return gradients_.cols; }
  const GradientMatrix& gradients() const { return gradients_; }
  std::span<const double> losses() const { return losses_; }

  /// G G^T, J x J row-major.
  const std::vector<double>& gram() const { return gram_; }

  double objective(std::span<const double> lambda) const;

 private:
  GradientMatrix gradients_;
  std::vector<double> losses_;
  std::vector<double> gram_;
};

struct QPSolution {
  std::vector<double> lambda;
  std::vector<double> delta;
  double objective = 0.0;
  double kkt_residual = 0.0;
  std::vector<std::size_t> active_set;
};

/// Exact minimizer by enumerating every face of the simplex. Among equally
/// good faces the smallest support wins, then the lexicographically first.
QPSolution solve_simplex_qp(const QPProblem& problem);

/// Best point of the simplex grid with spacing <= `resolution`.
/// Throws CapacityError above 10^7 grid points.
QPSolution brute_force_qp(const QPProblem& problem, double resolution);

/// Largest violation among dual feasibility, complementary slackness and
/// primal feasibility at `lambda`; zero exactly at the optimum.
double kkt_residual(const QPProblem& problem, std::span<const double> lambda);

/// -G^T lambda.
std::vector<double> descent_direction(const GradientMatrix& gradients,
                                      std::span<const double> lambda);

}  // namespace knowsel
