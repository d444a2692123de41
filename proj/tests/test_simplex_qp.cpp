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
#include <random>

#include "doctest.h"
#include "knowsel/error.hpp"
#include "knowsel/simplex_qp.hpp"

using namespace knowsel;

namespace {

QPProblem random_problem(std::mt19937_64& rng, std::size_t j, std::size_t d) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<std::vector<double>> g(j, std::vector<double>(d));
  std::vector<double> f(j);
  for (auto& row : g)
    for (auto& x : row) x = n(rng);
  for (auto& x : f) x = n(rng);
  return QPProblem(g, f);
}

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("solve: analytic cases") {
  const auto a = solve_simplex_qp(QPProblem({{1, 0}, {0, 1}}, {0, 0}));
  CHECK(a.lambda[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(a.lambda[1] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(a.objective == doctest::Approx(0.25).epsilon(1e-12));

  const auto b = solve_simplex_qp(QPProblem({{1, 0}, {0, 1}}, {1, 0}));
  CHECK(std::abs(b.lambda[0] - 1.0) <= 1e-12);
  CHECK(std::abs(b.lambda[1]) <= 1e-12);
  CHECK(b.objective == doctest::Approx(-0.5).epsilon(1e-12));
  CHECK(b.active_set == std::vector<std::size_t>{0});

  const auto c = solve_simplex_qp(QPProblem(std::vector<std::vector<double>>{{3, 4}}, {7}));
  CHECK(c.lambda == std::vector<double>{1.0});
  CHECK(c.delta == std::vector<double>{-3.0, -4.0});
  CHECK(c.kkt_residual == 0.0);
}

TEST_CASE("solve: hand-computed interior optimum") {
  // G = diag(1, 2): minimize 1/2 (l^2 + 4 (1-l)^2) -> l = 4/5.
  const auto s = solve_simplex_qp(QPProblem({{1, 0}, {0, 2}}, {0, 0}));
  CHECK(s.lambda[0] == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(s.delta[0] == doctest::Approx(-0.8).epsilon(1e-12));
  CHECK(s.delta[1] == doctest::Approx(-0.4).epsilon(1e-12));
  CHECK(s.objective == doctest::Approx(0.4).epsilon(1e-12));
}

TEST_CASE("solve: degenerate G = 0 picks the largest loss, lowest index on ties") {
  const auto s = solve_simplex_qp(QPProblem({{0, 0}, {0, 0}, {0, 0}}, {1, 3, 3}));
  CHECK(s.lambda == std::vector<double>{0, 1, 0});
  const auto t = solve_simplex_qp(QPProblem({{0, 0}, {0, 0}}, {2, 2}));
  CHECK(t.lambda == std::vector<double>{1, 0});
}

TEST_CASE("solve: identical rows prefer the smaller support") {
  const auto s = solve_simplex_qp(QPProblem({{1, 2}, {1, 2}}, {0, 0}));
  CHECK(s.active_set == std::vector<std::size_t>{0});
  CHECK(s.lambda == std::vector<double>{1, 0});
}

TEST_CASE("problem validation") {
  CHECK_THROWS_AS(QPProblem(std::vector<std::vector<double>>{}, {}), ContractError);
  using Rows = std::vector<std::vector<double>>;
  CHECK_THROWS_AS(QPProblem(Rows{{1, 0}}, {1, 2}), DimensionError);
  CHECK_THROWS_AS(QPProblem(Rows{{1, 0}, {1}}, {1, 2}), DimensionError);
  CHECK_THROWS_AS(QPProblem(Rows{{1, std::nan("")}}, {1}), NumericError);
  CHECK_THROWS_AS(QPProblem(Rows{{1}}, {INFINITY}), NumericError);
  std::vector<std::vector<double>> many(QPProblem::kMaxObjectives + 1, std::vector<double>{1});
  CHECK_THROWS_AS(QPProblem(many, std::vector<double>(many.size(), 0.0)), CapacityError);
}

TEST_CASE("brute force: examples") {
  const QPProblem p({{1, 0}, {0, 1}}, {0, 0});
  const auto s = brute_force_qp(p, 0.01);
  CHECK(std::abs(s.lambda[0] - 0.5) <= 0.01);

  // Vertices only.
  const QPProblem q({{1, 0}, {0, 1}, {1, 1}}, {0.2, 0.9, 0.1});
  const auto v = brute_force_qp(q, 1.0);
  CHECK(v.lambda == std::vector<double>{0, 1, 0});
  CHECK(v.objective == doctest::Approx(0.5 - 0.9));

  CHECK_THROWS_AS(brute_force_qp(p, 0.0), ContractError);
  CHECK_THROWS_AS(brute_force_qp(p, 1.5), ContractError);
  std::vector<std::vector<double>> g(8, std::vector<double>{1.0});
  CHECK_THROWS_AS(brute_force_qp(QPProblem(g, std::vector<double>(8, 0.0)), 1e-3), CapacityError);
}

TEST_CASE("kkt residual: examples") {
  const QPProblem p({{1, 0}, {0, 1}}, {1, 0});
  const std::vector<double> opt = {1, 0}, bad = {0, 1};
  CHECK(kkt_residual(p, opt) <= 1e-8);
  CHECK(kkt_residual(p, bad) > 0.1);
  CHECK(kkt_residual(QPProblem(std::vector<std::vector<double>>{{2, 5}}, {1}), std::vector<double>{1}) == 0.0);
  CHECK_THROWS_AS(kkt_residual(p, std::vector<double>{0.7, 0.7}), ContractError);
  CHECK_THROWS_AS(kkt_residual(p, std::vector<double>{1.1, -0.1}), ContractError);
}

TEST_CASE("descent direction: examples and bound") {
  const auto g = GradientMatrix::from_rows({{1, 0}, {0, 1}});
  CHECK(descent_direction(g, std::vector<double>{0.5, 0.5}) == std::vector<double>{-0.5, -0.5});
  const auto h = GradientMatrix::from_rows({{1, 2, 3}, {4, 5, 6}});
  CHECK(descent_direction(h, std::vector<double>{0, 1}) == std::vector<double>{-4, -5, -6});
  CHECK_THROWS_AS(descent_direction(h, std::vector<double>{1}), DimensionError);

  std::mt19937_64 rng(3);
  for (int t = 0; t < 200; ++t) {
    const auto p = random_problem(rng, 2 + t % 4, 3 + t % 5);
    std::vector<double> l(p.num_objectives());
    std::exponential_distribution<double> e(1.0);
    double s = 0.0;
    for (auto& x : l) s += (x = e(rng));
    for (auto& x : l) x /= s;
    double bound = 0.0;
    for (std::size_t j = 0; j < p.num_objectives(); ++j) bound = std::max(bound, norm(p.gradients().row(j)));
    CHECK(norm(descent_direction(p.gradients(), l)) <= bound + 1e-12);
  }
}

TEST_CASE("properties over random instances") {
  std::mt19937_64 rng(2024);
  for (int t = 0; t < 200; ++t) {
    const std::size_t j = 2 + t % 4, d = 2 + (t * 7) % 15;
    const auto p = random_problem(rng, j, d);
    const auto s = solve_simplex_qp(p);

    // Simplex feasibility and the delta identity.
    double sum = 0.0;
    for (double x : s.lambda) {
      CHECK(x >= 0.0);
      sum += x;
    }
    CHECK(std::abs(sum - 1.0) <= 1e-10);
    const auto delta = descent_direction(p.gradients(), s.lambda);
    for (std::size_t k = 0; k < d; ++k) CHECK(std::abs(delta[k] - s.delta[k]) <= 1e-12);
    CHECK(s.kkt_residual <= 1e-8);

    // Oracle inequality against a coarse grid.
    CHECK(s.objective <= brute_force_qp(p, 0.05).objective + 1e-9);

    // Duality: max_j (f_j + <G_j, delta>) = f^T l - l^T Q l at the optimum.
    double lhs = -INFINITY, fl = 0.0, lql = 0.0;
    const auto& q = p.gram();
    for (std::size_t a = 0; a < j; ++a) {
      double dot = 0.0;
      for (std::size_t k = 0; k < d; ++k) dot += p.gradients().row(a)[k] * s.delta[k];
      lhs = std::max(lhs, p.losses()[a] + dot);
      fl += p.losses()[a] * s.lambda[a];
      for (std::size_t b = 0; b < j; ++b) lql += s.lambda[a] * q[a * j + b] * s.lambda[b];
    }
    CHECK(lhs <= fl - lql + 1e-9);
    CHECK(lhs >= fl - lql - 1e-9);

    // Scale invariance of the argmin.
    const double c = 0.5 + t % 3;
    GradientMatrix g = p.gradients();
    for (auto& x : g.values) x *= std::sqrt(c);
    std::vector<double> f(p.losses().begin(), p.losses().end());
    for (auto& x : f) x *= c;
    const auto scaled = solve_simplex_qp(QPProblem(g, f));
    for (std::size_t a = 0; a < j; ++a) CHECK(std::abs(scaled.lambda[a] - s.lambda[a]) <= 1e-9);
    CHECK(scaled.objective == doctest::Approx(c * s.objective).epsilon(1e-9));

    // Determinism.
    const auto again = solve_simplex_qp(p);
    CHECK(again.lambda == s.lambda);
    CHECK(again.objective == s.objective);
  }
}
