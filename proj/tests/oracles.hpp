// Copyright 2026 The rmgap Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Test-only reference computations. Each one is written without calling the
// library routine it checks.

#pragma once

#include <cmath>
#include <functional>
#include <numbers>
#include <optional>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;

/// Kahan-summed Euclidean norm.
inline double compensated_norm(const Vec& v) {
  double sum = 0.0, c = 0.0;
  for (double x : v) {
    const double y = x * x - c;
    const double t = sum + y;
    c = (t - sum) - y;
    sum = t;
  }
  return std::sqrt(sum);
}

inline double plain_dot(const Vec& a, const Vec& b) {
  long double s = 0.0L;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<long double>(a[i]) * b[i];
  return static_cast<double>(s);
}

/// exp(z_i) / sum exp(z_j), evaluated directly in long double.
inline Vec naive_softmax(const Vec& z) {
  long double total = 0.0L;
  for (double v : z) total += std::exp(static_cast<long double>(v));
  Vec out;
  for (double v : z) out.push_back(static_cast<double>(std::exp(static_cast<long double>(v)) / total));
  return out;
}

/// Central differences with step h on every coordinate.
inline Vec finite_difference_gradient(const std::function<double(const Vec&)>& f, Vec x, double h = 1e-5) {
  Vec g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// Solves a small dense system by Cramer-free Gauss-Jordan with full pivoting.
inline std::optional<Vec> gauss_jordan(std::vector<Vec> a, Vec b) {
  const std::size_t n = b.size();
  std::vector<std::size_t> col(n);
  for (std::size_t i = 0; i < n; ++i) col[i] = i;
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t pr = k, pc = k;
    double best = 0.0;
    for (std::size_t r = k; r < n; ++r)
      for (std::size_t c = k; c < n; ++c)
        if (std::abs(a[r][c]) > best) best = std::abs(a[r][c]), pr = r, pc = c;
    if (best < 1e-13) return std::nullopt;
    std::swap(a[k], a[pr]);
    std::swap(b[k], b[pr]);
    for (auto& row : a) std::swap(row[k], row[pc]);
    std::swap(col[k], col[pc]);
    for (std::size_t r = 0; r < n; ++r) {
      if (r == k) continue;
      const double f = a[r][k] / a[k][k];
      for (std::size_t c = k; c < n; ++c) a[r][c] -= f * a[k][c];
      b[r] -= f * b[k];
    }
  }
  Vec x(n);
  for (std::size_t k = 0; k < n; ++k) x[col[k]] = b[k] / a[k][k];
  return x;
}

/// Minimum-norm u with <u, phi_i> >= 1 for all i, by enumerating candidate
/// active sets of size <= dim. Returns nullopt when no feasible point exists.
inline std::optional<Vec> min_norm_separator(const std::vector<Vec>& phis) {
  const std::size_t n = phis.size();
  const std::size_t dim = phis.front().size();
  std::optional<Vec> best;
  double best_norm = INFINITY;
  for (unsigned mask = 1; mask < (1u << n); ++mask) {
    std::vector<std::size_t> s;
    for (std::size_t i = 0; i < n; ++i)
      if (mask & (1u << i)) s.push_back(i);
    if (s.size() > dim) continue;
    std::vector<Vec> gram(s.size(), Vec(s.size()));
    for (std::size_t i = 0; i < s.size(); ++i)
      for (std::size_t j = 0; j < s.size(); ++j) gram[i][j] = plain_dot(phis[s[i]], phis[s[j]]);
    const auto alpha = gauss_jordan(gram, Vec(s.size(), 1.0));
    if (!alpha) continue;
    bool nonneg = true;
    for (double a : *alpha) nonneg = nonneg && a >= -1e-12;
    if (!nonneg) continue;
    Vec u(dim, 0.0);
    for (std::size_t i = 0; i < s.size(); ++i)
      for (std::size_t d = 0; d < dim; ++d) u[d] += (*alpha)[i] * phis[s[i]][d];
    bool feasible = true;
    for (const auto& p : phis) feasible = feasible && plain_dot(u, p) >= 1.0 - 1e-9;
    if (!feasible) continue;
    const double nu = compensated_norm(u);
    if (nu < best_norm) best_norm = nu, best = u;
  }
  return best;
}

/// Max over unit directions in the plane of min_i <w, phi_i>; coarse grid then
/// golden-section refinement. Returns the maximizing unit direction.
inline Vec grid_max_margin_direction_2d(const std::vector<Vec>& phis, std::size_t grid = 20000) {
  auto margin = [&](double t) {
    const Vec w{std::cos(t), std::sin(t)};
    double m = INFINITY;
    for (const auto& p : phis) m = std::min(m, plain_dot(w, p));
    return m;
  };
  const double two_pi = 2.0 * std::numbers::pi;
  double best_t = 0.0, best = -INFINITY;
  for (std::size_t i = 0; i < grid; ++i) {
    const double t = two_pi * static_cast<double>(i) / static_cast<double>(grid);
    const double m = margin(t);
    if (m > best) best = m, best_t = t;
  }
  double lo = best_t - two_pi / static_cast<double>(grid), hi = best_t + two_pi / static_cast<double>(grid);
  const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
  for (int it = 0; it < 200; ++it) {
    const double a = hi - gr * (hi - lo), b = lo + gr * (hi - lo);
    if (margin(a) < margin(b)) lo = a;
    else hi = b;
  }
  const double t = 0.5 * (lo + hi);
  return {std::cos(t), std::sin(t)};
}

/// Number of vertex orderings of an n-vertex graph that trace a Hamiltonian
/// cycle, by depth-first extension of paths from every start vertex.
inline std::size_t count_hamiltonian_orderings(std::size_t n, const std::vector<std::vector<bool>>& adj) {
  std::size_t count = 0;
  std::vector<bool> used(n, false);
  std::function<void(std::size_t, std::size_t, std::size_t)> extend = [&](std::size_t start, std::size_t v,
                                                                          std::size_t depth) {
    if (depth == n) {
      if (adj[v][start]) ++count;
      return;
    }
    for (std::size_t w = 0; w < n; ++w)
      if (!used[w] && adj[v][w]) {
        used[w] = true;
        extend(start, w, depth + 1);
        used[w] = false;
      }
  };
  for (std::size_t s = 0; s < n; ++s) {
    used[s] = true;
    extend(s, s, 1);
    used[s] = false;
  }
  return count;
}

inline std::size_t factorial(std::size_t n) { return n <= 1 ? 1 : n * factorial(n - 1); }

}  // namespace oracle
