#pragma once

// Reference computations used to check the library. They share no code with
// src/ beyond plain data types.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <vector>

namespace tps::oracle {

/// Optimum of the transportation LP by enumerating every basic feasible
/// solution. A basis is a spanning tree of the bipartite row/column graph on
/// m + n - 1 cells; its flow is fixed by peeling leaves. Feasible only for
/// tiny supports (C(m*n, m+n-1) subsets).
inline std::optional<double> vertex_enumeration_optimum(const std::vector<double>& supply,
                                                        const std::vector<double>& demand,
                                                        const std::vector<double>& cost) {
  const std::size_t m = supply.size(), n = demand.size(), cells = m * n, k = m + n - 1;
  std::vector<int> pick(cells, 0);
  std::fill(pick.end() - static_cast<std::ptrdiff_t>(k), pick.end(), 1);
  double best = std::numeric_limits<double>::infinity();
  do {
    std::vector<std::size_t> basis;
    for (std::size_t c = 0; c < cells; ++c)
      if (pick[c]) basis.push_back(c);

    std::vector<double> row_left(supply), col_left(demand), flow(cells, 0.0);
    std::vector<bool> used(basis.size(), false);
    std::vector<int> row_deg(m, 0), col_deg(n, 0);
    for (auto c : basis) ++row_deg[c / n], ++col_deg[c % n];

    std::size_t assigned = 0;
    bool progress = true;
    while (assigned < basis.size() && progress) {
      progress = false;
      for (std::size_t b = 0; b < basis.size(); ++b) {
        if (used[b]) continue;
        const auto i = basis[b] / n, j = basis[b] % n;
        double x;
        if (row_deg[i] == 1) {
          x = row_left[i];
        } else if (col_deg[j] == 1) {
          x = col_left[j];
        } else {
          continue;
        }
        flow[basis[b]] = x;
        row_left[i] -= x;
        col_left[j] -= x;
        --row_deg[i];
        --col_deg[j];
        used[b] = true;
        ++assigned;
        progress = true;
      }
    }
    // Cells left over mean the subset contains a cycle and is not a tree.
    if (assigned != basis.size()) continue;
    bool feasible = true;
    for (double x : flow) feasible = feasible && x >= -1e-12;
    for (double r : row_left) feasible = feasible && std::abs(r) <= 1e-12;
    for (double c : col_left) feasible = feasible && std::abs(c) <= 1e-12;
    if (!feasible) continue;
    double value = 0.0;
    for (std::size_t c = 0; c < cells; ++c) value += flow[c] * cost[c];
    best = std::min(best, value);
  } while (std::next_permutation(pick.begin(), pick.end()));
  if (!std::isfinite(best)) return std::nullopt;
  return best;
}

/// Sum_x p(x) c(x, t): the only feasible plan into a point mass.
inline double expected_cost_to_point(const std::vector<double>& p, std::size_t target,
                                     const std::vector<double>& cost) {
  const std::size_t n = p.size();
  double total = 0.0;
  for (std::size_t x = 0; x < n; ++x) total += p[x] * cost[x * n + target];
  return total;
}

/// 1-D earth mover distance from CDFs for masses on sorted scale values,
/// normalized by the scale span.
inline double cdf_distance(const std::vector<double>& p, const std::vector<double>& q,
                           const std::vector<double>& values) {
  double fp = 0.0, fq = 0.0, total = 0.0;
  for (std::size_t i = 0; i + 1 < values.size(); ++i) {
    fp += p[i];
    fq += q[i];
    total += std::abs(fp - fq) * (values[i + 1] - values[i]);
  }
  return total / (values.back() - values.front());
}

inline std::vector<double> random_simplex(std::mt19937_64& rng, std::size_t n, double zero_chance = 0.0) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> w(n);
  double total = 0.0;
  while (total == 0.0) {
    for (auto& x : w) {
      x = unit(rng) < zero_chance ? 0.0 : -std::log(1.0 - unit(rng));
      total += x;
    }
  }
  for (auto& x : w) x /= total;
  return w;
}

/// Probabilities that are multiples of 1/denominator.
inline std::vector<double> grid_simplex(std::mt19937_64& rng, std::size_t n, int denominator) {
  std::vector<int> counts(n, 0);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  for (int u = 0; u < denominator; ++u) ++counts[pick(rng)];
  std::vector<double> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = static_cast<double>(counts[i]) / denominator;
  return p;
}

}  // namespace tps::oracle
