#pragma once

// Square linear assignment by the Hungarian method with row/column
// potentials, O(k^3).

#include <imifa/types.hpp>

#include <cmath>
#include <limits>
#include <vector>

namespace imifa {

struct Assignment {
  std::vector<Index> perm;  // row i -> column perm[i]
  double cost = 0.0;
};

inline Assignment solve_assignment(const Matrix& cost) {
  if (cost.rows() != cost.cols()) throw ShapeError("assignment cost matrix must be square");
  if (!cost.allFinite()) throw ParameterError("assignment cost matrix has non-finite entries");
  const Index k = cost.rows();
  const double inf = std::numeric_limits<double>::infinity();
  // 1-based arrays; column 0 is a virtual start column
  std::vector<double> u(static_cast<std::size_t>(k + 1), 0.0), v(static_cast<std::size_t>(k + 1), 0.0);
  std::vector<Index> match(static_cast<std::size_t>(k + 1), 0), way(static_cast<std::size_t>(k + 1), 0);
  for (Index i = 1; i <= k; ++i) {
    match[0] = i;
    Index j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(k + 1), inf);
    std::vector<char> used(static_cast<std::size_t>(k + 1), 0);
    do {
      used[j0] = 1;
      const Index i0 = match[j0];
      double delta = inf;
      Index j1 = 0;
      for (Index j = 1; j <= k; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (Index j = 0; j <= k; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const Index j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  Assignment out;
  out.perm.assign(static_cast<std::size_t>(k), 0);
  for (Index j = 1; j <= k; ++j) out.perm[static_cast<std::size_t>(match[j] - 1)] = j - 1;
  for (Index i = 0; i < k; ++i) out.cost += cost(i, out.perm[static_cast<std::size_t>(i)]);
  return out;
}

}  // namespace imifa
