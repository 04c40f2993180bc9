#pragma once

#include <span>
#include <vector>

#include "wcpp/common.hpp"
#include "wcpp/gmm.hpp"

namespace wcpp {

/// Arc costs for the open-path TSP. Index 0 is the current agent position;
/// every cost into node 0 is zero, so the optimal closed tour is the shortest
/// open path anchored at the start.
struct CostMatrix {
  int size = 0;
  Eigen::MatrixXd costs;
};

/// Visit order over {0..m}, always starting at 0. The closing arc back to 0
/// is implicit and free under the zero-cost-return column.
struct Tour {
  std::vector<int> order;
  double length_m = 0.0;
  bool heuristic = false;
};

inline CostMatrix build_cost_matrix(const Vec2& x0_pos,
                                    std::span<const Vec2> keypoints) {
  int m = static_cast<int>(keypoints.size());
  if (m < 1) throw ConfigError("build_cost_matrix: need at least one key point");
  CostMatrix cm;
  cm.size = m + 1;
  cm.costs.setZero(cm.size, cm.size);
  auto point = [&](int i) -> Vec2 { return i == 0 ? x0_pos : keypoints[i - 1]; };
  for (int i = 0; i < cm.size; ++i) {
    for (int j = 1; j < cm.size; ++j) {
      if (i == j) continue;
      cm.costs(i, j) = (point(i) - point(j)).norm();
    }
  }
  return cm;
}

namespace detail {

inline double tour_length(const CostMatrix& cm, const std::vector<int>& order) {
  double len = 0.0;
  for (std::size_t k = 0; k + 1 < order.size(); ++k)
    len += cm.costs(order[k], order[k + 1]);
  return len;  // the closing arc into node 0 costs zero
}

// One full first-improvement 2-opt sweep over the open path (node 0 fixed).
// Segment reversal is valid because arcs between nodes >= 1 are symmetric.
inline bool two_opt_pass(const CostMatrix& cm, std::vector<int>& order) {
  int last = static_cast<int>(order.size()) - 1;
  bool improved = false;
  for (int i = 1; i <= last - 1; ++i) {
    for (int j = i + 1; j <= last; ++j) {
      double before = cm.costs(order[i - 1], order[i]);
      double after = cm.costs(order[i - 1], order[j]);
      if (j < last) {
        before += cm.costs(order[j], order[j + 1]);
        after += cm.costs(order[i], order[j + 1]);
      }
      if (after < before - 1e-12) {
        std::reverse(order.begin() + i, order.begin() + j + 1);
        improved = true;
      }
    }
  }
  return improved;
}

// Or-opt: relocate segments of length 1..3 to another position in the path.
// Candidates are evaluated by full length recomputation; instances here are
// small enough that clarity wins over delta bookkeeping.
inline bool or_opt_pass(const CostMatrix& cm, std::vector<int>& order) {
  int last = static_cast<int>(order.size()) - 1;
  double current = tour_length(cm, order);
  for (int len = 1; len <= 3; ++len) {
    for (int i = 1; i + len - 1 <= last; ++i) {
      std::vector<int> rest = order;
      std::vector<int> seg(rest.begin() + i, rest.begin() + i + len);
      rest.erase(rest.begin() + i, rest.begin() + i + len);
      for (std::size_t p = 0; p < rest.size(); ++p) {
        if (static_cast<int>(p) == i - 1) continue;  // reinsertion in place
        std::vector<int> cand = rest;
        cand.insert(cand.begin() + p + 1, seg.begin(), seg.end());
        if (tour_length(cm, cand) < current - 1e-12) {
          order = std::move(cand);
          return true;
        }
      }
    }
  }
  return false;
}

}  // namespace detail

/// Exact solution by Held-Karp dynamic programming over the asymmetric
/// matrix. b[S][j] = shortest path that starts at j and visits exactly the
/// node set S; the free return arc makes the path end anywhere. Reconstruction
/// walks forward choosing the smallest next index among optimal choices, so
/// equal-cost tours resolve to the lexicographically smallest order.
inline Tour solve_tsp_exact(const CostMatrix& cm) {
  int m = cm.size - 1;
  if (m > 16) throw ConfigError("solve_tsp_exact: instance too large");
  Tour tour;
  if (m == 0) {
    tour.order = {0};
    return tour;
  }
  std::size_t full = (std::size_t(1) << m) - 1;
  std::vector<double> b((full + 1) * m, std::numeric_limits<double>::infinity());
  auto at = [&](std::size_t S, int j) -> double& { return b[S * m + j]; };
  for (int j = 0; j < m; ++j) at(std::size_t(1) << j, j) = 0.0;
  for (std::size_t S = 1; S <= full; ++S) {
    for (int j = 0; j < m; ++j) {
      if (!(S >> j & 1)) continue;
      std::size_t rest = S & ~(std::size_t(1) << j);
      if (rest == 0) continue;
      double best = std::numeric_limits<double>::infinity();
      for (int k = 0; k < m; ++k) {
        if (!(rest >> k & 1)) continue;
        double v = cm.costs(j + 1, k + 1) + at(rest, k);
        if (v < best) best = v;
      }
      at(S, j) = best;
    }
  }
  // forward greedy over exact DP values; ascending scan keeps ties lexicographic
  tour.order.push_back(0);
  std::size_t S = full;
  int prev = 0;
  while (S) {
    int pick = -1;
    double best = std::numeric_limits<double>::infinity();
    for (int k = 0; k < m; ++k) {
      if (!(S >> k & 1)) continue;
      double v = cm.costs(prev, k + 1) + at(S, k);
      if (v < best) {
        best = v;
        pick = k;
      }
    }
    tour.order.push_back(pick + 1);
    S &= ~(std::size_t(1) << pick);
    prev = pick + 1;
  }
  tour.length_m = detail::tour_length(cm, tour.order);
  return tour;
}

/// Nearest-neighbor construction followed by 2-opt and Or-opt local search to
/// a joint local optimum. Deterministic scan order; ties pick the smallest
/// index.
inline Tour solve_tsp_heuristic(const CostMatrix& cm) {
  int m = cm.size - 1;
  Tour tour;
  tour.heuristic = true;
  tour.order.reserve(cm.size);
  tour.order.push_back(0);
  std::vector<bool> used(cm.size, false);
  used[0] = true;
  int cur = 0;
  for (int step = 0; step < m; ++step) {
    int pick = -1;
    double best = std::numeric_limits<double>::infinity();
    for (int j = 1; j <= m; ++j) {
      if (used[j]) continue;
      if (cm.costs(cur, j) < best) {
        best = cm.costs(cur, j);
        pick = j;
      }
    }
    used[pick] = true;
    tour.order.push_back(pick);
    cur = pick;
  }
  bool improved = true;
  while (improved) {
    improved = detail::two_opt_pass(cm, tour.order);
    improved = detail::or_opt_pass(cm, tour.order) || improved;
  }
  tour.length_m = detail::tour_length(cm, tour.order);
  return tour;
}

/// Exact Held-Karp up to 16 nodes, local-search heuristic above (flagged in
/// the result).
inline Tour solve_tsp(const CostMatrix& cm) {
  if (cm.size <= 16) return solve_tsp_exact(cm);
  return solve_tsp_heuristic(cm);
}

}  // namespace wcpp
