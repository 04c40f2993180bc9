#pragma once

#include <span>
#include <vector>

#include "wcpp/common.hpp"
#include "wcpp/tsp.hpp"

namespace wcpp {

/// Initial primal guess for the OCP: states x_0..x_N and inputs u_0..u_{N-1}.
/// Positions walk the tour polyline at the maximum-velocity step; velocities
/// and inputs are finite differences of that walk. Slight dynamic
/// infeasibility (clamped inputs at corners) is acceptable in a guess.
struct GuessTrajectory {
  std::vector<Vec4> states;
  std::vector<Vec2> inputs;
  int N = 0;
  double dt = 0.0;
};

/// Walks the open tour polyline (the implicit free return arc is dropped) in
/// arc-length steps of v_max*dt. When the polyline runs out before step N the
/// position holds at the endpoint. points[i] is the position of tour node i
/// (index 0 = agent position).
inline GuessTrajectory discretize_tour(const Tour& tour, std::span<const Vec2> points,
                                       const Vec4& x0_state, int N, double dt,
                                       double v_max, double u_max) {
  if (N < 1) throw ConfigError("discretize_tour: N must be >= 1");
  if (!(dt > 0.0) || !(v_max > 0.0) || !(u_max > 0.0)) {
    throw ConfigError("discretize_tour: dt, v_max, u_max must be > 0");
  }
  std::vector<Vec2> poly;
  poly.reserve(tour.order.size());
  for (int idx : tour.order) poly.push_back(points[idx]);
  if ((poly[0] - x0_state.head<2>()).norm() > 1e-9) {
    throw ConfigError("discretize_tour: tour start does not match the agent position");
  }

  std::vector<double> cum(poly.size(), 0.0);
  for (std::size_t i = 1; i < poly.size(); ++i)
    cum[i] = cum[i - 1] + (poly[i] - poly[i - 1]).norm();
  double total = cum.back();

  auto at_arc_length = [&](double s) -> Vec2 {
    if (s >= total) return poly.back();
    std::size_t seg = 1;
    while (seg < cum.size() && cum[seg] < s) ++seg;
    double seg_len = cum[seg] - cum[seg - 1];
    if (seg_len <= 0.0) return poly[seg];
    double t = (s - cum[seg - 1]) / seg_len;
    return poly[seg - 1] + t * (poly[seg] - poly[seg - 1]);
  };

  std::vector<Vec2> pos(static_cast<std::size_t>(N) + 1);
  pos[0] = poly[0];
  double step = v_max * dt;
  for (int k = 1; k <= N; ++k) pos[k] = at_arc_length(k * step);

  GuessTrajectory guess;
  guess.N = N;
  guess.dt = dt;
  guess.states.resize(static_cast<std::size_t>(N) + 1);
  guess.inputs.resize(static_cast<std::size_t>(N));
  std::vector<Vec2> vel(static_cast<std::size_t>(N) + 1);
  vel[0] = x0_state.tail<2>();  // anchor the full current state at k = 0
  for (int k = 1; k < N; ++k) vel[k] = (pos[k + 1] - pos[k]) / dt;
  vel[N] = Vec2::Zero();
  for (int k = 0; k <= N; ++k) {
    guess.states[k] << pos[k], vel[k];
  }
  for (int k = 0; k < N; ++k) {
    Vec2 u = (vel[k + 1] - vel[k]) / dt;
    guess.inputs[k] = u.cwiseMax(-u_max).cwiseMin(u_max);
  }
  return guess;
}

}  // namespace wcpp
