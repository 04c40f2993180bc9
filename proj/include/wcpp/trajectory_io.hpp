#pragma once

#include <istream>
#include <ostream>
#include <sstream>
#include <vector>

#include "wcpp/common.hpp"
#include "wcpp/mpc.hpp"
#include "wcpp/reward_field.hpp"

namespace wcpp {

/// Row data of a trajectory CSV. Inputs and slacks have one entry fewer than
/// states: row k carries the input applied at step k and the slack attached
/// to the arrival state k+1, so `ax,ay,eps` are blank on the last row.
struct TrajectoryRecord {
  std::vector<Vec4> states;
  std::vector<Vec2> inputs;
  std::vector<double> slacks;
  std::vector<double> rewards;  // reward value at each state
};

/// Row data for a planned trajectory: slack eps_{k+1} lands on row k next to
/// the input applied there.
inline TrajectoryRecord make_trajectory_record(const Trajectory& traj,
                                               const RewardField& field) {
  TrajectoryRecord rec;
  rec.states = traj.states;
  rec.inputs = traj.inputs;
  rec.slacks = traj.slacks;
  rec.rewards.reserve(traj.states.size());
  for (const auto& x : traj.states) {
    rec.rewards.push_back(field.eval_clamped_to_domain(x.head<2>()).value);
  }
  return rec;
}

inline void write_trajectory_csv(const TrajectoryRecord& t, std::ostream& out) {
  out << "k,px,py,vx,vy,ax,ay,eps,reward\n";
  for (std::size_t k = 0; k < t.states.size(); ++k) {
    const Vec4& x = t.states[k];
    out << k << ',' << format_double(x(0)) << ',' << format_double(x(1)) << ','
        << format_double(x(2)) << ',' << format_double(x(3)) << ',';
    if (k < t.inputs.size()) {
      out << format_double(t.inputs[k](0)) << ',' << format_double(t.inputs[k](1))
          << ',' << format_double(t.slacks[k]);
    } else {
      out << ",,";
    }
    out << ',' << format_double(t.rewards[k]) << '\n';
  }
}

inline TrajectoryRecord parse_trajectory_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "k,px,py,vx,vy,ax,ay,eps,reward") {
    throw ParseError("trajectory csv: bad header");
  }
  TrajectoryRecord t;
  std::size_t expect_k = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (line.back() == ',') cells.push_back("");
    if (cells.size() != 9) {
      throw ParseError("trajectory csv: row " + std::to_string(expect_k) +
                       " has " + std::to_string(cells.size()) + " cells");
    }
    if (parse_double(cells[0], "k") != static_cast<double>(expect_k)) {
      throw ParseError("trajectory csv: non-sequential step index");
    }
    Vec4 x;
    for (int d = 0; d < 4; ++d) x(d) = parse_double(cells[1 + d], "state");
    t.states.push_back(x);
    if (!cells[5].empty()) {
      t.inputs.emplace_back(parse_double(cells[5], "ax"), parse_double(cells[6], "ay"));
      t.slacks.push_back(parse_double(cells[7], "eps"));
    }
    t.rewards.push_back(parse_double(cells[8], "reward"));
    ++expect_k;
  }
  if (t.states.empty()) throw ParseError("trajectory csv: no data rows");
  if (t.inputs.size() + 1 != t.states.size()) {
    throw ParseError("trajectory csv: inputs must be blank exactly on the last row");
  }
  return t;
}

}  // namespace wcpp
