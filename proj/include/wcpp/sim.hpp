#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "wcpp/gmm.hpp"
#include "wcpp/grid_map.hpp"
#include "wcpp/mpc.hpp"
#include "wcpp/reward_field.hpp"
#include "wcpp/svg.hpp"
#include "wcpp/trajectory_io.hpp"
#include "wcpp/tsp.hpp"
#include "wcpp/warmstart.hpp"

namespace wcpp {

enum class RunMode { warm, cold };

inline const char* to_string(RunMode m) { return m == RunMode::warm ? "warm" : "cold"; }

/// Full description of one scenario run: map source, agent start, GMM/TSP
/// settings and the MPC configuration. Loaded from a key = value text file.
struct ScenarioConfig {
  std::string name;  // config file stem; prefixes the emitted files
  // map source: exactly one of grid file or Gaussian components
  std::optional<std::filesystem::path> map_grid;
  std::vector<GaussComponent> map_gaussians;
  Rect domain;               // Gaussian maps: world extent
  double raster_cell = 25.0; // Gaussian maps: metric/EM rasterization cell
  Vec4 x0 = Vec4::Zero();
  int steps = 50;            // closed-loop length
  int n_components = 20;
  int m_keypoints = 10;
  std::uint64_t seed = 1;
  MpcConfig mpc;             // N, weights, V, bounds, dt, solver options
  std::filesystem::path out_dir = ".";
};

/// Map and reward field ready for planning. Gaussian scenarios keep the
/// analytic field; the rasterized grid feeds EM and the coverage metric.
struct ScenarioData {
  GridMap grid;
  RewardField field;
};

/// Rasterizes a Gaussian sum to a grid map: cell mass = density at the cell
/// center times the cell area.
inline GridMap rasterize_gaussians(const std::vector<GaussComponent>& comps,
                                   const Rect& domain, double cell) {
  GridMap map;
  map.cell_size_m = cell;
  map.cols = detail::checked_cell_count(domain.width(), cell, "width_m");
  map.rows = detail::checked_cell_count(domain.height(), cell, "height_m");
  map.width_m = domain.width();
  map.height_m = domain.height();
  map.values.resize(map.rows, map.cols);
  GaussianSumField f(comps);
  for (int r = 0; r < map.rows; ++r)
    for (int c = 0; c < map.cols; ++c)
      map.values(r, c) = std::max(0.0, f.eval(map.cell_center(r, c)).value) * cell * cell;
  return map;
}

inline ScenarioData build_scenario_data(const ScenarioConfig& cfg) {
  if (cfg.map_grid) {
    std::ifstream in(*cfg.map_grid);
    if (!in) {
      throw ConfigError("cannot open grid map file " + cfg.map_grid->string());
    }
    GridMap grid = load_grid_map(in);
    RewardField field = build_spline_field(grid);
    return {std::move(grid), std::move(field)};
  }
  if (cfg.map_gaussians.empty()) {
    throw ConfigError("scenario needs map_grid or map_gaussians");
  }
  GridMap grid = rasterize_gaussians(cfg.map_gaussians, cfg.domain, cfg.raster_cell);
  RewardField field = build_gaussian_field(cfg.map_gaussians, cfg.domain);
  return {std::move(grid), std::move(field)};
}

namespace detail {

inline std::vector<double> parse_numbers(const std::string& s, const char* key) {
  std::istringstream in(s);
  std::vector<double> out;
  std::string tok;
  while (in >> tok) out.push_back(parse_double(tok, key));
  return out;
}

}  // namespace detail

/// Parses the scenario file format: one `key = value` per line, `#` comments.
/// Unknown keys are rejected. See the README for the full schema.
inline ScenarioConfig load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open scenario file " + path.string());
  ScenarioConfig cfg;
  cfg.name = path.stem().string();
  auto base = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");

  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto eq = line.find('=');
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (eq == std::string::npos) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) +
                        ": expected 'key = value'");
    }
    auto trim = [](std::string s) {
      auto b = s.find_first_not_of(" \t\r");
      auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    std::string key = trim(line.substr(0, eq)), val = trim(line.substr(eq + 1));
    if (key.empty() || val.empty()) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) +
                        ": empty key or value");
    }
    if (!kv.emplace(key, val).second) {
      throw ConfigError(path.string() + ": duplicate key '" + key + "'");
    }
  }

  auto take = [&](const char* key) -> std::optional<std::string> {
    auto it = kv.find(key);
    if (it == kv.end()) return std::nullopt;
    std::string v = it->second;
    kv.erase(it);
    return v;
  };
  auto take_num = [&](const char* key, double def) {
    auto v = take(key);
    return v ? parse_double(*v, key) : def;
  };

  if (auto v = take("map_grid")) cfg.map_grid = base / *v;
  if (auto v = take("map_gaussians")) {
    std::istringstream comps(*v);
    std::string part;
    while (std::getline(comps, part, ';')) {
      auto nums = detail::parse_numbers(part, "map_gaussians");
      if (nums.empty()) continue;
      if (nums.size() != 6) {
        throw ConfigError("map_gaussians: each component needs 6 numbers "
                          "(w mx my sxx sxy syy)");
      }
      GaussComponent g;
      g.weight = nums[0];
      g.mean = Vec2(nums[1], nums[2]);
      g.cov << nums[3], nums[4], nums[4], nums[5];
      cfg.map_gaussians.push_back(g);
    }
  }
  if (cfg.map_grid && !cfg.map_gaussians.empty()) {
    throw ConfigError("scenario: map_grid and map_gaussians are exclusive");
  }
  if (auto v = take("domain")) {
    auto nums = detail::parse_numbers(*v, "domain");
    if (nums.size() != 4) throw ConfigError("domain: need 'xmin ymin xmax ymax'");
    cfg.domain = Rect{nums[0], nums[1], nums[2], nums[3]};
  }
  cfg.raster_cell = take_num("raster_cell_size", cfg.raster_cell);
  if (auto v = take("x0")) {
    auto nums = detail::parse_numbers(*v, "x0");
    if (nums.size() != 4) throw ConfigError("x0: need 'px py vx vy'");
    cfg.x0 << nums[0], nums[1], nums[2], nums[3];
  }
  cfg.mpc.N = static_cast<int>(take_num("horizon", cfg.mpc.N));
  cfg.steps = static_cast<int>(take_num("steps", cfg.steps));
  cfg.n_components = static_cast<int>(take_num("components", cfg.n_components));
  cfg.m_keypoints = static_cast<int>(take_num("keypoints", cfg.m_keypoints));
  cfg.seed = static_cast<std::uint64_t>(take_num("seed", static_cast<double>(cfg.seed)));
  cfg.mpc.dt = take_num("dt", cfg.mpc.dt);
  cfg.mpc.v_max = take_num("v_max", cfg.mpc.v_max);
  cfg.mpc.u_max = take_num("u_max", cfg.mpc.u_max);
  cfg.mpc.V = take_num("visibility", cfg.mpc.V);
  cfg.mpc.c1 = take_num("c1", cfg.mpc.c1);
  cfg.mpc.c2 = take_num("c2", cfg.mpc.c2);
  cfg.mpc.c3 = take_num("c3", cfg.mpc.c3);
  if (auto v = take("R")) {
    auto nums = detail::parse_numbers(*v, "R");
    if (nums.size() != 4) throw ConfigError("R: need 4 numbers, row-major");
    cfg.mpc.R << nums[0], nums[1], nums[2], nums[3];
  }
  cfg.mpc.solver.max_outer =
      static_cast<int>(take_num("solver_max_outer", cfg.mpc.solver.max_outer));
  cfg.mpc.solver.max_inner =
      static_cast<int>(take_num("solver_max_inner", cfg.mpc.solver.max_inner));
  cfg.mpc.solver.kkt_tol = take_num("solver_kkt_tol", cfg.mpc.solver.kkt_tol);
  cfg.mpc.solver.feas_tol = take_num("solver_feas_tol", cfg.mpc.solver.feas_tol);
  cfg.mpc.solver.penalty_init = take_num("penalty_init", cfg.mpc.solver.penalty_init);
  cfg.mpc.solver.penalty_growth =
      take_num("penalty_growth", cfg.mpc.solver.penalty_growth);

  if (!kv.empty()) {
    throw ConfigError(path.string() + ": unknown key '" + kv.begin()->first + "'");
  }
  if (cfg.m_keypoints > cfg.n_components) {
    throw ConfigError("scenario: keypoints must not exceed components");
  }
  if (cfg.mpc.N < 1 || cfg.steps < 1) {
    throw ConfigError("scenario: horizon and steps must be >= 1");
  }
  return cfg;
}

/// Sum of cell masses whose centers lie within distance V of at least one
/// executed position; each cell counts once.
inline double collected_mass(const GridMap& map, std::span<const Vec2> positions,
                             double V) {
  double total = 0.0;
  double V2 = V * V;
  for (int r = 0; r < map.rows; ++r) {
    for (int c = 0; c < map.cols; ++c) {
      if (map.values(r, c) <= 0.0) continue;
      Vec2 center = map.cell_center(r, c);
      for (const auto& p : positions) {
        if ((center - p).squaredNorm() <= V2) {
          total += map.values(r, c);
          break;
        }
      }
    }
  }
  return total;
}

struct StageTimes {
  double gmm_s = 0.0;
  double tsp_s = 0.0;
  double mpc_s = 0.0;
  double total_s = 0.0;
};

/// Result record of one scenario run, serialized as the .report file.
struct RunReport {
  std::string scenario;
  RunMode mode = RunMode::warm;
  int n = 0;                 // mixture components
  int N = 0;                 // horizon
  int steps = 0;
  std::uint64_t seed = 0;
  StageTimes times;
  ObjectiveBreakdown objective;  // of the executed trajectory
  double collected_mass = 0.0;
  bool tsp_heuristic = false;
  std::string trajectory_csv;
  std::string svg;
  std::string report;
};

/// In-memory artifacts of a run, for rendering and tests.
struct RunArtifacts {
  KeyPointSet keypoints;
  Tour tour;
  std::vector<Vec2> tour_polyline;
  std::optional<GuessTrajectory> guess;
  ClosedLoopResult loop;
};

inline void to_json(nlohmann::json& j, const RunReport& r) {
  j = nlohmann::json{
      {"scenario", r.scenario},
      {"mode", to_string(r.mode)},
      {"n", r.n},
      {"N", r.N},
      {"steps", r.steps},
      {"seed", r.seed},
      {"times", {{"gmm_s", r.times.gmm_s},
                 {"tsp_s", r.times.tsp_s},
                 {"mpc_s", r.times.mpc_s},
                 {"total_s", r.times.total_s}}},
      {"objective", {{"total", r.objective.total},
                     {"input_cost", r.objective.input_cost},
                     {"reward_sum", r.objective.reward_sum},
                     {"slack_penalty", r.objective.slack_penalty}}},
      {"collected_mass", r.collected_mass},
      {"tsp_heuristic", r.tsp_heuristic},
      {"files", {{"trajectory_csv", r.trajectory_csv},
                 {"svg", r.svg},
                 {"report", r.report}}}};
}

inline void from_json(const nlohmann::json& j, RunReport& r) {
  r.scenario = j.at("scenario").get<std::string>();
  r.mode = j.at("mode").get<std::string>() == "warm" ? RunMode::warm : RunMode::cold;
  r.n = j.at("n").get<int>();
  r.N = j.at("N").get<int>();
  r.steps = j.at("steps").get<int>();
  r.seed = j.at("seed").get<std::uint64_t>();
  const auto& t = j.at("times");
  r.times = {t.at("gmm_s").get<double>(), t.at("tsp_s").get<double>(),
             t.at("mpc_s").get<double>(), t.at("total_s").get<double>()};
  const auto& o = j.at("objective");
  r.objective.total = o.at("total").get<double>();
  r.objective.input_cost = o.at("input_cost").get<double>();
  r.objective.reward_sum = o.at("reward_sum").get<double>();
  r.objective.slack_penalty = o.at("slack_penalty").get<double>();
  r.collected_mass = j.at("collected_mass").get<double>();
  r.tsp_heuristic = j.at("tsp_heuristic").get<bool>();
  const auto& f = j.at("files");
  r.trajectory_csv = f.at("trajectory_csv").get<std::string>();
  r.svg = f.at("svg").get<std::string>();
  r.report = f.at("report").get<std::string>();
}

/// Runs the full hierarchy for one scenario. Warm mode fits the GMM, solves
/// the TSP and discretizes the tour as the first guess; cold mode skips both
/// stages (their times are zero) and uses the solver's cold-start default.
/// Writes <name>.<mode>.trajectory.csv / .svg / .report into cfg.out_dir.
inline RunReport run_scenario(const ScenarioConfig& cfg, RunMode mode,
                              RunArtifacts* artifacts = nullptr) {
  using clock = std::chrono::steady_clock;
  auto seconds_since = [](clock::time_point t0) {
    return std::chrono::duration<double>(clock::now() - t0).count();
  };
  auto t_total = clock::now();

  ScenarioData data = build_scenario_data(cfg);
  MpcConfig mpc = cfg.mpc;
  mpc.position_bounds = data.field.domain();
  if (!mpc.state_admissible(cfg.x0)) {
    throw ConfigError("scenario " + cfg.name + ": x0 outside the admissible set");
  }

  RunReport report;
  report.scenario = cfg.name;
  report.mode = mode;
  report.n = cfg.n_components;
  report.N = mpc.N;
  report.steps = cfg.steps;
  report.seed = cfg.seed;

  auto stage = [&](const char* name, auto&& body) {
    try {
      body();
    } catch (const std::exception& e) {
      throw SolverError("stage " + std::string(name) + " failed in scenario " +
                        cfg.name + ": " + e.what());
    }
  };

  RunArtifacts local;
  std::optional<GuessTrajectory> guess;
  if (mode == RunMode::warm) {
    auto t0 = clock::now();
    stage("gmm", [&] {
      auto mass = grid_mass_points(data.grid);
      GmmModel model =
          fit_gmm(mass, cfg.n_components, cfg.seed, data.grid.cell_size_m / 2.0);
      local.keypoints = select_key_points(model, cfg.m_keypoints, data.field);
    });
    report.times.gmm_s = seconds_since(t0);

    t0 = clock::now();
    stage("tsp", [&] {
      CostMatrix cm = build_cost_matrix(cfg.x0.head<2>(), local.keypoints.points);
      local.tour = solve_tsp(cm);
    });
    report.tsp_heuristic = local.tour.heuristic;
    report.times.tsp_s = seconds_since(t0);

    std::vector<Vec2> nodes;
    nodes.push_back(cfg.x0.head<2>());
    for (const auto& p : local.keypoints.points) nodes.push_back(p);
    for (int idx : local.tour.order) local.tour_polyline.push_back(nodes[idx]);
    guess = discretize_tour(local.tour, nodes, cfg.x0, mpc.N, mpc.dt, mpc.v_max,
                            mpc.u_max);
    local.guess = guess;
  }

  auto t_mpc = clock::now();
  stage("mpc", [&] {
    local.loop = closed_loop(data.field, cfg.x0, mpc, cfg.steps, guess);
  });
  report.times.mpc_s = seconds_since(t_mpc);

  // executed-trajectory metrics
  std::vector<Vec2> positions;
  TrajectoryRecord rec;
  rec.states = local.loop.states;
  rec.inputs = local.loop.inputs;
  rec.slacks = local.loop.applied_slacks;
  for (const auto& x : local.loop.states) {
    positions.push_back(x.head<2>());
    rec.rewards.push_back(data.field.eval_clamped_to_domain(x.head<2>()).value);
  }
  report.collected_mass = collected_mass(data.grid, positions, mpc.V);
  for (const auto& u : local.loop.inputs)
    report.objective.input_cost += u.dot(mpc.R * u);
  report.objective.input_cost *= mpc.c1;
  for (double rw : rec.rewards) report.objective.reward_sum += rw;
  report.objective.reward_sum *= mpc.c2;
  for (double e : local.loop.applied_slacks) report.objective.slack_penalty += e;
  report.objective.slack_penalty *= mpc.c3;
  report.objective.total = report.objective.input_cost - report.objective.reward_sum +
                           report.objective.slack_penalty;

  // emit files
  std::filesystem::create_directories(cfg.out_dir);
  std::string base = cfg.name + "." + to_string(mode);
  auto csv_path = cfg.out_dir / (base + ".trajectory.csv");
  auto svg_path = cfg.out_dir / (base + ".svg");
  auto report_path = cfg.out_dir / (base + ".report");

  {
    std::ofstream out(csv_path);
    write_trajectory_csv(rec, out);
  }
  {
    Overlays ov;
    ov.keypoints = local.keypoints.points;
    ov.tour = local.tour_polyline;
    if (local.guess) {
      for (const auto& s : local.guess->states) ov.guess.push_back(s.head<2>());
    }
    ov.executed = positions;
    ov.x0 = cfg.x0.head<2>();
    std::ofstream out(svg_path);
    out << render_svg(data.grid, ov);
  }
  report.trajectory_csv = csv_path.string();
  report.svg = svg_path.string();
  report.report = report_path.string();
  report.times.total_s = seconds_since(t_total);
  {
    nlohmann::json j = report;
    std::ofstream out(report_path);
    out << j.dump(2) << '\n';
  }
  if (artifacts) *artifacts = std::move(local);
  return report;
}

/// Formatted comparison table: scenario, n, N, per-stage times, total, plus
/// collected mass and mode. Rows are ordered by scenario name, then horizon,
/// then mode.
inline std::string make_report_table(std::span<const RunReport> reports) {
  if (reports.empty()) throw ConfigError("make_report_table: no reports");
  std::vector<const RunReport*> rows;
  for (const auto& r : reports) rows.push_back(&r);
  std::stable_sort(rows.begin(), rows.end(), [](const RunReport* a, const RunReport* b) {
    if (a->scenario != b->scenario) return a->scenario < b->scenario;
    if (a->N != b->N) return a->N < b->N;
    return static_cast<int>(a->mode) < static_cast<int>(b->mode);
  });
  std::ostringstream out;
  out << std::left << std::setw(14) << "scenario" << std::right << std::setw(5) << "n"
      << std::setw(6) << "N" << std::setw(10) << "GMM" << std::setw(10) << "TSP"
      << std::setw(10) << "MPC" << std::setw(10) << "Total" << std::setw(12)
      << "collected" << std::setw(6) << "mode" << '\n';
  out << std::string(83, '-') << '\n';
  out << std::fixed;
  for (const auto* r : rows) {
    out << std::left << std::setw(14) << r->scenario << std::right << std::setw(5)
        << r->n << std::setw(6) << r->N << std::setprecision(3) << std::setw(9)
        << r->times.gmm_s << 's' << std::setw(9) << r->times.tsp_s << 's'
        << std::setw(9) << r->times.mpc_s << 's' << std::setw(9) << r->times.total_s
        << 's' << std::setprecision(4) << std::setw(12) << r->collected_mass
        << std::setw(6) << to_string(r->mode) << '\n';
  }
  return out.str();
}

}  // namespace wcpp
