#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "wcpp/sim.hpp"

using namespace wcpp;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  auto dir = fs::temp_directory_path() / ("wcpp_test_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

GridMap uniform_map(int n, double cell, double value) {
  GridMap m;
  m.cell_size_m = cell;
  m.rows = m.cols = n;
  m.width_m = m.height_m = n * cell;
  m.values = Eigen::MatrixXd::Constant(n, n, value);
  return m;
}

// Writes a small Gaussian-sum scenario config and returns its path.
fs::path write_scenario(const fs::path& dir, const std::string& name,
                        const std::string& extra = "") {
  fs::path p = dir / (name + ".cfg");
  std::ofstream out(p);
  out << "map_gaussians = 40 80 200 1800 0 1800 ; 50 240 120 2400 0 2400\n"
      << "domain = 0 0 320 320\n"
      << "raster_cell_size = 20\n"
      << "x0 = 40 40 0 0\n"
      << "horizon = 10\n"
      << "steps = 6\n"
      << "components = 4\n"
      << "keypoints = 2\n"
      << "seed = 3\n"
      << "dt = 1\n"
      << "v_max = 20\n"
      << "u_max = 10\n"
      << "visibility = 18\n"
      << extra;
  return p;
}

}  // namespace

TEST_CASE("collected mass: empty position list collects nothing") {
  auto m = uniform_map(6, 10.0, 1.0);
  CHECK(collected_mass(m, {}, 10.0) == 0.0);
}

TEST_CASE("collected mass: one position with huge radius collects everything") {
  auto m = uniform_map(6, 10.0, 0.5);
  std::vector<Vec2> pos = {Vec2(30, 30)};
  CHECK(collected_mass(m, pos, 1000.0) == Catch::Approx(m.total_value()));
}

TEST_CASE("collected mass: straight path tube matches the brute-force oracle") {
  auto m = uniform_map(12, 5.0, 1.0);
  std::vector<Vec2> pos;
  for (int k = 0; k <= 10; ++k) pos.push_back(Vec2(5.0 + 5.0 * k, 30.0));
  double V = 7.5;
  // oracle: independent cell-by-cell double loop
  double expect = 0.0;
  for (int r = 0; r < m.rows; ++r)
    for (int c = 0; c < m.cols; ++c) {
      Vec2 center = m.cell_center(r, c);
      for (const auto& p : pos)
        if ((center - p).norm() <= V) {
          expect += m.values(r, c);
          break;
        }
    }
  CHECK(collected_mass(m, pos, V) == Catch::Approx(expect));
  CHECK(expect < m.total_value());  // the tube is a strict subset
}

TEST_CASE("collected mass: monotone in appended positions, bounded by total") {
  auto m = uniform_map(10, 10.0, 2.0);
  Rng rng(8);
  std::vector<Vec2> pos;
  double prev = 0.0;
  for (int i = 0; i < 15; ++i) {
    pos.push_back(rng.point_in(Rect{0, 0, 100, 100}));
    double cur = collected_mass(m, pos, 12.0);
    CHECK(cur >= prev);
    CHECK(cur <= m.total_value() + 1e-12);
    prev = cur;
  }
}

TEST_CASE("scenario config: parses the documented schema") {
  auto dir = temp_dir("cfg");
  auto p = write_scenario(dir, "demo", "c1 = 2\nc2 = 500\nc3 = 50\nR = 2 0 0 3\n");
  ScenarioConfig cfg = load_scenario(p);
  CHECK(cfg.name == "demo");
  CHECK(cfg.map_gaussians.size() == 2);
  CHECK(cfg.domain.xmax == 320.0);
  CHECK(cfg.x0 == Vec4(40, 40, 0, 0));
  CHECK(cfg.mpc.N == 10);
  CHECK(cfg.steps == 6);
  CHECK(cfg.n_components == 4);
  CHECK(cfg.m_keypoints == 2);
  CHECK(cfg.seed == 3);
  CHECK(cfg.mpc.c1 == 2.0);
  CHECK(cfg.mpc.c2 == 500.0);
  CHECK(cfg.mpc.c3 == 50.0);
  CHECK(cfg.mpc.R(1, 1) == 3.0);
  CHECK(cfg.mpc.V == 18.0);
}

TEST_CASE("scenario config: rejects unknown keys and bad values") {
  auto dir = temp_dir("cfg_bad");
  CHECK_THROWS_AS(load_scenario(dir / "missing.cfg"), ConfigError);
  auto p1 = write_scenario(dir, "bad1", "no_such_key = 1\n");
  CHECK_THROWS_AS(load_scenario(p1), ConfigError);
  auto p2 = write_scenario(dir, "bad2", "keypoints = 99\n");  // m > n
  CHECK_THROWS_AS(load_scenario(p2), ConfigError);
  fs::path p3 = dir / "bad3.cfg";
  std::ofstream(p3) << "map_gaussians = 1 2\n";
  CHECK_THROWS_AS(load_scenario(p3), ConfigError);
}

TEST_CASE("rasterize: grid mass approximates the gaussian weight sum") {
  std::vector<GaussComponent> comps = {
      {2.0, Vec2(100, 100), Mat2::Identity() * 900.0}};
  GridMap m = rasterize_gaussians(comps, Rect{0, 0, 200, 200}, 10.0);
  CHECK(m.rows == 20);
  CHECK(m.cols == 20);
  // midpoint rasterization of a well-contained gaussian is close to its mass
  CHECK(m.total_value() == Catch::Approx(2.0).epsilon(0.02));
}

TEST_CASE("run_scenario: cold mode skips GMM and TSP stages") {
  auto dir = temp_dir("run_cold");
  auto p = write_scenario(dir, "s", "");
  ScenarioConfig cfg = load_scenario(p);
  cfg.out_dir = dir / "out";
  RunReport report = run_scenario(cfg, RunMode::cold);
  CHECK(report.times.gmm_s == 0.0);
  CHECK(report.times.tsp_s == 0.0);
  CHECK(report.times.mpc_s > 0.0);
  CHECK(report.times.total_s >= report.times.gmm_s + report.times.tsp_s +
                                    report.times.mpc_s - 1e-3);
  CHECK(fs::exists(report.trajectory_csv));
  CHECK(fs::exists(report.svg));
  CHECK(fs::exists(report.report));
}

TEST_CASE("run_scenario: warm mode populates all stages and beats cold here") {
  auto dir = temp_dir("run_warm");
  auto p = write_scenario(dir, "s", "");
  ScenarioConfig cfg = load_scenario(p);
  cfg.out_dir = dir / "out";
  RunArtifacts art;
  RunReport warm = run_scenario(cfg, RunMode::warm, &art);
  CHECK(warm.times.gmm_s > 0.0);
  CHECK(warm.times.tsp_s > 0.0);
  CHECK(warm.times.mpc_s > 0.0);
  CHECK(art.keypoints.points.size() == 2);
  CHECK(art.tour.order.size() == 3);
  CHECK(art.loop.states.size() == std::size_t(cfg.steps) + 1);
  RunReport cold = run_scenario(cfg, RunMode::cold);
  CHECK(warm.collected_mass >= cold.collected_mass);
}

TEST_CASE("run_scenario: deterministic outputs for identical config and seed") {
  auto dir = temp_dir("run_det");
  auto p = write_scenario(dir, "s", "");
  ScenarioConfig cfg = load_scenario(p);
  auto read = [](const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  cfg.out_dir = dir / "a";
  RunReport ra = run_scenario(cfg, RunMode::warm);
  cfg.out_dir = dir / "b";
  RunReport rb = run_scenario(cfg, RunMode::warm);
  CHECK(read(ra.trajectory_csv) == read(rb.trajectory_csv));
  CHECK(read(ra.svg) == read(rb.svg));
  CHECK(ra.collected_mass == rb.collected_mass);
  CHECK(ra.objective.total == rb.objective.total);
}

TEST_CASE("report round-trip and table structure") {
  auto dir = temp_dir("report");
  auto p = write_scenario(dir, "s", "");
  ScenarioConfig cfg = load_scenario(p);
  cfg.out_dir = dir / "out";
  RunReport report = run_scenario(cfg, RunMode::cold);

  std::ifstream in(report.report);
  nlohmann::json j = nlohmann::json::parse(in);
  RunReport parsed = j.get<RunReport>();
  CHECK(parsed.scenario == report.scenario);
  CHECK(parsed.collected_mass == report.collected_mass);
  CHECK(parsed.times.mpc_s == report.times.mpc_s);

  std::string table = make_report_table(std::vector<RunReport>{report, parsed});
  CHECK(table.find("scenario") != std::string::npos);
  CHECK(table.find("GMM") != std::string::npos);
  CHECK(table.find("Total") != std::string::npos);
  // two data rows plus header and rule
  CHECK(std::count(table.begin(), table.end(), '\n') == 4);
  CHECK_THROWS_AS(make_report_table({}), ConfigError);
}

TEST_CASE("trajectory csv: write then parse round-trips bit-equal") {
  TrajectoryRecord t;
  Rng rng(12);
  int N = 7;
  for (int k = 0; k <= N; ++k) {
    Vec4 x;
    x << rng.uniform(0, 600), rng.uniform(0, 600), rng.uniform(-20, 20),
        rng.uniform(-20, 20);
    t.states.push_back(x);
    t.rewards.push_back(rng.uniform(0, 1));
    if (k < N) {
      t.inputs.emplace_back(rng.uniform(-5, 5), rng.uniform(-5, 5));
      t.slacks.push_back(rng.uniform(0, 300));
    }
  }
  std::ostringstream out;
  write_trajectory_csv(t, out);
  std::istringstream in(out.str());
  TrajectoryRecord u = parse_trajectory_csv(in);
  REQUIRE(u.states.size() == t.states.size());
  REQUIRE(u.inputs.size() == t.inputs.size());
  for (std::size_t k = 0; k < t.states.size(); ++k) {
    CHECK(u.states[k] == t.states[k]);
    CHECK(u.rewards[k] == t.rewards[k]);
  }
  for (std::size_t k = 0; k < t.inputs.size(); ++k) {
    CHECK(u.inputs[k] == t.inputs[k]);
    CHECK(u.slacks[k] == t.slacks[k]);
  }
}

#ifndef WCPP_SCENARIOS_DIR
#define WCPP_SCENARIOS_DIR "scenarios"
#endif

TEST_CASE("warm-start dominance: open-loop J(warm) <= J(cold) on scenario 1") {
  ScenarioConfig cfg = load_scenario(fs::path(WCPP_SCENARIOS_DIR) / "s1.cfg");
  ScenarioData data = build_scenario_data(cfg);
  MpcConfig mpc = cfg.mpc;
  mpc.position_bounds = data.field.domain();

  auto mass = grid_mass_points(data.grid);
  GmmModel model =
      fit_gmm(mass, cfg.n_components, cfg.seed, data.grid.cell_size_m / 2.0);
  KeyPointSet kps = select_key_points(model, cfg.m_keypoints, data.field);
  CostMatrix cm = build_cost_matrix(cfg.x0.head<2>(), kps.points);
  Tour tour = solve_tsp(cm);
  std::vector<Vec2> nodes{cfg.x0.head<2>()};
  for (const auto& p : kps.points) nodes.push_back(p);
  auto guess =
      discretize_tour(tour, nodes, cfg.x0, mpc.N, mpc.dt, mpc.v_max, mpc.u_max);

  Trajectory warm = solve_ocp(data.field, cfg.x0, mpc, guess);
  Trajectory cold = solve_ocp(data.field, cfg.x0, mpc);
  bool both_capped = warm.status == SolveStatus::max_iter &&
                     cold.status == SolveStatus::max_iter;
  if (warm.objective.total > cold.objective.total) {
    // tolerated only when neither solve reached stationarity
    CHECK(both_capped);
    WARN("warm J " << warm.objective.total << " > cold J " << cold.objective.total
                   << " with both solves at the iteration cap");
  } else {
    CHECK(warm.objective.total <= cold.objective.total);
  }
}

TEST_CASE("key points: scenario-1 selection at n=20, m=10 dominates the rest") {
  ScenarioConfig cfg = load_scenario(fs::path(WCPP_SCENARIOS_DIR) / "s1.cfg");
  ScenarioData data = build_scenario_data(cfg);
  auto mass = grid_mass_points(data.grid);
  GmmModel model = fit_gmm(mass, 20, cfg.seed, data.grid.cell_size_m / 2.0);
  KeyPointSet kps = select_key_points(model, 10, data.field);
  REQUIRE(kps.points.size() == 10);
  double worst_selected = kps.source_scores.back();
  for (const auto& comp : model.components) {
    bool selected = false;
    for (const auto& p : kps.points)
      if (p == comp.mean) selected = true;
    if (!selected)
      CHECK(data.field.eval(comp.mean).value <= worst_selected + 1e-12);
  }
  for (const auto& p : kps.points) {
    CHECK(data.field.domain().contains(p));
  }
}

TEST_CASE("trajectory csv: open-loop solve output round-trips through the format") {
  ScenarioConfig cfg = load_scenario(fs::path(WCPP_SCENARIOS_DIR) / "smoke.cfg");
  ScenarioData data = build_scenario_data(cfg);
  MpcConfig mpc = cfg.mpc;
  mpc.position_bounds = data.field.domain();
  Trajectory traj = solve_ocp(data.field, cfg.x0, mpc);
  TrajectoryRecord rec = make_trajectory_record(traj, data.field);
  std::ostringstream out;
  write_trajectory_csv(rec, out);
  std::istringstream in(out.str());
  TrajectoryRecord back = parse_trajectory_csv(in);
  REQUIRE(back.states.size() == traj.states.size());
  REQUIRE(back.slacks.size() == traj.slacks.size());
  for (std::size_t k = 0; k < traj.states.size(); ++k)
    CHECK(back.states[k] == traj.states[k]);
  for (std::size_t k = 0; k < traj.slacks.size(); ++k)
    CHECK(back.slacks[k] == traj.slacks[k]);
}
