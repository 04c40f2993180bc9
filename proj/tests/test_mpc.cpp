#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>

#include "wcpp/mpc.hpp"

using namespace wcpp;

namespace {

GridMap make_map(int rows, int cols, double cell,
                 const std::function<double(int, int)>& f) {
  GridMap m;
  m.cell_size_m = cell;
  m.rows = rows;
  m.cols = cols;
  m.width_m = cols * cell;
  m.height_m = rows * cell;
  m.values.resize(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m.values(r, c) = f(r, c);
  return m;
}

RewardField zero_field(double side) {
  int n = std::max(4, static_cast<int>(side / 25.0));
  auto m = make_map(n, n, side / n, [](int, int) { return 0.0; });
  return build_spline_field(m);
}

MpcConfig small_cfg(const RewardField& field, int N) {
  MpcConfig cfg;
  cfg.N = N;
  cfg.position_bounds = field.domain();
  cfg.v_max = 20.0;
  cfg.u_max = 10.0;
  cfg.dt = 1.0;
  cfg.V = 18.0;
  return cfg;
}

}  // namespace

TEST_CASE("dynamics: constant velocity and acceleration integration") {
  auto m = DynamicsModel::double_integrator(1.0);
  Vec4 x;
  x << 0, 0, 1, 0;
  CHECK(step_dynamics(x, Vec2(0, 0), m) == Vec4(1, 0, 1, 0));
  CHECK(step_dynamics(Vec4::Zero(), Vec2(1, 0), m) == Vec4(0, 0, 1, 0));
}

TEST_CASE("dynamics: matches the direct matrix-multiply oracle") {
  // oracle: hand-written double-integrator update
  auto oracle = [](const Vec4& x, const Vec2& u, double dt) {
    return Vec4(x(0) + dt * x(2), x(1) + dt * x(3), x(2) + dt * u(0),
                x(3) + dt * u(1));
  };
  Vec4 x;
  x << 2, 3, -1, 4;
  Vec2 u(0.5, -0.5);
  auto m = DynamicsModel::double_integrator(0.1);
  CHECK((step_dynamics(x, u, m) - oracle(x, u, 0.1)).lpNorm<Eigen::Infinity>() <
        1e-15);

  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    Vec4 xr;
    xr << rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(-5, 5),
        rng.uniform(-5, 5);
    Vec2 ur(rng.uniform(-3, 3), rng.uniform(-3, 3));
    double dt = rng.uniform(0.01, 2.0);
    auto model = DynamicsModel::double_integrator(dt);
    CHECK((step_dynamics(xr, ur, model) - oracle(xr, ur, dt))
              .lpNorm<Eigen::Infinity>() < 1e-12);
  }
}

TEST_CASE("coverage residuals: coincident states and exact boundary") {
  double V = 5.0;
  std::vector<Vec4> states(4, Vec4::Zero());
  std::vector<double> eps(3, 0.0);
  auto res = coverage_residuals(states, V, eps);
  REQUIRE(res.size() == 6);  // N(N+1)/2 with N = 3
  for (const auto& r : res) CHECK(r.residual == Catch::Approx(-V * V));

  std::vector<Vec4> two = {Vec4::Zero(), (Vec4() << V, 0, 0, 0).finished()};
  std::vector<double> one(1, 0.0);
  auto res2 = coverage_residuals(two, V, one);
  REQUIRE(res2.size() == 1);
  CHECK(res2[0].residual == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("coverage residuals: random states match a direct double loop") {
  Rng rng(9);
  int N = 3;
  std::vector<Vec4> states;
  for (int i = 0; i <= N; ++i) {
    Vec4 x;
    x << rng.uniform(0, 100), rng.uniform(0, 100), 0, 0;
    states.push_back(x);
  }
  std::vector<double> eps = {0.5, 1.5, 0.0};
  double V = 10.0;
  auto res = coverage_residuals(states, V, eps);
  REQUIRE(res.size() == 6);
  // oracle: independent recomputation
  std::size_t idx = 0;
  for (int i = 1; i <= N; ++i) {
    for (int j = 0; j < i; ++j, ++idx) {
      double d2 = (states[i].head<2>() - states[j].head<2>()).squaredNorm();
      CHECK(res[idx].i == i);
      CHECK(res[idx].j == j);
      CHECK(res[idx].residual == Catch::Approx(d2 - V * V + eps[i - 1]));
    }
  }
}

TEST_CASE("objective: zero everything gives zero") {
  RewardField field = zero_field(100.0);
  MpcConfig cfg = small_cfg(field, 3);
  Trajectory traj;
  traj.states.assign(4, (Vec4() << 50, 50, 0, 0).finished());
  traj.inputs.assign(3, Vec2::Zero());
  traj.slacks.assign(3, 0.0);
  auto b = objective(traj, field, cfg);
  CHECK(b.total == 0.0);
}

TEST_CASE("objective: single input quadratic form") {
  RewardField field = zero_field(100.0);
  MpcConfig cfg = small_cfg(field, 1);
  cfg.c1 = 1.0;
  cfg.c2 = 0.0;
  cfg.c3 = 0.0;
  cfg.R = Mat2::Identity();
  Trajectory traj;
  traj.states.assign(2, (Vec4() << 50, 50, 0, 0).finished());
  traj.inputs = {Vec2(3, 4)};
  traj.slacks = {0.0};
  CHECK(objective(traj, field, cfg).total == Catch::Approx(25.0));
}

TEST_CASE("objective: constant field 1 with c2=1000 and N=50 gives -51000") {
  auto m = make_map(8, 8, 25.0, [](int, int) { return 1.0; });
  RewardField field = build_spline_field(m);
  MpcConfig cfg = small_cfg(field, 50);
  cfg.c1 = 1.0;
  cfg.c2 = 1000.0;
  cfg.c3 = 100.0;
  Trajectory traj;
  traj.states.assign(51, (Vec4() << 100, 100, 0, 0).finished());
  traj.inputs.assign(50, Vec2::Zero());
  traj.slacks.assign(50, 0.0);
  CHECK(objective(traj, field, cfg).total == Catch::Approx(-51000.0).epsilon(1e-9));
}

TEST_CASE("penalized objective: analytic gradient matches finite differences") {
  auto m = make_map(10, 10, 10.0, [](int r, int c) {
    Vec2 p((c + 0.5) * 10, (r + 0.5) * 10);
    return std::exp(-(p - Vec2(40, 60)).squaredNorm() / 800.0) +
           0.5 * std::exp(-(p - Vec2(70, 30)).squaredNorm() / 450.0);
  });
  RewardField field = build_spline_field(m);
  int N = 6;
  MpcConfig cfg = small_cfg(field, N);
  cfg.v_max = 8.0;
  cfg.u_max = 4.0;
  cfg.V = 7.0;
  Vec4 x0;
  x0 << 35, 55, 1, 0;

  Rng rng(2026);
  int checked = 0;
  while (checked < 10) {
    std::vector<Vec2> history = {rng.point_in(Rect{20, 20, 80, 80})};
    PenalizedObjective pen(field, cfg, x0, history);
    // random multipliers and penalty
    for (auto& l : pen.cc_multipliers()) l = rng.uniform(0, 2);
    for (auto& l : pen.box_multipliers()) l = rng.uniform(0, 1);
    pen.set_penalty(rng.uniform(0.5, 4.0));

    // random interior point of the full variable space
    std::vector<Vec4> states(N + 1);
    states[0] = x0;
    for (int k = 1; k <= N; ++k) {
      states[k] << rng.uniform(15, 85), rng.uniform(15, 85), rng.uniform(-6, 6),
          rng.uniform(-6, 6);
    }
    std::vector<Vec2> inputs(N);
    for (auto& u : inputs) u = Vec2(rng.uniform(-3, 3), rng.uniform(-3, 3));
    std::vector<double> eps(N);
    for (auto& e : eps) e = rng.uniform(0.1, 20.0);

    std::vector<Vec4> gx;
    std::vector<Vec2> gu;
    std::vector<double> ge;
    auto ev = pen.eval(states, inputs, eps, &gx, &gu, &ge);
    (void)ev;

    auto value_at = [&](const std::vector<Vec4>& s, const std::vector<Vec2>& u,
                        const std::vector<double>& e) {
      return pen.eval(s, u, e).value;
    };

    double h = 1e-6;
    double worst = 0.0;
    double gnorm = 0.0;
    for (int k = 1; k <= N; ++k)
      for (int d = 0; d < 4; ++d) {
        auto sp = states, sm = states;
        sp[k](d) += h;
        sm[k](d) -= h;
        double fd = (value_at(sp, inputs, eps) - value_at(sm, inputs, eps)) / (2 * h);
        worst = std::max(worst, std::abs(fd - gx[k - 1](d)));
        gnorm = std::max(gnorm, std::abs(gx[k - 1](d)));
      }
    for (int k = 0; k < N; ++k)
      for (int d = 0; d < 2; ++d) {
        auto up = inputs, um = inputs;
        up[k](d) += h;
        um[k](d) -= h;
        double fd = (value_at(states, up, eps) - value_at(states, um, eps)) / (2 * h);
        worst = std::max(worst, std::abs(fd - gu[k](d)));
        gnorm = std::max(gnorm, std::abs(gu[k](d)));
      }
    for (int i = 0; i < N; ++i) {
      auto ep = eps, em = eps;
      ep[i] += h;
      em[i] -= h;
      double fd = (value_at(states, inputs, ep) - value_at(states, inputs, em)) / (2 * h);
      worst = std::max(worst, std::abs(fd - ge[i]));
      gnorm = std::max(gnorm, std::abs(ge[i]));
    }
    CHECK(worst / std::max(1.0, gnorm) < 1e-4);
    ++checked;
  }
}

TEST_CASE("solve_ocp: infeasible start is reported") {
  RewardField field = zero_field(100.0);
  MpcConfig cfg = small_cfg(field, 5);
  Vec4 outside;
  outside << -10, 50, 0, 0;
  auto traj = solve_ocp(field, outside, cfg);
  CHECK(traj.status == SolveStatus::infeasible_start);
}

TEST_CASE("solve_ocp: moving start on an empty field keeps coasting cost-free") {
  // x0 already moving at V per step: the all-zero input plan is feasible with
  // zero slack, so the optimum is J = 0.
  RewardField field = zero_field(600.0);
  MpcConfig cfg = small_cfg(field, 12);
  cfg.c2 = 0.0;
  cfg.V = 15.0;
  Vec4 x0;
  x0 << 50, 300, cfg.V / cfg.dt, 0;
  auto traj = solve_ocp(field, x0, cfg);
  CHECK(traj.objective.total <= 1e-6);
  for (const auto& r : coverage_residuals(traj.states, cfg.V, traj.slacks))
    CHECK(r.residual >= -1e-6);
}

TEST_CASE("solve_ocp: at-rest start beats the hand-built straight-line oracle") {
  RewardField field = zero_field(600.0);
  int N = 12;
  MpcConfig cfg = small_cfg(field, N);
  cfg.c2 = 0.0;
  cfg.V = 15.0;
  cfg.u_max = 100.0;  // u_max arbitrary per the scenario
  Vec4 x0;
  x0 << 50, 300, 0, 0;

  // Oracle: accelerate to V/dt in one step, then coast in a straight line.
  // Step 1 cannot leave x0 (double integrator), so eps_1 = V^2 is unavoidable.
  Trajectory oracle;
  oracle.states.resize(N + 1);
  oracle.inputs.assign(N, Vec2::Zero());
  oracle.inputs[0] = Vec2(cfg.V / (cfg.dt * cfg.dt), 0);
  oracle.states[0] = x0;
  auto model = cfg.model();
  for (int k = 0; k < N; ++k)
    oracle.states[k + 1] = step_dynamics(oracle.states[k], oracle.inputs[k], model);
  oracle.slacks.assign(N, 0.0);
  oracle.slacks[0] = cfg.V * cfg.V;
  double J_oracle = objective(oracle, field, cfg).total;

  // honest check that the oracle itself is feasible
  for (const auto& r : coverage_residuals(oracle.states, cfg.V, oracle.slacks))
    REQUIRE(r.residual >= -1e-9);

  auto traj = solve_ocp(field, x0, cfg, std::make_optional(GuessTrajectory{
                                            oracle.states, oracle.inputs, N, cfg.dt}));
  CHECK(traj.objective.total <= J_oracle + 1e-6);
  for (const auto& r : coverage_residuals(traj.states, cfg.V, traj.slacks))
    CHECK(r.residual >= -1e-6);
}

TEST_CASE("solve_ocp: single sharp peak is passed once, not orbited") {
  double sigma = 15.0;
  Vec2 peak(200, 200);
  auto m = make_map(16, 16, 25.0, [&](int r, int c) {
    Vec2 p((c + 0.5) * 25, (r + 0.5) * 25);
    return std::exp(-(p - peak).squaredNorm() / (2 * sigma * sigma));
  });
  RewardField field = build_spline_field(m);
  int N = 16;
  MpcConfig cfg = small_cfg(field, N);
  cfg.V = 3 * sigma;  // visibility swallows the whole peak support
  Vec4 x0;
  x0 << 120, 200, 0, 0;
  auto traj = solve_ocp(field, x0, cfg);

  auto residuals = coverage_residuals(traj.states, cfg.V, traj.slacks);
  for (const auto& r : residuals) CHECK(r.residual >= -1e-6);
  for (double e : traj.slacks) CHECK(e >= 0.0);

  // no two far-apart plan states loiter inside the visibility disc
  double max_slack = *std::max_element(traj.slacks.begin(), traj.slacks.end());
  double bound = cfg.V - std::sqrt(max_slack) - 1e-3;
  for (std::size_t i = 3; i < traj.states.size(); ++i)
    for (std::size_t j = 0; j + 3 <= i; ++j) {
      double d = (traj.states[i].head<2>() - traj.states[j].head<2>()).norm();
      CHECK(d >= bound);
    }
}

TEST_CASE("solve_ocp: deterministic for identical inputs") {
  auto m = make_map(8, 8, 25.0, [](int r, int c) {
    return std::exp(-(Vec2((c + 0.5) * 25, (r + 0.5) * 25) - Vec2(100, 100))
                         .squaredNorm() /
                    5000.0);
  });
  RewardField field = build_spline_field(m);
  MpcConfig cfg = small_cfg(field, 10);
  Vec4 x0;
  x0 << 50, 50, 0, 0;
  auto a = solve_ocp(field, x0, cfg);
  auto b = solve_ocp(field, x0, cfg);
  REQUIRE(a.states.size() == b.states.size());
  for (std::size_t k = 0; k < a.states.size(); ++k) CHECK(a.states[k] == b.states[k]);
  for (std::size_t k = 0; k < a.inputs.size(); ++k) CHECK(a.inputs[k] == b.inputs[k]);
  CHECK(a.objective.total == b.objective.total);
}

TEST_CASE("solve_ocp: trajectory invariants on a reward map") {
  auto m = make_map(10, 10, 20.0, [](int r, int c) {
    Vec2 p((c + 0.5) * 20, (r + 0.5) * 20);
    return std::exp(-(p - Vec2(150, 150)).squaredNorm() / 3000.0) +
           std::exp(-(p - Vec2(60, 120)).squaredNorm() / 2000.0);
  });
  RewardField field = build_spline_field(m);
  int N = 14;
  MpcConfig cfg = small_cfg(field, N);
  cfg.v_max = 15.0;
  cfg.V = 12.0;
  Vec4 x0;
  x0 << 40, 40, 0, 0;
  SolveStats stats;
  auto traj = solve_ocp(field, x0, cfg, std::nullopt, {}, &stats);

  // dynamics residual is zero by construction (single shooting); check anyway
  auto model = cfg.model();
  for (int k = 0; k < N; ++k) {
    Vec4 pred = step_dynamics(traj.states[k], traj.inputs[k], model);
    CHECK((traj.states[k + 1] - pred).lpNorm<Eigen::Infinity>() <= 1e-6);
  }
  // box constraints
  for (const auto& x : traj.states) {
    CHECK(x(0) >= field.domain().xmin - 1e-6);
    CHECK(x(0) <= field.domain().xmax + 1e-6);
    CHECK(x(1) >= field.domain().ymin - 1e-6);
    CHECK(x(1) <= field.domain().ymax + 1e-6);
    CHECK(std::abs(x(2)) <= cfg.v_max + 1e-6);
    CHECK(std::abs(x(3)) <= cfg.v_max + 1e-6);
  }
  for (const auto& u : traj.inputs) {
    CHECK(std::abs(u(0)) <= cfg.u_max + 1e-12);
    CHECK(std::abs(u(1)) <= cfg.u_max + 1e-12);
  }
  // coverage constraints with slack economics: slack only where needed
  auto residuals = coverage_residuals(traj.states, cfg.V, traj.slacks);
  CHECK(residuals.size() == std::size_t(N) * (N + 1) / 2);
  for (const auto& r : residuals) CHECK(r.residual >= -1e-6);
  for (int i = 1; i <= N; ++i) {
    if (traj.slacks[i - 1] > 1e-9) {
      double min_d = std::numeric_limits<double>::infinity();
      for (int j = 0; j < i; ++j)
        min_d = std::min(min_d, (traj.states[i].head<2>() - traj.states[j].head<2>()).norm());
      CHECK(min_d < cfg.V + 1e-6);
    }
  }
  // merit descent within each AL phase
  for (const auto& phase : stats.merit_history) {
    for (std::size_t i = 1; i < phase.size(); ++i) CHECK(phase[i] <= phase[i - 1] + 1e-9);
  }
}

TEST_CASE("closed loop: one step applies exactly the first open-loop input") {
  RewardField field = zero_field(200.0);
  MpcConfig cfg = small_cfg(field, 6);
  Vec4 x0;
  x0 << 100, 100, 2, 0;
  auto open = solve_ocp(field, x0, cfg);
  auto cl = closed_loop(field, x0, cfg, 1, std::nullopt);
  REQUIRE(cl.states.size() == 2);
  REQUIRE(cl.inputs.size() == 1);
  CHECK(cl.inputs[0] == open.inputs[0]);
  CHECK(cl.states[1] == step_dynamics(x0, open.inputs[0], cfg.model()));
}

TEST_CASE("closed loop: executed trajectory obeys the dynamics exactly") {
  RewardField field = zero_field(300.0);
  MpcConfig cfg = small_cfg(field, 6);
  cfg.c2 = 0.0;
  Vec4 x0;
  x0 << 150, 150, 0, 0;
  auto cl = closed_loop(field, x0, cfg, 5, std::nullopt);
  auto model = cfg.model();
  for (std::size_t k = 0; k < cl.inputs.size(); ++k) {
    Vec4 pred = step_dynamics(cl.states[k], cl.inputs[k], model);
    CHECK((cl.states[k + 1] - pred).lpNorm<Eigen::Infinity>() == 0.0);
  }
}
