#pragma once

#include <chrono>
#include <cstdio>
#include <optional>
#include <span>
#include <vector>

#include "wcpp/common.hpp"
#include "wcpp/reward_field.hpp"
#include "wcpp/warmstart.hpp"

namespace wcpp {

/// Discrete double-integrator dynamics x+ = A x + B u with state
/// (p_x, p_y, v_x, v_y) and input (a_x, a_y).
struct DynamicsModel {
  Mat4 A = Mat4::Identity();
  Eigen::Matrix<double, 4, 2> B = Eigen::Matrix<double, 4, 2>::Zero();
  double dt = 1.0;

  static DynamicsModel double_integrator(double dt) {
    DynamicsModel m;
    m.dt = dt;
    m.A << 1, 0, dt, 0,
           0, 1, 0, dt,
           0, 0, 1, 0,
           0, 0, 0, 1;
    m.B << 0, 0,
           0, 0,
           dt, 0,
           0, dt;
    return m;
  }
};

inline Vec4 step_dynamics(const Vec4& x, const Vec2& u, const DynamicsModel& m) {
  return m.A * x + m.B * u;
}

struct SolverOptions {
  int max_outer = 30;
  int max_inner = 300;
  double kkt_tol = 1e-5;     // relative to the initial projected-gradient norm
  double feas_tol = 1e-8;    // absolute bound on constraint violation
  double penalty_init = 0.0; // <= 0: auto, max(1, c3) so coverage pushback
                             // matches the slack-penalty pull from the start
  double penalty_growth = 2.0;
  double penalty_max = 1e8;
  int lbfgs_memory = 8;
  bool verbose = false;      // phase summaries on stderr
};

struct MpcConfig {
  int N = 50;
  double c1 = 1.0;
  double c2 = 1000.0;
  double c3 = 100.0;
  Mat2 R = Mat2::Identity();
  double V = 18.0;        // visibility radius, meters
  Rect position_bounds;   // position part of the admissible set X
  double v_max = 20.0;
  double u_max = 10.0;
  double dt = 1.0;
  SolverOptions solver;

  DynamicsModel model() const { return DynamicsModel::double_integrator(dt); }

  bool state_admissible(const Vec4& x, double tol = 1e-9) const {
    return position_bounds.contains(x.head<2>(), tol) &&
           std::abs(x(2)) <= v_max + tol && std::abs(x(3)) <= v_max + tol;
  }
};

struct ObjectiveBreakdown {
  double total = 0.0;
  double input_cost = 0.0;    // c1 * sum u'Ru
  double reward_sum = 0.0;    // c2 * sum r(x_k)
  double slack_penalty = 0.0; // c3 * sum eps_i
};

enum class SolveStatus { converged, max_iter, infeasible_start };

/// Planned trajectory with its slack sequence and objective breakdown.
/// slacks[i-1] is eps_i, the softening of all coverage constraints of state i.
struct Trajectory {
  std::vector<Vec4> states;  // x_0..x_N
  std::vector<Vec2> inputs;  // u_0..u_{N-1}
  std::vector<double> slacks;  // eps_1..eps_N
  ObjectiveBreakdown objective;
  SolveStatus status = SolveStatus::converged;
};

struct CoverageResidual {
  int i = 0;
  int j = 0;
  double residual = 0.0;  // ||pos_i - pos_j||^2 - V^2 + eps_i
};

/// Independent double-loop recomputation of all N(N+1)/2 coverage residuals.
/// Non-negative residuals mean the (slack-softened) constraints hold.
inline std::vector<CoverageResidual> coverage_residuals(
    std::span<const Vec4> states, double V, std::span<const double> slacks) {
  if (slacks.size() + 1 != states.size()) {
    throw ConfigError("coverage_residuals: need one slack per state after x_0");
  }
  std::vector<CoverageResidual> out;
  int n = static_cast<int>(states.size());
  out.reserve(static_cast<std::size_t>(n) * (n - 1) / 2);
  for (int i = 1; i < n; ++i) {
    for (int j = 0; j < i; ++j) {
      double d2 = (states[i].head<2>() - states[j].head<2>()).squaredNorm();
      out.push_back({i, j, d2 - V * V + slacks[i - 1]});
    }
  }
  return out;
}

/// J = c1 sum u'Ru - c2 sum r(x_k) + c3 sum eps_i, with the reward evaluated
/// over all N+1 states and slacks over eps_1..eps_N.
inline ObjectiveBreakdown objective(const Trajectory& traj, const RewardField& field,
                                    const MpcConfig& cfg) {
  ObjectiveBreakdown b;
  for (const auto& u : traj.inputs) b.input_cost += u.dot(cfg.R * u);
  b.input_cost *= cfg.c1;
  for (const auto& x : traj.states) b.reward_sum += field.eval(x.head<2>()).value;
  b.reward_sum *= cfg.c2;
  for (double e : traj.slacks) b.slack_penalty += e;
  b.slack_penalty *= cfg.c3;
  b.total = b.input_cost - b.reward_sum + b.slack_penalty;
  return b;
}

/// Augmented-Lagrangian form of the OCP objective over the full variable set
/// (x_1..x_N, u_0..u_{N-1}, eps_1..eps_N); x_0 is a fixed parameter. Coverage
/// constraints (plan-plan pairs and plan-history pairs) and the state box are
/// folded in as AL terms psi(g) = (max(0, lambda + mu g)^2 - lambda^2)/(2 mu)
/// for inequalities written as g <= 0. Input bounds and eps >= 0 are handled
/// by projection in the solver, not here.
class PenalizedObjective {
 public:
  static constexpr double kBoxMargin = 1e-5;

  PenalizedObjective(const RewardField& field, const MpcConfig& cfg, const Vec4& x0,
                     std::vector<Vec2> history)
      : field_(field), cfg_(cfg), x0_(x0), history_(std::move(history)) {
    n_cc_ = static_cast<std::size_t>(cfg.N) * (cfg.N + 1) / 2 +
            history_.size() * static_cast<std::size_t>(cfg.N);
    lambda_cc_.assign(n_cc_, 0.0);
    lambda_box_.assign(static_cast<std::size_t>(cfg.N) * 8, 0.0);
    mu_ = cfg.solver.penalty_init > 0.0 ? cfg.solver.penalty_init
                                        : std::max(1.0, cfg.c3);
  }

  std::size_t cc_count() const { return n_cc_; }
  double penalty() const { return mu_; }
  void set_penalty(double mu) { mu_ = mu; }
  std::vector<double>& cc_multipliers() { return lambda_cc_; }
  std::vector<double>& box_multipliers() { return lambda_box_; }
  const std::vector<Vec2>& history() const { return history_; }

  /// Coverage constraint value g = V^2 - eps_i - ||pos_i - pos_q||^2 for the
  /// c-th constraint; c enumerates plan pairs (i = 1..N, j = 0..i-1) first,
  /// then history pairs (i, h).
  struct Eval {
    double value = 0.0;            // AL merit
    ObjectiveBreakdown objective;  // the underlying true objective
    double max_violation_cc = 0.0;   // coverage constraints (slack-absorbable)
    double max_violation_box = 0.0;  // state box (must end below tolerance)
    double max_violation() const {
      return std::max(max_violation_cc, max_violation_box);
    }
  };

  /// Evaluates the AL merit and, when gradient arrays are given, its exact
  /// analytic gradient w.r.t. x_1..x_N (grad_x[k-1]), u (grad_u[k]) and eps
  /// (grad_eps[i-1]).
  Eval eval(std::span<const Vec4> states, std::span<const Vec2> inputs,
            std::span<const double> eps, std::vector<Vec4>* grad_x = nullptr,
            std::vector<Vec2>* grad_u = nullptr,
            std::vector<double>* grad_eps = nullptr) const {
    const int N = cfg_.N;
    const double V2 = cfg_.V * cfg_.V;
    Eval out;
    if (grad_x) {
      grad_x->assign(static_cast<std::size_t>(N), Vec4::Zero());
      grad_u->assign(static_cast<std::size_t>(N), Vec2::Zero());
      grad_eps->assign(static_cast<std::size_t>(N), 0.0);
    }

    // input cost
    for (int k = 0; k < N; ++k) {
      Vec2 ru = cfg_.R * inputs[k];
      out.objective.input_cost += inputs[k].dot(ru);
      if (grad_u) (*grad_u)[k] += 2.0 * cfg_.c1 * ru;
    }
    out.objective.input_cost *= cfg_.c1;

    // reward along the path (k = 0 term is constant in the decision variables)
    for (int k = 0; k <= N; ++k) {
      auto e = field_.eval_clamped_to_domain(states[k].head<2>());
      out.objective.reward_sum += e.value;
      if (grad_x && k >= 1) (*grad_x)[k - 1].head<2>() -= cfg_.c2 * e.gradient;
    }
    out.objective.reward_sum *= cfg_.c2;

    // slack penalty
    for (int i = 1; i <= N; ++i) {
      out.objective.slack_penalty += eps[i - 1];
      if (grad_eps) (*grad_eps)[i - 1] += cfg_.c3;
    }
    out.objective.slack_penalty *= cfg_.c3;
    out.objective.total = out.objective.input_cost - out.objective.reward_sum +
                          out.objective.slack_penalty;

    double merit = out.objective.total;

    // coverage constraints
    std::size_t c = 0;
    for (int i = 1; i <= N; ++i) {
      for (int j = 0; j < i; ++j, ++c) {
        Vec2 d = states[i].head<2>() - states[j].head<2>();
        double g = V2 - eps[i - 1] - d.squaredNorm();
        double act = std::max(0.0, lambda_cc_[c] + mu_ * g);
        merit += (act * act - lambda_cc_[c] * lambda_cc_[c]) / (2.0 * mu_);
        out.max_violation_cc = std::max(out.max_violation_cc, g);
        if (grad_x && act > 0.0) {
          (*grad_x)[i - 1].head<2>() -= 2.0 * act * d;
          if (j >= 1) (*grad_x)[j - 1].head<2>() += 2.0 * act * d;
          (*grad_eps)[i - 1] -= act;
        }
      }
    }
    for (int i = 1; i <= N; ++i) {
      for (const Vec2& h : history_) {
        Vec2 d = states[i].head<2>() - h;
        double g = V2 - eps[i - 1] - d.squaredNorm();
        double act = std::max(0.0, lambda_cc_[c] + mu_ * g);
        merit += (act * act - lambda_cc_[c] * lambda_cc_[c]) / (2.0 * mu_);
        out.max_violation_cc = std::max(out.max_violation_cc, g);
        if (grad_x && act > 0.0) {
          (*grad_x)[i - 1].head<2>() -= 2.0 * act * d;
          (*grad_eps)[i - 1] -= act;
        }
        ++c;
      }
    }

    // State box: position inside the map rectangle, velocity inside +-v_max.
    // The box is shrunk by a tiny margin so that penalty-converged iterates
    // (feasible only to ~1e-7 against the internal box) are strictly feasible
    // against the public bounds.
    const Rect& pb = cfg_.position_bounds;
    const double m = kBoxMargin;
    const double lo[4] = {pb.xmin + m, pb.ymin + m, -cfg_.v_max + m, -cfg_.v_max + m};
    const double hi[4] = {pb.xmax - m, pb.ymax - m, cfg_.v_max - m, cfg_.v_max - m};
    std::size_t bidx = 0;
    for (int k = 1; k <= N; ++k) {
      for (int d = 0; d < 4; ++d) {
        double g_lo = lo[d] - states[k](d);
        double g_hi = states[k](d) - hi[d];
        double act_lo = std::max(0.0, lambda_box_[bidx] + mu_ * g_lo);
        double act_hi = std::max(0.0, lambda_box_[bidx + 1] + mu_ * g_hi);
        merit += (act_lo * act_lo - lambda_box_[bidx] * lambda_box_[bidx]) / (2.0 * mu_);
        merit += (act_hi * act_hi - lambda_box_[bidx + 1] * lambda_box_[bidx + 1]) /
                 (2.0 * mu_);
        out.max_violation_box = std::max({out.max_violation_box, g_lo, g_hi});
        if (grad_x) (*grad_x)[k - 1](d) += act_hi - act_lo;
        bidx += 2;
      }
    }

    out.value = merit;
    return out;
  }

  /// First-order multiplier update lambda <- max(0, lambda + mu g) at the
  /// given iterate.
  void update_multipliers(std::span<const Vec4> states, std::span<const double> eps) {
    const int N = cfg_.N;
    const double V2 = cfg_.V * cfg_.V;
    std::size_t c = 0;
    for (int i = 1; i <= N; ++i) {
      for (int j = 0; j < i; ++j, ++c) {
        double g = V2 - eps[i - 1] -
                   (states[i].head<2>() - states[j].head<2>()).squaredNorm();
        lambda_cc_[c] = std::max(0.0, lambda_cc_[c] + mu_ * g);
      }
    }
    for (int i = 1; i <= N; ++i) {
      for (const Vec2& h : history_) {
        double g = V2 - eps[i - 1] - (states[i].head<2>() - h).squaredNorm();
        lambda_cc_[c] = std::max(0.0, lambda_cc_[c] + mu_ * g);
        ++c;
      }
    }
    const Rect& pb = cfg_.position_bounds;
    const double m = kBoxMargin;
    const double lo[4] = {pb.xmin + m, pb.ymin + m, -cfg_.v_max + m, -cfg_.v_max + m};
    const double hi[4] = {pb.xmax - m, pb.ymax - m, cfg_.v_max - m, cfg_.v_max - m};
    std::size_t bidx = 0;
    for (int k = 1; k <= N; ++k) {
      for (int d = 0; d < 4; ++d) {
        lambda_box_[bidx] = std::max(0.0, lambda_box_[bidx] + mu_ * (lo[d] - states[k](d)));
        lambda_box_[bidx + 1] =
            std::max(0.0, lambda_box_[bidx + 1] + mu_ * (states[k](d) - hi[d]));
        bidx += 2;
      }
    }
  }

 private:
  const RewardField& field_;
  const MpcConfig& cfg_;
  Vec4 x0_;
  std::vector<Vec2> history_;
  std::size_t n_cc_ = 0;
  std::vector<double> lambda_cc_;
  std::vector<double> lambda_box_;
  double mu_ = 1.0;
};

struct SolveStats {
  int outer_iterations = 0;
  int inner_iterations = 0;
  double time_s = 0.0;
  double J = 0.0;
  std::vector<std::vector<double>> merit_history;  // accepted merits per phase
};

namespace detail {

// Rolls inputs through the dynamics from x0.
inline void rollout(const Vec4& x0, std::span<const Vec2> inputs,
                    const DynamicsModel& model, std::vector<Vec4>& states) {
  states.resize(inputs.size() + 1);
  states[0] = x0;
  for (std::size_t k = 0; k < inputs.size(); ++k)
    states[k + 1] = step_dynamics(states[k], inputs[k], model);
}

// Exact minimizer of the slack block given the states: eps_i covers the worst
// pairwise deficit of state i against earlier plan states and the history.
inline void polish_slacks(std::span<const Vec4> states, std::span<const Vec2> history,
                          double V, std::vector<double>& eps) {
  int N = static_cast<int>(states.size()) - 1;
  eps.assign(static_cast<std::size_t>(N), 0.0);
  double V2 = V * V;
  for (int i = 1; i <= N; ++i) {
    double min_d2 = std::numeric_limits<double>::infinity();
    for (int j = 0; j < i; ++j)
      min_d2 = std::min(min_d2,
                        (states[i].head<2>() - states[j].head<2>()).squaredNorm());
    for (const Vec2& h : history)
      min_d2 = std::min(min_d2, (states[i].head<2>() - h).squaredNorm());
    eps[i - 1] = std::max(0.0, V2 - min_d2);
  }
}

// Condensed AL solve over z = (u, eps) with states eliminated by rollout.
// Projected L-BFGS with Armijo backtracking; deterministic throughout.
class CondensedSolver {
 public:
  CondensedSolver(const RewardField& field, const MpcConfig& cfg, const Vec4& x0,
                  std::vector<Vec2> history)
      : cfg_(cfg),
        model_(cfg.model()),
        x0_(x0),
        pen_(field, cfg, x0, std::move(history)) {}

  // z layout: [u_0 .. u_{N-1}, eps_1 .. eps_N]
  Eigen::VectorXd pack(std::span<const Vec2> u, std::span<const double> eps) const {
    Eigen::VectorXd z(3 * cfg_.N);
    for (int k = 0; k < cfg_.N; ++k) z.segment<2>(2 * k) = u[k];
    for (int i = 0; i < cfg_.N; ++i) z(2 * cfg_.N + i) = eps[i];
    return z;
  }

  void unpack(const Eigen::VectorXd& z, std::vector<Vec2>& u,
              std::vector<double>& eps) const {
    u.resize(cfg_.N);
    eps.resize(cfg_.N);
    for (int k = 0; k < cfg_.N; ++k) u[k] = z.segment<2>(2 * k);
    for (int i = 0; i < cfg_.N; ++i) eps[i] = z(2 * cfg_.N + i);
  }

  Eigen::VectorXd project(Eigen::VectorXd z) const {
    for (int k = 0; k < 2 * cfg_.N; ++k)
      z(k) = std::clamp(z(k), -cfg_.u_max, cfg_.u_max);
    for (int i = 0; i < cfg_.N; ++i)
      z(2 * cfg_.N + i) = std::max(0.0, z(2 * cfg_.N + i));
    return z;
  }

  double merit_and_grad(const Eigen::VectorXd& z, Eigen::VectorXd& grad,
                        PenalizedObjective::Eval* eval_out = nullptr) {
    unpack(z, u_, eps_);
    rollout(x0_, u_, model_, states_);
    auto ev = pen_.eval(states_, u_, eps_, &gx_, &gu_, &ge_);
    // adjoint pass: q_k = dPhi/dx_k accumulated backward through the rollout
    grad.resize(z.size());
    Vec4 q = gx_[cfg_.N - 1];
    for (int k = cfg_.N - 1; k >= 0; --k) {
      grad.segment<2>(2 * k) = gu_[k] + model_.B.transpose() * q;
      if (k >= 1) q = gx_[k - 1] + model_.A.transpose() * q;
    }
    for (int i = 0; i < cfg_.N; ++i) grad(2 * cfg_.N + i) = ge_[i];
    if (eval_out) *eval_out = ev;
    return ev.value;
  }

  double projected_gradient_norm(const Eigen::VectorXd& z,
                                 const Eigen::VectorXd& grad) const {
    return (z - project(z - grad)).lpNorm<Eigen::Infinity>();
  }

  // One AL phase: minimize the merit at fixed multipliers down to grad_tol.
  // Returns the final projected-gradient norm. Appends accepted merit values
  // to *merits when given.
  double inner_minimize(Eigen::VectorXd& z, double grad_tol, int max_iter,
                        int* iters_done, std::vector<double>* merits) {
    const int mem = cfg_.solver.lbfgs_memory;
    std::vector<Eigen::VectorXd> s_hist, y_hist;
    std::vector<double> rho_hist;
    Eigen::VectorXd grad(z.size()), grad_new(z.size());
    double f = merit_and_grad(z, grad);
    if (merits) merits->push_back(f);
    double pg = projected_gradient_norm(z, grad);
    int it = 0;
    while (it < max_iter && pg > grad_tol) {
      // two-loop recursion for the quasi-Newton direction
      Eigen::VectorXd d = -grad;
      int h = static_cast<int>(s_hist.size());
      std::vector<double> alpha(h);
      for (int i = h - 1; i >= 0; --i) {
        alpha[i] = rho_hist[i] * s_hist[i].dot(d);
        d -= alpha[i] * y_hist[i];
      }
      if (h > 0) {
        double gamma = s_hist[h - 1].dot(y_hist[h - 1]) / y_hist[h - 1].squaredNorm();
        d *= gamma;
      }
      for (int i = 0; i < h; ++i) {
        double beta = rho_hist[i] * y_hist[i].dot(d);
        d += (alpha[i] - beta) * s_hist[i];
      }

      bool accepted = false;
      for (int attempt = 0; attempt < 2 && !accepted; ++attempt) {
        if (attempt == 1) {
          d = -grad;  // steepest-descent fallback
          s_hist.clear();
          y_hist.clear();
          rho_hist.clear();
        }
        // cap the first trial move at a sane variable-space distance; with a
        // penalty-stiffened direction the raw unit step can be astronomically
        // long and no fixed halving budget would recover
        double dnorm = d.lpNorm<Eigen::Infinity>();
        double step = std::min(1.0, 10.0 * cfg_.u_max / std::max(1e-300, dnorm));
        for (int ls = 0; ls < 60; ++ls) {
          Eigen::VectorXd z_new = project(z + step * d);
          Eigen::VectorXd dz = z_new - z;
          double gTdz = grad.dot(dz);
          if (dz.lpNorm<Eigen::Infinity>() < 1e-15) break;
          double f_new = merit_and_grad(z_new, grad_new);
          if (f_new <= f + 1e-4 * std::min(0.0, gTdz)) {
            Eigen::VectorXd s = dz;
            Eigen::VectorXd y = grad_new - grad;
            double sy = s.dot(y);
            if (sy > 1e-12 * s.norm() * y.norm()) {
              s_hist.push_back(std::move(s));
              y_hist.push_back(std::move(y));
              rho_hist.push_back(1.0 / sy);
              if (static_cast<int>(s_hist.size()) > mem) {
                s_hist.erase(s_hist.begin());
                y_hist.erase(y_hist.begin());
                rho_hist.erase(rho_hist.begin());
              }
            }
            z = std::move(z_new);
            f = f_new;
            grad = grad_new;
            if (merits) merits->push_back(f);
            accepted = true;
            break;
          }
          step *= 0.5;
        }
      }
      ++it;
      if (!accepted) break;  // line search stalled in both directions
      pg = projected_gradient_norm(z, grad);
    }
    if (iters_done) *iters_done += it;
    return pg;
  }

  Trajectory solve(std::vector<Vec2> u_init, SolveStats* stats) {
    auto t_start = std::chrono::steady_clock::now();
    const auto& opt = cfg_.solver;
    // slack init: exact minimizer given the rolled-out initial inputs
    rollout(x0_, u_init, model_, states_);
    std::vector<double> eps_init;
    polish_slacks(states_, pen_.history(), cfg_.V, eps_init);
    Eigen::VectorXd z = project(pack(u_init, eps_init));

    SolveStats local;
    double viol_prev = std::numeric_limits<double>::infinity();
    double tol_factor = 0.1;
    bool converged = false;
    Eigen::VectorXd grad(z.size());

    // reference scale for the relative stationarity test
    merit_and_grad(z, grad);
    double pg0 = std::max(1.0, projected_gradient_norm(z, grad));
    double kkt_abs = opt.kkt_tol * pg0;

    PenalizedObjective::Eval ev;
    for (int outer = 0; outer < opt.max_outer; ++outer) {
      local.outer_iterations = outer + 1;
      local.merit_history.emplace_back();
      double tol = std::max(kkt_abs, tol_factor * pg0);
      double pg = inner_minimize(z, tol, opt.max_inner, &local.inner_iterations,
                                 &local.merit_history.back());
      tol_factor = std::max(opt.kkt_tol, tol_factor * 0.3);

      merit_and_grad(z, grad, &ev);
      double viol = ev.max_violation();
      if (opt.verbose) {
        std::fprintf(stderr,
                     "  outer %2d  mu %9.3g  pg %10.3e (tol %9.3e)  viol cc %9.3e "
                     "box %9.3e  merit %14.6g\n",
                     outer, pen_.penalty(), pg, tol, ev.max_violation_cc,
                     ev.max_violation_box, ev.value);
      }
      if (viol <= opt.feas_tol && pg <= kkt_abs) {
        converged = true;
        break;
      }
      // Safeguarded update: advance the multipliers only while feasibility is
      // improving; otherwise stiffen the penalty and keep them. Updating on a
      // stalled iterate inflates the multipliers without bound and freezes
      // the inner solver.
      if (viol <= 0.33 * viol_prev || viol <= opt.feas_tol) {
        unpack(z, u_, eps_);
        rollout(x0_, u_, model_, states_);
        pen_.update_multipliers(states_, eps_);
        viol_prev = viol;
      } else {
        pen_.set_penalty(std::min(opt.penalty_max, pen_.penalty() * opt.penalty_growth));
      }
    }

    // Feasibility blitz: coverage violations vanish in the final slack polish,
    // but box violations must end below tolerance on their own.
    merit_and_grad(z, grad, &ev);
    double viol_box_prev = ev.max_violation_box;
    for (int round = 0; round < 16 && ev.max_violation_box > 1e-7; ++round) {
      local.merit_history.emplace_back();
      double pg = inner_minimize(z, kkt_abs, opt.max_inner, &local.inner_iterations,
                                 &local.merit_history.back());
      merit_and_grad(z, grad, &ev);
      if (ev.max_violation_box <= 0.5 * viol_box_prev) {
        unpack(z, u_, eps_);
        rollout(x0_, u_, model_, states_);
        pen_.update_multipliers(states_, eps_);
        viol_box_prev = ev.max_violation_box;
      } else {
        pen_.set_penalty(std::min(opt.penalty_max, pen_.penalty() * 4.0));
      }
      if (opt.verbose) {
        std::fprintf(stderr, "  blitz %2d  mu %9.3g  pg %10.3e  viol box %9.3e\n",
                     round, pen_.penalty(), pg, ev.max_violation_box);
      }
    }

    // final iterate: exact slack polish makes every CC hold with equality or
    // slack, and can only lower the true objective
    unpack(z, u_, eps_);
    rollout(x0_, u_, model_, states_);
    polish_slacks(states_, pen_.history(), cfg_.V, eps_);

    Trajectory traj;
    traj.states = states_;
    traj.inputs = u_;
    traj.slacks = eps_;
    traj.status = converged ? SolveStatus::converged : SolveStatus::max_iter;
    traj.objective = pen_.eval(states_, u_, eps_).objective;
    if (stats) {
      *stats = std::move(local);
      stats->J = traj.objective.total;
      stats->time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                                    t_start)
                          .count();
    }
    return traj;
  }

  const MpcConfig& cfg_;
  DynamicsModel model_;
  Vec4 x0_;
  PenalizedObjective pen_;
  // workspaces
  std::vector<Vec2> u_;
  std::vector<double> eps_;
  std::vector<Vec4> states_;
  std::vector<Vec4> gx_;
  std::vector<Vec2> gu_;
  std::vector<double> ge_;
};

// Deterministic symmetry-breaking pattern for the cold start. At a coincident
// stationary start (all rollout positions equal, flat reward) the exact
// penalized gradient w.r.t. the inputs vanishes; a tiny input spiral moves the
// iterate off that saddle without affecting reproducibility.
inline std::vector<Vec2> cold_start_inputs(const MpcConfig& cfg) {
  std::vector<Vec2> u(cfg.N);
  double kick = 1e-4 * cfg.u_max;
  for (int k = 0; k < cfg.N; ++k) {
    double ang = 2.39996322972865332 * k;  // golden angle
    u[k] = kick * Vec2(std::cos(ang), std::sin(ang));
  }
  return u;
}

// Converts a position-reference guess into a dynamically consistent input
// sequence: one-step-lookahead tracking of the guess positions with box
// clamping. Keeps the rollout glued to the tour polyline even where the raw
// finite-difference inputs of the guess would saturate.
inline std::vector<Vec2> track_guess_inputs(const GuessTrajectory& guess,
                                            const Vec4& x0, const MpcConfig& cfg) {
  DynamicsModel model = cfg.model();
  std::vector<Vec2> u(cfg.N);
  Vec4 x = x0;
  for (int k = 0; k < cfg.N; ++k) {
    Vec2 p_next = x.head<2>() + cfg.dt * x.tail<2>();  // u-independent
    int ref_idx = std::min(k + 2, guess.N);
    Vec2 target_v = (guess.states[ref_idx].head<2>() - p_next) / cfg.dt;
    target_v = target_v.cwiseMax(-cfg.v_max).cwiseMin(cfg.v_max);
    Vec2 uk = (target_v - x.tail<2>()) / cfg.dt;
    u[k] = uk.cwiseMax(-cfg.u_max).cwiseMin(cfg.u_max);
    x = step_dynamics(x, u[k], model);
  }
  return u;
}

}  // namespace detail

/// Solves the finite-horizon OCP from x0. `history` carries already-executed
/// positions that stay excluded by the coverage constraints in closed loop.
/// With no guess the solver cold-starts from the (kicked) stationary default.
inline Trajectory solve_ocp(const RewardField& field, const Vec4& x0,
                            const MpcConfig& cfg,
                            const std::optional<GuessTrajectory>& guess = std::nullopt,
                            std::span<const Vec2> history = {},
                            SolveStats* stats = nullptr) {
  // the margin accepts states from a previous solve's plan, which are
  // feasible against the margin-shrunk internal box
  if (!cfg.state_admissible(x0, 1e-4)) {
    Trajectory traj;
    traj.status = SolveStatus::infeasible_start;
    traj.states = {x0};
    return traj;
  }
  std::vector<Vec2> hist(history.begin(), history.end());
  detail::CondensedSolver solver(field, cfg, x0, std::move(hist));
  std::vector<Vec2> u0 = guess ? detail::track_guess_inputs(*guess, x0, cfg)
                               : detail::cold_start_inputs(cfg);
  return solver.solve(std::move(u0), stats);
}

struct StepStats {
  int inner_iterations = 0;
  int outer_iterations = 0;
  double time_s = 0.0;
  double J = 0.0;
};

/// Executed closed-loop trajectory and the per-step solver stats.
struct ClosedLoopResult {
  std::vector<Vec4> states;          // executed x_0..x_steps
  std::vector<Vec2> inputs;          // applied u_0..u_{steps-1}
  std::vector<double> applied_slacks;  // eps_1 of each per-step solve
  std::vector<StepStats> step_stats;
};

/// Receding horizon: solve, apply the first input, advance, shift the
/// previous solution (repeating the last input) as the next guess. Executed
/// positions are added to the coverage constraint set so already-visited
/// rewards stay excluded. The first solve uses `initial_guess` (warm) or the
/// cold-start default (nullopt).
inline ClosedLoopResult closed_loop(const RewardField& field, const Vec4& x0,
                                    const MpcConfig& cfg, int steps,
                                    const std::optional<GuessTrajectory>& initial_guess) {
  if (steps < 1) throw ConfigError("closed_loop: steps must be >= 1");
  ClosedLoopResult result;
  result.states.push_back(x0);
  std::vector<Vec2> history;
  Vec4 x = x0;
  std::vector<Vec2> u_shift;
  std::vector<double> eps_shift;
  bool have_shift = false;

  for (int t = 0; t < steps; ++t) {
    SolveStats st;
    Trajectory traj;
    if (!have_shift) {
      traj = solve_ocp(field, x, cfg, initial_guess, history, &st);
    } else {
      if (!cfg.state_admissible(x, 1e-4)) {
        throw SolverError("closed_loop: state left the admissible set at step " +
                          std::to_string(t));
      }
      detail::CondensedSolver solver(field, cfg, x, history);
      traj = solver.solve(u_shift, &st);
    }
    if (traj.status == SolveStatus::infeasible_start) {
      throw SolverError("closed_loop: infeasible start state at step " +
                        std::to_string(t));
    }
    // shift: drop u_0, repeat the last input
    u_shift.assign(traj.inputs.begin() + 1, traj.inputs.end());
    u_shift.push_back(traj.inputs.back());
    have_shift = true;

    history.push_back(x.head<2>());
    result.inputs.push_back(traj.inputs[0]);
    result.applied_slacks.push_back(traj.slacks[0]);
    x = step_dynamics(x, traj.inputs[0], cfg.model());
    result.states.push_back(x);
    result.step_stats.push_back(
        {st.inner_iterations, st.outer_iterations, st.time_s, st.J});
  }
  return result;
}

}  // namespace wcpp
