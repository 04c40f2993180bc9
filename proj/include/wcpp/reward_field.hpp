#pragma once

#include <array>
#include <variant>
#include <vector>

#include "wcpp/common.hpp"
#include "wcpp/grid_map.hpp"

namespace wcpp {

/// Value and spatial gradient of a reward field at one point.
struct FieldEval {
  double value = 0.0;
  Vec2 gradient = Vec2::Zero();
};

/// One weighted Gaussian component (2-D).
struct GaussComponent {
  double weight = 0.0;
  Vec2 mean = Vec2::Zero();
  Mat2 cov = Mat2::Identity();
};

namespace detail {

// Cubic B-spline basis pieces on [0,1) and their parameter derivatives.
inline void bspline_basis(double t, std::array<double, 4>& b,
                          std::array<double, 4>& db) {
  double t2 = t * t, t3 = t2 * t;
  double omt = 1.0 - t;
  b[0] = omt * omt * omt / 6.0;
  b[1] = (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0;
  b[2] = (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0;
  b[3] = t3 / 6.0;
  db[0] = -0.5 * omt * omt;
  db[1] = 1.5 * t2 - 2.0 * t;
  db[2] = -1.5 * t2 + t + 0.5;
  db[3] = 0.5 * t2;
}

// Interpolating cubic B-spline coefficients for uniformly spaced data with
// natural end conditions (second derivative zero at the first and last knot).
// Output length n + 4: two linear-extension coefficients are appended on each
// side so the spline extends C2 and linearly one cell beyond the end knots.
inline std::vector<double> natural_bspline_coeffs(const std::vector<double>& y) {
  int n = static_cast<int>(y.size());
  // Natural BC makes c_0 = y_0 and c_{n-1} = y_{n-1}; interior coefficients
  // solve the tridiagonal system c_{i-1} + 4 c_i + c_{i+1} = 6 y_i.
  std::vector<double> c(static_cast<std::size_t>(n));
  c[0] = y[0];
  c[n - 1] = y[n - 1];
  int m = n - 2;
  if (m > 0) {
    std::vector<double> diag(m, 4.0), rhs(m);
    for (int i = 0; i < m; ++i) rhs[i] = 6.0 * y[i + 1];
    rhs[0] -= c[0];
    rhs[m - 1] -= c[n - 1];
    for (int i = 1; i < m; ++i) {  // Thomas sweep, sub/super diagonals = 1
      double w = 1.0 / diag[i - 1];
      diag[i] -= w;
      rhs[i] -= w * rhs[i - 1];
    }
    c[m] = rhs[m - 1] / diag[m - 1];
    for (int i = m - 2; i >= 0; --i) c[i + 1] = (rhs[i] - c[i + 2]) / diag[i];
  }
  std::vector<double> ext(static_cast<std::size_t>(n) + 4);
  for (int i = 0; i < n; ++i) ext[i + 2] = c[i];
  ext[1] = 2.0 * ext[2] - ext[3];
  ext[0] = 2.0 * ext[1] - ext[2];
  ext[n + 2] = 2.0 * ext[n + 1] - ext[n];
  ext[n + 3] = 2.0 * ext[n + 2] - ext[n + 1];
  return ext;
}

}  // namespace detail

/// Bicubic interpolating spline over a grid map. C2 in the domain interior;
/// reproduces cell values at cell centers. Negative undershoot between knots
/// is clamped to zero at evaluation time, with zero gradient in the clamped
/// region, keeping the field non-negative for the optimizer.
class SplineField {
 public:
  explicit SplineField(const GridMap& map)
      : h_(map.cell_size_m), rows_(map.rows), cols_(map.cols) {
    if (map.rows < 4 || map.cols < 4) {
      throw ConfigError("spline field needs a grid of at least 4x4 cells, got " +
                        std::to_string(map.rows) + "x" + std::to_string(map.cols));
    }
    // Tensor-product fit: 1-D solves along x for each data row, then along y
    // for each extended coefficient column.
    Eigen::MatrixXd mid(rows_, cols_ + 4);
    std::vector<double> scratch;
    for (int r = 0; r < rows_; ++r) {
      scratch.assign(map.values.row(r).begin(), map.values.row(r).end());
      auto ext = detail::natural_bspline_coeffs(scratch);
      for (int s = 0; s < cols_ + 4; ++s) mid(r, s) = ext[s];
    }
    coeff_.resize(rows_ + 4, cols_ + 4);
    for (int s = 0; s < cols_ + 4; ++s) {
      scratch.assign(mid.col(s).begin(), mid.col(s).end());
      auto ext = detail::natural_bspline_coeffs(scratch);
      for (int r = 0; r < rows_ + 4; ++r) coeff_(r, s) = ext[r];
    }
  }

  /// Unclamped spline value and gradient.
  FieldEval eval_raw(const Vec2& p) const {
    // Knot-space coordinates: knot j sits at cell center (j + 0.5) * h.
    double tx = p.x() / h_ - 0.5;
    double ty = p.y() / h_ - 0.5;
    int ix = std::clamp(static_cast<int>(std::floor(tx)), -1, cols_ - 1);
    int iy = std::clamp(static_cast<int>(std::floor(ty)), -1, rows_ - 1);
    double u = tx - ix, v = ty - iy;
    std::array<double, 4> bx, dbx, by, dby;
    detail::bspline_basis(u, bx, dbx);
    detail::bspline_basis(v, by, dby);
    double val = 0.0, gx = 0.0, gy = 0.0;
    for (int r = 0; r < 4; ++r) {
      double sv = 0.0, sd = 0.0;
      for (int s = 0; s < 4; ++s) {
        // coefficient c_j lives at index j + 2; interval i uses c_{i-1..i+2}
        double c = coeff_(iy + r + 1, ix + s + 1);
        sv += bx[s] * c;
        sd += dbx[s] * c;
      }
      val += by[r] * sv;
      gx += by[r] * sd;
      gy += dby[r] * sv;
    }
    return {val, Vec2(gx / h_, gy / h_)};
  }

  /// Clamped evaluation: undershoot below zero reports value 0, gradient 0.
  FieldEval eval(const Vec2& p) const {
    FieldEval e = eval_raw(p);
    if (e.value < 0.0) return {0.0, Vec2::Zero()};
    return e;
  }

  double cell_size() const { return h_; }

 private:
  double h_;
  int rows_, cols_;
  Eigen::MatrixXd coeff_;  // (rows+4) x (cols+4), index = coeff index + 2
};

/// Analytic sum of weighted 2-D Gaussians with exact gradient.
class GaussianSumField {
 public:
  explicit GaussianSumField(std::vector<GaussComponent> components)
      : comps_(std::move(components)) {
    pre_.reserve(comps_.size());
    for (std::size_t k = 0; k < comps_.size(); ++k) {
      const auto& c = comps_[k];
      if (!(c.weight > 0.0)) {
        throw ConfigError("gaussian component " + std::to_string(k) +
                          ": weight must be > 0");
      }
      if (std::abs(c.cov(0, 1) - c.cov(1, 0)) > 1e-12 * (1.0 + std::abs(c.cov(0, 1)))) {
        throw ConfigError("gaussian component " + std::to_string(k) +
                          ": covariance not symmetric");
      }
      double det = c.cov(0, 0) * c.cov(1, 1) - c.cov(0, 1) * c.cov(1, 0);
      if (!(c.cov(0, 0) > 0.0) || !(det > 0.0)) {
        throw ConfigError("gaussian component " + std::to_string(k) +
                          ": covariance not positive definite");
      }
      Pre p;
      p.inv << c.cov(1, 1) / det, -c.cov(0, 1) / det, -c.cov(1, 0) / det,
          c.cov(0, 0) / det;
      p.norm = c.weight / (2.0 * M_PI * std::sqrt(det));
      pre_.push_back(p);
    }
  }

  FieldEval eval(const Vec2& p) const {
    FieldEval out;
    for (std::size_t k = 0; k < comps_.size(); ++k) {
      Vec2 d = p - comps_[k].mean;
      Vec2 sid = pre_[k].inv * d;
      double e = pre_[k].norm * std::exp(-0.5 * d.dot(sid));
      out.value += e;
      out.gradient -= e * sid;
    }
    return out;
  }

  const std::vector<GaussComponent>& components() const { return comps_; }

 private:
  struct Pre {
    Mat2 inv;
    double norm;
  };
  std::vector<GaussComponent> comps_;
  std::vector<Pre> pre_;
};

/// Continuously twice-differentiable reward r over a rectangular domain.
/// Immutable after construction; safe for concurrent read-only evaluation.
class RewardField {
 public:
  RewardField(Rect domain, double total_mass, SplineField spline)
      : domain_(domain), total_mass_(total_mass), impl_(std::move(spline)) {}
  RewardField(Rect domain, double total_mass, GaussianSumField gaussians)
      : domain_(domain), total_mass_(total_mass), impl_(std::move(gaussians)) {}

  /// Value and gradient at p. Throws std::domain_error outside the domain:
  /// the MPC keeps states inside, so an out-of-domain query is a solver bug.
  FieldEval eval(const Vec2& p) const {
    if (!domain_.contains(p, 1e-9)) {
      throw std::domain_error("reward field evaluated outside domain at (" +
                              format_double(p.x()) + ", " + format_double(p.y()) +
                              ")");
    }
    return std::visit([&](const auto& f) { return f.eval(p); }, impl_);
  }

  /// Evaluation composed with projection onto the domain rectangle; gradient
  /// components along clamped axes are zeroed (chain rule through the
  /// projection). Used by the solver whose iterates may leave the box before
  /// the bound penalties pull them back.
  FieldEval eval_clamped_to_domain(const Vec2& p) const {
    Vec2 q = domain_.clamp(p);
    FieldEval e = std::visit([&](const auto& f) { return f.eval(q); }, impl_);
    if (q.x() != p.x()) e.gradient.x() = 0.0;
    if (q.y() != p.y()) e.gradient.y() = 0.0;
    return e;
  }

  const Rect& domain() const { return domain_; }
  double total_mass() const { return total_mass_; }

  const SplineField* spline() const { return std::get_if<SplineField>(&impl_); }
  const GaussianSumField* gaussians() const {
    return std::get_if<GaussianSumField>(&impl_);
  }

 private:
  Rect domain_;
  double total_mass_;
  std::variant<SplineField, GaussianSumField> impl_;
};

/// Interpolating bicubic spline field over the map extent. The reported total
/// mass is a midpoint quadrature of the clamped spline on a 4x-refined grid,
/// in cell-mass units (divided by cell area), comparable to the grid's value
/// sum.
inline RewardField build_spline_field(const GridMap& map) {
  SplineField spline(map);
  double h = map.cell_size_m;
  double quad = 0.0;
  for (int r = 0; r < 4 * map.rows; ++r) {
    for (int c = 0; c < 4 * map.cols; ++c) {
      Vec2 p((c + 0.5) * h / 4.0, (r + 0.5) * h / 4.0);
      quad += spline.eval(p).value;
    }
  }
  return RewardField(map.extent(), quad / 16.0, std::move(spline));
}

/// Analytic Gaussian-sum field; total mass is the sum of component weights
/// (the exact integral over the plane).
inline RewardField build_gaussian_field(std::vector<GaussComponent> components,
                                        const Rect& domain) {
  double mass = 0.0;
  for (const auto& c : components) mass += c.weight;
  return RewardField(domain, mass, GaussianSumField(std::move(components)));
}

}  // namespace wcpp
