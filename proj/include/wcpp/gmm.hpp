#pragma once

#include <span>
#include <vector>

#include "wcpp/common.hpp"
#include "wcpp/grid_map.hpp"
#include "wcpp/reward_field.hpp"

namespace wcpp {

/// Gaussian mixture fit to the reward mass. Weights sum to one, every
/// covariance keeps its smallest eigenvalue at or above sigma_min^2, and
/// ll_history records the weighted log-likelihood once per EM cycle.
struct GmmModel {
  std::vector<GaussComponent> components;
  int n = 0;
  double log_likelihood = 0.0;
  int iterations_used = 0;
  std::vector<double> ll_history;
  double sigma_min = 0.0;
};

/// Selected key points (component means), ordered by descending score.
struct KeyPointSet {
  std::vector<Vec2> points;
  int m = 0;
  std::vector<double> source_scores;
};

namespace detail {

struct Gauss2Log {
  Mat2 inv;
  double log_norm;  // -log(2*pi) - 0.5*log(det)
};

inline Gauss2Log precompute_log(const Mat2& cov) {
  double det = cov(0, 0) * cov(1, 1) - cov(0, 1) * cov(1, 0);
  Gauss2Log g;
  g.inv << cov(1, 1) / det, -cov(0, 1) / det, -cov(1, 0) / det, cov(0, 0) / det;
  g.log_norm = -std::log(2.0 * M_PI) - 0.5 * std::log(det);
  return g;
}

inline double log_density(const Gauss2Log& g, const Vec2& d) {
  return g.log_norm - 0.5 * d.dot(g.inv * d);
}

// Floors the eigenvalues of a symmetric PSD matrix at floor2. Exact EM
// updates stay untouched while no eigenvalue is degenerate, which keeps the
// log-likelihood monotone; a plain diagonal addition does not.
inline Mat2 floor_eigenvalues(const Mat2& m, double floor2) {
  Eigen::SelfAdjointEigenSolver<Mat2> es(m);
  if (es.eigenvalues().minCoeff() >= floor2) return m;
  Vec2 ev = es.eigenvalues().cwiseMax(floor2);
  Mat2 out = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
  return 0.5 * (out + out.transpose());
}

// Weighted mean and covariance of the mass points (weights assumed normalized).
inline void weighted_moments(std::span<const MassPoint> pts, Vec2& mean, Mat2& cov) {
  mean = Vec2::Zero();
  for (const auto& p : pts) mean += p.weight * p.position;
  cov = Mat2::Zero();
  for (const auto& p : pts) {
    Vec2 d = p.position - mean;
    cov += p.weight * (d * d.transpose());
  }
}

// Weighted k-means++ seeding: first center by mass, later centers by
// mass times squared distance to the nearest chosen center.
inline std::vector<Vec2> kmeanspp_centers(std::span<const MassPoint> pts, int n,
                                          Rng& rng) {
  std::size_t count = pts.size();
  auto sample = [&](const std::vector<double>& score) -> std::size_t {
    double total = 0.0;
    for (double s : score) total += s;
    if (total <= 0.0) {
      for (std::size_t i = 0; i < count; ++i)
        if (score[i] >= 0.0) return i;  // all-zero fallback: first index
      return 0;
    }
    double r = rng.uniform() * total;
    double cum = 0.0;
    for (std::size_t i = 0; i < count; ++i) {
      cum += score[i];
      if (r < cum) return i;
    }
    return count - 1;
  };

  std::vector<double> score(count);
  for (std::size_t i = 0; i < count; ++i) score[i] = pts[i].weight;
  std::vector<Vec2> centers;
  centers.push_back(pts[sample(score)].position);
  std::vector<double> d2(count);
  for (std::size_t i = 0; i < count; ++i)
    d2[i] = (pts[i].position - centers[0]).squaredNorm();
  while (static_cast<int>(centers.size()) < n) {
    for (std::size_t i = 0; i < count; ++i) score[i] = pts[i].weight * d2[i];
    Vec2 c = pts[sample(score)].position;
    centers.push_back(c);
    for (std::size_t i = 0; i < count; ++i)
      d2[i] = std::min(d2[i], (pts[i].position - c).squaredNorm());
  }
  return centers;
}

}  // namespace detail

/// Weighted EM on the mass points. Deterministic for a fixed seed; every M
/// step floors the covariance eigenvalues at sigma_min^2 to prevent collapse
/// onto single cells.
inline GmmModel fit_gmm(std::span<const MassPoint> mass_points, int n,
                        std::uint64_t seed, double sigma_min, int max_iter = 200,
                        double tol = 1e-7) {
  if (n < 1) throw ConfigError("fit_gmm: n must be >= 1");
  double total_w = 0.0;
  for (const auto& p : mass_points) total_w += p.weight;
  if (mass_points.empty() || !(total_w > 0.0)) {
    throw ConfigError("fit_gmm: mass points have no positive total weight");
  }
  std::vector<Vec2> distinct;
  for (const auto& p : mass_points) {
    bool seen = false;
    for (const auto& q : distinct)
      if (q == p.position) {
        seen = true;
        break;
      }
    if (!seen) distinct.push_back(p.position);
    if (static_cast<int>(distinct.size()) >= n) break;
  }
  if (static_cast<int>(distinct.size()) < n) {
    throw ConfigError("fit_gmm: n = " + std::to_string(n) +
                      " exceeds the number of distinct mass points");
  }

  std::size_t count = mass_points.size();
  GmmModel model;
  model.n = n;
  model.sigma_min = sigma_min;
  double floor2 = sigma_min * sigma_min;

  // Init: k-means++ means, shared covariance = overall weighted cov / n.
  Rng rng(seed);
  auto centers = detail::kmeanspp_centers(mass_points, n, rng);
  Vec2 overall_mean;
  Mat2 overall_cov;
  detail::weighted_moments(mass_points, overall_mean, overall_cov);
  Mat2 init_cov =
      detail::floor_eigenvalues(overall_cov / static_cast<double>(n), floor2);
  model.components.resize(n);
  for (int k = 0; k < n; ++k) {
    model.components[k] = {1.0 / n, centers[k], init_cov};
  }

  std::vector<detail::Gauss2Log> pre(n);
  std::vector<double> log_resp(static_cast<std::size_t>(n));
  Eigen::MatrixXd resp(count, n);
  double prev_ll = -std::numeric_limits<double>::infinity();

  for (int iter = 0; iter < max_iter; ++iter) {
    // E step in log space; also accumulates the weighted log-likelihood of the
    // current parameters.
    for (int k = 0; k < n; ++k) pre[k] = detail::precompute_log(model.components[k].cov);
    double ll = 0.0;
    for (std::size_t i = 0; i < count; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (int k = 0; k < n; ++k) {
        log_resp[k] = std::log(model.components[k].weight) +
                      detail::log_density(pre[k], mass_points[i].position -
                                                      model.components[k].mean);
        mx = std::max(mx, log_resp[k]);
      }
      double sum = 0.0;
      for (int k = 0; k < n; ++k) sum += std::exp(log_resp[k] - mx);
      double log_px = mx + std::log(sum);
      ll += mass_points[i].weight * log_px;
      for (int k = 0; k < n; ++k) resp(i, k) = std::exp(log_resp[k] - log_px);
    }
    model.ll_history.push_back(ll);
    model.log_likelihood = ll;
    model.iterations_used = iter + 1;
    if (iter > 0 && std::abs(ll - prev_ll) < tol * (std::abs(prev_ll) + 1e-12)) break;
    prev_ll = ll;

    // M step with point weights; covariance eigenvalues floored at sigma_min^2.
    for (int k = 0; k < n; ++k) {
      double nk = 0.0;
      Vec2 mu = Vec2::Zero();
      for (std::size_t i = 0; i < count; ++i) {
        double g = mass_points[i].weight * resp(i, k);
        nk += g;
        mu += g * mass_points[i].position;
      }
      auto& comp = model.components[k];
      if (nk < 1e-12) {  // starved component: keep its location, zero weight
        comp.weight = nk / total_w;
        continue;
      }
      mu /= nk;
      Mat2 scatter = Mat2::Zero();
      for (std::size_t i = 0; i < count; ++i) {
        double g = mass_points[i].weight * resp(i, k);
        Vec2 d = mass_points[i].position - mu;
        scatter += g * (d * d.transpose());
      }
      scatter /= nk;
      scatter = 0.5 * (scatter + scatter.transpose()).eval();
      comp.weight = nk / total_w;
      comp.mean = mu;
      comp.cov = detail::floor_eigenvalues(scatter, floor2);
    }
  }
  return model;
}

/// Picks the m components whose means sit on the highest reward, score =
/// field value at the mean. Ties break toward larger weight, then lower index.
inline KeyPointSet select_key_points(const GmmModel& model, int m,
                                     const RewardField& field) {
  if (m < 1 || m > model.n) {
    throw ConfigError("select_key_points: need 1 <= m <= n, got m = " +
                      std::to_string(m) + ", n = " + std::to_string(model.n));
  }
  struct Scored {
    double score;
    double weight;
    int index;
  };
  std::vector<Scored> scored;
  scored.reserve(model.components.size());
  for (int k = 0; k < model.n; ++k) {
    const auto& c = model.components[k];
    scored.push_back({field.eval(c.mean).value, c.weight, k});
  }
  std::sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.weight != b.weight) return a.weight > b.weight;
    return a.index < b.index;
  });
  KeyPointSet out;
  out.m = m;
  for (int i = 0; i < m; ++i) {
    out.points.push_back(model.components[scored[i].index].mean);
    out.source_scores.push_back(scored[i].score);
  }
  return out;
}

}  // namespace wcpp
