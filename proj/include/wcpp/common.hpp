#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>

namespace wcpp {

using Vec2 = Eigen::Vector2d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat4 = Eigen::Matrix4d;

/// Raised when an input file or stream does not match its documented format.
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Raised for invalid scenario or solver configuration.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Raised when a pipeline stage cannot produce a result.
struct SolverError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Axis-aligned rectangle in world coordinates (meters).
struct Rect {
  double xmin = 0.0;
  double ymin = 0.0;
  double xmax = 0.0;
  double ymax = 0.0;

  double width() const { return xmax - xmin; }
  double height() const { return ymax - ymin; }
  double diagonal() const { return std::hypot(width(), height()); }

  bool contains(const Vec2& p, double tol = 0.0) const {
    return p.x() >= xmin - tol && p.x() <= xmax + tol && p.y() >= ymin - tol &&
           p.y() <= ymax + tol;
  }

  Vec2 clamp(const Vec2& p) const {
    return {std::clamp(p.x(), xmin, xmax), std::clamp(p.y(), ymin, ymax)};
  }
};

/// Shortest round-trip decimal representation of a double.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s, const char* what) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw ParseError(std::string("invalid number for ") + what + ": '" +
                     std::string(s) + "'");
  }
  return v;
}

/// Deterministic RNG used everywhere randomness is needed. std::mt19937_64 has
/// a fully specified sequence; the uniform mapping avoids the
/// implementation-defined std distributions so results are reproducible.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  /// Uniform in [0, 1).
  double uniform() { return std::ldexp(static_cast<double>(gen_() >> 11), -53); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  int uniform_int(int n) {
    int k = static_cast<int>(uniform() * n);
    return k < n ? k : n - 1;
  }

  Vec2 point_in(const Rect& r) {
    return {uniform(r.xmin, r.xmax), uniform(r.ymin, r.ymax)};
  }

  std::uint64_t raw() { return gen_(); }

 private:
  std::mt19937_64 gen_;
};

}  // namespace wcpp
