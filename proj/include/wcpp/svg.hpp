#pragma once

#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "wcpp/common.hpp"
#include "wcpp/grid_map.hpp"

namespace wcpp {

/// Styling for the SVG rendering of a scenario. The world-to-canvas transform
/// is affine with preserved aspect ratio; the heatmap is rasterized at grid
/// resolution.
struct RenderSpec {
  int canvas_px = 800;  // width; height follows the map aspect ratio
  double keypoint_radius_px = 5.0;
  double x0_radius_px = 7.0;
  double tour_width_px = 2.5;
  double path_width_px = 2.0;
  std::string keypoint_fill = "#ffffff";
  std::string keypoint_stroke = "#1a1a1a";
  std::string tour_color = "#ff8c00";   // orange tour, as in the figures
  std::string guess_color = "#9467bd";
  std::string executed_color = "#1f77b4";
  std::string x0_color = "#d62728";     // red start marker
};

/// Drawable layers. Empty containers are simply skipped.
struct Overlays {
  std::vector<Vec2> keypoints;
  std::vector<Vec2> tour;      // polyline through the key points, from x0
  std::vector<Vec2> guess;     // discretized warm-start positions
  std::vector<Vec2> executed;  // closed-loop executed positions
  std::optional<Vec2> x0;
};

namespace detail {

// 9-anchor viridis ramp, linearly interpolated.
inline std::string viridis(double t) {
  static const int anchors[9][3] = {{68, 1, 84},    {71, 44, 122},  {59, 81, 139},
                                    {44, 113, 142}, {33, 144, 141}, {39, 173, 129},
                                    {92, 200, 99},  {170, 220, 50}, {253, 231, 37}};
  t = std::clamp(t, 0.0, 1.0);
  double pos = t * 8.0;
  int lo = std::min(7, static_cast<int>(pos));
  double f = pos - lo;
  char buf[8];
  std::snprintf(buf, sizeof(buf), "#%02x%02x%02x",
                static_cast<int>(std::lround(anchors[lo][0] + f * (anchors[lo + 1][0] - anchors[lo][0]))),
                static_cast<int>(std::lround(anchors[lo][1] + f * (anchors[lo + 1][1] - anchors[lo][1]))),
                static_cast<int>(std::lround(anchors[lo][2] + f * (anchors[lo + 1][2] - anchors[lo][2]))));
  return buf;
}

}  // namespace detail

/// Renders heatmap plus overlays as an SVG 1.1 document. Pure function of its
/// inputs: identical inputs give identical bytes.
inline std::string render_svg(const GridMap& map, const Overlays& overlays,
                              const RenderSpec& spec = {}) {
  Rect ext = map.extent();
  auto check_inside = [&](const std::vector<Vec2>& pts, const char* layer) {
    for (const auto& p : pts) {
      if (!ext.contains(p, 1e-6)) {
        throw ConfigError(std::string("render_svg: ") + layer +
                          " overlay point outside the map extent");
      }
    }
  };
  check_inside(overlays.keypoints, "keypoints");
  check_inside(overlays.tour, "tour");
  check_inside(overlays.guess, "guess");
  check_inside(overlays.executed, "executed");
  if (overlays.x0 && !ext.contains(*overlays.x0, 1e-6)) {
    throw ConfigError("render_svg: x0 overlay outside the map extent");
  }

  double scale = spec.canvas_px / ext.width();
  double w_px = ext.width() * scale;
  double h_px = ext.height() * scale;
  auto tx = [&](const Vec2& p) { return (p.x() - ext.xmin) * scale; };
  auto ty = [&](const Vec2& p) { return (ext.ymax - p.y()) * scale; };

  std::ostringstream svg;
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << format_double(w_px)
      << "\" height=\"" << format_double(h_px) << "\" viewBox=\"0 0 "
      << format_double(w_px) << " " << format_double(h_px) << "\">\n";

  double vmax = map.values.maxCoeff();
  double cell_px = map.cell_size_m * scale;
  svg << "<g shape-rendering=\"crispEdges\">\n";
  for (int r = 0; r < map.rows; ++r) {
    for (int c = 0; c < map.cols; ++c) {
      double t = vmax > 0 ? map.values(r, c) / vmax : 0.0;
      Vec2 corner(c * map.cell_size_m, (r + 1) * map.cell_size_m);
      svg << "<rect x=\"" << format_double(tx(corner)) << "\" y=\""
          << format_double(ty(corner)) << "\" width=\"" << format_double(cell_px)
          << "\" height=\"" << format_double(cell_px) << "\" fill=\""
          << detail::viridis(t) << "\"/>\n";
    }
  }
  svg << "</g>\n";

  auto polyline = [&](const std::vector<Vec2>& pts, const std::string& color,
                      double width, const char* dash) {
    if (pts.size() < 2) return;
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\""
        << format_double(width) << "\"";
    if (dash) svg << " stroke-dasharray=\"" << dash << "\"";
    svg << " points=\"";
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (i) svg << ' ';
      svg << format_double(tx(pts[i])) << ',' << format_double(ty(pts[i]));
    }
    svg << "\"/>\n";
  };
  polyline(overlays.tour, spec.tour_color, spec.tour_width_px, nullptr);
  polyline(overlays.guess, spec.guess_color, spec.path_width_px, "6,4");
  polyline(overlays.executed, spec.executed_color, spec.path_width_px, nullptr);

  for (const auto& p : overlays.keypoints) {
    svg << "<circle cx=\"" << format_double(tx(p)) << "\" cy=\""
        << format_double(ty(p)) << "\" r=\"" << format_double(spec.keypoint_radius_px)
        << "\" fill=\"" << spec.keypoint_fill << "\" stroke=\""
        << spec.keypoint_stroke << "\"/>\n";
  }
  if (overlays.x0) {
    svg << "<circle cx=\"" << format_double(tx(*overlays.x0)) << "\" cy=\""
        << format_double(ty(*overlays.x0)) << "\" r=\""
        << format_double(spec.x0_radius_px) << "\" fill=\"" << spec.x0_color
        << "\"/>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace wcpp
