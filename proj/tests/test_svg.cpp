#include <catch2/catch_amalgamated.hpp>

#include "wcpp/svg.hpp"

using namespace wcpp;

namespace {

GridMap demo_map() {
  GridMap m;
  m.cell_size_m = 10.0;
  m.rows = m.cols = 8;
  m.width_m = m.height_m = 80.0;
  m.values.resize(8, 8);
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c) m.values(r, c) = r * 8 + c;
  return m;
}

}  // namespace

TEST_CASE("svg: heatmap-only document is valid and complete") {
  auto m = demo_map();
  std::string svg = render_svg(m, Overlays{});
  CHECK(svg.rfind("<?xml", 0) == 0);
  CHECK(svg.find("<svg xmlns=\"http://www.w3.org/2000/svg\"") != std::string::npos);
  CHECK(svg.find("</svg>") != std::string::npos);
  // one rect per cell
  std::size_t rects = 0, pos = 0;
  while ((pos = svg.find("<rect", pos)) != std::string::npos) {
    ++rects;
    pos += 5;
  }
  CHECK(rects == 64);
  CHECK(svg.find("<polyline") == std::string::npos);
}

TEST_CASE("svg: x0 overlay renders one red marker") {
  auto m = demo_map();
  Overlays ov;
  ov.x0 = Vec2(40, 40);
  std::string svg = render_svg(m, ov);
  CHECK(svg.find("#d62728") != std::string::npos);
  std::size_t circles = 0, pos = 0;
  while ((pos = svg.find("<circle", pos)) != std::string::npos) {
    ++circles;
    pos += 7;
  }
  CHECK(circles == 1);
}

TEST_CASE("svg: byte-identical output for identical inputs") {
  auto m = demo_map();
  Overlays ov;
  ov.keypoints = {Vec2(15, 25), Vec2(60, 70)};
  ov.tour = {Vec2(5, 5), Vec2(15, 25), Vec2(60, 70)};
  ov.executed = {Vec2(5, 5), Vec2(9, 8), Vec2(14, 13)};
  ov.x0 = Vec2(5, 5);
  CHECK(render_svg(m, ov) == render_svg(m, ov));
}

TEST_CASE("svg: overlay outside the map extent is rejected") {
  auto m = demo_map();
  Overlays ov;
  ov.keypoints = {Vec2(100, 10)};
  CHECK_THROWS_AS(render_svg(m, ov), ConfigError);
  Overlays ov2;
  ov2.x0 = Vec2(-5, 0);
  CHECK_THROWS_AS(render_svg(m, ov2), ConfigError);
}

TEST_CASE("svg: aspect ratio is preserved for non-square maps") {
  GridMap m;
  m.cell_size_m = 10.0;
  m.rows = 4;
  m.cols = 8;
  m.width_m = 80.0;
  m.height_m = 40.0;
  m.values = Eigen::MatrixXd::Constant(4, 8, 1.0);
  RenderSpec spec;
  spec.canvas_px = 400;
  std::string svg = render_svg(m, Overlays{}, spec);
  CHECK(svg.find("width=\"400\" height=\"200\"") != std::string::npos);
}
