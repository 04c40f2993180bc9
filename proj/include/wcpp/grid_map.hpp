#pragma once

#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "wcpp/common.hpp"

namespace wcpp {

/// Discrete probability map on a regular grid. Values are non-negative mass
/// per cell. World frame: origin at the lower-left map corner, x east, y
/// north, meters. Row 0 of `values` is the bottom row; the text file format
/// stores the top row first.
struct GridMap {
  double width_m = 0.0;
  double height_m = 0.0;
  double cell_size_m = 0.0;
  int rows = 0;
  int cols = 0;
  Eigen::MatrixXd values;  // rows x cols, row 0 = bottom (y = cell/2)

  Vec2 cell_center(int row, int col) const {
    return {(col + 0.5) * cell_size_m, (row + 0.5) * cell_size_m};
  }

  Rect extent() const { return Rect{0.0, 0.0, width_m, height_m}; }

  double total_value() const { return values.sum(); }
};

namespace detail {

inline int checked_cell_count(double length_m, double cell_m, const char* axis) {
  double q = length_m / cell_m;
  double r = std::round(q);
  if (r < 1.0 || std::abs(q - r) > 1e-9 * std::max(1.0, q)) {
    throw ParseError(std::string("grid ") + axis + " " + format_double(length_m) +
                     " is not a positive integer multiple of cell size " +
                     format_double(cell_m));
  }
  return static_cast<int>(r);
}

}  // namespace detail

/// Parses the documented grid text format: line 1 is
/// `width_m height_m cell_size_m`, then one line per row of whitespace
/// separated non-negative decimals, top row first.
inline GridMap load_grid_map(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("grid file: missing header line");
  std::istringstream hdr(line);
  std::string ws, hs, cs;
  if (!(hdr >> ws >> hs >> cs)) {
    throw ParseError("grid file: header must be 'width_m height_m cell_size_m'");
  }
  GridMap map;
  map.width_m = parse_double(ws, "width_m");
  map.height_m = parse_double(hs, "height_m");
  map.cell_size_m = parse_double(cs, "cell_size_m");
  if (map.cell_size_m <= 0.0) throw ParseError("grid file: cell_size_m must be > 0");
  map.cols = detail::checked_cell_count(map.width_m, map.cell_size_m, "width_m");
  map.rows = detail::checked_cell_count(map.height_m, map.cell_size_m, "height_m");
  map.values.resize(map.rows, map.cols);

  for (int file_row = 0; file_row < map.rows; ++file_row) {
    if (!std::getline(in, line)) {
      throw ParseError("grid file: expected " + std::to_string(map.rows) +
                       " data rows, got " + std::to_string(file_row));
    }
    std::istringstream ls(line);
    int grid_row = map.rows - 1 - file_row;  // file stores top row first
    for (int col = 0; col < map.cols; ++col) {
      std::string tok;
      if (!(ls >> tok)) {
        throw ParseError("grid file: data row " + std::to_string(file_row + 1) +
                         " has " + std::to_string(col) + " values, expected " +
                         std::to_string(map.cols));
      }
      double v = parse_double(tok, "grid cell");
      if (v < 0.0) {
        throw ParseError("grid file: negative cell at data row " +
                         std::to_string(file_row + 1) + ", column " +
                         std::to_string(col + 1));
      }
      map.values(grid_row, col) = v;
    }
    std::string extra;
    if (ls >> extra) {
      throw ParseError("grid file: data row " + std::to_string(file_row + 1) +
                       " has more than " + std::to_string(map.cols) + " values");
    }
  }
  if (!std::isfinite(map.values.sum())) {
    throw ParseError("grid file: total mass is not finite");
  }
  return map;
}

/// Writes the text format with shortest round-trip decimals, so
/// write(load(f)) reproduces parsed values bit-equal.
inline void write_grid_map(const GridMap& map, std::ostream& out) {
  out << format_double(map.width_m) << ' ' << format_double(map.height_m) << ' '
      << format_double(map.cell_size_m) << '\n';
  for (int file_row = 0; file_row < map.rows; ++file_row) {
    int grid_row = map.rows - 1 - file_row;
    for (int col = 0; col < map.cols; ++col) {
      if (col) out << ' ';
      out << format_double(map.values(grid_row, col));
    }
    out << '\n';
  }
}

/// One weighted sample of reward mass, used as EM input.
struct MassPoint {
  Vec2 position;
  double weight = 0.0;
};

/// Cell centers with nonzero mass, weights normalized to sum 1.
inline std::vector<MassPoint> grid_mass_points(const GridMap& map) {
  double total = map.total_value();
  if (total <= 0.0) throw ConfigError("grid map has no reward mass");
  std::vector<MassPoint> pts;
  pts.reserve(static_cast<std::size_t>(map.rows) * map.cols);
  for (int row = 0; row < map.rows; ++row) {
    for (int col = 0; col < map.cols; ++col) {
      double v = map.values(row, col);
      if (v > 0.0) pts.push_back({map.cell_center(row, col), v / total});
    }
  }
  return pts;
}

}  // namespace wcpp
