#pragma once

#include <vector>

namespace samiro {

// Image coordinates: origin top-left, y grows downward, pixel (col, row) is
// centred at (col, row).
struct Point {
  double x = 0;
  double y = 0;
  bool operator==(const Point&) const = default;
};

// Polyline with strictly increasing y.
struct Lane {
  std::vector<Point> points;
  bool operator==(const Lane&) const = default;
};

using LaneList = std::vector<Lane>;

}  // namespace samiro
