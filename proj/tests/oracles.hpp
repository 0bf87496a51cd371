// Independent reference implementations used as test oracles. Nothing here
// calls into the library's numeric kernels.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <vector>

#include "samiro/lane.hpp"
#include "samiro/rng.hpp"
#include "samiro/tensor.hpp"

namespace oracle {

using samiro::Rng;
using samiro::Tensor;

inline std::vector<double> random_vec(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

inline Tensor<double> random_tensor(Rng& rng, samiro::Shape shape, double lo = -1.0, double hi = 1.0) {
  auto v = random_vec(rng, samiro::numel(shape), lo, hi);
  return Tensor<double>(std::move(shape), std::move(v));
}

// Central differences of a scalar function of a flat parameter vector.
inline std::vector<double> numeric_grad(const std::function<double(const std::vector<double>&)>& f,
                                        std::vector<double> x, double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = f(x);
    x[i] = saved - h;
    const double down = f(x);
    x[i] = saved;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

inline double max_rel_error(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = std::max({std::abs(a[i]), std::abs(b[i]), 1e-6});
    worst = std::max(worst, std::abs(a[i] - b[i]) / d);
  }
  return worst;
}

// Direct cross-correlation with explicit bounds checks on every tap.
inline std::vector<double> conv2d(const std::vector<double>& x, int cin, int h, int w, const std::vector<double>& k,
                                  int cout, int ks, const std::vector<double>* bias, int stride, int pad, int& oh,
                                  int& ow) {
  oh = (h + 2 * pad - ks) / stride + 1;
  ow = (w + 2 * pad - ks) / stride + 1;
  std::vector<double> y(static_cast<std::size_t>(cout) * oh * ow, 0.0);
  for (int co = 0; co < cout; ++co)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        double acc = bias ? (*bias)[co] : 0.0;
        for (int ci = 0; ci < cin; ++ci)
          for (int ky = 0; ky < ks; ++ky)
            for (int kx = 0; kx < ks; ++kx) {
              const int iy = oy * stride - pad + ky, ix = ox * stride - pad + kx;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              acc += k[((co * cin + ci) * ks + ky) * ks + kx] * x[(ci * h + iy) * w + ix];
            }
        y[(co * oh + oy) * ow + ox] = acc;
      }
  return y;
}

// Distance from a point to a segment via the perpendicular foot or the nearer
// endpoint, computed with a cross product rather than a clamped projection.
inline double point_segment_distance(double px, double py, const samiro::Point& a, const samiro::Point& b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double along = (px - a.x) * dx + (py - a.y) * dy;
  const double len2 = dx * dx + dy * dy;
  if (along <= 0 || len2 == 0) return std::hypot(px - a.x, py - a.y);
  if (along >= len2) return std::hypot(px - b.x, py - b.y);
  const double cross = (px - a.x) * dy - (py - a.y) * dx;
  return std::abs(cross) / std::sqrt(len2);
}

// Scans every pixel of the image against every segment.
inline std::vector<std::uint8_t> scan_mask(const samiro::Lane& lane, int width_px, int h, int w) {
  std::vector<std::uint8_t> m(static_cast<std::size_t>(h) * w, 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (std::size_t i = 0; i + 1 < lane.points.size(); ++i) {
        if (point_segment_distance(x, y, lane.points[i], lane.points[i + 1]) <= 0.5 * width_px) {
          m[static_cast<std::size_t>(y) * w + x] = 1;
          break;
        }
      }
  return m;
}

inline double scan_iou(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
  long inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += a[i] && b[i];
    uni += a[i] || b[i];
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

struct BestAssignment {
  double total = -1;
  long tp = 0;
};

// Tries every injective map from rows into columns-or-nothing.
inline BestAssignment exhaustive_assignment(const std::vector<std::vector<double>>& w, double threshold) {
  const std::size_t n = w.size(), m = n ? w[0].size() : 0;
  BestAssignment best;
  std::vector<int> pick(n, -1);
  std::vector<bool> used(m, false);
  std::function<void(std::size_t, double)> rec = [&](std::size_t i, double total) {
    if (i == n) {
      if (total > best.total + 1e-12) {
        best.total = total;
        best.tp = 0;
        for (std::size_t r = 0; r < n; ++r)
          if (pick[r] >= 0 && w[r][static_cast<std::size_t>(pick[r])] >= threshold) ++best.tp;
      }
      return;
    }
    pick[i] = -1;
    rec(i + 1, total);
    for (std::size_t j = 0; j < m; ++j) {
      if (used[j]) continue;
      used[j] = true;
      pick[i] = static_cast<int>(j);
      rec(i + 1, total + w[i][j]);
      used[j] = false;
    }
    pick[i] = -1;
  };
  rec(0, 0.0);
  return best;
}

// A random lane with strictly increasing y, roughly vertical, inside or
// partly outside an h x w frame.
inline samiro::Lane random_lane(Rng& rng, int h, int w, int max_points = 6) {
  samiro::Lane lane;
  const int n = rng.uniform_int(2, max_points);
  double y = rng.uniform(-0.1 * h, 0.5 * h);
  double x = rng.uniform(0, w);
  const double slope = rng.uniform(-1.5, 1.5);
  for (int i = 0; i < n; ++i) {
    lane.points.push_back({x, y});
    const double dy = rng.uniform(2.0, 0.4 * h);
    y += dy;
    x += slope * dy + rng.uniform(-3, 3);
  }
  return lane;
}

}  // namespace oracle
