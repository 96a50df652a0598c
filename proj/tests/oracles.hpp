// Copyright 2026 The coopdet Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Independent brute-force reference computations used only by tests. None of
// these call into the library code paths they are compared against.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <vector>

namespace coopdet::oracle {

// Align-corners bilinear sample of channel c by explicit four-corner loop.
template <typename T>
double bilinear_oracle(const std::vector<T>& map, std::size_t C, std::size_t H, std::size_t W,
                       std::size_t c, double u, double v) {
  (void)C;
  const double x = u * double(W - 1);
  const double y = v * double(H - 1);
  const double x0 = std::floor(x), y0 = std::floor(y);
  double acc = 0;
  for (int dy = 0; dy <= 1; ++dy)
    for (int dx = 0; dx <= 1; ++dx) {
      const double cx = x0 + dx, cy = y0 + dy;
      if (cx < 0 || cy < 0 || cx > double(W - 1) || cy > double(H - 1)) continue;
      const double w = (1.0 - std::abs(x - cx)) * (1.0 - std::abs(y - cy));
      acc += w * double(map[(c * H + std::size_t(cy)) * W + std::size_t(cx)]);
    }
  return acc;
}

// Minimum-cost injective assignment of G rows into P columns by exhaustive
// enumeration (G ≤ P, small sizes only).
inline double brute_force_assignment_cost(const std::vector<std::vector<double>>& cost) {
  const std::size_t G = cost.size();
  if (G == 0) return 0.0;
  const std::size_t P = cost[0].size();
  double best = std::numeric_limits<double>::infinity();
  std::vector<int> used(P, 0);
  auto rec = [&](auto&& self, std::size_t row, double acc) -> void {
    if (row == G) {
      best = std::min(best, acc);
      return;
    }
    for (std::size_t p = 0; p < P; ++p) {
      if (used[p]) continue;
      used[p] = 1;
      self(self, row + 1, acc + cost[row][p]);
      used[p] = 0;
    }
  };
  rec(rec, 0, 0.0);
  return best;
}

// BEV IoU of two rotated boxes (cx, cy, l, w, yaw) by rasterising an
// n×n grid over the union of their bounding boxes.
inline double raster_iou(const std::array<double, 5>& a, const std::array<double, 5>& b,
                         int n = 400) {
  auto corners_extent = [](const std::array<double, 5>& r, double& xmin, double& xmax,
                           double& ymin, double& ymax) {
    const double c = std::cos(r[4]), s = std::sin(r[4]);
    xmin = ymin = std::numeric_limits<double>::infinity();
    xmax = ymax = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < 4; ++i) {
      const double lx = ((i & 1) ? 0.5 : -0.5) * r[2];
      const double ly = ((i & 2) ? 0.5 : -0.5) * r[3];
      const double x = r[0] + c * lx - s * ly, y = r[1] + s * lx + c * ly;
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  };
  double ax0, ax1, ay0, ay1, bx0, bx1, by0, by1;
  corners_extent(a, ax0, ax1, ay0, ay1);
  corners_extent(b, bx0, bx1, by0, by1);
  const double x0 = std::min(ax0, bx0), x1 = std::max(ax1, bx1);
  const double y0 = std::min(ay0, by0), y1 = std::max(ay1, by1);
  auto inside = [](const std::array<double, 5>& r, double x, double y) {
    const double c = std::cos(r[4]), s = std::sin(r[4]);
    const double dx = x - r[0], dy = y - r[1];
    const double lx = c * dx + s * dy, ly = -s * dx + c * dy;
    return std::abs(lx) <= 0.5 * r[2] && std::abs(ly) <= 0.5 * r[3];
  };
  long inter = 0, uni = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double x = x0 + (i + 0.5) * (x1 - x0) / n;
      const double y = y0 + (j + 0.5) * (y1 - y0) / n;
      const bool ia = inside(a, x, y), ib = inside(b, x, y);
      inter += (ia && ib);
      uni += (ia || ib);
    }
  return uni ? double(inter) / double(uni) : 0.0;
}

}  // namespace coopdet::oracle
