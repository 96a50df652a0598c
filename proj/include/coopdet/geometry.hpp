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

#include <array>
#include <cmath>
#include <numbers>
#include <vector>

namespace coopdet {

constexpr double kPi = std::numbers::pi;

inline double deg2rad(double d) { return d * kPi / 180.0; }

// Wraps to (−π, π].
inline double wrap_angle(double a) {
  a = std::fmod(a, 2 * kPi);
  if (a <= -kPi) a += 2 * kPi;
  if (a > kPi) a -= 2 * kPi;
  return a;
}

// Planar pose of an agent in the world frame; z is the sensor height.
struct AgentPose {
  double x = 0, y = 0, z = 0;
  double yaw = 0;

  friend bool operator==(const AgentPose&, const AgentPose&) = default;
};

struct Vec2 {
  double x = 0, y = 0;
};

// Rigid SE(2)×z transforms. `local_to_world` maps a point given in the
// agent's frame into the world frame.
inline std::array<double, 3> local_to_world(const AgentPose& p, double x, double y, double z) {
  const double c = std::cos(p.yaw), s = std::sin(p.yaw);
  return {p.x + c * x - s * y, p.y + s * x + c * y, p.z + z};
}

inline std::array<double, 3> world_to_local(const AgentPose& p, double x, double y, double z) {
  const double c = std::cos(p.yaw), s = std::sin(p.yaw);
  const double dx = x - p.x, dy = y - p.y;
  return {c * dx + s * dy, -s * dx + c * dy, z - p.z};
}

// Pose of `child` expressed in `parent`'s frame.
inline AgentPose relative_pose(const AgentPose& parent, const AgentPose& child) {
  const auto t = world_to_local(parent, child.x, child.y, child.z);
  return {t[0], t[1], t[2], wrap_angle(child.yaw - parent.yaw)};
}

// 7-DoF box: centre, size (length along heading, width, height), yaw.
struct Box3D {
  double x = 0, y = 0, z = 0;
  double l = 1, w = 1, h = 1;
  double yaw = 0;
};

// BEV corners, counter-clockwise.
inline std::array<Vec2, 4> bev_corners(const Box3D& b) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const double hl = 0.5 * b.l, hw = 0.5 * b.w;
  const std::array<Vec2, 4> local = {Vec2{hl, hw}, Vec2{-hl, hw}, Vec2{-hl, -hw}, Vec2{hl, -hw}};
  std::array<Vec2, 4> out;
  for (int i = 0; i < 4; ++i)
    out[i] = {b.x + c * local[i].x - s * local[i].y, b.y + s * local[i].x + c * local[i].y};
  return out;
}

inline Box3D box_to_frame(const Box3D& world_box, const AgentPose& frame) {
  Box3D b = world_box;
  const auto c = world_to_local(frame, b.x, b.y, b.z);
  b.x = c[0];
  b.y = c[1];
  b.z = c[2];
  b.yaw = wrap_angle(b.yaw - frame.yaw);
  return b;
}

inline Box3D box_from_frame(const Box3D& local_box, const AgentPose& frame) {
  Box3D b = local_box;
  const auto c = local_to_world(frame, b.x, b.y, b.z);
  b.x = c[0];
  b.y = c[1];
  b.z = c[2];
  b.yaw = wrap_angle(b.yaw + frame.yaw);
  return b;
}

// Signed area by the shoelace formula (positive for CCW).
inline double polygon_area(const std::vector<Vec2>& poly) {
  double a = 0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const auto& p = poly[i];
    const auto& q = poly[(i + 1) % poly.size()];
    a += p.x * q.y - q.x * p.y;
  }
  return 0.5 * a;
}

// Sutherland–Hodgman clipping of `subject` by the convex CCW polygon `clip`.
inline std::vector<Vec2> clip_convex(std::vector<Vec2> subject, const std::vector<Vec2>& clip) {
  for (std::size_t e = 0; e < clip.size() && !subject.empty(); ++e) {
    const Vec2 a = clip[e], b = clip[(e + 1) % clip.size()];
    auto side = [&](const Vec2& p) { return (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x); };
    std::vector<Vec2> out;
    for (std::size_t i = 0; i < subject.size(); ++i) {
      const Vec2 p = subject[i], q = subject[(i + 1) % subject.size()];
      const double sp = side(p), sq = side(q);
      if (sp >= 0) out.push_back(p);
      if ((sp >= 0) != (sq >= 0)) {
        const double t = sp / (sp - sq);
        out.push_back({p.x + t * (q.x - p.x), p.y + t * (q.y - p.y)});
      }
    }
    subject = std::move(out);
  }
  return subject;
}

inline double bev_intersection_area(const Box3D& a, const Box3D& b) {
  const auto ca = bev_corners(a), cb = bev_corners(b);
  const auto poly = clip_convex({ca.begin(), ca.end()}, {cb.begin(), cb.end()});
  return poly.size() < 3 ? 0.0 : std::abs(polygon_area(poly));
}

// Distance along the ray origin + t·dir (t > 0) to the first crossing of the
// box's BEV rectangle boundary, or a negative value if it misses. Also
// returns the outward normal of the face that was hit.
inline double ray_box_bev(const Vec2& origin, const Vec2& dir, const Box3D& b, Vec2* normal = nullptr) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const double ox = c * (origin.x - b.x) + s * (origin.y - b.y);
  const double oy = -s * (origin.x - b.x) + c * (origin.y - b.y);
  const double dx = c * dir.x + s * dir.y;
  const double dy = -s * dir.x + c * dir.y;
  const double hl = 0.5 * b.l, hw = 0.5 * b.w;
  double tmin = -1e300, tmax = 1e300;
  int axis_min = -1;
  double sign_min = 0;
  const double o[2] = {ox, oy}, d[2] = {dx, dy}, h[2] = {hl, hw};
  for (int k = 0; k < 2; ++k) {
    if (std::abs(d[k]) < 1e-15) {
      if (std::abs(o[k]) > h[k]) return -1;
      continue;
    }
    double t1 = (-h[k] - o[k]) / d[k], t2 = (h[k] - o[k]) / d[k];
    double sgn = -1;
    if (t1 > t2) {
      std::swap(t1, t2);
      sgn = 1;
    }
    if (t1 > tmin) {
      tmin = t1;
      axis_min = k;
      sign_min = sgn;
    }
    tmax = std::min(tmax, t2);
  }
  if (tmin > tmax || tmin <= 0) return -1;
  if (normal) {
    const double nx = axis_min == 0 ? sign_min : 0.0, ny = axis_min == 1 ? sign_min : 0.0;
    *normal = {c * nx - s * ny, s * nx + c * ny};
  }
  return tmin;
}

// True when the open segment a→b passes through the interior of the box
// shrunk by `margin` on every side.
inline bool segment_crosses_box(const Vec2& a, const Vec2& b, const Box3D& box, double margin) {
  Box3D shrunk = box;
  shrunk.l = std::max(box.l - 2 * margin, 0.0);
  shrunk.w = std::max(box.w - 2 * margin, 0.0);
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  auto to_local = [&](const Vec2& p) {
    return Vec2{c * (p.x - box.x) + s * (p.y - box.y), -s * (p.x - box.x) + c * (p.y - box.y)};
  };
  const Vec2 la = to_local(a), lb = to_local(b);
  // Liang–Barsky on the open segment (0, 1).
  double t0 = 0, t1 = 1;
  const double d[2] = {lb.x - la.x, lb.y - la.y};
  const double o[2] = {la.x, la.y};
  const double h[2] = {0.5 * shrunk.l, 0.5 * shrunk.w};
  for (int k = 0; k < 2; ++k) {
    if (std::abs(d[k]) < 1e-15) {
      if (std::abs(o[k]) >= h[k]) return false;
      continue;
    }
    double ta = (-h[k] - o[k]) / d[k], tb = (h[k] - o[k]) / d[k];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  return t0 < t1;
}

}  // namespace coopdet
