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

// Synthetic multi-agent driving scenes: vehicle boxes on a flat ground plane,
// a BEV ray-cast LiDAR per agent with occlusion, and pose noise.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "coopdet/geometry.hpp"

namespace coopdet {

struct DetectionRange {
  double x_min = -140.8, x_max = 140.8;
  double y_min = -40.0, y_max = 40.0;
  double z_min = -3.0, z_max = 1.0;

  static DetectionRange full() { return {}; }

  // Full range shrunk about the origin; z is left untouched.
  static DetectionRange scaled(double sx, double sy) {
    DetectionRange r;
    r.x_min *= sx;
    r.x_max *= sx;
    r.y_min *= sy;
    r.y_max *= sy;
    return r;
  }

  bool contains(double x, double y, double z) const {
    return x >= x_min && x < x_max && y >= y_min && y < y_max && z >= z_min && z < z_max;
  }
  bool contains_bev(double x, double y) const {
    return x >= x_min && x < x_max && y >= y_min && y < y_max;
  }
  bool within(const DetectionRange& outer) const {
    return x_min >= outer.x_min && x_max <= outer.x_max && y_min >= outer.y_min &&
           y_max <= outer.y_max && z_min >= outer.z_min && z_max <= outer.z_max &&
           x_min < x_max && y_min < y_max && z_min < z_max;
  }
};

struct GroundTruthBox {
  Box3D box;
  int object_id = 0;
};

struct LidarPoint {
  double x = 0, y = 0, z = 0;
  double intensity = 0;
};

// Points are expressed in `frame`. `object_ids` labels each point with the
// box it was reflected from.
struct PointCloud {
  int agent = 0;
  AgentPose frame;
  std::vector<LidarPoint> points;
  std::vector<int> object_ids;
};

struct PoseNoiseSpec {
  double sigma_xyz = 0.0;      // meters
  double sigma_heading = 0.0;  // degrees
  bool noise_z = false;
};

struct LidarSpec {
  double azimuth_res_deg = 0.4;
  int beams = 16;
  double elevation_min_deg = -15.0;
  double elevation_max_deg = 3.0;
  double max_range = 120.0;
  double sensor_height = 1.7;
  double range_noise_std = 0.0;  // meters, off by default
};

enum class OccluderPolicy { none, behind_vehicle };

struct SceneSpec {
  int num_agents = 2;
  int num_objects = 8;
  DetectionRange range = DetectionRange::scaled(0.25, 0.25);
  OccluderPolicy occluder = OccluderPolicy::behind_vehicle;
  int num_occluded = 1;
  LidarSpec lidar;
  int min_points = 5;
  double object_yaw_jitter_deg = 15.0;
  double agent_yaw_jitter_deg = 20.0;
  double min_occluded_distance = 12.0;
  double helper_distance_min = 5.0;
  double helper_distance_max = 14.0;
  double world_extent = 50.0;  // ego pose is drawn inside ±world_extent
  int max_retries = 200;
};

class SceneError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void validate(const SceneSpec& s) {
  auto fail = [](const std::string& m) { throw SceneError("invalid scene spec: " + m); };
  if (s.num_agents < 2 || s.num_agents > 5) fail("num_agents must be in [2, 5]");
  if (s.num_objects < 1 || s.num_objects > 20) fail("num_objects must be in [1, 20]");
  if (!s.range.within(DetectionRange::full())) fail("range exceeds the full detection range");
  if (s.occluder == OccluderPolicy::behind_vehicle &&
      (s.num_occluded < 1 || 2 * s.num_occluded > s.num_objects))
    fail("num_occluded must be >= 1 with two boxes per occluded pair");
  if (s.lidar.azimuth_res_deg <= 0 || s.lidar.beams < 1 || s.lidar.max_range <= 0)
    fail("bad lidar parameters");
  if (s.lidar.elevation_max_deg <= s.lidar.elevation_min_deg) fail("bad elevation span");
  if (s.lidar.range_noise_std < 0) fail("range_noise_std must be >= 0");
  if (s.min_points < 1) fail("min_points must be >= 1");
  if (s.max_retries < 1) fail("max_retries must be >= 1");
  if (s.helper_distance_min <= 0 || s.helper_distance_max < s.helper_distance_min)
    fail("bad helper distance bounds");
}

inline void validate(const PoseNoiseSpec& n) {
  if (!(n.sigma_xyz >= 0) || !(n.sigma_heading >= 0))
    throw SceneError("pose noise sigmas must be >= 0");
}

struct Scene {
  std::uint64_t seed = 0;
  std::vector<AgentPose> agents;  // agent 0 is the ego
  std::vector<GroundTruthBox> boxes;  // world frame
  std::vector<PointCloud> clouds;     // one per agent, agent frame
  std::vector<int> occluded_ids;      // boxes placed to be hidden from the ego
};

// Ray-casts one agent's sweep against world-frame boxes. Each azimuth ray
// stops at the nearest box face; each beam then returns a point if its
// elevation lands on that face's vertical extent. Points are emitted in the
// agent frame and range-filtered.
inline PointCloud simulate_lidar(int agent, const AgentPose& pose,
                                 const std::vector<GroundTruthBox>& boxes, const LidarSpec& lidar,
                                 const DetectionRange& range, std::uint64_t noise_seed = 0) {
  PointCloud cloud;
  cloud.agent = agent;
  cloud.frame = pose;
  std::mt19937_64 rng(noise_seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const int rays = static_cast<int>(std::lround(360.0 / lidar.azimuth_res_deg));
  const Vec2 origin{pose.x, pose.y};
  for (int r = 0; r < rays; ++r) {
    const double az = pose.yaw + deg2rad(r * lidar.azimuth_res_deg);
    const Vec2 dir{std::cos(az), std::sin(az)};
    double best = lidar.max_range;
    int hit = -1;
    Vec2 normal;
    for (std::size_t b = 0; b < boxes.size(); ++b) {
      Vec2 n;
      const double t = ray_box_bev(origin, dir, boxes[b].box, &n);
      if (t > 0 && t < best) {
        best = t;
        hit = static_cast<int>(b);
        normal = n;
      }
    }
    if (hit < 0) continue;
    const Box3D& box = boxes[hit].box;
    const double bottom = box.z - 0.5 * box.h, top = box.z + 0.5 * box.h;
    const double incidence = std::abs(dir.x * normal.x + dir.y * normal.y);
    for (int k = 0; k < lidar.beams; ++k) {
      const double el =
          lidar.beams == 1
              ? lidar.elevation_min_deg
              : lidar.elevation_min_deg + (lidar.elevation_max_deg - lidar.elevation_min_deg) * k /
                                              (lidar.beams - 1);
      const double zw = pose.z + best * std::tan(deg2rad(el));
      if (zw < bottom || zw > top) continue;
      double t = best;
      if (lidar.range_noise_std > 0) t += lidar.range_noise_std * gauss(rng);
      const double wx = origin.x + t * dir.x, wy = origin.y + t * dir.y;
      const auto p = world_to_local(pose, wx, wy, zw);
      if (!range.contains(p[0], p[1], p[2])) continue;
      cloud.points.push_back({p[0], p[1], p[2], 0.2 + 0.8 * incidence});
      cloud.object_ids.push_back(boxes[hit].object_id);
    }
  }
  return cloud;
}

inline int count_points_on(const PointCloud& cloud, int object_id) {
  return static_cast<int>(std::count(cloud.object_ids.begin(), cloud.object_ids.end(), object_id));
}

// Rigid SE(2)×z change of frame. Intensities and labels are unchanged.
inline PointCloud transform_points(const PointCloud& cloud, const AgentPose& from,
                                   const AgentPose& to) {
  PointCloud out = cloud;
  out.frame = to;
  for (auto& p : out.points) {
    const auto w = local_to_world(from, p.x, p.y, p.z);
    const auto l = world_to_local(to, w[0], w[1], w[2]);
    p.x = l[0];
    p.y = l[1];
    p.z = l[2];
  }
  return out;
}

// Adds independent Gaussian noise. Every call draws the same four normals in
// the same order, so one seed yields common random numbers across sigmas.
inline AgentPose apply_pose_noise(const AgentPose& pose, const PoseNoiseSpec& spec,
                                  std::uint64_t seed) {
  validate(spec);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  const double ex = n(rng), ey = n(rng), ez = n(rng), eh = n(rng);
  AgentPose out = pose;
  out.x += spec.sigma_xyz * ex;
  out.y += spec.sigma_xyz * ey;
  if (spec.noise_z) out.z += spec.sigma_xyz * ez;
  out.yaw = wrap_angle(out.yaw + deg2rad(spec.sigma_heading) * eh);
  return out;
}

namespace detail {

inline Box3D inflate(const Box3D& b, double m) {
  Box3D o = b;
  o.l += 2 * m;
  o.w += 2 * m;
  return o;
}

inline bool overlaps_any(const Box3D& cand, const std::vector<GroundTruthBox>& boxes,
                         double margin) {
  for (const auto& g : boxes)
    if (bev_intersection_area(inflate(cand, margin), g.box) > 0) return true;
  return false;
}

inline bool point_clear_of(const Vec2& p, const std::vector<GroundTruthBox>& boxes, double clearance) {
  for (const auto& g : boxes) {
    const auto& b = g.box;
    const double c = std::cos(b.yaw), s = std::sin(b.yaw);
    const double lx = c * (p.x - b.x) + s * (p.y - b.y);
    const double ly = -s * (p.x - b.x) + c * (p.y - b.y);
    const double dx = std::max(std::abs(lx) - 0.5 * b.l, 0.0);
    const double dy = std::max(std::abs(ly) - 0.5 * b.w, 0.0);
    if (std::hypot(dx, dy) < clearance) return false;
  }
  return true;
}

struct Sampler {
  std::mt19937_64 rng;
  double uni(double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); }
  Box3D vehicle(double x, double y, double yaw) {
    Box3D b;
    b.l = uni(3.9, 5.0);
    b.w = uni(1.6, 2.0);
    b.h = uni(1.4, 1.8);
    b.x = x;
    b.y = y;
    b.z = 0.5 * b.h;
    b.yaw = yaw;
    return b;
  }
};

}  // namespace detail

// Boxes are laid out in the ego frame, then mapped to the world through a
// random ego pose so no consumer can rely on world == ego.
inline Scene generate_scene(const SceneSpec& spec, std::uint64_t seed) {
  validate(spec);
  detail::Sampler S{std::mt19937_64(seed)};
  const auto& R = spec.range;
  const double margin = 3.0;
  const double xlo = R.x_min + margin, xhi = R.x_max - margin;
  const double ylo = R.y_min + margin, yhi = R.y_max - margin;
  const double jitter = deg2rad(spec.object_yaw_jitter_deg);
  const double agent_jitter = deg2rad(spec.agent_yaw_jitter_deg);

  for (int attempt = 0; attempt < spec.max_retries; ++attempt) {
    Scene sc;
    sc.seed = seed;
    const AgentPose ego{S.uni(-spec.world_extent, spec.world_extent),
                        S.uni(-spec.world_extent, spec.world_extent), spec.lidar.sensor_height,
                        wrap_angle(S.uni(-kPi, kPi))};
    std::vector<GroundTruthBox> local;  // ego frame
    int next_id = 0;
    bool ok = true;

    auto origin_clear = [&](const Box3D& b) {
      return detail::point_clear_of({0, 0}, {GroundTruthBox{b, -1}}, 2.0);
    };

    if (spec.occluder == OccluderPolicy::behind_vehicle) {
      for (int k = 0; k < spec.num_occluded && ok; ++k) {
        bool placed = false;
        for (int tries = 0; tries < 100 && !placed; ++tries) {
          const double tx = S.uni(xlo, xhi), ty = S.uni(ylo, yhi);
          if (std::hypot(tx, ty) < spec.min_occluded_distance) continue;
          const double yaw = S.uni(-jitter, jitter);
          const Box3D target = S.vehicle(tx, ty, yaw);
          const double f = S.uni(0.45, 0.7);
          const Box3D occ = S.vehicle(f * tx, f * ty, yaw + S.uni(-0.1, 0.1));
          if (detail::overlaps_any(target, local, 0.5) || detail::overlaps_any(occ, local, 0.5) ||
              bev_intersection_area(detail::inflate(target, 0.5), occ) > 0 || !origin_clear(occ))
            continue;
          local.push_back({target, next_id++});
          sc.occluded_ids.push_back(local.back().object_id);
          local.push_back({occ, next_id++});
          placed = true;
        }
        ok = placed;
      }
    }
    while (ok && next_id < spec.num_objects) {
      bool placed = false;
      for (int tries = 0; tries < 200 && !placed; ++tries) {
        const Box3D b = S.vehicle(S.uni(xlo, xhi), S.uni(ylo, yhi), S.uni(-jitter, jitter));
        if (detail::overlaps_any(b, local, 0.5) || !origin_clear(b)) continue;
        local.push_back({b, next_id++});
        placed = true;
      }
      ok = placed;
    }
    if (!ok) continue;

    // Helpers, in the ego frame. The first helper is placed near the first
    // occluded target so the cooperative view exists.
    std::vector<AgentPose> agents_local{AgentPose{0, 0, spec.lidar.sensor_height, 0}};
    for (int a = 1; a < spec.num_agents && ok; ++a) {
      bool placed = false;
      for (int tries = 0; tries < 200 && !placed; ++tries) {
        Vec2 p;
        if (a == 1 && !sc.occluded_ids.empty()) {
          const auto& t = local[0].box;
          const double ang = S.uni(-kPi, kPi);
          const double d = S.uni(spec.helper_distance_min, spec.helper_distance_max);
          p = {t.x + d * std::cos(ang), t.y + d * std::sin(ang)};
        } else {
          p = {S.uni(xlo, xhi), S.uni(ylo, yhi)};
        }
        if (!R.contains_bev(p.x, p.y) || !detail::point_clear_of(p, local, 1.5)) continue;
        bool far = true;
        for (const auto& o : agents_local) far = far && std::hypot(o.x - p.x, o.y - p.y) >= 5.0;
        if (!far) continue;
        agents_local.push_back({p.x, p.y, spec.lidar.sensor_height, S.uni(-agent_jitter, agent_jitter)});
        placed = true;
      }
      ok = placed;
    }
    if (!ok) continue;

    for (const auto& a : agents_local) {
      const auto w = local_to_world(ego, a.x, a.y, 0.0);
      sc.agents.push_back({w[0], w[1], a.z, wrap_angle(a.yaw + ego.yaw)});
    }
    for (const auto& g : local) {
      const AgentPose ground{ego.x, ego.y, 0.0, ego.yaw};
      sc.boxes.push_back({box_from_frame(g.box, ground), g.object_id});
    }
    for (int a = 0; a < spec.num_agents; ++a) {
      const std::uint64_t noise_seed = seed * 1000003ULL + std::uint64_t(attempt) * 31 + a;
      sc.clouds.push_back(simulate_lidar(a, sc.agents[a], sc.boxes, spec.lidar,
                                         spec.range, noise_seed));
    }
    for (const auto& g : sc.boxes) {
      int best = 0;
      for (const auto& c : sc.clouds) best = std::max(best, count_points_on(c, g.object_id));
      ok = ok && best >= spec.min_points;
    }
    for (const int id : sc.occluded_ids) {
      ok = ok && count_points_on(sc.clouds[0], id) == 0;
      int helper_best = 0;
      for (std::size_t a = 1; a < sc.clouds.size(); ++a)
        helper_best = std::max(helper_best, count_points_on(sc.clouds[a], id));
      ok = ok && helper_best >= spec.min_points;
    }
    if (ok) return sc;
  }
  throw SceneError("scene generation failed after " + std::to_string(spec.max_retries) +
                   " attempts for seed " + std::to_string(seed));
}

// Ground truth as seen by one agent: boxes in that agent's frame whose centre
// lies inside its BEV range.
inline std::vector<GroundTruthBox> boxes_in_frame(const std::vector<GroundTruthBox>& world,
                                                  const AgentPose& frame,
                                                  const DetectionRange& range) {
  std::vector<GroundTruthBox> out;
  for (const auto& g : world) {
    Box3D b = box_to_frame(g.box, frame);
    if (range.contains_bev(b.x, b.y)) out.push_back({b, g.object_id});
  }
  return out;
}

// Subset of `boxes_in_frame` with at least `min_points` returns in `cloud`.
inline std::vector<GroundTruthBox> visible_boxes(const std::vector<GroundTruthBox>& world,
                                                 const PointCloud& cloud,
                                                 const DetectionRange& range, int min_points) {
  std::vector<GroundTruthBox> out;
  for (const auto& g : boxes_in_frame(world, cloud.frame, range))
    if (count_points_on(cloud, g.object_id) >= min_points) out.push_back(g);
  return out;
}

}  // namespace coopdet
