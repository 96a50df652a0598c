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

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "coopdet/scene.hpp"
#include "coopdet/scene_io.hpp"

namespace coopdet {
namespace {

Box3D car(double x, double y, double yaw, double l = 4.5, double w = 1.8, double h = 1.5) {
  return {x, y, 0.5 * h, l, w, h, yaw};
}

TEST(Lidar, SingleBoxPointsLieOnTwoFacingFaces) {
  const Box3D b = car(10, 3, 0);
  const AgentPose pose{0, 0, 1.7, 0};
  const auto cloud = simulate_lidar(0, pose, {{b, 7}}, LidarSpec{}, DetectionRange::full());
  ASSERT_GT(cloud.points.size(), 20u);
  const double near_x = b.x - 0.5 * b.l, near_y = b.y - 0.5 * b.w;
  int on_x = 0, on_y = 0;
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    const auto& p = cloud.points[i];
    EXPECT_EQ(cloud.object_ids[i], 7);
    const bool fx = std::abs(p.x - near_x) < 1e-9 && std::abs(p.y - b.y) <= 0.5 * b.w + 1e-9;
    const bool fy = std::abs(p.y - near_y) < 1e-9 && std::abs(p.x - b.x) <= 0.5 * b.l + 1e-9;
    EXPECT_TRUE(fx || fy) << p.x << "," << p.y;
    on_x += fx;
    on_y += fy;
    EXPECT_GE(p.z + 1.7, -1e-9);
    EXPECT_LE(p.z + 1.7, b.h + 1e-9);
  }
  EXPECT_GT(on_x, 0);
  EXPECT_GT(on_y, 0);
}

TEST(Lidar, OccluderHidesTargetFromEgoOnly) {
  // Ego at the origin, a broadside vehicle at x=10, the target behind it at
  // x=14, a helper beyond the target looking back. The occluder's shadow at
  // x=12 covers |y| <= 2.5*12/11 which contains the target's ±0.9 extent.
  const std::vector<GroundTruthBox> boxes = {{car(10, 0, kPi / 2, 5.0, 2.0), 0},
                                             {car(14, 0, 0, 4.0, 1.8), 1}};
  const AgentPose ego{0, 0, 1.7, 0}, helper{22, 0, 1.7, kPi};
  const auto r = DetectionRange::full();
  const auto ce = simulate_lidar(0, ego, boxes, LidarSpec{}, r);
  const auto ch = simulate_lidar(1, helper, boxes, LidarSpec{}, r);
  EXPECT_EQ(count_points_on(ce, 1), 0);
  EXPECT_GT(count_points_on(ce, 0), 0);
  EXPECT_GT(count_points_on(ch, 1), 0);
}

TEST(Lidar, FartherObjectsReturnFewerBeams) {
  const AgentPose pose{0, 0, 1.7, 0};
  const auto near = simulate_lidar(0, pose, {{car(10, 0, 0), 0}}, LidarSpec{}, DetectionRange::full());
  const auto far = simulate_lidar(0, pose, {{car(40, 0, 0), 0}}, LidarSpec{}, DetectionRange::full());
  EXPECT_GT(near.points.size(), far.points.size());
  EXPECT_GT(far.points.size(), 0u);
}

TEST(Lidar, RangeFilterApplies) {
  DetectionRange r = DetectionRange::full();
  r.x_max = 7;
  const auto c = simulate_lidar(0, {0, 0, 1.7, 0}, {{car(10, 0, 0), 0}}, LidarSpec{}, r);
  EXPECT_TRUE(c.points.empty());
}

TEST(Transform, IdenticalPosesAreIdentity) {
  PointCloud c;
  c.points = {{1, 2, 3, 0.5}, {-4, 5, -1, 0.1}};
  c.object_ids = {0, 1};
  const AgentPose p{3, -2, 1.7, 0.7};
  const auto t = transform_points(c, p, p);
  for (std::size_t i = 0; i < c.points.size(); ++i) {
    EXPECT_NEAR(t.points[i].x, c.points[i].x, 1e-12);
    EXPECT_NEAR(t.points[i].y, c.points[i].y, 1e-12);
    EXPECT_NEAR(t.points[i].z, c.points[i].z, 1e-12);
  }
}

TEST(Transform, NinetyDegreeYaw) {
  PointCloud c;
  c.points = {{1, 0, 0, 1}};
  c.object_ids = {0};
  const auto t = transform_points(c, {0, 0, 0, kPi / 2}, {0, 0, 0, 0});
  EXPECT_NEAR(t.points[0].x, 0.0, 1e-12);
  EXPECT_NEAR(t.points[0].y, 1.0, 1e-12);
}

TEST(Transform, RandomRoundTrip) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-100, 100), a(-kPi, kPi);
  for (int trial = 0; trial < 200; ++trial) {
    const AgentPose p1{u(rng), u(rng), 1.7, a(rng)}, p2{u(rng), u(rng), 2.0, a(rng)};
    PointCloud c;
    for (int i = 0; i < 50; ++i) c.points.push_back({u(rng), u(rng), u(rng) * 0.02, 0});
    c.object_ids.assign(c.points.size(), 0);
    const auto back = transform_points(transform_points(c, p1, p2), p2, p1);
    for (std::size_t i = 0; i < c.points.size(); ++i) {
      EXPECT_NEAR(back.points[i].x, c.points[i].x, 1e-5);
      EXPECT_NEAR(back.points[i].y, c.points[i].y, 1e-5);
      EXPECT_NEAR(back.points[i].z, c.points[i].z, 1e-5);
    }
  }
}

TEST(Transform, WrapAngleRange) {
  for (double a = -20; a <= 20; a += 0.37) {
    const double w = wrap_angle(a);
    EXPECT_GT(w, -kPi);
    EXPECT_LE(w, kPi);
    EXPECT_NEAR(std::cos(w), std::cos(a), 1e-12);
    EXPECT_NEAR(std::sin(w), std::sin(a), 1e-12);
  }
  EXPECT_DOUBLE_EQ(wrap_angle(-kPi), kPi);
}

TEST(PoseNoise, ZeroSigmaIsIdentity) {
  const AgentPose p{1, 2, 1.7, 0.3};
  EXPECT_EQ(apply_pose_noise(p, {}, 42), p);
}

TEST(PoseNoise, SampleStdMatchesSigma) {
  const PoseNoiseSpec spec{0.5, 1.0, false};
  const int n = 100000;
  double sx = 0, sxx = 0, sh = 0, shh = 0;
  for (int i = 0; i < n; ++i) {
    const auto q = apply_pose_noise({0, 0, 1.7, 0}, spec, std::uint64_t(i) + 1);
    sx += q.x;
    sxx += q.x * q.x;
    sh += q.yaw;
    shh += q.yaw * q.yaw;
    EXPECT_EQ(q.z, 1.7);
  }
  const double sdx = std::sqrt(sxx / n - (sx / n) * (sx / n));
  const double sdh = std::sqrt(shh / n - (sh / n) * (sh / n));
  EXPECT_GE(sdx, 0.49);
  EXPECT_LE(sdx, 0.51);
  EXPECT_NEAR(sdh, deg2rad(1.0), 0.02 * deg2rad(1.0));
}

TEST(PoseNoise, SeedReproducibleAndCommonAcrossSigma) {
  const AgentPose p{1, 2, 1.7, 0.3};
  EXPECT_EQ(apply_pose_noise(p, {0.3, 0.5}, 9), apply_pose_noise(p, {0.3, 0.5}, 9));
  const auto a = apply_pose_noise(p, {0.1, 0}, 9), b = apply_pose_noise(p, {0.2, 0}, 9);
  EXPECT_NEAR(b.x - p.x, 2 * (a.x - p.x), 1e-12);
  EXPECT_THROW(apply_pose_noise(p, {-1, 0}, 1), SceneError);
}

SceneSpec small_spec() {
  SceneSpec s;
  s.num_agents = 3;
  s.num_objects = 8;
  return s;
}

TEST(GenerateScene, DeterministicForSeed) {
  const auto s = small_spec();
  EXPECT_EQ(to_json(generate_scene(s, 11)).dump(), to_json(generate_scene(s, 11)).dump());
  EXPECT_NE(to_json(generate_scene(s, 11)).dump(), to_json(generate_scene(s, 12)).dump());
}

TEST(GenerateScene, JsonRoundTripIsExact) {
  const auto sc = generate_scene(small_spec(), 5);
  const auto text = to_json(sc).dump();
  EXPECT_EQ(to_json(scene_from_json(json::parse(text))).dump(), text);
}

TEST(GenerateScene, InvariantsHoldAcrossSeeds) {
  for (int agents = 2; agents <= 5; ++agents) {
    SceneSpec spec = small_spec();
    spec.num_agents = agents;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto sc = generate_scene(spec, seed * 17 + agents);
      ASSERT_EQ(int(sc.agents.size()), agents);
      ASSERT_EQ(int(sc.boxes.size()), spec.num_objects);
      ASSERT_FALSE(sc.occluded_ids.empty());
      std::vector<int> ids;
      for (const auto& g : sc.boxes) {
        EXPECT_GT(g.box.l, 0);
        ids.push_back(g.object_id);
      }
      std::sort(ids.begin(), ids.end());
      EXPECT_EQ(std::adjacent_find(ids.begin(), ids.end()), ids.end());
      for (std::size_t i = 0; i < sc.boxes.size(); ++i)
        for (std::size_t j = i + 1; j < sc.boxes.size(); ++j)
          EXPECT_EQ(bev_intersection_area(sc.boxes[i].box, sc.boxes[j].box), 0.0);

      for (const auto& c : sc.clouds) {
        const auto& pose = sc.agents[c.agent];
        for (std::size_t i = 0; i < c.points.size(); ++i) {
          const auto& p = c.points[i];
          EXPECT_TRUE(spec.range.contains(p.x, p.y, p.z));
          const auto w = local_to_world(pose, p.x, p.y, p.z);
          for (const auto& g : sc.boxes)
            EXPECT_FALSE(segment_crosses_box({pose.x, pose.y}, {w[0], w[1]}, g.box, 1e-6))
                << "point " << i << " of agent " << c.agent << " passes through box "
                << g.object_id;
        }
      }
      for (const auto& g : sc.boxes) {
        int best = 0;
        for (const auto& c : sc.clouds) best = std::max(best, count_points_on(c, g.object_id));
        EXPECT_GE(best, spec.min_points);
      }
      for (const int id : sc.occluded_ids) EXPECT_EQ(count_points_on(sc.clouds[0], id), 0);
    }
  }
}

TEST(GenerateScene, EgoFrameIsNotWorldFrame) {
  const auto sc = generate_scene(small_spec(), 2);
  EXPECT_NE(sc.agents[0].x, 0.0);
  const auto gt = boxes_in_frame(sc.boxes, sc.agents[0], small_spec().range);
  EXPECT_EQ(gt.size(), sc.boxes.size());
}

TEST(GenerateScene, RejectsInvalidSpecs) {
  SceneSpec s = small_spec();
  s.num_agents = 6;
  EXPECT_THROW(generate_scene(s, 0), SceneError);
  s = small_spec();
  s.num_objects = 0;
  EXPECT_THROW(generate_scene(s, 0), SceneError);
  s = small_spec();
  s.range.x_max = 200;
  EXPECT_THROW(generate_scene(s, 0), SceneError);
}

TEST(GenerateScene, InfeasibleSpecFailsAfterRetries) {
  SceneSpec s = small_spec();
  s.num_objects = 20;
  s.range = DetectionRange::scaled(0.06, 0.15);
  s.max_retries = 3;
  EXPECT_THROW(generate_scene(s, 0), SceneError);
}

TEST(SceneSpecJson, ParsesAndRejectsUnknownKeys) {
  const auto j = json::parse(R"({"num_agents": 4, "num_objects": 10, "occluder": "none",
                                 "range": {"scale": [0.2, 0.3]}, "lidar": {"beams": 8}})");
  const auto s = scene_spec_from_json(j);
  EXPECT_EQ(s.num_agents, 4);
  EXPECT_EQ(s.occluder, OccluderPolicy::none);
  EXPECT_NEAR(s.range.x_max, 28.16, 1e-9);
  EXPECT_EQ(s.lidar.beams, 8);
  EXPECT_THROW(scene_spec_from_json(json::parse(R"({"num_agnets": 3})")), SceneError);
  EXPECT_EQ(to_json(scene_spec_from_json(to_json(s))).dump(), to_json(s).dump());
}

}  // namespace
}  // namespace coopdet
