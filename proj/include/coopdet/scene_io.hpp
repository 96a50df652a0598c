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

// JSON schema (version 1) for scenes:
//
//   {"version": 1, "seed": u64,
//    "agents": [{"x","y","z","yaw"}],
//    "boxes":  [{"id", "center": [x,y,z], "size": [l,w,h], "yaw"}],
//    "occluded_ids": [int],
//    "clouds": [{"agent", "frame": {pose}, "points": [[x,y,z,i]], "object_ids": [int]}]}
//
// Boxes and agent poses are in the world frame; cloud points in their
// agent's frame. Doubles are written in shortest round-trip form.

#include <string>

#include "coopdet/scene.hpp"
#include "json.hpp"

namespace coopdet {

using json = nlohmann::json;

inline json to_json(const AgentPose& p) { return {{"x", p.x}, {"y", p.y}, {"z", p.z}, {"yaw", p.yaw}}; }

inline AgentPose pose_from_json(const json& j) {
  return {j.at("x").get<double>(), j.at("y").get<double>(), j.at("z").get<double>(),
          j.at("yaw").get<double>()};
}

inline json to_json(const GroundTruthBox& g) {
  const auto& b = g.box;
  return {{"id", g.object_id}, {"center", {b.x, b.y, b.z}}, {"size", {b.l, b.w, b.h}}, {"yaw", b.yaw}};
}

inline GroundTruthBox box_from_json(const json& j) {
  GroundTruthBox g;
  g.object_id = j.at("id").get<int>();
  const auto& c = j.at("center");
  const auto& s = j.at("size");
  g.box = {c.at(0).get<double>(), c.at(1).get<double>(), c.at(2).get<double>(),
           s.at(0).get<double>(), s.at(1).get<double>(), s.at(2).get<double>(),
           j.at("yaw").get<double>()};
  if (!(g.box.l > 0 && g.box.w > 0 && g.box.h > 0)) throw SceneError("box size must be positive");
  return g;
}

inline json to_json(const PointCloud& c) {
  json pts = json::array();
  for (const auto& p : c.points) pts.push_back({p.x, p.y, p.z, p.intensity});
  return {{"agent", c.agent}, {"frame", to_json(c.frame)}, {"points", pts}, {"object_ids", c.object_ids}};
}

inline PointCloud cloud_from_json(const json& j) {
  PointCloud c;
  c.agent = j.at("agent").get<int>();
  c.frame = pose_from_json(j.at("frame"));
  for (const auto& p : j.at("points"))
    c.points.push_back({p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>(),
                        p.at(3).get<double>()});
  c.object_ids = j.at("object_ids").get<std::vector<int>>();
  if (c.object_ids.size() != c.points.size()) throw SceneError("object_ids length mismatch");
  return c;
}

inline json to_json(const Scene& s) {
  json j;
  j["version"] = 1;
  j["seed"] = s.seed;
  j["agents"] = json::array();
  for (const auto& a : s.agents) j["agents"].push_back(to_json(a));
  j["boxes"] = json::array();
  for (const auto& b : s.boxes) j["boxes"].push_back(to_json(b));
  j["occluded_ids"] = s.occluded_ids;
  j["clouds"] = json::array();
  for (const auto& c : s.clouds) j["clouds"].push_back(to_json(c));
  return j;
}

inline Scene scene_from_json(const json& j) {
  if (j.value("version", 0) != 1) throw SceneError("unsupported scene schema version");
  Scene s;
  s.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& a : j.at("agents")) s.agents.push_back(pose_from_json(a));
  for (const auto& b : j.at("boxes")) s.boxes.push_back(box_from_json(b));
  s.occluded_ids = j.value("occluded_ids", std::vector<int>{});
  for (const auto& c : j.at("clouds")) s.clouds.push_back(cloud_from_json(c));
  return s;
}

inline json to_json(const DetectionRange& r) {
  return {{"x", {r.x_min, r.x_max}}, {"y", {r.y_min, r.y_max}}, {"z", {r.z_min, r.z_max}}};
}

inline DetectionRange range_from_json(const json& j) {
  DetectionRange r;
  if (j.contains("scale")) {
    const auto& s = j.at("scale");
    r = s.is_array() ? DetectionRange::scaled(s.at(0).get<double>(), s.at(1).get<double>())
                     : DetectionRange::scaled(s.get<double>(), s.get<double>());
  }
  if (j.contains("x")) {
    r.x_min = j["x"].at(0).get<double>();
    r.x_max = j["x"].at(1).get<double>();
  }
  if (j.contains("y")) {
    r.y_min = j["y"].at(0).get<double>();
    r.y_max = j["y"].at(1).get<double>();
  }
  if (j.contains("z")) {
    r.z_min = j["z"].at(0).get<double>();
    r.z_max = j["z"].at(1).get<double>();
  }
  return r;
}

inline json to_json(const SceneSpec& s) {
  return {{"num_agents", s.num_agents},
          {"num_objects", s.num_objects},
          {"range", to_json(s.range)},
          {"occluder", s.occluder == OccluderPolicy::none ? "none" : "behind_vehicle"},
          {"num_occluded", s.num_occluded},
          {"min_points", s.min_points},
          {"object_yaw_jitter_deg", s.object_yaw_jitter_deg},
          {"agent_yaw_jitter_deg", s.agent_yaw_jitter_deg},
          {"min_occluded_distance", s.min_occluded_distance},
          {"helper_distance", {s.helper_distance_min, s.helper_distance_max}},
          {"world_extent", s.world_extent},
          {"max_retries", s.max_retries},
          {"lidar",
           {{"azimuth_res_deg", s.lidar.azimuth_res_deg},
            {"beams", s.lidar.beams},
            {"elevation_deg", {s.lidar.elevation_min_deg, s.lidar.elevation_max_deg}},
            {"max_range", s.lidar.max_range},
            {"sensor_height", s.lidar.sensor_height},
            {"range_noise_std", s.lidar.range_noise_std}}}};
}

// Missing keys keep their defaults; unknown keys are rejected so typos in a
// config surface as errors.
inline SceneSpec scene_spec_from_json(const json& j) {
  static const char* known[] = {"num_agents", "num_objects", "range", "occluder", "num_occluded",
                                "min_points", "object_yaw_jitter_deg", "agent_yaw_jitter_deg",
                                "min_occluded_distance", "helper_distance", "world_extent",
                                "max_retries", "lidar"};
  for (const auto& [k, _] : j.items())
    if (std::find(std::begin(known), std::end(known), k) == std::end(known))
      throw SceneError("unknown scene key: " + k);
  SceneSpec s;
  s.num_agents = j.value("num_agents", s.num_agents);
  s.num_objects = j.value("num_objects", s.num_objects);
  if (j.contains("range")) s.range = range_from_json(j["range"]);
  if (j.contains("occluder")) {
    const auto p = j["occluder"].get<std::string>();
    if (p == "none") {
      s.occluder = OccluderPolicy::none;
    } else if (p == "behind_vehicle") {
      s.occluder = OccluderPolicy::behind_vehicle;
    } else {
      throw SceneError("unknown occluder policy: " + p);
    }
  }
  s.num_occluded = j.value("num_occluded", s.num_occluded);
  s.min_points = j.value("min_points", s.min_points);
  s.object_yaw_jitter_deg = j.value("object_yaw_jitter_deg", s.object_yaw_jitter_deg);
  s.agent_yaw_jitter_deg = j.value("agent_yaw_jitter_deg", s.agent_yaw_jitter_deg);
  s.min_occluded_distance = j.value("min_occluded_distance", s.min_occluded_distance);
  if (j.contains("helper_distance")) {
    s.helper_distance_min = j["helper_distance"].at(0).get<double>();
    s.helper_distance_max = j["helper_distance"].at(1).get<double>();
  }
  s.world_extent = j.value("world_extent", s.world_extent);
  s.max_retries = j.value("max_retries", s.max_retries);
  if (j.contains("lidar")) {
    const auto& l = j["lidar"];
    s.lidar.azimuth_res_deg = l.value("azimuth_res_deg", s.lidar.azimuth_res_deg);
    s.lidar.beams = l.value("beams", s.lidar.beams);
    if (l.contains("elevation_deg")) {
      s.lidar.elevation_min_deg = l["elevation_deg"].at(0).get<double>();
      s.lidar.elevation_max_deg = l["elevation_deg"].at(1).get<double>();
    }
    s.lidar.max_range = l.value("max_range", s.lidar.max_range);
    s.lidar.sensor_height = l.value("sensor_height", s.lidar.sensor_height);
    s.lidar.range_noise_std = l.value("range_noise_std", s.lidar.range_noise_std);
  }
  validate(s);
  return s;
}

}  // namespace coopdet
