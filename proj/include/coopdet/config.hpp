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

// Experiment configuration: one JSON document with "seed", "scene", "model",
// "train", "eval" and "sweep" sections. Every section is optional; missing
// keys keep their defaults and unknown keys are errors.

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "coopdet/model.hpp"
#include "coopdet/scene_io.hpp"

namespace coopdet {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  long steps = 2000;
  double lr = 1e-3;
  double warmup_lr = 1e-5;
  double min_lr = 1e-5;
  long warmup_steps = 100;
  double weight_decay = 1e-4;
  double grad_clip = 1.0;
  int train_scenes = 500;  // size of the cycled scene pool
  std::uint64_t scene_seed = 100000;
  bool aux_loss = true;  // per-agent, per-layer loss against that agent's visible boxes
  double aux_weight = 1.0;
  double coop_weight = 1.0;
  LossWeights loss;
  PoseNoiseSpec pose_noise;  // optional augmentation on helper poses
  double time_limit_s = 0;   // stop early once exceeded; 0 means no limit
  long log_every = 50;
};

struct EvalConfig {
  int scenes = 200;
  std::uint64_t scene_seed = 900000;
  std::vector<double> iou_thresholds = {0.3, 0.5, 0.7};
  std::vector<std::string> methods = {"coop", "no_fusion", "late_fusion", "without_sqm"};
  std::optional<double> mu;  // defaults to model.mu
  std::optional<std::uint64_t> budget_bytes;
  PoseNoiseSpec pose_noise;
  std::uint64_t noise_seed = 0;
  double late_nms_iou = 0.5;
  double coop_nms_iou = 0;  // ablation flag; 0 keeps the NMS-free fused output
  int workers = 0;  // 0 = hardware concurrency
};

struct SweepConfig {
  std::string axis = "noise";  // num_queries | mu | noise | budget
  std::vector<double> values = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5};
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  SceneSpec scene;
  std::vector<int> agent_counts;  // scene i uses agent_counts[i % n]; empty = scene.num_agents
  ModelConfig model;
  TrainConfig train;
  EvalConfig eval;
  SweepConfig sweep;

  SceneSpec scene_for(std::size_t i) const {
    SceneSpec s = scene;
    if (!agent_counts.empty()) s.num_agents = agent_counts[i % agent_counts.size()];
    return s;
  }
};

namespace detail {

inline void check_keys(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [k, _] : j.items())
    if (!known.count(k)) throw ConfigError("unknown key '" + k + "' in " + where);
}

inline PoseNoiseSpec noise_from_json(const json& j, const std::string& where) {
  check_keys(j, {"sigma_xyz", "sigma_heading", "noise_z"}, where);
  PoseNoiseSpec n;
  n.sigma_xyz = j.value("sigma_xyz", n.sigma_xyz);
  n.sigma_heading = j.value("sigma_heading", n.sigma_heading);
  n.noise_z = j.value("noise_z", n.noise_z);
  return n;
}

inline json noise_to_json(const PoseNoiseSpec& n) {
  return {{"sigma_xyz", n.sigma_xyz}, {"sigma_heading", n.sigma_heading}, {"noise_z", n.noise_z}};
}

}  // namespace detail

inline void validate(const ExperimentConfig& c) {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  try {
    validate(c.scene);
    for (const int n : c.agent_counts) {
      SceneSpec s = c.scene;
      s.num_agents = n;
      validate(s);
    }
    validate(c.model);
    validate(c.train.pose_noise);
    validate(c.eval.pose_noise);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    fail(e.what());
  }
  const auto& r = c.model.encoder.grid.range;
  if (!(r.x_min == c.scene.range.x_min && r.x_max == c.scene.range.x_max && r.y_min == c.scene.range.y_min &&
        r.y_max == c.scene.range.y_max))
    fail("model grid range must equal the scene range");
  const auto& t = c.train;
  if (t.steps < 0 || t.warmup_steps < 0 || t.train_scenes < 1 || t.log_every < 1) fail("bad train counts");
  if (!(t.lr > 0) || t.min_lr < 0 || t.warmup_lr < 0 || t.weight_decay < 0 || t.grad_clip < 0)
    fail("bad optimiser settings");
  if (t.time_limit_s < 0) fail("time_limit_s must be >= 0");
  const auto& e = c.eval;
  if (e.scenes < 1) fail("eval.scenes must be >= 1");
  if (e.iou_thresholds.empty()) fail("eval.iou_thresholds must not be empty");
  for (const double v : e.iou_thresholds)
    if (!(v > 0 && v <= 1)) fail("IoU thresholds must lie in (0, 1]");
  for (const auto& m : e.methods) {
    try {
      method_from_string(m);
    } catch (const std::exception& ex) {
      fail(ex.what());
    }
  }
  if (e.mu && !(*e.mu > 0 && *e.mu <= 1)) fail("eval.mu must lie in (0, 1]");
  if (!(e.late_nms_iou > 0 && e.late_nms_iou <= 1)) fail("late_nms_iou must lie in (0, 1]");
  if (!(e.coop_nms_iou >= 0 && e.coop_nms_iou <= 1)) fail("coop_nms_iou must lie in [0, 1]");
  if (e.workers < 0) fail("eval.workers must be >= 0");
  static const std::set<std::string> axes = {"num_queries", "mu", "noise", "budget"};
  if (!axes.count(c.sweep.axis)) fail("sweep.axis must be one of num_queries, mu, noise, budget");
  if (c.sweep.values.empty()) fail("sweep.values must not be empty");
  for (const double v : c.sweep.values) {
    if (!(v >= 0)) fail("sweep values must be >= 0");
    if (c.sweep.axis == "mu" && !(v > 0 && v <= 1)) fail("mu sweep values must lie in (0, 1]");
    if (c.sweep.axis == "num_queries" && (v < 1 || v != std::floor(v))) fail("num_queries values must be positive integers");
  }
}

inline ExperimentConfig experiment_from_json(const json& j) {
  using detail::check_keys;
  ExperimentConfig c;
  try {
    check_keys(j, {"seed", "scene", "agent_counts", "model", "train", "eval", "sweep"}, "config");
    c.seed = j.value("seed", c.seed);
    if (j.contains("scene")) c.scene = scene_spec_from_json(j["scene"]);
    if (j.contains("agent_counts")) c.agent_counts = j["agent_counts"].get<std::vector<int>>();

    auto& m = c.model;
    m.encoder.grid.range = c.scene.range;
    if (j.contains("model")) {
      const auto& jm = j["model"];
      check_keys(jm, {"pillar_size", "max_points_per_pillar", "pillar_channels", "channels", "levels",
                      "num_queries", "query_dim", "heads", "points", "layers", "ffn_dim", "pe_frequencies",
                      "offset_scale_init", "refine_reference", "head_hidden", "prior_prob", "size_prior",
                      "mu", "fusion_heads", "source_embedding"},
                 "model");
      if (jm.contains("pillar_size")) {
        const auto& p = jm["pillar_size"];
        m.encoder.grid.dx = p.is_array() ? p.at(0).get<double>() : p.get<double>();
        m.encoder.grid.dy = p.is_array() ? p.at(1).get<double>() : p.get<double>();
      }
      m.encoder.grid.max_points_per_pillar = jm.value("max_points_per_pillar", m.encoder.grid.max_points_per_pillar);
      m.encoder.pillar_channels = jm.value("pillar_channels", m.encoder.pillar_channels);
      m.encoder.channels = jm.value("channels", m.encoder.channels);
      m.encoder.levels = jm.value("levels", m.encoder.levels);
      m.decoder.levels = m.encoder.levels;
      m.decoder.num_queries = jm.value("num_queries", m.decoder.num_queries);
      m.decoder.query_dim = jm.value("query_dim", m.decoder.query_dim);
      m.decoder.heads = jm.value("heads", m.decoder.heads);
      m.decoder.points = jm.value("points", m.decoder.points);
      m.decoder.layers = jm.value("layers", m.decoder.layers);
      m.decoder.ffn_dim = jm.value("ffn_dim", m.decoder.ffn_dim);
      m.decoder.pe_frequencies = jm.value("pe_frequencies", m.decoder.pe_frequencies);
      m.decoder.offset_scale_init = jm.value("offset_scale_init", m.decoder.offset_scale_init);
      m.decoder.refine_reference = jm.value("refine_reference", m.decoder.refine_reference);
      m.head.hidden = jm.value("head_hidden", m.head.hidden);
      m.head.prior_prob = jm.value("prior_prob", m.head.prior_prob);
      if (jm.contains("size_prior"))
        for (int k = 0; k < 3; ++k) m.head.size_prior[k] = jm["size_prior"].at(std::size_t(k)).get<double>();
      m.fusion.mu = jm.value("mu", m.fusion.mu);
      m.fusion.heads = jm.value("fusion_heads", m.fusion.heads);
      m.fusion.source_embedding = jm.value("source_embedding", m.fusion.source_embedding);
    }
    m.seed = c.seed;

    if (j.contains("train")) {
      const auto& jt = j["train"];
      check_keys(jt, {"steps", "lr", "warmup_lr", "min_lr", "warmup_steps", "weight_decay", "grad_clip",
                      "train_scenes", "scene_seed", "aux_loss", "aux_weight", "coop_weight", "loss",
                      "pose_noise", "time_limit_s", "log_every"},
                 "train");
      auto& t = c.train;
      t.steps = jt.value("steps", t.steps);
      t.lr = jt.value("lr", t.lr);
      t.warmup_lr = jt.value("warmup_lr", t.warmup_lr);
      t.min_lr = jt.value("min_lr", t.min_lr);
      t.warmup_steps = jt.value("warmup_steps", t.warmup_steps);
      t.weight_decay = jt.value("weight_decay", t.weight_decay);
      t.grad_clip = jt.value("grad_clip", t.grad_clip);
      t.train_scenes = jt.value("train_scenes", t.train_scenes);
      t.scene_seed = jt.value("scene_seed", t.scene_seed);
      t.aux_loss = jt.value("aux_loss", t.aux_loss);
      t.aux_weight = jt.value("aux_weight", t.aux_weight);
      t.coop_weight = jt.value("coop_weight", t.coop_weight);
      t.time_limit_s = jt.value("time_limit_s", t.time_limit_s);
      t.log_every = jt.value("log_every", t.log_every);
      if (jt.contains("pose_noise")) t.pose_noise = detail::noise_from_json(jt["pose_noise"], "train.pose_noise");
      if (jt.contains("loss")) {
        const auto& jl = jt["loss"];
        check_keys(jl, {"cls", "box", "ref", "focal_alpha", "focal_gamma"}, "train.loss");
        t.loss.cls = jl.value("cls", t.loss.cls);
        t.loss.box = jl.value("box", t.loss.box);
        t.loss.ref = jl.value("ref", t.loss.ref);
        t.loss.focal_alpha = jl.value("focal_alpha", t.loss.focal_alpha);
        t.loss.focal_gamma = jl.value("focal_gamma", t.loss.focal_gamma);
      }
    }

    if (j.contains("eval")) {
      const auto& je = j["eval"];
      check_keys(je, {"scenes", "scene_seed", "iou_thresholds", "methods", "mu", "budget_bytes", "pose_noise",
                      "noise_seed", "late_nms_iou", "coop_nms_iou", "workers"},
                 "eval");
      auto& e = c.eval;
      e.scenes = je.value("scenes", e.scenes);
      e.scene_seed = je.value("scene_seed", e.scene_seed);
      if (je.contains("iou_thresholds")) e.iou_thresholds = je["iou_thresholds"].get<std::vector<double>>();
      if (je.contains("methods")) e.methods = je["methods"].get<std::vector<std::string>>();
      if (je.contains("mu") && !je["mu"].is_null()) e.mu = je["mu"].get<double>();
      if (je.contains("budget_bytes") && !je["budget_bytes"].is_null())
        e.budget_bytes = je["budget_bytes"].get<std::uint64_t>();
      if (je.contains("pose_noise")) e.pose_noise = detail::noise_from_json(je["pose_noise"], "eval.pose_noise");
      e.noise_seed = je.value("noise_seed", e.noise_seed);
      e.late_nms_iou = je.value("late_nms_iou", e.late_nms_iou);
      e.coop_nms_iou = je.value("coop_nms_iou", e.coop_nms_iou);
      e.workers = je.value("workers", e.workers);
    }

    if (j.contains("sweep")) {
      const auto& js = j["sweep"];
      check_keys(js, {"axis", "values"}, "sweep");
      c.sweep.axis = js.value("axis", c.sweep.axis);
      if (js.contains("values")) c.sweep.values = js["values"].get<std::vector<double>>();
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  validate(c);
  return c;
}

inline json to_json(const ExperimentConfig& c) {
  const auto& m = c.model;
  json e = {{"scenes", c.eval.scenes},
            {"scene_seed", c.eval.scene_seed},
            {"iou_thresholds", c.eval.iou_thresholds},
            {"methods", c.eval.methods},
            {"mu", c.eval.mu ? json(*c.eval.mu) : json(nullptr)},
            {"budget_bytes", c.eval.budget_bytes ? json(*c.eval.budget_bytes) : json(nullptr)},
            {"pose_noise", detail::noise_to_json(c.eval.pose_noise)},
            {"noise_seed", c.eval.noise_seed},
            {"late_nms_iou", c.eval.late_nms_iou},
            {"coop_nms_iou", c.eval.coop_nms_iou},
            {"workers", c.eval.workers}};
  return {{"seed", c.seed},
          {"scene", to_json(c.scene)},
          {"agent_counts", c.agent_counts},
          {"model",
           {{"pillar_size", {m.encoder.grid.dx, m.encoder.grid.dy}},
            {"max_points_per_pillar", m.encoder.grid.max_points_per_pillar},
            {"pillar_channels", m.encoder.pillar_channels},
            {"channels", m.encoder.channels},
            {"levels", m.encoder.levels},
            {"num_queries", m.decoder.num_queries},
            {"query_dim", m.decoder.query_dim},
            {"heads", m.decoder.heads},
            {"points", m.decoder.points},
            {"layers", m.decoder.layers},
            {"ffn_dim", m.decoder.ffn_dim},
            {"pe_frequencies", m.decoder.pe_frequencies},
            {"offset_scale_init", m.decoder.offset_scale_init},
            {"refine_reference", m.decoder.refine_reference},
            {"head_hidden", m.head.hidden},
            {"prior_prob", m.head.prior_prob},
            {"size_prior", {m.head.size_prior[0], m.head.size_prior[1], m.head.size_prior[2]}},
            {"mu", m.fusion.mu},
            {"fusion_heads", m.fusion.heads},
            {"source_embedding", m.fusion.source_embedding}}},
          {"train",
           {{"steps", c.train.steps},
            {"lr", c.train.lr},
            {"warmup_lr", c.train.warmup_lr},
            {"min_lr", c.train.min_lr},
            {"warmup_steps", c.train.warmup_steps},
            {"weight_decay", c.train.weight_decay},
            {"grad_clip", c.train.grad_clip},
            {"train_scenes", c.train.train_scenes},
            {"scene_seed", c.train.scene_seed},
            {"aux_loss", c.train.aux_loss},
            {"aux_weight", c.train.aux_weight},
            {"coop_weight", c.train.coop_weight},
            {"loss",
             {{"cls", c.train.loss.cls},
              {"box", c.train.loss.box},
              {"ref", c.train.loss.ref},
              {"focal_alpha", c.train.loss.focal_alpha},
              {"focal_gamma", c.train.loss.focal_gamma}}},
            {"pose_noise", detail::noise_to_json(c.train.pose_noise)},
            {"time_limit_s", c.train.time_limit_s},
            {"log_every", c.train.log_every}}},
          {"eval", e},
          {"sweep", {{"axis", c.sweep.axis}, {"values", c.sweep.values}}}};
}

inline ExperimentConfig load_experiment(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const std::exception& e) {
    throw ConfigError("config parse error: " + std::string(e.what()));
  }
  return experiment_from_json(j);
}

}  // namespace coopdet
