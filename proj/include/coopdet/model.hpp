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

// Full detector: pillar encoder → point decoder → head for one agent, plus
// the cooperative pipelines that exchange queries, poses or boxes.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "coopdet/comms.hpp"
#include "coopdet/eval.hpp"
#include "coopdet/fusion.hpp"
#include "coopdet/head_loss.hpp"
#include "coopdet/pillar.hpp"
#include "coopdet/point_detr.hpp"
#include "coopdet/scene.hpp"

namespace coopdet {

struct ModelConfig {
  EncoderConfig encoder;
  DecoderConfig decoder;
  HeadConfig head;
  FusionConfig fusion;
  std::uint64_t seed = 0;
};

inline void validate(const ModelConfig& m) {
  validate(m.encoder.grid);
  validate(m.decoder);
  if (m.encoder.levels != m.decoder.levels)
    throw std::invalid_argument("model config: encoder and decoder level counts differ");
  if (m.fusion.heads < 1 || m.decoder.query_dim % m.fusion.heads != 0)
    throw std::invalid_argument("model config: fusion heads must divide query_dim");
  if (!(m.fusion.mu > 0 && m.fusion.mu <= 1))
    throw std::invalid_argument("model config: mu must lie in (0, 1]");
  if (m.head.hidden < 1 || !(m.head.prior_prob > 0 && m.head.prior_prob < 1))
    throw std::invalid_argument("model config: bad head settings");
}

template <typename T>
struct FusionResult {
  RefinedSet<T> set;
  std::vector<std::uint8_t> mask;
  ad::Tensor<T> fused;
  std::vector<std::size_t> selected;  // rows of `set`, best first
  HeadOutput<T> head;                 // selected rows only
  ad::Tensor<T> refs;                 // selected rows only, ego frame
};

template <typename T>
class CoopModel {
 public:
  explicit CoopModel(const ModelConfig& cfg) : cfg_(cfg) {
    validate(cfg);
    std::mt19937_64 rng(cfg.seed);
    encoder_ = PillarEncoder<T>(store_, cfg.encoder, rng);
    decoder_ = PointDecoder<T>(store_, cfg.decoder, std::size_t(cfg.encoder.channels), cfg.encoder.grid, rng);
    head_ = DetectionHead<T>(store_, std::size_t(cfg.decoder.query_dim), cfg.head, rng);
    aggregator_ = QueryAggregator<T>(store_, std::size_t(cfg.decoder.query_dim), cfg.fusion, rng);
  }

  CoopModel(const CoopModel&) = delete;
  CoopModel& operator=(const CoopModel&) = delete;

  const ModelConfig& config() const { return cfg_; }
  ad::ParameterStore<T>& parameters() { return store_; }
  const ad::ParameterStore<T>& parameters() const { return store_; }
  const DetectionRange& range() const { return cfg_.encoder.grid.range; }
  std::size_t num_queries() const { return std::size_t(cfg_.decoder.num_queries); }

  // One agent's decoder trace in its own frame.
  DecoderTrace<T> perceive(const PointCloud& cloud, std::uint64_t pillar_seed = 0) const {
    const auto grid = pillarize(cloud, cfg_.encoder.grid, pillar_seed);
    auto trace = decoder_(encoder_(grid), cloud.agent);
    return trace;
  }

  HeadOutput<T> detect_local(const AgentQueries<T>& q) const {
    return head_(q.features, q.refs, std::vector<T>(q.features.dim(0), T(0)));
  }

  // Stacks every agent's queries in the ego frame, builds the graphs,
  // aggregates and keeps the N_q most confident fused queries.
  FusionResult<T> fuse(const std::vector<AgentQueries<T>>& agents, const std::vector<AgentPose>& rel,
                       FusionMode mode, double mu) const {
    FusionResult<T> r;
    r.set = refine(agents, rel, decoder_.pe(), range());
    const std::size_t n = r.set.size();
    if (mode == FusionMode::coop) {
      r.mask = graph_mask(similarity_matrix(r.set.refined), r.set.owner, mu);
    } else {
      // No matching: every query attends to every query of the other agents.
      r.mask.assign(n * n, 0);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) r.mask[i * n + j] = r.set.owner[i] != r.set.owner[j];
    }
    r.fused = aggregator_(r.set, r.mask);
    const auto logits = head_.classify(r.fused);
    std::vector<double> conf(n);
    for (std::size_t i = 0; i < n; ++i) conf[i] = double(logits[i]);
    r.selected = select_top(conf, r.set.owner, r.set.index, num_queries());
    const auto q = ad::gather_rows(r.fused, r.selected);
    r.refs = ad::gather_rows(r.set.refs, r.selected);
    std::vector<T> yaw;
    for (const auto i : r.selected) yaw.push_back(r.set.frame_yaw[i]);
    r.head = head_(q, r.refs, yaw);
    return r;
  }

 private:
  ModelConfig cfg_;
  ad::ParameterStore<T> store_;
  PillarEncoder<T> encoder_;
  PointDecoder<T> decoder_;
  DetectionHead<T> head_;
  QueryAggregator<T> aggregator_;
};

// ---------------------------------------------------------------------------
// Evaluation pipelines (inference only, float).

enum class Method { coop, no_fusion, late_fusion, without_sqm };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::coop: return "coop";
    case Method::no_fusion: return "no_fusion";
    case Method::late_fusion: return "late_fusion";
    case Method::without_sqm: return "without_sqm";
  }
  return "?";
}

inline Method method_from_string(const std::string& s) {
  for (const auto m : {Method::coop, Method::no_fusion, Method::late_fusion, Method::without_sqm})
    if (to_string(m) == s) return m;
  throw std::invalid_argument("unknown method '" + s + "'");
}

struct PipelineOptions {
  Method method = Method::coop;
  double mu = 0.3;
  std::optional<std::uint64_t> budget_bytes;  // unlimited when empty
  PoseNoiseSpec pose_noise;                   // applied to every non-ego sender's pose
  std::uint64_t noise_seed = 0;
  double late_nms_iou = 0.5;
  double coop_nms_iou = 0;  // 0 = off; rotated NMS on the fused output, for ablation only
};

struct FrameOutput {
  std::vector<Detection> detections;  // ego frame, centre inside the ego range
  std::uint64_t payload_bytes = 0;
  std::uint64_t metadata_bytes = 0;
  std::size_t messages_delivered = 0;
};

// Bytes of one late-fusion box: 7 box floats and a score.
constexpr std::uint64_t kLateBoxBytes = 8 * 4;

namespace detail {

inline std::uint64_t noise_seed_for(std::uint64_t base, std::uint64_t scene_seed, int agent) {
  std::seed_seq seq{std::uint32_t(base), std::uint32_t(base >> 32), std::uint32_t(scene_seed),
                    std::uint32_t(scene_seed >> 32), std::uint32_t(agent)};
  std::uint32_t w[2];
  seq.generate(w, w + 2);
  return (std::uint64_t(w[0]) << 32) | w[1];
}

inline std::vector<Detection> in_range(std::vector<Detection> dets, const DetectionRange& r) {
  std::erase_if(dets, [&](const Detection& d) { return !r.contains_bev(d.box.x, d.box.y); });
  return dets;
}

}  // namespace detail

// Pose agent `a` reports on the wire: its true world pose plus noise; the
// ego's own pose is exact.
inline AgentPose reported_pose(const Scene& s, int a, const PipelineOptions& opt) {
  if (a == 0) return s.agents[0];
  return apply_pose_noise(s.agents[std::size_t(a)], opt.pose_noise,
                          detail::noise_seed_for(opt.noise_seed, s.seed, a));
}

inline FrameOutput run_frame(const CoopModel<float>& model, const Scene& scene, const PipelineOptions& opt) {
  ad::NoGradScope<float> nograd;
  FrameOutput out;
  const auto& ego_pose = scene.agents[0];
  const auto ego_trace = model.perceive(scene.clouds[0]);
  const auto& ego_q = ego_trace.layers.back();
  if (opt.method == Method::no_fusion) {
    out.detections = detail::in_range(to_detections(model.detect_local(ego_q)), model.range());
    return out;
  }
  if (opt.method == Method::late_fusion) {
    std::vector<Detection> all = to_detections(model.detect_local(ego_q));
    std::uint64_t budget_left = opt.budget_bytes.value_or(~std::uint64_t(0));
    for (std::size_t a = 1; a < scene.agents.size(); ++a) {
      const auto trace = model.perceive(scene.clouds[a]);
      auto dets = to_detections(model.detect_local(trace.layers.back()), {}, {});
      const std::uint64_t bytes = dets.size() * kLateBoxBytes;
      if (bytes > budget_left) continue;
      budget_left -= bytes;
      out.payload_bytes += bytes;
      out.metadata_bytes += kHeaderBytes + kPoseBytes;
      ++out.messages_delivered;
      const auto rel = relative_pose(ego_pose, reported_pose(scene, int(a), opt));
      for (auto& d : dets) {
        d.box = box_from_frame(d.box, rel);
        d.owner = int(a);
        all.push_back(d);
      }
    }
    out.detections = detail::in_range(rotated_nms(std::move(all), opt.late_nms_iou), model.range());
    return out;
  }
  // Query exchange through the wire format.
  std::vector<QueryMessage> outgoing;
  for (std::size_t a = 1; a < scene.agents.size(); ++a) {
    const auto trace = model.perceive(scene.clouds[a]);
    outgoing.push_back(make_message(to_object_queries(trace.layers.back()), std::uint16_t(a),
                                    reported_pose(scene, int(a), opt)));
  }
  if (opt.budget_bytes) outgoing = enforce_budget(std::move(outgoing), *opt.budget_bytes);
  std::vector<AgentQueries<float>> agents = {ego_q};
  std::vector<AgentPose> rel = {AgentPose{}};
  for (const auto& msg : outgoing) {
    const auto m = deserialize(serialize(msg));
    out.payload_bytes += m.payload_bytes();
    out.metadata_bytes += m.metadata_bytes();
    ++out.messages_delivered;
    AgentQueries<float> q;
    q.owner = m.sender;
    q.features = ad::Tensor<float>({m.num_queries, m.query_dim}, m.queries);
    q.refs = ad::Tensor<float>({m.num_queries, 3}, m.reference_points);
    agents.push_back(q);
    rel.push_back(relative_pose(ego_pose, m.pose.to_pose()));
  }
  const auto mode = opt.method == Method::coop ? FusionMode::coop : FusionMode::without_sqm;
  const auto fr = model.fuse(agents, rel, mode, opt.mu);
  std::vector<int> owner, source;
  for (const auto i : fr.selected) {
    owner.push_back(fr.set.owner[i]);
    source.push_back(fr.set.index[i]);
  }
  auto dets = to_detections(fr.head, owner, source);
  if (opt.coop_nms_iou > 0) dets = rotated_nms(std::move(dets), opt.coop_nms_iou);
  out.detections = detail::in_range(std::move(dets), model.range());
  return out;
}

// Ego-frame evaluation targets: every box whose centre lies in the ego range.
inline std::vector<Box3D> ego_ground_truth(const Scene& s, const DetectionRange& r) {
  std::vector<Box3D> out;
  for (const auto& g : boxes_in_frame(s.boxes, s.agents[0], r)) out.push_back(g.box);
  return out;
}

}  // namespace coopdet
