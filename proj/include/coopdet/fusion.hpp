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

// Cross-agent query fusion: positional refinement in the ego frame,
// sigmoid-cosine matching into star graphs, masked attention aggregation and
// confidence-based selection.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "coopdet/point_detr.hpp"

namespace coopdet {

enum class FusionMode { coop, without_sqm };

struct FusionConfig {
  double mu = 0.3;
  int heads = 8;
  bool source_embedding = true;
};

// Queries of all agents stacked in agent order, with reference points in
// the ego frame.
template <typename T>
struct RefinedSet {
  ad::Tensor<T> base;     // q            [n×C]
  ad::Tensor<T> refined;  // q + PE(r_ego) [n×C]
  ad::Tensor<T> refs;     // r_ego        [n×3]
  std::vector<int> owner, index;
  std::vector<T> frame_yaw;  // owner yaw relative to the ego

  std::size_t size() const { return owner.size(); }
};

// Moves one agent's reference points into the ego frame given the owner's
// pose relative to the ego, and adds the shared positional embedding.
template <typename T>
void refine_into(RefinedSet<T>& set, const AgentQueries<T>& q, const AgentPose& rel,
                 const PositionalEmbedding<T>& pe, const DetectionRange& ego_range,
                 std::vector<ad::Tensor<T>>& base, std::vector<ad::Tensor<T>>& refined,
                 std::vector<ad::Tensor<T>>& refs) {
  const std::size_t n = q.features.dim(0);
  const std::vector<T> yaw(n, T(rel.yaw));
  const auto xy = ad::add_row(ad::rotate_pairs(ad::slice(q.refs, 1, 0, 2), yaw),
                              ad::Tensor<T>({2}, {T(rel.x), T(rel.y)}));
  const auto z = ad::add_scalar(ad::slice(q.refs, 1, 2, 3), T(rel.z));
  const auto r = ad::concat<T>({xy, z}, 1);
  base.push_back(q.features);
  refs.push_back(r);
  refined.push_back(ad::add(q.features, pe(metric_to_unit(r, ego_range))));
  for (std::size_t i = 0; i < n; ++i) {
    set.owner.push_back(q.owner);
    set.index.push_back(int(i));
    set.frame_yaw.push_back(T(rel.yaw));
  }
}

template <typename T>
RefinedSet<T> refine(const std::vector<AgentQueries<T>>& agents, const std::vector<AgentPose>& rel,
                     const PositionalEmbedding<T>& pe, const DetectionRange& ego_range) {
  if (agents.size() != rel.size()) throw std::invalid_argument("refine: one pose per agent");
  RefinedSet<T> set;
  std::vector<ad::Tensor<T>> base, refined, refs;
  for (std::size_t a = 0; a < agents.size(); ++a)
    refine_into(set, agents[a], rel[a], pe, ego_range, base, refined, refs);
  set.base = ad::concat(base, 0);
  set.refined = ad::concat(refined, 0);
  set.refs = ad::concat(refs, 0);
  return set;
}

// s_ij = sigmoid(cos(q̃_i, q̃_j)) over all pairs, row-major n×n. A zero-norm
// vector has similarity sigmoid(0) with everything; `zero_norm` counts them.
template <typename T>
std::vector<double> similarity_matrix(const ad::Tensor<T>& refined, std::size_t* zero_norm = nullptr) {
  const std::size_t n = refined.dim(0), C = refined.dim(1);
  std::vector<double> norm(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0;
    for (std::size_t c = 0; c < C; ++c) s += double(refined[i * C + c]) * double(refined[i * C + c]);
    norm[i] = std::sqrt(s);
  }
  if (zero_norm) *zero_norm = std::size_t(std::count(norm.begin(), norm.end(), 0.0));
  std::vector<double> sim(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) {
      double cosv = 0;
      if (norm[i] > 0 && norm[j] > 0) {
        double dot = 0;
        for (std::size_t c = 0; c < C; ++c) dot += double(refined[i * C + c]) * double(refined[j * C + c]);
        cosv = dot / (norm[i] * norm[j]);
      }
      sim[i * n + j] = sim[j * n + i] = 1.0 / (1.0 + std::exp(-cosv));
    }
  return sim;
}

// Star-graph membership: j joins the graph centred on i iff j belongs to a
// different agent and s_ij ≥ μ.
inline std::vector<std::uint8_t> graph_mask(const std::vector<double>& sim,
                                            const std::vector<int>& owner, double mu) {
  if (!(mu > 0 && mu < 1.0 + 1e-12)) throw std::invalid_argument("mu must lie in (0, 1]");
  const std::size_t n = owner.size();
  std::vector<std::uint8_t> mask(n * n, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      mask[i * n + j] = owner[i] != owner[j] && sim[i * n + j] >= mu;
  return mask;
}

inline std::vector<std::vector<std::size_t>> graph_members(const std::vector<std::uint8_t>& mask,
                                                           std::size_t n) {
  std::vector<std::vector<std::size_t>> out(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (mask[i * n + j]) out[i].push_back(j);
  return out;
}

// q̂_i = q_i + W_o · MHA(x_i, {x_j : mask_ij}) with x = q̃ + source embedding
// (ego vs. other). W_o has no bias, so an empty graph returns q_i exactly.
template <typename T>
class QueryAggregator {
 public:
  QueryAggregator() = default;
  QueryAggregator(ad::ParameterStore<T>& store, std::size_t c_q, const FusionConfig& cfg,
                  std::mt19937_64& rng)
      : cfg_(cfg) {
    if (cfg.heads < 1 || c_q % std::size_t(cfg.heads) != 0)
      throw std::invalid_argument("fusion heads must divide query_dim");
    wq_ = ad::Linear<T>(store, "fuse.q", c_q, c_q, rng);
    wk_ = ad::Linear<T>(store, "fuse.k", c_q, c_q, rng, false);
    wv_ = ad::Linear<T>(store, "fuse.v", c_q, c_q, rng);
    wo_ = ad::Linear<T>(store, "fuse.o", c_q, c_q, rng, false);
    if (cfg.source_embedding)
      source_ = store.add("fuse.source", ad::normal_tensor<T>({2, c_q}, T(0.1), rng));
  }

  const FusionConfig& config() const { return cfg_; }
  ad::Linear<T>& output_projection() { return wo_; }

  ad::Tensor<T> operator()(const RefinedSet<T>& set, const std::vector<std::uint8_t>& mask,
                           std::vector<T>* weights = nullptr) const {
    ad::Tensor<T> x = set.refined;
    if (source_.defined()) {
      std::vector<std::size_t> rows(set.size());
      for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = set.owner[i] == 0 ? 0 : 1;
      x = ad::add(x, ad::gather_rows(source_, rows));
    }
    const auto att = ad::multihead_attention(wq_(x), wk_(x), wv_(x), std::size_t(cfg_.heads), &mask, weights);
    return ad::add(set.base, wo_(att));
  }

 private:
  FusionConfig cfg_;
  ad::Linear<T> wq_, wk_, wv_, wo_;
  ad::Tensor<T> source_;
};

// Indices of the top-N by descending confidence; ties keep the declared
// (agent, query index) order.
inline std::vector<std::size_t> select_top(const std::vector<double>& confidence,
                                           const std::vector<int>& owner,
                                           const std::vector<int>& index, std::size_t N) {
  std::vector<std::size_t> order(confidence.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (confidence[a] != confidence[b]) return confidence[a] > confidence[b];
    if (owner[a] != owner[b]) return owner[a] < owner[b];
    return index[a] < index[b];
  });
  if (order.size() > N) order.resize(N);
  return order;
}

}  // namespace coopdet
