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

// Classification / box heads and the Hungarian set-to-set loss.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "coopdet/ad/nn.hpp"
#include "coopdet/geometry.hpp"

namespace coopdet {

// Box parameter layout used for regression targets and L1 costs.
constexpr std::size_t kBoxParams = 8;  // x, y, z, l, w, h, sin yaw, cos yaw

inline std::array<double, kBoxParams> box_params(const Box3D& b) {
  return {b.x, b.y, b.z, b.l, b.w, b.h, std::sin(b.yaw), std::cos(b.yaw)};
}

struct Detection {
  double score = 0;
  Box3D box;
  int owner = 0;
  int source_query = 0;
};

struct HeadConfig {
  int hidden = 64;
  double prior_prob = 0.01;
  double size_prior[3] = {4.5, 1.8, 1.6};
};

template <typename T>
struct HeadOutput {
  ad::Tensor<T> logits;  // [N×1]
  ad::Tensor<T> boxes;   // [N×8]
};

inline double inv_softplus(double y) { return y > 20 ? y : std::log(std::expm1(y)); }

template <typename T>
class DetectionHead {
 public:
  DetectionHead() = default;
  DetectionHead(ad::ParameterStore<T>& store, std::size_t c_q, const HeadConfig& cfg,
                std::mt19937_64& rng)
      : cfg_(cfg) {
    cls_ = ad::Mlp2<T>(store, "head.cls", c_q, std::size_t(cfg.hidden), 1, rng);
    box_ = ad::Mlp2<T>(store, "head.box", c_q, std::size_t(cfg.hidden), kBoxParams, rng);
    auto b = cls_.fc2.bias.mutable_data();
    b[0] = T(-std::log((1 - cfg.prior_prob) / cfg.prior_prob));
    auto w = box_.fc2.weight.mutable_data();
    for (auto& v : w) v *= T(0.1);
  }

  ad::Mlp2<T>& box_mlp() { return box_; }
  ad::Mlp2<T>& cls_mlp() { return cls_; }

  ad::Tensor<T> classify(const ad::Tensor<T>& q) const { return cls_(q); }

  // Decodes boxes for queries q[N×C] anchored at metric reference points
  // ref[N×3] in the output frame. frame_yaw[i] is the yaw of row i's owner
  // frame relative to the output frame: planar offsets and the (sin, cos)
  // yaw pair are rotated by it. The yaw pair carries a +1 bias on cos so a
  // zero output decodes to yaw 0.
  HeadOutput<T> operator()(const ad::Tensor<T>& q, const ad::Tensor<T>& ref,
                           const std::vector<T>& frame_yaw) const {
    using ad::slice;
    const std::size_t N = q.dim(0);
    if (frame_yaw.size() != N) throw std::invalid_argument("frame_yaw size mismatch");
    HeadOutput<T> out;
    out.logits = cls_(q);
    const auto raw = box_(q);
    const auto xy = ad::add(slice(ref, 1, 0, 2), ad::rotate_pairs(slice(raw, 1, 0, 2), frame_yaw));
    const auto z = ad::add(slice(ref, 1, 2, 3), slice(raw, 1, 2, 3));
    const auto size = ad::softplus(ad::column_affine(
        slice(raw, 1, 3, 6), {T(1), T(1), T(1)},
        {T(inv_softplus(cfg_.size_prior[0])), T(inv_softplus(cfg_.size_prior[1])),
         T(inv_softplus(cfg_.size_prior[2]))}));
    const auto cs = ad::concat<T>({ad::add_scalar(slice(raw, 1, 7, 8), T(1)), slice(raw, 1, 6, 7)}, 1);
    const auto rot = ad::rotate_pairs(cs, frame_yaw);
    out.boxes = ad::concat<T>({xy, z, size, slice(rot, 1, 1, 2), slice(rot, 1, 0, 1)}, 1);
    return out;
  }

 private:
  HeadConfig cfg_;
  ad::Mlp2<T> cls_, box_;
};

template <typename T>
std::vector<Detection> to_detections(const HeadOutput<T>& h, const std::vector<int>& owner = {},
                                     const std::vector<int>& source = {}) {
  const std::size_t N = h.logits.dim(0);
  std::vector<Detection> out(N);
  for (std::size_t i = 0; i < N; ++i) {
    auto& d = out[i];
    d.score = 1.0 / (1.0 + std::exp(-double(h.logits[i])));
    const T* b = h.boxes.data().data() + i * kBoxParams;
    d.box = {double(b[0]), double(b[1]), double(b[2]), double(b[3]), double(b[4]), double(b[5]),
             std::atan2(double(b[6]), double(b[7]))};
    d.owner = owner.empty() ? 0 : owner[i];
    d.source_query = source.empty() ? int(i) : source[i];
  }
  return out;
}

struct MatchAssignment {
  std::vector<int> pred_of_gt;  // injective
  double cost = 0;
};

// Kuhn–Munkres with potentials, O(G²P). Rows are ground truths, columns are
// predictions; requires G ≤ P and finite costs.
inline MatchAssignment hungarian_match(const std::vector<std::vector<double>>& cost) {
  MatchAssignment res;
  const std::size_t G = cost.size();
  if (G == 0) return res;
  const std::size_t P = cost[0].size();
  if (G > P) throw std::invalid_argument("hungarian_match: more ground truths than predictions");
  for (const auto& row : cost) {
    if (row.size() != P) throw std::invalid_argument("hungarian_match: ragged cost matrix");
    for (const double c : row)
      if (!std::isfinite(c)) throw std::invalid_argument("hungarian_match: non-finite cost");
  }
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(G + 1, 0), v(P + 1, 0);
  std::vector<std::size_t> p(P + 1, 0), way(P + 1, 0);
  for (std::size_t i = 1; i <= G; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(P + 1, inf);
    std::vector<char> used(P + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= P; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= P; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  res.pred_of_gt.assign(G, -1);
  for (std::size_t j = 1; j <= P; ++j)
    if (p[j]) res.pred_of_gt[p[j] - 1] = int(j - 1);
  for (std::size_t g = 0; g < G; ++g) res.cost += cost[g][std::size_t(res.pred_of_gt[g])];
  return res;
}

struct LossWeights {
  double cls = 2.0;
  double box = 0.25;
  double ref = 0.25;  // L1 pull of matched reference points onto box centres
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
};

template <typename T>
struct SetLoss {
  ad::Tensor<T> loss;
  MatchAssignment match;
};

// Matching cost per (gt, pred): −λ_cls·p + λ_box·‖b − b*‖₁. The loss is
// [λ_cls·Σ focal + λ_box·Σ L1 + λ_ref·Σ |ref_xy − c*_xy|] / max(G, 1), the
// assignment held constant. `ref` may be undefined to drop the last term.
template <typename T>
SetLoss<T> set_loss(const HeadOutput<T>& h, const ad::Tensor<T>& ref,
                    const std::vector<Box3D>& gts, const LossWeights& w) {
  const std::size_t P = h.logits.dim(0), G = gts.size();
  std::vector<std::array<double, kBoxParams>> targets;
  for (const auto& g : gts) targets.push_back(box_params(g));
  std::vector<std::vector<double>> cost(G, std::vector<double>(P));
  for (std::size_t g = 0; g < G; ++g)
    for (std::size_t p = 0; p < P; ++p) {
      const double score = 1.0 / (1.0 + std::exp(-double(h.logits[p])));
      double l1 = 0;
      for (std::size_t k = 0; k < kBoxParams; ++k)
        l1 += std::abs(double(h.boxes[p * kBoxParams + k]) - targets[g][k]);
      cost[g][p] = -w.cls * score + w.box * l1;
    }
  SetLoss<T> out;
  out.match = hungarian_match(cost);
  std::vector<T> labels(P, T(0));
  for (const int p : out.match.pred_of_gt) labels[std::size_t(p)] = T(1);
  auto total = ad::scale(ad::sigmoid_focal_loss(h.logits, labels, T(w.focal_alpha), T(w.focal_gamma)),
                         T(w.cls));
  if (G > 0) {
    std::vector<std::size_t> rows(out.match.pred_of_gt.begin(), out.match.pred_of_gt.end());
    std::vector<T> tflat;
    for (const auto& t : targets)
      for (const double v : t) tflat.push_back(T(v));
    const ad::Tensor<T> target({G, kBoxParams}, tflat);
    const auto l1 = ad::sum(ad::abs(ad::sub(ad::gather_rows(h.boxes, rows), target)));
    total = ad::add(total, ad::scale(l1, T(w.box)));
    if (ref.defined() && w.ref > 0) {
      std::vector<T> cxy;
      for (const auto& g : gts) {
        cxy.push_back(T(g.x));
        cxy.push_back(T(g.y));
      }
      const ad::Tensor<T> c({G, 2}, cxy);
      const auto r = ad::slice(ad::gather_rows(ref, rows), 1, 0, 2);
      total = ad::add(total, ad::scale(ad::sum(ad::abs(ad::sub(r, c))), T(w.ref)));
    }
  }
  out.loss = ad::scale(total, T(1.0 / double(std::max<std::size_t>(G, 1))));
  return out;
}

}  // namespace coopdet
