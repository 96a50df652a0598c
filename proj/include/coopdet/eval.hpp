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

// Rotated BEV IoU, all-point average precision and rotated NMS.

#include <algorithm>
#include <numeric>
#include <vector>

#include "coopdet/geometry.hpp"
#include "coopdet/head_loss.hpp"

namespace coopdet {

inline double rotated_iou_bev(const Box3D& a, const Box3D& b, bool with_z = false) {
  const double area_a = a.l * a.w, area_b = b.l * b.w;
  if (!(area_a > 1e-12 && area_b > 1e-12)) return 0.0;
  double inter = bev_intersection_area(a, b);
  if (with_z) {
    const double lo = std::max(a.z - 0.5 * a.h, b.z - 0.5 * b.h);
    const double hi = std::min(a.z + 0.5 * a.h, b.z + 0.5 * b.h);
    const double dz = std::max(0.0, hi - lo);
    inter *= dz;
    const double va = area_a * a.h, vb = area_b * b.h;
    return inter / (va + vb - inter);
  }
  return std::clamp(inter / (area_a + area_b - inter), 0.0, 1.0);
}

struct FrameResult {
  std::vector<Detection> detections;
  std::vector<Box3D> ground_truths;
};

struct PrPoint {
  double recall = 0, precision = 0;
};

struct ApResult {
  double ap = 0;
  std::vector<PrPoint> curve;
  std::size_t num_gt = 0, num_det = 0, true_positives = 0;
};

// Score-sorted sweep over all frames; within a frame the highest-scoring
// detection claims the best unclaimed ground truth with IoU ≥ thresh.
// AP is the area under the precision envelope (all-point interpolation).
inline ApResult average_precision(const std::vector<FrameResult>& frames, double iou_thresh) {
  ApResult res;
  struct Item {
    double score;
    std::size_t frame, det;
  };
  std::vector<Item> items;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    res.num_gt += frames[f].ground_truths.size();
    for (std::size_t d = 0; d < frames[f].detections.size(); ++d)
      items.push_back({frames[f].detections[d].score, f, d});
  }
  res.num_det = items.size();
  if (res.num_gt == 0) {
    res.ap = items.empty() ? 1.0 : 0.0;
    return res;
  }
  std::stable_sort(items.begin(), items.end(),
                   [](const Item& a, const Item& b) { return a.score > b.score; });
  std::vector<std::vector<char>> claimed(frames.size());
  for (std::size_t f = 0; f < frames.size(); ++f) claimed[f].assign(frames[f].ground_truths.size(), 0);
  std::vector<char> tp(items.size(), 0);
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& fr = frames[items[i].frame];
    const auto& det = fr.detections[items[i].det].box;
    double best = iou_thresh;
    long best_g = -1;
    for (std::size_t g = 0; g < fr.ground_truths.size(); ++g) {
      if (claimed[items[i].frame][g]) continue;
      const double iou = rotated_iou_bev(det, fr.ground_truths[g]);
      if (iou >= best) {
        best = iou;
        best_g = long(g);
      }
    }
    if (best_g >= 0) {
      claimed[items[i].frame][std::size_t(best_g)] = 1;
      tp[i] = 1;
    }
  }
  std::size_t ctp = 0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    ctp += tp[i];
    res.curve.push_back({double(ctp) / double(res.num_gt), double(ctp) / double(i + 1)});
  }
  res.true_positives = ctp;
  // Envelope from the right, then integrate over recall steps.
  std::vector<double> env(res.curve.size());
  double run = 0;
  for (std::size_t i = res.curve.size(); i-- > 0;) {
    run = std::max(run, res.curve[i].precision);
    env[i] = run;
  }
  double prev_r = 0;
  for (std::size_t i = 0; i < res.curve.size(); ++i) {
    res.ap += (res.curve[i].recall - prev_r) * env[i];
    prev_r = res.curve[i].recall;
  }
  return res;
}

// Greedy rotated NMS: keeps detections in descending score order, dropping
// any with BEV IoU > thresh against an already kept one.
inline std::vector<Detection> rotated_nms(std::vector<Detection> dets, double thresh) {
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  std::vector<Detection> kept;
  for (const auto& d : dets) {
    bool ok = true;
    for (const auto& k : kept)
      if (rotated_iou_bev(d.box, k.box) > thresh) {
        ok = false;
        break;
      }
    if (ok) kept.push_back(d);
  }
  return kept;
}

}  // namespace coopdet
