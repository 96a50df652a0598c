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

#include <random>

#include "coopdet/eval.hpp"
#include "oracles.hpp"

namespace coopdet {
namespace {

Box3D box(double x, double y, double l, double w, double yaw) { return {x, y, 0.8, l, w, 1.6, yaw}; }

Detection det(double score, const Box3D& b) {
  Detection d;
  d.score = score;
  d.box = b;
  return d;
}

TEST(RotatedIou, SimpleCases) {
  const auto a = box(0, 0, 4, 2, 0.3);
  EXPECT_NEAR(rotated_iou_bev(a, a), 1.0, 1e-12);
  // Half-overlapping unit squares: 1/3.
  EXPECT_NEAR(rotated_iou_bev(box(0, 0, 1, 1, 0), box(0.5, 0, 1, 1, 0)), 1.0 / 3.0, 1e-12);
  EXPECT_EQ(rotated_iou_bev(box(0, 0, 1, 1, 0), box(5, 0, 1, 1, 0)), 0.0);
  // A square rotated by 90° is the same square.
  EXPECT_NEAR(rotated_iou_bev(box(1, 2, 2, 2, 0), box(1, 2, 2, 2, kPi / 2)), 1.0, 1e-12);
  EXPECT_EQ(rotated_iou_bev(box(0, 0, 0, 1, 0), box(0, 0, 1, 1, 0)), 0.0);
}

TEST(RotatedIou, MatchesRasterOracle) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> pos(-2, 2), size(0.5, 5), yaw(-kPi, kPi);
  for (int t = 0; t < 200; ++t) {
    const auto a = box(pos(rng), pos(rng), size(rng), size(rng), yaw(rng));
    const auto b = box(pos(rng), pos(rng), size(rng), size(rng), yaw(rng));
    const double want = oracle::raster_iou({a.x, a.y, a.l, a.w, a.yaw}, {b.x, b.y, b.l, b.w, b.yaw});
    EXPECT_NEAR(rotated_iou_bev(a, b), want, 5e-3);
  }
}

TEST(RotatedIou, SymmetricAndRigidInvariant) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> pos(-2, 2), size(0.5, 5), yaw(-kPi, kPi);
  for (int t = 0; t < 200; ++t) {
    const auto a = box(pos(rng), pos(rng), size(rng), size(rng), yaw(rng));
    const auto b = box(pos(rng), pos(rng), size(rng), size(rng), yaw(rng));
    const double v = rotated_iou_bev(a, b);
    EXPECT_NEAR(v, rotated_iou_bev(b, a), 1e-12);
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
    const AgentPose frame{pos(rng) * 10, pos(rng) * 10, 0, yaw(rng)};
    EXPECT_NEAR(rotated_iou_bev(box_to_frame(a, frame), box_to_frame(b, frame)), v, 1e-9);
  }
}

TEST(RotatedIou, WithHeight) {
  Box3D a{0, 0, 1, 2, 2, 2, 0}, b{0, 0, 2, 2, 2, 2, 0};
  EXPECT_NEAR(rotated_iou_bev(a, b, true), 1.0 / 3.0, 1e-12);
}

TEST(AveragePrecision, PerfectDetectorScoresOne) {
  std::vector<FrameResult> frames(3);
  for (int f = 0; f < 3; ++f)
    for (int g = 0; g < 2; ++g) {
      const auto b = box(10.0 * g, f, 4, 2, 0.1 * g);
      frames[std::size_t(f)].ground_truths.push_back(b);
      frames[std::size_t(f)].detections.push_back(det(0.5 + 0.1 * g, b));
    }
  const auto r = average_precision(frames, 0.5);
  EXPECT_DOUBLE_EQ(r.ap, 1.0);
  EXPECT_EQ(r.true_positives, 6u);
}

TEST(AveragePrecision, HandEnumerated) {
  // Scores 0.9 (TP), 0.8 (FP), 0.7 (TP), 0.6 (FP) against 3 GTs.
  // PR: (1/3, 1), (1/3, 1/2), (2/3, 2/3), (2/3, 1/2); envelope area
  // = 1/3·1 + 1/3·2/3 = 5/9.
  FrameResult fr;
  fr.ground_truths = {box(0, 0, 4, 2, 0), box(10, 0, 4, 2, 0), box(20, 0, 4, 2, 0)};
  fr.detections = {det(0.9, box(0, 0, 4, 2, 0)), det(0.8, box(50, 0, 4, 2, 0)),
                   det(0.7, box(10.1, 0, 4, 2, 0)), det(0.6, box(0.1, 0, 4, 2, 0))};
  const auto r = average_precision({fr}, 0.5);
  EXPECT_NEAR(r.ap, 5.0 / 9.0, 1e-12);
  ASSERT_EQ(r.curve.size(), 4u);
  EXPECT_NEAR(r.curve[1].precision, 0.5, 1e-12);
  EXPECT_EQ(r.true_positives, 2u);
}

TEST(AveragePrecision, DuplicateIsFalsePositive) {
  FrameResult fr;
  fr.ground_truths = {box(0, 0, 4, 2, 0)};
  fr.detections = {det(0.9, box(0, 0, 4, 2, 0)), det(0.8, box(0.05, 0, 4, 2, 0))};
  const auto r = average_precision({fr}, 0.5);
  EXPECT_DOUBLE_EQ(r.ap, 1.0);
  EXPECT_EQ(r.true_positives, 1u);
}

TEST(AveragePrecision, EmptyCases) {
  EXPECT_DOUBLE_EQ(average_precision({FrameResult{}}, 0.5).ap, 1.0);
  FrameResult only_det;
  only_det.detections = {det(0.5, box(0, 0, 1, 1, 0))};
  EXPECT_DOUBLE_EQ(average_precision({only_det}, 0.5).ap, 0.0);
  FrameResult only_gt;
  only_gt.ground_truths = {box(0, 0, 1, 1, 0)};
  EXPECT_DOUBLE_EQ(average_precision({only_gt}, 0.5).ap, 0.0);
}

TEST(AveragePrecision, StricterThresholdNeverHelps) {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> jitter(0, 0.4);
  std::uniform_real_distribution<double> sc(0, 1);
  std::vector<FrameResult> frames(20);
  for (auto& fr : frames)
    for (int g = 0; g < 4; ++g) {
      const auto b = box(8.0 * g, 0, 4, 2, 0.2);
      fr.ground_truths.push_back(b);
      fr.detections.push_back(det(sc(rng), box(b.x + jitter(rng), b.y + jitter(rng), 4, 2, 0.2 + 0.2 * jitter(rng))));
      fr.detections.push_back(det(0.3 * sc(rng), box(8.0 * g + 4, 5, 4, 2, 0)));
    }
  double prev = 2;
  for (const double t : {0.1, 0.3, 0.5, 0.7, 0.9}) {
    const double ap = average_precision(frames, t).ap;
    EXPECT_LE(ap, prev + 1e-12);
    prev = ap;
  }
}

TEST(RotatedNms, SuppressesOverlaps) {
  std::vector<Detection> d = {det(0.5, box(0, 0, 4, 2, 0)), det(0.9, box(0.2, 0, 4, 2, 0)),
                              det(0.7, box(10, 0, 4, 2, 0))};
  const auto kept = rotated_nms(d, 0.5);
  ASSERT_EQ(kept.size(), 2u);
  EXPECT_DOUBLE_EQ(kept[0].score, 0.9);
  EXPECT_DOUBLE_EQ(kept[1].score, 0.7);
}

}  // namespace
}  // namespace coopdet
