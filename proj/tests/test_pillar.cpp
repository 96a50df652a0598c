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

#include <map>
#include <random>
#include <set>

#include "coopdet/pillar.hpp"
#include "gradcheck.hpp"

namespace coopdet {
namespace {

GridConfig tiny_grid() {
  GridConfig g;
  g.range.x_min = -6.4;
  g.range.x_max = 6.4;
  g.range.y_min = -3.2;
  g.range.y_max = 3.2;
  g.dx = g.dy = 0.2;
  return g;
}

PointCloud cloud_of(const std::vector<LidarPoint>& pts) {
  PointCloud c;
  c.points = pts;
  c.object_ids.assign(pts.size(), 0);
  return c;
}

// Points kept away from cell borders so an exact one-cell shift never moves a
// point across a floor boundary through rounding.
PointCloud random_cloud(std::mt19937_64& rng, int n, double x0, double x1, double y0, double y1,
                        double d = 0.2) {
  std::uniform_int_distribution<int> cx(int(std::ceil(x0 / d)), int(std::floor(x1 / d)) - 1);
  std::uniform_int_distribution<int> cy(int(std::ceil(y0 / d)), int(std::floor(y1 / d)) - 1);
  std::uniform_real_distribution<double> frac(0.1, 0.9), z(-1.5, 0.0), it(0.2, 1.0);
  std::vector<LidarPoint> pts;
  for (int i = 0; i < n; ++i)
    pts.push_back({(cx(rng) + frac(rng)) * d, (cy(rng) + frac(rng)) * d, z(rng), it(rng)});
  return cloud_of(pts);
}

TEST(Pillarize, CornerPointMapsToOrigin) {
  const auto g = tiny_grid();
  const auto grid = pillarize(cloud_of({{g.range.x_min, g.range.y_min, -1.0, 0.5}}), g);
  ASSERT_EQ(grid.pillars.size(), 1u);
  EXPECT_EQ(grid.pillars[0].iy, 0);
  EXPECT_EQ(grid.pillars[0].ix, 0);
}

TEST(Pillarize, FloorRuleDecidesSharing) {
  const auto g = tiny_grid();
  // 0.1 m apart inside one cell, and 0.1 m apart straddling a border.
  EXPECT_EQ(pillarize(cloud_of({{0.25, 0.05, -1, 1}, {0.35, 0.05, -1, 1}}), g).pillars.size(), 1u);
  EXPECT_EQ(pillarize(cloud_of({{0.15, 0.05, -1, 1}, {0.25, 0.05, -1, 1}}), g).pillars.size(), 2u);
}

TEST(Pillarize, MatchesScalarLoopOracle) {
  std::mt19937_64 rng(1);
  const auto g = tiny_grid();
  std::uniform_real_distribution<double> ux(-7, 7), uy(-4, 4), uz(-3.5, 1.5);
  std::vector<LidarPoint> pts;
  for (int i = 0; i < 3000; ++i) pts.push_back({ux(rng), uy(rng), uz(rng), 0.5});
  const auto cloud = cloud_of(pts);
  GridConfig uncapped = g;
  uncapped.max_points_per_pillar = 100000;
  const auto grid = pillarize(cloud, uncapped);

  std::map<std::pair<int, int>, std::set<std::size_t>> oracle;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto& p = pts[i];
    if (p.x < -6.4 || p.x >= 6.4 || p.y < -3.2 || p.y >= 3.2 || p.z < -3 || p.z >= 1) continue;
    int ix = 0, iy = 0;
    while (-6.4 + (ix + 1) * 0.2 <= p.x) ++ix;
    while (-3.2 + (iy + 1) * 0.2 <= p.y) ++iy;
    oracle[{iy, ix}].insert(i);
  }
  ASSERT_EQ(grid.pillars.size(), oracle.size());
  std::size_t total = 0;
  for (const auto& pl : grid.pillars) {
    const std::set<std::size_t> got(pl.points.begin(), pl.points.end());
    EXPECT_EQ(got, (oracle[{pl.iy, pl.ix}]));
    total += got.size();
  }
  EXPECT_EQ(total, grid.num_points());
}

TEST(Pillarize, CapSubsamplesDeterministically) {
  std::vector<LidarPoint> pts;
  for (int i = 0; i < 40; ++i) pts.push_back({0.05 + 0.001 * i, 0.05, -1, 0.5});
  const auto g = tiny_grid();
  const auto a = pillarize(cloud_of(pts), g, 3), b = pillarize(cloud_of(pts), g, 3);
  ASSERT_EQ(a.pillars.size(), 1u);
  EXPECT_EQ(a.pillars[0].points.size(), 16u);
  EXPECT_EQ(a.pillars[0].points, b.pillars[0].points);
  EXPECT_EQ(a.num_points(), 16u);
}

TEST(Pillarize, FeaturesCarryMeanAndCentreOffsets) {
  const auto g = tiny_grid();
  const auto grid = pillarize(cloud_of({{0.25, 0.05, -1.0, 0.4}, {0.35, 0.15, -0.5, 0.8}}), g);
  ASSERT_EQ(grid.num_points(), 2u);
  const float* f = grid.features.data();
  EXPECT_FLOAT_EQ(f[0], -1.0f);
  EXPECT_FLOAT_EQ(f[1], 0.4f);
  EXPECT_NEAR(f[2], -0.05, 1e-6);
  EXPECT_NEAR(f[3], -0.05, 1e-6);
  EXPECT_NEAR(f[4], -0.25, 1e-6);
  EXPECT_NEAR(f[5], -0.05, 1e-6);  // centre x = 0.3
  EXPECT_NEAR(f[6], -0.05, 1e-6);  // centre y = 0.1
}

EncoderConfig tiny_encoder(int C = 8) {
  EncoderConfig e;
  e.grid = tiny_grid();
  e.pillar_channels = C;
  e.channels = C;
  e.levels = 4;
  return e;
}

TEST(Encoder, EmptyGridGivesZeroPyramid) {
  ad::ParameterStore<float> store;
  std::mt19937_64 rng(0);
  PillarEncoder<float> enc(store, tiny_encoder(), rng);
  const auto pyr = enc(pillarize(PointCloud{}, tiny_grid()));
  ASSERT_EQ(pyr.num_levels(), 4u);
  for (const auto& l : pyr.levels)
    for (const float v : l.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Encoder, DeskShapesUseCeilHalving) {
  const auto shapes = pyramid_shapes(100, 352, 4);
  const std::vector<std::pair<int, int>> expect = {{100, 352}, {50, 176}, {25, 88}, {13, 44}};
  EXPECT_EQ(shapes, expect);

  EncoderConfig cfg;
  cfg.pillar_channels = cfg.channels = 4;
  ASSERT_EQ(cfg.grid.height(), 100);
  ASSERT_EQ(cfg.grid.width(), 352);
  ad::ParameterStore<float> store;
  std::mt19937_64 rng(0);
  PillarEncoder<float> enc(store, cfg, rng);
  std::mt19937_64 prng(2);
  const auto pyr = enc(pillarize(random_cloud(prng, 500, -30, 30, -9, 9), cfg.grid));
  for (std::size_t l = 0; l < 4; ++l) {
    EXPECT_EQ(pyr.levels[l].dim(0), 4u);
    EXPECT_EQ(int(pyr.levels[l].dim(1)), expect[l].first);
    EXPECT_EQ(int(pyr.levels[l].dim(2)), expect[l].second);
  }
}

TEST(Encoder, PermutationWithinPillarIsInvariant) {
  ad::ParameterStore<float> store;
  std::mt19937_64 rng(4);
  PillarEncoder<float> enc(store, tiny_encoder(), rng);
  std::mt19937_64 prng(5);
  auto cloud = random_cloud(prng, 300, -5, 5, -2.5, 2.5);
  const auto a = enc(pillarize(cloud, tiny_grid()));
  std::shuffle(cloud.points.begin(), cloud.points.end(), prng);
  const auto b = enc(pillarize(cloud, tiny_grid()));
  for (std::size_t l = 0; l < 4; ++l)
    for (std::size_t i = 0; i < a.levels[l].numel(); ++i)
      ASSERT_NEAR(a.levels[l][i], b.levels[l][i], 1e-6);
}

void expect_shifted(const ad::Tensor<float>& a, const ad::Tensor<float>& b, std::size_t shift,
                    std::size_t margin) {
  const std::size_t C = a.dim(0), H = a.dim(1), W = a.dim(2);
  double worst = 0;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = margin; y + margin < H; ++y)
      for (std::size_t x = margin; x + shift + margin < W; ++x)
        worst = std::max(worst, double(std::abs(a[(c * H + y) * W + x] - b[(c * H + y) * W + x + shift])));
  EXPECT_LE(worst, 1e-5);
}

PointCloud shifted(PointCloud c, double dx) {
  for (auto& p : c.points) p.x += dx;
  return c;
}

TEST(Encoder, OneCellShiftShiftsLevelOne) {
  ad::ParameterStore<float> store;
  std::mt19937_64 rng(6);
  PillarEncoder<float> enc(store, tiny_encoder(), rng);
  std::mt19937_64 prng(7);
  const auto cloud = random_cloud(prng, 400, -5.6, 5.0, -2.6, 2.6);
  const auto a = enc(pillarize(cloud, tiny_grid()));
  const auto b = enc(pillarize(shifted(cloud, 0.2), tiny_grid()));
  expect_shifted(a.levels[0], b.levels[0], 1, 2);
}

TEST(Encoder, EightCellShiftShiftsEveryLevel) {
  ad::ParameterStore<float> store;
  std::mt19937_64 rng(8);
  auto cfg = tiny_encoder();
  cfg.grid.range.x_min = -12.8;
  cfg.grid.range.x_max = 12.8;
  PillarEncoder<float> enc(store, cfg, rng);
  std::mt19937_64 prng(9);
  const auto cloud = random_cloud(prng, 400, -4.0, 2.4, -1.6, 1.6);
  const auto a = enc(pillarize(cloud, cfg.grid));
  const auto b = enc(pillarize(shifted(cloud, 1.6), cfg.grid));
  for (std::size_t l = 0; l < 4; ++l) expect_shifted(a.levels[l], b.levels[l], 8 >> l, 0);
}

TEST(Encoder, GradientsReachParametersAndMatchFiniteDifferences) {
  EncoderConfig cfg;
  cfg.grid.range = {-0.8, 0.8, -0.8, 0.8, -3, 1};
  cfg.grid.dx = cfg.grid.dy = 0.2;
  cfg.pillar_channels = 3;
  cfg.channels = 2;
  cfg.levels = 3;
  ad::ParameterStore<double> store;
  std::mt19937_64 rng(10);
  PillarEncoder<double> enc(store, cfg, rng);
  std::mt19937_64 prng(11);
  const auto grid = pillarize(random_cloud(prng, 30, -0.8, 0.8, -0.8, 0.8), cfg.grid);
  std::vector<ad::Tensor<double>> leaves;
  for (auto& [_, p] : store.entries()) leaves.push_back(p);
  std::vector<ad::Tensor<double>> probes;
  for (std::size_t l = 0; l < 3; ++l) {
    const auto shape = enc(grid).levels[l].shape();
    probes.push_back(oracle::uniform_tensor<double>(shape, prng, -1, 1, false));
  }
  auto loss = [&] {
    const auto pyr = enc(grid);
    ad::Tensor<double> acc = ad::sum(ad::mul(pyr.levels[0], probes[0]));
    for (std::size_t l = 1; l < 3; ++l) acc = ad::add(acc, ad::sum(ad::mul(pyr.levels[l], probes[l])));
    return acc;
  };
  const auto res = oracle::check_gradients<double>(loss, leaves, 1e-5, 1e-3, 1e-8);
  EXPECT_TRUE(res.ok) << res.first_failure;
  for (auto& l : leaves) {
    double n = 0;
    for (const double g : l.grad()) n += std::abs(g);
    EXPECT_GT(n, 0.0);
  }
}

}  // namespace
}  // namespace coopdet
