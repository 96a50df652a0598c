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

// Pillar voxelisation and a small BEV backbone with a feature pyramid.
//
// Map layout is [C×H×W] with rows along y and columns along x. Cell (iy, ix)
// covers x ∈ [x_min + ix·dx, x_min + (ix+1)·dx). Level l+1 has ceil(H_l/2)
// rows; its cell j is centred over level-l cell 2j, so a metric point maps to
// level pixel coordinate p_l = p_1 / 2^(l−1) with p_1 = (x − x_min)/dx − ½.

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include "coopdet/ad/nn.hpp"
#include "coopdet/scene.hpp"

namespace coopdet {

struct GridConfig {
  DetectionRange range = DetectionRange::scaled(0.25, 0.25);
  double dx = 0.2, dy = 0.2;
  int max_points_per_pillar = 16;

  int width() const { return static_cast<int>(std::ceil((range.x_max - range.x_min) / dx - 1e-9)); }
  int height() const { return static_cast<int>(std::ceil((range.y_max - range.y_min) / dy - 1e-9)); }
};

inline void validate(const GridConfig& g) {
  if (!(g.dx > 0 && g.dy > 0)) throw std::invalid_argument("pillar size must be positive");
  if (g.max_points_per_pillar < 1) throw std::invalid_argument("max_points_per_pillar must be >= 1");
  if (!(g.range.x_max > g.range.x_min && g.range.y_max > g.range.y_min))
    throw std::invalid_argument("empty grid range");
}

constexpr std::size_t kPointFeatures = 7;

struct Pillar {
  int iy = 0, ix = 0;
  std::vector<std::size_t> points;  // indices into the source cloud, after capping
};

struct PillarGrid {
  GridConfig cfg;
  int H = 0, W = 0;
  std::vector<Pillar> pillars;       // ascending flat cell order
  std::vector<float> features;       // [num_points × kPointFeatures], pillar-major
  std::vector<std::size_t> point_pillar;  // pillar index of each feature row

  std::size_t num_points() const { return point_pillar.size(); }
};

// Returns false for points outside the grid.
inline bool pillar_of(const GridConfig& g, double x, double y, int& iy, int& ix) {
  const double fx = std::floor((x - g.range.x_min) / g.dx);
  const double fy = std::floor((y - g.range.y_min) / g.dy);
  if (!(fx >= 0 && fy >= 0 && fx < g.width() && fy < g.height())) return false;
  ix = static_cast<int>(fx);
  iy = static_cast<int>(fy);
  return true;
}

// Buckets points by the floor rule, caps each pillar at P points by a seeded
// subsample, and builds per-point features
//   (z, intensity, x − x̄, y − ȳ, z − z̄, x − x_c, y − y_c)
// where the bar is the pillar mean and _c the pillar centre. Absolute x, y
// are left out so the features are translation equivariant on the grid.
inline PillarGrid pillarize(const PointCloud& cloud, const GridConfig& g, std::uint64_t seed = 0) {
  validate(g);
  PillarGrid grid;
  grid.cfg = g;
  grid.H = g.height();
  grid.W = g.width();
  std::vector<std::pair<long, std::size_t>> keyed;
  keyed.reserve(cloud.points.size());
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    const auto& p = cloud.points[i];
    if (!(p.z >= g.range.z_min && p.z < g.range.z_max)) continue;
    int iy, ix;
    if (!pillar_of(g, p.x, p.y, iy, ix)) continue;
    keyed.push_back({long(iy) * grid.W + ix, i});
  }
  std::stable_sort(keyed.begin(), keyed.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  std::mt19937_64 rng(seed);
  for (std::size_t s = 0; s < keyed.size();) {
    std::size_t e = s;
    while (e < keyed.size() && keyed[e].first == keyed[s].first) ++e;
    Pillar pl;
    pl.iy = static_cast<int>(keyed[s].first / grid.W);
    pl.ix = static_cast<int>(keyed[s].first % grid.W);
    for (std::size_t k = s; k < e; ++k) pl.points.push_back(keyed[k].second);
    if (pl.points.size() > std::size_t(g.max_points_per_pillar)) {
      std::shuffle(pl.points.begin(), pl.points.end(), rng);
      pl.points.resize(g.max_points_per_pillar);
      std::sort(pl.points.begin(), pl.points.end());
    }
    grid.pillars.push_back(std::move(pl));
    s = e;
  }
  for (std::size_t pi = 0; pi < grid.pillars.size(); ++pi) {
    const auto& pl = grid.pillars[pi];
    double mx = 0, my = 0, mz = 0;
    for (const auto i : pl.points) {
      mx += cloud.points[i].x;
      my += cloud.points[i].y;
      mz += cloud.points[i].z;
    }
    const double n = double(pl.points.size());
    mx /= n;
    my /= n;
    mz /= n;
    const double cx = g.range.x_min + (pl.ix + 0.5) * g.dx;
    const double cy = g.range.y_min + (pl.iy + 0.5) * g.dy;
    for (const auto i : pl.points) {
      const auto& p = cloud.points[i];
      const double f[kPointFeatures] = {p.z, p.intensity, p.x - mx, p.y - my, p.z - mz, p.x - cx, p.y - cy};
      for (const double v : f) grid.features.push_back(static_cast<float>(v));
      grid.point_pillar.push_back(pi);
    }
  }
  return grid;
}

template <typename T>
struct BevFeaturePyramid {
  std::vector<ad::Tensor<T>> levels;  // each [C×H_l×W_l]
  GridConfig grid;

  std::size_t num_levels() const { return levels.size(); }
  std::size_t channels() const { return levels.empty() ? 0 : levels[0].dim(0); }
};

struct EncoderConfig {
  GridConfig grid;
  int pillar_channels = 32;
  int channels = 32;
  int levels = 4;
};

inline std::vector<std::pair<int, int>> pyramid_shapes(int H, int W, int levels) {
  std::vector<std::pair<int, int>> out;
  for (int l = 0; l < levels; ++l) {
    out.push_back({H, W});
    H = (H + 1) / 2;
    W = (W + 1) / 2;
  }
  return out;
}

// Pillar net (linear + ReLU + max-pool), then a bias-free conv backbone with
// one stride-1 stage and L−1 stride-2 stages, then 1×1 laterals. Top-down
// fusion runs from the coarsest level down to level 2; level 1 keeps only its
// lateral so it stays exactly equivariant to one-cell shifts. Every stage is
// bias-free, so an empty grid yields an all-zero pyramid.
template <typename T>
class PillarEncoder {
 public:
  PillarEncoder() = default;
  PillarEncoder(ad::ParameterStore<T>& store, const EncoderConfig& cfg, std::mt19937_64& rng)
      : cfg_(cfg) {
    if (cfg.levels < 1 || cfg.channels < 1 || cfg.pillar_channels < 1)
      throw std::invalid_argument("bad encoder configuration");
    pillar_fc_ = ad::Linear<T>(store, "enc.pillar_fc", kPointFeatures, cfg.pillar_channels, rng);
    const auto C = std::size_t(cfg.channels);
    for (int l = 0; l < cfg.levels; ++l) {
      const std::size_t in = l == 0 ? std::size_t(cfg.pillar_channels) : C;
      stages_.push_back(make_conv(store, "enc.stage" + std::to_string(l), in, C, 3, l == 0 ? 1 : 2, rng));
      laterals_.push_back(make_conv(store, "enc.lateral" + std::to_string(l), C, C, 1, 1, rng));
    }
  }

  const EncoderConfig& config() const { return cfg_; }

  BevFeaturePyramid<T> operator()(const PillarGrid& grid) const {
    using ad::Tensor;
    if (grid.H != cfg_.grid.height() || grid.W != cfg_.grid.width())
      throw std::invalid_argument("pillar grid does not match encoder configuration");
    const auto H = std::size_t(grid.H), W = std::size_t(grid.W);
    Tensor<T> canvas;
    if (grid.pillars.empty()) {
      canvas = Tensor<T>::zeros({std::size_t(cfg_.pillar_channels), H, W});
    } else {
      std::vector<T> f(grid.features.begin(), grid.features.end());
      Tensor<T> x({grid.num_points(), kPointFeatures}, std::move(f));
      auto h = ad::relu(pillar_fc_(x));
      auto pooled = ad::segment_max(h, grid.point_pillar, grid.pillars.size());
      std::vector<std::size_t> cells;
      cells.reserve(grid.pillars.size());
      for (const auto& p : grid.pillars) cells.push_back(std::size_t(p.iy) * W + std::size_t(p.ix));
      canvas = ad::scatter_to_grid(pooled, cells, H, W);
    }
    std::vector<Tensor<T>> c;
    Tensor<T> cur = canvas;
    for (const auto& s : stages_) {
      cur = ad::relu(ad::conv2d(cur, s.weight, Tensor<T>{}, s.stride, s.pad));
      c.push_back(cur);
    }
    const int L = cfg_.levels;
    std::vector<Tensor<T>> p(L);
    for (int l = L - 1; l >= 0; --l) {
      const auto& lat = laterals_[l];
      p[l] = ad::conv2d(c[l], lat.weight, Tensor<T>{}, 1, 0);
      if (l >= 1 && l + 1 < L) p[l] = ad::add(p[l], ad::upsample2x(p[l + 1], p[l].dim(1), p[l].dim(2)));
    }
    return {std::move(p), grid.cfg};
  }

 private:
  static ad::Conv2d<T> make_conv(ad::ParameterStore<T>& store, const std::string& name, std::size_t in,
                                 std::size_t out, std::size_t k, std::size_t stride, std::mt19937_64& rng) {
    ad::Conv2d<T> c;
    c.stride = stride;
    c.pad = k / 2;
    const T stddev = std::sqrt(T(2) / T(in * k * k));
    c.weight = store.add(name + ".weight", ad::normal_tensor<T>({out, in, k, k}, stddev, rng));
    return c;
  }

  EncoderConfig cfg_;
  ad::Linear<T> pillar_fc_;
  std::vector<ad::Conv2d<T>> stages_, laterals_;
};

}  // namespace coopdet
