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

// Query-based point decoder: learned object queries with reference points,
// refined by self-attention and multi-scale deformable cross-attention over
// a BEV pyramid.

#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "coopdet/ad/nn.hpp"
#include "coopdet/pillar.hpp"

namespace coopdet {

struct DecoderConfig {
  int num_queries = 180;
  int query_dim = 64;
  int heads = 8;
  int points = 4;
  int levels = 4;
  int layers = 3;
  int ffn_dim = 128;
  int pe_frequencies = 6;
  double offset_scale_init = 4.0;
  bool refine_reference = true;
};

inline void validate(const DecoderConfig& d) {
  auto fail = [](const std::string& m) { throw std::invalid_argument("decoder config: " + m); };
  if (d.num_queries < 1) fail("num_queries must be >= 1");
  if (d.query_dim < 1 || d.heads < 1 || d.query_dim % d.heads != 0)
    fail("query_dim must be a positive multiple of heads");
  if (d.points < 1 || d.levels < 1 || d.layers < 1 || d.ffn_dim < 1 || d.pe_frequencies < 1)
    fail("points, levels, layers, ffn_dim and pe_frequencies must be >= 1");
}

// One agent's queries. `ref_unit` holds reference points in unit
// coordinates of the owner's detection range; `refs` the same in metres.
template <typename T>
struct AgentQueries {
  int owner = 0;
  ad::Tensor<T> features;  // [Nq×C_q]
  ad::Tensor<T> ref_unit;  // [Nq×3] in (0,1)
  ad::Tensor<T> refs;      // [Nq×3] metres, owner frame
};

// Plain-data query used on the wire and in reports.
struct ObjectQuery {
  std::vector<float> feature;
  float ref[3] = {0, 0, 0};
  int owner = 0;
};

template <typename T>
std::vector<ObjectQuery> to_object_queries(const AgentQueries<T>& q) {
  std::vector<ObjectQuery> out(q.features.dim(0));
  const std::size_t C = q.features.dim(1);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].owner = q.owner;
    out[i].feature.resize(C);
    for (std::size_t c = 0; c < C; ++c) out[i].feature[c] = static_cast<float>(q.features[i * C + c]);
    for (int k = 0; k < 3; ++k) out[i].ref[k] = static_cast<float>(q.refs[i * 3 + k]);
  }
  return out;
}

// Unit ↔ metric mapping for a detection range.
template <typename T>
ad::Tensor<T> unit_to_metric(const ad::Tensor<T>& u, const DetectionRange& r) {
  return ad::column_affine(u, {T(r.x_max - r.x_min), T(r.y_max - r.y_min), T(r.z_max - r.z_min)},
                           {T(r.x_min), T(r.y_min), T(r.z_min)});
}

template <typename T>
ad::Tensor<T> metric_to_unit(const ad::Tensor<T>& m, const DetectionRange& r) {
  const T sx = T(1) / T(r.x_max - r.x_min), sy = T(1) / T(r.y_max - r.y_min),
          sz = T(1) / T(r.z_max - r.z_min);
  return ad::column_affine(m, {sx, sy, sz}, {T(-r.x_min) * sx, T(-r.y_min) * sy, T(-r.z_min) * sz});
}

// Φ(f_sin(u)): unit coordinates at frequencies π·2^k, then sin and cos, then
// one linear layer.
template <typename T>
struct PositionalEmbedding {
  int frequencies = 6;
  ad::Linear<T> proj;

  PositionalEmbedding() = default;
  PositionalEmbedding(ad::ParameterStore<T>& store, const std::string& name, int freqs,
                      std::size_t out_dim, std::mt19937_64& rng)
      : frequencies(freqs), proj(store, name, std::size_t(6 * freqs), out_dim, rng) {}

  ad::Tensor<T> operator()(const ad::Tensor<T>& unit) const {
    std::vector<ad::Tensor<T>> bands;
    for (int k = 0; k < frequencies; ++k) {
      const T f = T(std::numbers::pi * std::pow(2.0, k));
      bands.push_back(ad::column_affine(unit, {f, f, f}, {T(0), T(0), T(0)}));
    }
    return proj(ad::sin_cos(ad::concat(bands, 1)));
  }
};

// Multi-scale deformable cross-attention. Offsets are in level cells times
// a learnable per-level scale; weights are softmax-normalised jointly over
// (level, point) for each head; each head has its own value projection W'_m
// and the heads are merged by W.
template <typename T>
struct DeformableAttention {
  std::size_t M = 8, L = 4, K = 4, C_in = 32, C_q = 64;
  ad::Linear<T> offsets, logits, out;
  std::vector<ad::Linear<T>> value;  // per head, C_in → C_q/M
  ad::Tensor<T> level_scale;         // [L]

  DeformableAttention() = default;
  DeformableAttention(ad::ParameterStore<T>& store, const std::string& name, std::size_t heads,
                      std::size_t levels, std::size_t points, std::size_t c_in, std::size_t c_q,
                      double scale_init, std::mt19937_64& rng)
      : M(heads), L(levels), K(points), C_in(c_in), C_q(c_q) {
    offsets = ad::Linear<T>(store, name + ".offsets", C_q, M * L * K * 2, rng);
    logits = ad::Linear<T>(store, name + ".logits", C_q, M * L * K, rng);
    offsets.zero_();
    logits.zero_();
    // Initial sampling pattern: head m looks along direction 2πm/M, point k
    // at (k+1)/K of the level's scaled reach.
    auto b = offsets.bias.mutable_data();
    for (std::size_t m = 0; m < M; ++m) {
      const double a = 2 * std::numbers::pi * double(m) / double(M);
      for (std::size_t l = 0; l < L; ++l)
        for (std::size_t k = 0; k < K; ++k) {
          const std::size_t s = (m * L + l) * K + k;
          b[2 * s] = T(std::cos(a) * double(k + 1) / double(K));
          b[2 * s + 1] = T(std::sin(a) * double(k + 1) / double(K));
        }
    }
    for (std::size_t m = 0; m < M; ++m)
      value.emplace_back(store, name + ".value" + std::to_string(m), C_in, C_q / M, rng, false);
    out = ad::Linear<T>(store, name + ".out", C_q, C_q, rng);
    level_scale = store.add(name + ".level_scale", ad::Tensor<T>::full({L}, T(scale_init)));
  }

  // query_pe [Q×C_q] is q + PE(r); ref_px [Q×2] level-0 pixel coordinates.
  // The normalised weights [Q×(M·L·K)] are written to `sigma` if given.
  ad::Tensor<T> operator()(const ad::Tensor<T>& query_pe, const ad::Tensor<T>& ref_px,
                           const BevFeaturePyramid<T>& pyr, ad::Tensor<T>* sigma = nullptr) const {
    if (pyr.num_levels() != L)
      throw std::invalid_argument("deformable attention expects " + std::to_string(L) +
                                  " levels, got " + std::to_string(pyr.num_levels()));
    if (pyr.channels() != C_in) throw std::invalid_argument("pyramid channel count mismatch");
    const std::size_t Q = query_pe.dim(0);
    const auto off = offsets(query_pe);
    const auto w = ad::reshape(ad::softmax(ad::reshape(logits(query_pe), {Q * M, L * K}), 1), {Q, M * L * K});
    if (sigma) *sigma = w;
    const auto sampled = ad::deformable_sample(pyr.levels, ref_px, off, level_scale, w, M, K);
    std::vector<ad::Tensor<T>> heads;
    for (std::size_t m = 0; m < M; ++m)
      heads.push_back(value[m](ad::slice(sampled, 1, m * C_in, (m + 1) * C_in)));
    return out(ad::concat(heads, 1));
  }
};

template <typename T>
struct DecoderLayer {
  std::size_t heads = 8;
  ad::Linear<T> wq, wk, wv, wo;
  ad::LayerNorm<T> ln1, ln2, ln3;
  DeformableAttention<T> cross;
  ad::Mlp2<T> ffn;
  ad::Linear<T> delta;

  DecoderLayer() = default;
  DecoderLayer(ad::ParameterStore<T>& store, const std::string& name, const DecoderConfig& d,
               std::size_t c_in, std::mt19937_64& rng)
      : heads(std::size_t(d.heads)) {
    const auto C = std::size_t(d.query_dim);
    wq = ad::Linear<T>(store, name + ".sa.q", C, C, rng);
    wk = ad::Linear<T>(store, name + ".sa.k", C, C, rng, false);  // a key bias cancels in softmax
    wv = ad::Linear<T>(store, name + ".sa.v", C, C, rng);
    wo = ad::Linear<T>(store, name + ".sa.o", C, C, rng);
    ln1 = ad::LayerNorm<T>(store, name + ".ln1", C);
    cross = DeformableAttention<T>(store, name + ".ca", heads, std::size_t(d.levels),
                                   std::size_t(d.points), c_in, C, d.offset_scale_init, rng);
    ln2 = ad::LayerNorm<T>(store, name + ".ln2", C);
    ffn = ad::Mlp2<T>(store, name + ".ffn", C, std::size_t(d.ffn_dim), C, rng);
    ln3 = ad::LayerNorm<T>(store, name + ".ln3", C);
    delta = ad::Linear<T>(store, name + ".delta", C, 3, rng);
    delta.zero_();
  }
};

template <typename T>
struct DecoderTrace {
  std::vector<AgentQueries<T>> layers;  // output of each layer
  std::vector<ad::Tensor<T>> sigma;     // cross-attention weights per layer
};

template <typename T>
class PointDecoder {
 public:
  PointDecoder() = default;
  PointDecoder(ad::ParameterStore<T>& store, const DecoderConfig& cfg, std::size_t c_in,
               const GridConfig& grid, std::mt19937_64& rng)
      : cfg_(cfg), grid_(grid) {
    validate(cfg);
    const auto Nq = std::size_t(cfg.num_queries), C = std::size_t(cfg.query_dim);
    init_features_ = store.add("dec.query", ad::normal_tensor<T>({Nq, C}, T(1), rng));
    init_ref_logits_ = store.add("dec.ref_logits", ad::Tensor<T>(std::vector<std::size_t>{Nq, 3}, grid_logits(Nq, grid)));
    pe_ = PositionalEmbedding<T>(store, "dec.pe", cfg.pe_frequencies, C, rng);
    for (int l = 0; l < cfg.layers; ++l)
      layers_.emplace_back(store, "dec.layer" + std::to_string(l), cfg, c_in, rng);
  }

  const DecoderConfig& config() const { return cfg_; }
  const GridConfig& grid() const { return grid_; }
  const PositionalEmbedding<T>& pe() const { return pe_; }
  std::vector<DecoderLayer<T>>& layers() { return layers_; }
  const ad::Tensor<T>& initial_ref_logits() const { return init_ref_logits_; }

  AgentQueries<T> initial_queries(int owner) const {
    AgentQueries<T> q;
    q.owner = owner;
    q.features = init_features_;
    q.ref_unit = ad::sigmoid(init_ref_logits_);
    q.refs = unit_to_metric(q.ref_unit, grid_.range);
    return q;
  }

  // One layer: self-attention, deformable cross-attention and FFN, each with
  // residual + layer norm, then the reference logits move by the delta head.
  std::pair<ad::Tensor<T>, ad::Tensor<T>> layer_forward(std::size_t i, const ad::Tensor<T>& q_in,
                                                        const ad::Tensor<T>& ref_logit,
                                                        const BevFeaturePyramid<T>& pyr,
                                                        ad::Tensor<T>* sigma = nullptr) const {
    const auto& R = grid_.range;
    const auto& layer = layers_.at(i);
    const T sx = T((R.x_max - R.x_min) / grid_.dx), sy = T((R.y_max - R.y_min) / grid_.dy);
    const auto unit = ad::sigmoid(ref_logit);
    const auto pe = pe_(unit);
    const auto qk = ad::add(q_in, pe);
    const auto sa = layer.wo(ad::multihead_attention(layer.wq(qk), layer.wk(qk), layer.wv(q_in), layer.heads));
    auto q = layer.ln1(ad::add(q_in, sa));
    const auto ref_px = ad::column_affine(ad::slice(unit, 1, 0, 2), {sx, sy}, {T(-0.5), T(-0.5)});
    const auto ca = layer.cross(ad::add(q, pe), ref_px, pyr, sigma);
    q = layer.ln2(ad::add(q, ca));
    q = layer.ln3(ad::add(q, layer.ffn(q)));
    auto next = cfg_.refine_reference ? ad::add(ref_logit, layer.delta(q)) : ref_logit;
    return {q, next};
  }

  // Runs every layer; the last entry of the trace is the decoder output.
  DecoderTrace<T> operator()(const BevFeaturePyramid<T>& pyr, int owner) const {
    DecoderTrace<T> trace;
    ad::Tensor<T> q = init_features_;
    ad::Tensor<T> ref_logit = init_ref_logits_;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      ad::Tensor<T> sigma;
      std::tie(q, ref_logit) = layer_forward(i, q, ref_logit, pyr, &sigma);
      AgentQueries<T> out;
      out.owner = owner;
      out.features = q;
      out.ref_unit = ad::sigmoid(ref_logit);
      out.refs = unit_to_metric(out.ref_unit, grid_.range);
      trace.layers.push_back(out);
      trace.sigma.push_back(sigma);
    }
    return trace;
  }

 private:
  // Logits of a near-square lattice covering (0,1)² in x, y; z at the middle.
  static std::vector<T> grid_logits(std::size_t n, const GridConfig& g) {
    const double aspect = (g.range.x_max - g.range.x_min) / (g.range.y_max - g.range.y_min);
    std::size_t nx = std::max<std::size_t>(1, std::size_t(std::ceil(std::sqrt(double(n) * aspect))));
    const std::size_t ny = (n + nx - 1) / nx;
    std::vector<T> out(n * 3);
    auto logit = [](double u) { return T(std::log(u / (1 - u))); };
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t ix = i % nx, iy = i / nx;
      out[3 * i] = logit((double(ix) + 0.5) / double(nx));
      out[3 * i + 1] = logit((double(iy) + 0.5) / double(ny));
      out[3 * i + 2] = T(0);
    }
    return out;
  }

  DecoderConfig cfg_;
  GridConfig grid_;
  ad::Tensor<T> init_features_, init_ref_logits_;
  PositionalEmbedding<T> pe_;
  std::vector<DecoderLayer<T>> layers_;
};

}  // namespace coopdet
