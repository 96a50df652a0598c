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

#include "coopdet/fusion.hpp"
#include "gradcheck.hpp"

namespace coopdet {
namespace {

using oracle::uniform_tensor;

constexpr double kSigmoidOne = 0.7310585786300049;  // 1 / (1 + e^-1)

// Pairwise loop with its own cosine; no shared code with the library.
std::vector<std::uint8_t> membership_oracle(const std::vector<std::vector<double>>& x,
                                            const std::vector<int>& owner, double mu) {
  const std::size_t n = x.size();
  std::vector<std::uint8_t> m(n * n, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (owner[i] == owner[j]) continue;
      double dot = 0, a = 0, b = 0;
      for (std::size_t c = 0; c < x[i].size(); ++c) {
        dot += x[i][c] * x[j][c];
        a += x[i][c] * x[i][c];
        b += x[j][c] * x[j][c];
      }
      const double cosv = (a > 0 && b > 0) ? dot / std::sqrt(a * b) : 0.0;
      m[i * n + j] = 1.0 / (1.0 + std::exp(-cosv)) >= mu;
    }
  return m;
}

RefinedSet<double> random_set(std::mt19937_64& rng, const std::vector<int>& counts, std::size_t C) {
  RefinedSet<double> s;
  std::vector<ad::Tensor<double>> rows;
  for (std::size_t a = 0; a < counts.size(); ++a)
    for (int i = 0; i < counts[a]; ++i) {
      s.owner.push_back(int(a));
      s.index.push_back(i);
      s.frame_yaw.push_back(0.0);
    }
  s.base = uniform_tensor<double>({s.owner.size(), C}, rng, -1, 1, false);
  s.refined = uniform_tensor<double>({s.owner.size(), C}, rng, -1, 1, false);
  s.refs = uniform_tensor<double>({s.owner.size(), 3}, rng, -5, 5, false);
  return s;
}

TEST(Similarity, RangeEndpoints) {
  const ad::Tensor<double> x({3, 4}, {1, 2, -1, 0.5, -1, -2, 1, -0.5, 0, 0, 0, 0});
  std::size_t zeros = 0;
  const auto s = similarity_matrix(x, &zeros);
  EXPECT_NEAR(s[0], kSigmoidOne, 1e-12);
  EXPECT_NEAR(s[1], 1 - kSigmoidOne, 1e-12);
  EXPECT_NEAR(std::round(s[0] * 1e4) / 1e4, 0.7311, 1e-12);
  EXPECT_NEAR(std::round(s[1] * 1e4) / 1e4, 0.2689, 1e-12);
  EXPECT_EQ(zeros, 1u);
  EXPECT_DOUBLE_EQ(s[2], 0.5);
  EXPECT_DOUBLE_EQ(s[8], 0.5);
}

TEST(Similarity, SymmetricAndBounded) {
  std::mt19937_64 rng(1);
  const auto x = uniform_tensor<double>({30, 8}, rng, -1, 1, false);
  const auto s = similarity_matrix(x);
  for (std::size_t i = 0; i < 30; ++i)
    for (std::size_t j = 0; j < 30; ++j) {
      EXPECT_EQ(s[i * 30 + j], s[j * 30 + i]);
      EXPECT_LE(s[i * 30 + j], kSigmoidOne + 1e-15);
      EXPECT_GE(s[i * 30 + j], 1 - kSigmoidOne - 1e-15);
    }
}

TEST(GraphMask, MatchesPairwiseOracle) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 200; ++t) {
    const std::vector<int> counts = {1 + t % 5, 2 + t % 3, t % 4};
    std::vector<int> owner;
    for (std::size_t a = 0; a < counts.size(); ++a) owner.insert(owner.end(), std::size_t(counts[a]), int(a));
    const std::size_t C = 6;
    const auto x = uniform_tensor<double>({owner.size(), C}, rng, -1, 1, false);
    std::vector<std::vector<double>> rows(owner.size(), std::vector<double>(C));
    for (std::size_t i = 0; i < owner.size(); ++i)
      for (std::size_t c = 0; c < C; ++c) rows[i][c] = x[i * C + c];
    const double mu = 0.3 + 0.4 * std::uniform_real_distribution<double>(0, 1)(rng);
    EXPECT_EQ(graph_mask(similarity_matrix(x), owner, mu), membership_oracle(rows, owner, mu));
  }
}

TEST(GraphMask, StructuralProperties) {
  std::mt19937_64 rng(3);
  const std::vector<int> owner = {0, 0, 0, 1, 1, 2, 2, 2};
  const auto x = uniform_tensor<double>({8, 5}, rng, -1, 1, false);
  const auto s = similarity_matrix(x);
  std::vector<std::uint8_t> prev;
  for (const double mu : {0.2, 0.4, 0.5, 0.6, 0.7, 0.7311}) {
    const auto m = graph_mask(s, owner, mu);
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t j = 0; j < 8; ++j) {
        EXPECT_EQ(m[i * 8 + j], m[j * 8 + i]);
        if (owner[i] == owner[j]) EXPECT_EQ(m[i * 8 + j], 0);
        if (!prev.empty() && m[i * 8 + j]) EXPECT_TRUE(prev[i * 8 + j]) << "not monotone in mu";
      }
    prev = m;
  }
}

TEST(GraphMask, ThresholdAboveMaximumEmptiesGraphs) {
  std::mt19937_64 rng(4);
  const std::vector<int> owner = {0, 0, 1, 1, 2};
  auto x = uniform_tensor<double>({5, 4}, rng, -1, 1, false);
  // Two identical rows across agents reach the maximum similarity.
  for (std::size_t c = 0; c < 4; ++c) x.mutable_data()[2 * 4 + c] = x[c];
  const auto s = similarity_matrix(x);
  EXPECT_EQ(graph_mask(s, owner, 0.7310)[0 * 5 + 2], 1);
  for (const double mu : {0.7311, 0.75, 0.9, 1.0})
    for (const auto v : graph_mask(s, owner, mu)) EXPECT_EQ(v, 0);
  EXPECT_THROW(graph_mask(s, owner, 0.0), std::invalid_argument);
  EXPECT_THROW(graph_mask(s, owner, 1.5), std::invalid_argument);
}

TEST(QueryAggregator, EmptyGraphReturnsCentre) {
  std::mt19937_64 rng(5);
  ad::ParameterStore<double> store;
  QueryAggregator<double> agg(store, 8, FusionConfig{0.3, 2, true}, rng);
  const auto set = random_set(rng, {3, 4}, 8);
  const std::vector<std::uint8_t> none(49, 0);
  const auto out = agg(set, none);
  EXPECT_EQ(out.values(), set.base.values());
}

TEST(QueryAggregator, MaskedCandidatesHaveNoInfluence) {
  std::mt19937_64 rng(6);
  ad::ParameterStore<double> store;
  QueryAggregator<double> agg(store, 8, FusionConfig{0.3, 2, true}, rng);
  auto set = random_set(rng, {2, 3, 2}, 8);
  const std::size_t n = set.size();
  std::vector<std::uint8_t> mask(n * n, 0);
  mask[0 * n + 2] = mask[2 * n + 0] = 1;
  mask[0 * n + 5] = mask[5 * n + 0] = 1;
  const auto before = agg(set, mask);
  EXPECT_NE(before.values(), set.base.values());
  // Row 3 belongs to agent 1 and is outside row 0's graph.
  for (std::size_t c = 0; c < 8; ++c) {
    set.refined.mutable_data()[3 * 8 + c] += 10.0;
    set.base.mutable_data()[3 * 8 + c] -= 4.0;
  }
  const auto after = agg(set, mask);
  for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(before[c], after[c]);
}

TEST(QueryAggregator, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(7);
  ad::ParameterStore<double> store;
  QueryAggregator<double> agg(store, 4, FusionConfig{0.3, 2, true}, rng);
  auto set = random_set(rng, {2, 2}, 4);
  set.base.set_requires_grad(true);
  set.refined.set_requires_grad(true);
  std::vector<std::uint8_t> mask = {0, 0, 1, 1, 0, 0, 1, 0, 1, 1, 0, 0, 1, 0, 0, 0};
  auto proj = uniform_tensor<double>({4, 4}, rng, -1, 1, false);
  std::vector<ad::Tensor<double>> leaves = {set.base, set.refined};
  for (auto& [n, t] : store.entries()) leaves.push_back(t);
  const auto r = oracle::check_gradients<double>([&] { return ad::sum(ad::mul(agg(set, mask), proj)); },
                                                 leaves, 1e-6, 1e-5, 1e-9);
  EXPECT_TRUE(r.ok) << r.first_failure;
}

TEST(Refine, MovesReferencesIntoEgoFrame) {
  std::mt19937_64 rng(8);
  ad::ParameterStore<double> store;
  PositionalEmbedding<double> pe(store, "pe", 2, 4, rng);
  const DetectionRange range = DetectionRange::scaled(0.25, 0.25);
  AgentQueries<double> ego{0, uniform_tensor<double>({2, 4}, rng, -1, 1, false), {},
                           ad::Tensor<double>({2, 3}, {1, 2, -1, 5, -3, 0})};
  AgentQueries<double> other{1, uniform_tensor<double>({1, 4}, rng, -1, 1, false), {},
                             ad::Tensor<double>({1, 3}, {4, 1, -0.5})};
  const AgentPose rel{10, -2, 0.3, kPi / 2};
  const auto set = refine<double>({ego, other}, {AgentPose{}, rel}, pe, range);
  ASSERT_EQ(set.size(), 3u);
  EXPECT_EQ(set.owner, (std::vector<int>{0, 0, 1}));
  EXPECT_EQ(set.index, (std::vector<int>{0, 1, 0}));
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(set.refs[i], ego.refs[i]);
  const auto w = local_to_world(rel, 4, 1, -0.5);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(set.refs[6 + k], w[k], 1e-12);
  EXPECT_DOUBLE_EQ(set.frame_yaw[2], kPi / 2);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(set.base[i], ego.features[i]);
}

TEST(SelectTop, OrderAndTies) {
  EXPECT_EQ(select_top({0.9, 0.1, 0.5}, {0, 0, 1}, {0, 1, 0}, 2), (std::vector<std::size_t>{0, 2}));
  EXPECT_EQ(select_top({0.5, 0.5, 0.5}, {1, 0, 0}, {0, 1, 0}, 3), (std::vector<std::size_t>{2, 1, 0}));
  EXPECT_EQ(select_top({0.2, 0.3}, {0, 0}, {0, 1}, 10).size(), 2u);
  EXPECT_TRUE(select_top({0.2}, {0}, {0}, 0).empty());
}

}  // namespace
}  // namespace coopdet
