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

#include <cmath>
#include <numbers>
#include <vector>

#include "coopdet/ad/nn.hpp"

namespace coopdet::ad {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-2;
  double max_grad_norm = 0.0;  // 0 disables clipping
};

// AdamW with bias correction and decoupled weight decay. A step whose
// gradients contain a non-finite value is skipped and reported.
template <typename T>
class AdamW {
 public:
  AdamW(ParameterStore<T>& store, AdamWConfig cfg) : store_(store), cfg_(cfg) {
    for (const auto& [_, p] : store_.entries()) {
      m_.emplace_back(p.numel(), 0.0);
      v_.emplace_back(p.numel(), 0.0);
    }
  }

  // Returns false (and leaves every parameter untouched) on NaN/Inf gradients.
  bool step(double lr) {
    auto& entries = store_.entries();
    double sq = 0;
    for (auto& [_, p] : entries) {
      if (!p.has_grad()) continue;
      for (const T g : p.grad()) {
        if (!std::isfinite(g)) return false;
        sq += double(g) * double(g);
      }
    }
    last_grad_norm_ = std::sqrt(sq);
    double clip = 1.0;
    if (cfg_.max_grad_norm > 0 && std::sqrt(sq) > cfg_.max_grad_norm) {
      clip = cfg_.max_grad_norm / std::sqrt(sq);
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    for (std::size_t i = 0; i < entries.size(); ++i) {
      auto& p = entries[i].second;
      auto data = p.mutable_data();
      const bool has = p.has_grad();
      const auto grad = p.grad();
      for (std::size_t j = 0; j < data.size(); ++j) {
        const double g = has ? double(grad[j]) * clip : 0.0;
        auto& m = m_[i][j];
        auto& v = v_[i][j];
        m = cfg_.beta1 * m + (1 - cfg_.beta1) * g;
        v = cfg_.beta2 * v + (1 - cfg_.beta2) * g * g;
        double x = double(data[j]);
        x -= lr * cfg_.weight_decay * x;
        x -= lr * (m / bc1) / (std::sqrt(v / bc2) + cfg_.eps);
        data[j] = static_cast<T>(x);
      }
    }
    return true;
  }

  long steps_taken() const { return t_; }
  // Pre-clipping global gradient norm of the last finite step.
  double last_grad_norm() const { return last_grad_norm_; }

 private:
  ParameterStore<T>& store_;
  AdamWConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
  double last_grad_norm_ = 0;
};

// Linear warm-up from warmup_lr to base_lr over warmup_steps, then cosine
// annealing down to min_lr at total_steps.
struct CosineSchedule {
  double base_lr = 2e-4;
  double warmup_lr = 1e-5;
  double min_lr = 0.0;
  long warmup_steps = 0;
  long total_steps = 1;

  double at(long step) const {
    if (step < warmup_steps) {
      const double f = double(step) / double(std::max<long>(warmup_steps, 1));
      return warmup_lr + (base_lr - warmup_lr) * f;
    }
    const long span = std::max<long>(total_steps - warmup_steps, 1);
    const double f = std::min(1.0, double(step - warmup_steps) / double(span));
    return min_lr + 0.5 * (base_lr - min_lr) * (1 + std::cos(std::numbers::pi * f));
  }
};

}  // namespace coopdet::ad
