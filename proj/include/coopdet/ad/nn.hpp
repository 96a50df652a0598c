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
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "coopdet/ad/ops.hpp"

namespace coopdet::ad {

// Named, ordered collection of trainable leaves. Registration order is the
// checkpoint order.
template <typename T>
class ParameterStore {
 public:
  Tensor<T> add(std::string name, Tensor<T> value) {
    for (const auto& [n, _] : params_) {
      if (n == name) throw std::logic_error("duplicate parameter name: " + name);
    }
    value.set_requires_grad(true);
    params_.emplace_back(std::move(name), value);
    return value;
  }

  std::vector<std::pair<std::string, Tensor<T>>>& entries() { return params_; }
  const std::vector<std::pair<std::string, Tensor<T>>>& entries() const { return params_; }

  Tensor<T> find(const std::string& name) const {
    for (const auto& [n, t] : params_) {
      if (n == name) return t;
    }
    throw std::out_of_range("no parameter named " + name);
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : params_) n += t.numel();
    return n;
  }

  void zero_grad() {
    for (auto& [_, t] : params_) t.zero_grad();
  }

 private:
  std::vector<std::pair<std::string, Tensor<T>>> params_;
};

template <typename T>
Tensor<T> normal_tensor(Shape shape, T stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, static_cast<double>(stddev));
  std::vector<T> data(numel_of(shape));
  for (auto& v : data) v = static_cast<T>(dist(rng));
  return Tensor<T>(std::move(shape), std::move(data));
}

template <typename T>
struct Linear {
  Tensor<T> weight;  // [in×out]
  Tensor<T> bias;    // [out], may be undefined

  Linear() = default;
  Linear(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
         std::mt19937_64& rng, bool with_bias = true, T gain = T(1)) {
    const T stddev = gain * std::sqrt(T(2) / T(in + out));
    weight = store.add(name + ".weight", normal_tensor<T>({in, out}, stddev, rng));
    if (with_bias) bias = store.add(name + ".bias", Tensor<T>::zeros({out}));
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }

  void zero_() {
    std::fill(weight.mutable_data().begin(), weight.mutable_data().end(), T(0));
    if (bias.defined()) std::fill(bias.mutable_data().begin(), bias.mutable_data().end(), T(0));
  }
};

template <typename T>
struct LayerNorm {
  Tensor<T> gamma, beta;

  LayerNorm() = default;
  LayerNorm(ParameterStore<T>& store, const std::string& name, std::size_t dim) {
    gamma = store.add(name + ".gamma", Tensor<T>::full({dim}, T(1)));
    beta = store.add(name + ".beta", Tensor<T>::zeros({dim}));
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gamma, beta); }
};

template <typename T>
struct Conv2d {
  Tensor<T> weight;  // [out×in×k×k]
  Tensor<T> bias;
  std::size_t stride = 1, pad = 0;

  Conv2d() = default;
  Conv2d(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
         std::size_t k, std::size_t stride_, std::mt19937_64& rng)
      : stride(stride_), pad(k / 2) {
    const T stddev = std::sqrt(T(2) / T(in * k * k));  // He init for ReLU stacks
    weight = store.add(name + ".weight", normal_tensor<T>({out, in, k, k}, stddev, rng));
    bias = store.add(name + ".bias", Tensor<T>::zeros({out}));
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, weight, bias, stride, pad); }
};

// Two-layer perceptron with a ReLU between.
template <typename T>
struct Mlp2 {
  Linear<T> fc1, fc2;

  Mlp2() = default;
  Mlp2(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t hidden,
       std::size_t out, std::mt19937_64& rng)
      : fc1(store, name + ".fc1", in, hidden, rng), fc2(store, name + ".fc2", hidden, out, rng) {}

  Tensor<T> operator()(const Tensor<T>& x) const { return fc2(relu(fc1(x))); }
};

}  // namespace coopdet::ad
