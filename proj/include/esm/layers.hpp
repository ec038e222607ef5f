// Copyright (c) 2026 The esmstereo Authors. All Rights Reserved.
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

#include <random>
#include <string>
#include <vector>

#include "esm/ops.hpp"

namespace esm {

/// A named tensor owned by some layer. `trainable` is false for running
/// statistics, which are checkpointed but never optimised.
template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
  bool trainable = true;
};

template <typename T>
using ParamSet = std::vector<NamedTensor<T>>;

inline std::string join_name(const std::string& prefix, const std::string& leaf) {
  return prefix.empty() ? leaf : prefix + "." + leaf;
}

enum class Activation { kNone, kLeakyRelu, kGelu };

template <typename T>
Tensor<T> activate(const Tensor<T>& x, Activation a);

/// Kaiming-uniform (fan-in) initialiser: U(-sqrt(6/fan_in), sqrt(6/fan_in)).
template <typename T>
Tensor<T> kaiming_uniform(const Shape& shape, Index fan_in, std::mt19937_64& rng);

template <typename T>
class Conv {
 public:
  Conv() = default;
  // kernel is cubic/square; bias optional.
  Conv(Index in, Index out, int kernel, ConvParams p, bool bias, std::mt19937_64& rng);

  Tensor<T> forward(const Tensor<T>& x) const { return conv(x, weight, bias, params); }
  void collect(const std::string& prefix, ParamSet<T>& out) const;

  Tensor<T> weight, bias;
  ConvParams params;
};

template <typename T>
class Deconv {
 public:
  Deconv() = default;
  Deconv(Index in, Index out, int kernel, ConvParams p, bool bias, std::mt19937_64& rng);

  Tensor<T> forward(const Tensor<T>& x, const Shape& output_size = {}) const {
    return deconv(x, weight, bias, params, output_size);
  }
  void collect(const std::string& prefix, ParamSet<T>& out) const;

  Tensor<T> weight, bias;
  ConvParams params;
};

template <typename T>
class BatchNorm {
 public:
  BatchNorm() = default;
  explicit BatchNorm(Index channels);

  Tensor<T> forward(const Tensor<T>& x, bool training) {
    return batch_norm(x, gamma, beta, running_mean, running_var, training);
  }
  void collect(const std::string& prefix, ParamSet<T>& out) const;

  Tensor<T> gamma, beta, running_mean, running_var;
};

/// conv (no bias) -> batch norm -> activation.
template <typename T>
class ConvBnAct {
 public:
  ConvBnAct() = default;
  ConvBnAct(Index in, Index out, int kernel, ConvParams p, Activation act, std::mt19937_64& rng);

  Tensor<T> forward(const Tensor<T>& x, bool training) {
    return activate(bn.forward(conv.forward(x), training), act);
  }
  void collect(const std::string& prefix, ParamSet<T>& out) const;

  Conv<T> conv;
  BatchNorm<T> bn;
  Activation act = Activation::kNone;
};

template <typename T>
class DeconvBnAct {
 public:
  DeconvBnAct() = default;
  DeconvBnAct(Index in, Index out, int kernel, ConvParams p, Activation act, std::mt19937_64& rng);

  Tensor<T> forward(const Tensor<T>& x, const Shape& output_size, bool training) {
    return activate(bn.forward(deconv.forward(x, output_size), training), act);
  }
  void collect(const std::string& prefix, ParamSet<T>& out) const;

  Deconv<T> deconv;
  BatchNorm<T> bn;
  Activation act = Activation::kNone;
};

/// Spatial extents of a [B, C, *spatial] tensor.
template <typename T>
Shape spatial_shape(const Tensor<T>& x) {
  return Shape(x.shape().begin() + 2, x.shape().end());
}

}  // namespace esm
