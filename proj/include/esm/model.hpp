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

#include <vector>

#include "esm/aggregate.hpp"
#include "esm/backbone.hpp"
#include "esm/config.hpp"
#include "esm/esm.hpp"

namespace esm {

template <typename T>
struct ModelOutput {
  // Coarse to fine: the regressed initial map, then one map per ESM stage.
  // The last entry is at full resolution.
  std::vector<DisparityMap<T>> maps;
  Tensor<T> volume;  // raw cost volume, kept for inspection

  const DisparityMap<T>& final_map() const { return maps.back(); }
};

/// Features -> cost volume -> 3D hourglass -> top-k regression -> ESM stack.
template <typename T>
class StereoModel {
 public:
  explicit StereoModel(const ModelConfig& cfg);

  // In evaluation mode the full-resolution map is clamped to [0, dmax].
  ModelOutput<T> forward(const Tensor<T>& left, const Tensor<T>& right, bool training);

  // Checkpoint segments: "backbone", "aggregate3d", "esm.stage{n}".
  ParamSet<T> parameters() const;
  std::vector<Tensor<T>> trainable() const;
  void zero_refinement_heads();

  const ModelConfig& config() const { return cfg_; }

  FeatureExtractor<T> backbone;
  Hourglass3d<T> aggregator;
  std::vector<EsmStage<T>> stages;

 private:
  ModelConfig cfg_;
};

}  // namespace esm
