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

#include "esm/config.hpp"
#include "esm/layers.hpp"

namespace esm {

/// Disparity in pixels of its own resolution, stored [B, 1, H, W].
template <typename T>
struct DisparityMap {
  Tensor<T> data;
  int scale = 1;

  Index height() const { return data.dim(2); }
  Index width() const { return data.dim(3); }
};

/// 3D encoder-decoder over a cost volume [B, Cv, D, H, W]. Each encoder level
/// halves D, H and W (stride-2 conv followed by a stride-1 conv); the decoder
/// mirrors it with deconvs and skip concatenations, and a final stride-2
/// deconv projects to one channel at the input resolution.
template <typename T>
class Hourglass3d {
 public:
  Hourglass3d() = default;
  Hourglass3d(Index in_channels, const HourglassConfig& cfg, std::mt19937_64& rng);

  Tensor<T> forward(const Tensor<T>& volume, bool training);
  void collect(const std::string& prefix, ParamSet<T>& out) const;

  ConvBnAct<T> stem;
  std::vector<ConvBnAct<T>> down, same;    // per encoder level 1..L
  std::vector<DeconvBnAct<T>> up;          // level l -> l-1, for l = L..2
  std::vector<ConvBnAct<T>> merge;         // after each skip concatenation
  Deconv<T> head;

 private:
  int levels_ = 0;
};

/// Top-k soft-argmax along the disparity axis of [B, 1, D, H, W]. Returns
/// [B, 1, H, W] in bins. Ties in the selection go to the lower index.
template <typename T>
Tensor<T> regress_disparity(const Tensor<T>& aggregated, Index k);

}  // namespace esm
