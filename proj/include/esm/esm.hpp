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
#include "esm/config.hpp"
#include "esm/layers.hpp"

namespace esm {

/// Disparity feature fusion: four convs lift the 1-channel map, the result
/// is concatenated with guidance at the same scale and two more convs emit
/// the mixer width.
template <typename T>
class FuseBlock {
 public:
  FuseBlock() = default;
  FuseBlock(Index guide_channels, Index lift_channels, Index out_channels, std::mt19937_64& rng);

  Tensor<T> forward(const Tensor<T>& disp, const Tensor<T>& guide, bool training);
  void collect(const std::string& prefix, ParamSet<T>& out) const;

  std::vector<ConvBnAct<T>> lift;  // 4 layers
  ConvBnAct<T> mix0, mix1;
};

/// split -> (1x1 conv, gelu) on the first half -> concat -> channel shuffle
/// (2 groups) -> depthwise 3x3 -> + input.
template <typename T>
class FMBlock {
 public:
  FMBlock() = default;
  FMBlock(Index channels, std::mt19937_64& rng);

  Tensor<T> forward(const Tensor<T>& x) const;
  void collect(const std::string& prefix, ParamSet<T>& out) const;

  Conv<T> pointwise, depthwise;
};

/// Guided 2D hourglass returning a 1-channel residual at its input size.
template <typename T>
class Refine2d {
 public:
  Refine2d() = default;
  Refine2d(Index in_channels, Index guide_channels, Index width, std::mt19937_64& rng);

  Tensor<T> forward(const Tensor<T>& feats, const Tensor<T>& guide, bool training);
  void collect(const std::string& prefix, ParamSet<T>& out) const;

  ConvBnAct<T> stem, enc1, enc2, merge1, merge0;
  DeconvBnAct<T> up1, up0;
  Conv<T> head;
};

/// One x2 upsampling stage:
///   out = bilinear(2 * disp) + refine(pixel_shuffle(fm(fm(fuse(disp, g_in)))), g_out)
template <typename T>
class EsmStage {
 public:
  EsmStage() = default;
  EsmStage(int in_scale, Index guide_in, Index guide_out, const EsmConfig& cfg, std::mt19937_64& rng);

  Tensor<T> forward(const Tensor<T>& disp, const Tensor<T>& guide_in, const Tensor<T>& guide_out,
                    bool training);
  void collect(const std::string& prefix, ParamSet<T>& out) const;
  // Zeroes the residual head so the stage reduces to scaled bilinear upsampling.
  void zero_refinement_head();

  int in_scale = 0;
  FuseBlock<T> fuse;
  std::vector<FMBlock<T>> mixers;
  Refine2d<T> refine;
};

/// Bilinear x2 upsampling of a [B, 1, H, W] disparity map with values doubled.
template <typename T>
Tensor<T> upsample_disparity(const Tensor<T>& disp);

}  // namespace esm
