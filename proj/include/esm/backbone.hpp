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

#include <utility>
#include <vector>

#include "esm/config.hpp"
#include "esm/layers.hpp"

namespace esm {

/// Multi-scale features of one view. Guidance maps are only produced for the
/// left image; they stay undefined in the right pyramid.
template <typename T>
struct FeaturePyramid {
  Tensor<T> feats_4, feats_8, feats_16;
  Tensor<T> guide_2, guide_1;

  // Features at 1/4, 1/8, 1/16 or guidance at 1/2, 1/1.
  const Tensor<T>& at(int scale) const;
};

/// Strided encoder with a deconv decoder and skip concatenations, plus a
/// shallow guidance stem on the left image. Both views share every weight
/// and run through the encoder as one batch.
template <typename T>
class FeatureExtractor {
 public:
  FeatureExtractor() = default;
  FeatureExtractor(const BackboneConfig& cfg, std::mt19937_64& rng);

  std::pair<FeaturePyramid<T>, FeaturePyramid<T>> forward(const Tensor<T>& left,
                                                          const Tensor<T>& right, bool training);
  void collect(const std::string& prefix, ParamSet<T>& out) const;

  std::vector<ConvBnAct<T>> enc_down, enc_same;  // 1/2 .. 1/16
  Conv<T> out16;
  DeconvBnAct<T> up8, up4;
  ConvBnAct<T> fuse8, fuse4;
  Conv<T> out8, out4;
  ConvBnAct<T> stem1, stem2;
};

/// Throws unless `image` is [B, 3, H, W] with H and W divisible by 16.
template <typename T>
void check_image(const Tensor<T>& image, const char* what);

}  // namespace esm
