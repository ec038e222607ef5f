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

#include "esm/config.hpp"
#include "esm/tensor.hpp"

namespace esm {

/// Matching-cost volumes over a left/right feature pair [B, Nc, H, W].
/// Output layout [B, Cv, D, H, W]; entries with x < d hold 0 and receive no
/// gradient.

// Group-wise correlation: Cv = groups, each group the mean channel product.
template <typename T>
Tensor<T> gwc_volume(const Tensor<T>& left, const Tensor<T>& right, Index disparities,
                     Index groups);

// Cosine similarity with `eps` added to the norm product. Cv = 1.
template <typename T>
Tensor<T> norm_corr_volume(const Tensor<T>& left, const Tensor<T>& right, Index disparities,
                           T eps = T(1e-5));

template <typename T>
Tensor<T> build_volume(const Tensor<T>& left, const Tensor<T>& right, const ModelConfig& cfg) {
  return cfg.kind == VolumeKind::kGwc ? gwc_volume(left, right, cfg.disparity_bins(), cfg.groups)
                                      : norm_corr_volume(left, right, cfg.disparity_bins());
}

}  // namespace esm
