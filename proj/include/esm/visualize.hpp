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

#include <array>
#include <cstdint>
#include <vector>

#include "esm/tensor.hpp"

namespace esm {

using Rgb = std::array<std::uint8_t, 3>;

/// Polynomial fit of the turbo colormap, t clamped to [0, 1].
Rgb turbo(double t);

/// [H, W] or [1, H, W] disparity to interleaved RGB; [0, d_max] spans the
/// colormap. Non-finite values are black.
std::vector<std::uint8_t> colorize_disparity(const Tensor<float>& disp, double d_max);

/// Error palette over the normalised error e = min(|err| / 3, |err| / (0.05 gt)),
/// so e > 1 is a D1 outlier. Ten bins from dark blue to dark red with edges
/// 0, 1/16, 1/8, 1/4, 1/2, 1, 2, 4, 8, 16.
Rgb error_color(double normalized_error);

/// Per-pixel error image; pixels outside `mask` are black.
std::vector<std::uint8_t> error_map(const Tensor<float>& pred, const Tensor<float>& gt, const Tensor<float>& mask);

}  // namespace esm
