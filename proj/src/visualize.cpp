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

#include "esm/visualize.hpp"

#include <algorithm>
#include <cmath>

namespace esm {

namespace {

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

struct Bin {
  double upper;
  Rgb color;
};

constexpr Bin kErrorBins[] = {
    {1.0 / 16, {49, 54, 149}},   {1.0 / 8, {69, 117, 180}}, {1.0 / 4, {116, 173, 209}}, {1.0 / 2, {171, 217, 233}},
    {1.0, {224, 243, 248}},      {2.0, {254, 224, 144}},    {4.0, {253, 174, 97}},      {8.0, {244, 109, 67}},
    {16.0, {215, 48, 39}},       {INFINITY, {165, 0, 38}},
};

}  // namespace

Rgb turbo(double t) {
  t = std::clamp(std::isfinite(t) ? t : 0.0, 0.0, 1.0);
  const double t2 = t * t, t3 = t2 * t, t4 = t3 * t, t5 = t4 * t;
  const double r = 0.13572138 + 4.61539260 * t - 42.66032258 * t2 + 132.13108234 * t3 - 152.94239396 * t4 +
                   59.28637943 * t5;
  const double g = 0.09140261 + 2.19418839 * t + 4.84296658 * t2 - 14.18503333 * t3 + 4.27729857 * t4 +
                   2.82956604 * t5;
  const double b = 0.10667330 + 12.64194608 * t - 60.58204836 * t2 + 110.36276771 * t3 - 89.90310912 * t4 +
                   27.34824973 * t5;
  return {to_byte(r), to_byte(g), to_byte(b)};
}

std::vector<std::uint8_t> colorize_disparity(const Tensor<float>& disp, double d_max) {
  if (!(d_max > 0)) throw std::invalid_argument("colorize_disparity: d_max must be positive");
  std::vector<std::uint8_t> rgb(static_cast<size_t>(disp.numel()) * 3);
  for (size_t i = 0; i < disp.data().size(); ++i) {
    const float d = disp.data()[i];
    const Rgb c = std::isfinite(d) ? turbo(d / d_max) : Rgb{0, 0, 0};
    std::copy(c.begin(), c.end(), rgb.begin() + static_cast<std::ptrdiff_t>(3 * i));
  }
  return rgb;
}

Rgb error_color(double e) {
  for (const auto& b : kErrorBins)
    if (e < b.upper) return b.color;
  return kErrorBins[9].color;
}

std::vector<std::uint8_t> error_map(const Tensor<float>& pred, const Tensor<float>& gt, const Tensor<float>& mask) {
  if (pred.numel() != gt.numel() || gt.numel() != mask.numel()) {
    throw ShapeError("error_map: prediction, ground truth and mask sizes differ");
  }
  std::vector<std::uint8_t> rgb(static_cast<size_t>(gt.numel()) * 3, 0);
  for (size_t i = 0; i < gt.data().size(); ++i) {
    if (mask.data()[i] <= 0.5f) continue;
    const double err = std::abs(static_cast<double>(pred.data()[i]) - gt.data()[i]);
    const double g = std::abs(static_cast<double>(gt.data()[i]));
    const double e = g > 0 ? std::min(err / 3.0, err / (0.05 * g)) : err / 3.0;
    const Rgb c = error_color(e);
    std::copy(c.begin(), c.end(), rgb.begin() + static_cast<std::ptrdiff_t>(3 * i));
  }
  return rgb;
}

}  // namespace esm
