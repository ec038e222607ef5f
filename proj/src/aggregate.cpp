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

#include "esm/aggregate.hpp"

namespace esm {

namespace {
constexpr ConvParams kSame3{3, 1, 1, 1};
constexpr ConvParams kDown3{3, 2, 1, 1};
}  // namespace

template <typename T>
Hourglass3d<T>::Hourglass3d(Index in_channels, const HourglassConfig& cfg, std::mt19937_64& rng)
    : levels_(cfg.levels) {
  if (cfg.levels < 1) throw ConfigError("hourglass needs at least one level");
  stem = ConvBnAct<T>(in_channels, cfg.channels(0), 3, kSame3, Activation::kGelu, rng);
  for (int l = 1; l <= levels_; ++l) {
    down.emplace_back(cfg.channels(l - 1), cfg.channels(l), 3, kDown3, Activation::kGelu, rng);
    same.emplace_back(cfg.channels(l), cfg.channels(l), 3, kSame3, Activation::kGelu, rng);
  }
  for (int l = levels_; l >= 2; --l) {
    up.emplace_back(cfg.channels(l), cfg.channels(l - 1), 3, kDown3, Activation::kGelu, rng);
    merge.emplace_back(2 * cfg.channels(l - 1), cfg.channels(l - 1), 3, kSame3, Activation::kGelu, rng);
  }
  head = Deconv<T>(cfg.channels(1), 1, 3, kDown3, true, rng);
}

template <typename T>
Tensor<T> Hourglass3d<T>::forward(const Tensor<T>& volume, bool training) {
  if (volume.rank() != 5) {
    throw ShapeError("hourglass: volume must be [B, C, D, H, W], got " + to_string(volume.shape()));
  }
  if (volume.dim(1) != stem.conv.weight.dim(1)) {
    throw ShapeError("hourglass: expected " + std::to_string(stem.conv.weight.dim(1)) +
                     " volume channels, got " + std::to_string(volume.dim(1)));
  }
  static const char* kAxis[] = {"disparity", "height", "width"};
  for (int a = 0; a < 3; ++a) {
    if (volume.dim(2 + a) < 2) {
      throw ShapeError("hourglass: volume " + std::string(kAxis[a]) + " axis has length " +
                       std::to_string(volume.dim(2 + a)) +
                       "; every axis needs length >= 2 to be downsampled (volume " +
                       to_string(volume.shape()) + ")");
    }
  }
  std::vector<Tensor<T>> skips;
  Tensor<T> x = stem.forward(volume, training);
  skips.push_back(x);
  for (int l = 0; l < levels_; ++l) {
    x = same[l].forward(down[l].forward(x, training), training);
    skips.push_back(x);
  }
  for (int i = 0; i < levels_ - 1; ++i) {
    const Tensor<T>& skip = skips[static_cast<size_t>(levels_ - 1 - i)];
    x = up[i].forward(x, spatial_shape(skip), training);
    x = merge[i].forward(concat<T>({skip, x}, 1), training);
  }
  return head.forward(x, spatial_shape(skips[0]));
}

template <typename T>
void Hourglass3d<T>::collect(const std::string& prefix, ParamSet<T>& out) const {
  stem.collect(join_name(prefix, "stem"), out);
  for (size_t l = 0; l < down.size(); ++l) {
    down[l].collect(join_name(prefix, "down" + std::to_string(l + 1)), out);
    same[l].collect(join_name(prefix, "same" + std::to_string(l + 1)), out);
  }
  for (size_t i = 0; i < up.size(); ++i) {
    up[i].collect(join_name(prefix, "up" + std::to_string(i)), out);
    merge[i].collect(join_name(prefix, "merge" + std::to_string(i)), out);
  }
  head.collect(join_name(prefix, "head"), out);
}

template <typename T>
Tensor<T> regress_disparity(const Tensor<T>& aggregated, Index k) {
  if (aggregated.rank() != 5 || aggregated.dim(1) != 1) {
    throw ShapeError("regress_disparity: expected [B, 1, D, H, W], got " +
                     to_string(aggregated.shape()));
  }
  const Index D = aggregated.dim(2);
  if (k < 1 || k > D) {
    throw ShapeError("regress_disparity: k = " + std::to_string(k) + " outside [1, " +
                     std::to_string(D) + "]");
  }
  TopK<T> sel = topk(aggregated, 2, k);
  Tensor<T> w = softmax(sel.values, 2);
  std::vector<T> idx(sel.indices.begin(), sel.indices.end());
  Tensor<T> bins(sel.values.shape(), std::move(idx));
  return sum_axis(mul(w, bins), 2, false);
}

template class Hourglass3d<float>;
template class Hourglass3d<double>;
template Tensor<float> regress_disparity(const Tensor<float>&, Index);
template Tensor<double> regress_disparity(const Tensor<double>&, Index);

}  // namespace esm
