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

#include "esm/esm.hpp"

#include <algorithm>

namespace esm {

namespace {

constexpr ConvParams kSame{2, 1, 1, 1};
constexpr ConvParams kDown{2, 2, 1, 1};
constexpr Activation kAct = Activation::kLeakyRelu;

template <typename T>
void check_same_grid(const char* op, const Tensor<T>& a, const Tensor<T>& guide) {
  if (guide.rank() != 4 || a.dim(0) != guide.dim(0) || a.dim(2) != guide.dim(2) ||
      a.dim(3) != guide.dim(3)) {
    throw ShapeError(std::string(op) + ": guidance " + to_string(guide.shape()) +
                     " is not on the grid of " + to_string(a.shape()));
  }
}

}  // namespace

template <typename T>
FuseBlock<T>::FuseBlock(Index guide_channels, Index lift_channels, Index out_channels,
                        std::mt19937_64& rng) {
  Index in = 1;
  for (int i = 0; i < 4; ++i) {
    lift.emplace_back(in, lift_channels, 3, kSame, kAct, rng);
    in = lift_channels;
  }
  mix0 = ConvBnAct<T>(lift_channels + guide_channels, out_channels, 3, kSame, kAct, rng);
  mix1 = ConvBnAct<T>(out_channels, out_channels, 3, kSame, kAct, rng);
}

template <typename T>
Tensor<T> FuseBlock<T>::forward(const Tensor<T>& disp, const Tensor<T>& guide, bool training) {
  if (disp.rank() != 4 || disp.dim(1) != 1) {
    throw ShapeError("fuse: disparity must be [B, 1, H, W], got " + to_string(disp.shape()));
  }
  check_same_grid("fuse", disp, guide);
  Tensor<T> x = disp;
  for (auto& l : lift) x = l.forward(x, training);
  x = concat<T>({x, guide}, 1);
  return mix1.forward(mix0.forward(x, training), training);
}

template <typename T>
void FuseBlock<T>::collect(const std::string& prefix, ParamSet<T>& out) const {
  for (size_t i = 0; i < lift.size(); ++i) lift[i].collect(join_name(prefix, "lift" + std::to_string(i)), out);
  mix0.collect(join_name(prefix, "mix0"), out);
  mix1.collect(join_name(prefix, "mix1"), out);
}

template <typename T>
FMBlock<T>::FMBlock(Index channels, std::mt19937_64& rng) {
  if (channels % 2) {
    throw ShapeError("fm_block: channel count " + std::to_string(channels) + " is odd");
  }
  pointwise = Conv<T>(channels / 2, channels / 2, 1, ConvParams{2, 1, 0, 1}, true, rng);
  depthwise = Conv<T>(channels, channels, 3, ConvParams{2, 1, 1, static_cast<int>(channels)}, true, rng);
}

template <typename T>
Tensor<T> FMBlock<T>::forward(const Tensor<T>& x) const {
  if (x.rank() != 4 || x.dim(1) % 2) {
    throw ShapeError("fm_block: input must be [B, C, H, W] with even C, got " + to_string(x.shape()));
  }
  auto [a, b] = split_channels(x, x.dim(1) / 2);
  Tensor<T> y = concat<T>({gelu(pointwise.forward(a)), b}, 1);
  y = depthwise.forward(channel_shuffle(y, 2));
  return add(y, x);
}

template <typename T>
void FMBlock<T>::collect(const std::string& prefix, ParamSet<T>& out) const {
  pointwise.collect(join_name(prefix, "pointwise"), out);
  depthwise.collect(join_name(prefix, "depthwise"), out);
}

template <typename T>
Refine2d<T>::Refine2d(Index in_channels, Index guide_channels, Index w, std::mt19937_64& rng)
    : stem(in_channels + guide_channels, w, 3, kSame, kAct, rng),
      enc1(w, w + 8, 3, kDown, kAct, rng),
      enc2(w + 8, w + 16, 3, kDown, kAct, rng),
      merge1(2 * (w + 8), w + 8, 3, kSame, kAct, rng),
      merge0(2 * w, w, 3, kSame, kAct, rng),
      up1(w + 16, w + 8, 3, kDown, kAct, rng),
      up0(w + 8, w, 3, kDown, kAct, rng),
      head(w, 1, 3, kSame, true, rng) {}

template <typename T>
Tensor<T> Refine2d<T>::forward(const Tensor<T>& feats, const Tensor<T>& guide, bool training) {
  check_same_grid("refine", feats, guide);
  Tensor<T> s0 = stem.forward(concat<T>({feats, guide}, 1), training);
  Tensor<T> s1 = enc1.forward(s0, training);
  Tensor<T> s2 = enc2.forward(s1, training);
  Tensor<T> x = merge1.forward(concat<T>({s1, up1.forward(s2, spatial_shape(s1), training)}, 1), training);
  x = merge0.forward(concat<T>({s0, up0.forward(x, spatial_shape(s0), training)}, 1), training);
  return head.forward(x);
}

template <typename T>
void Refine2d<T>::collect(const std::string& prefix, ParamSet<T>& out) const {
  stem.collect(join_name(prefix, "stem"), out);
  enc1.collect(join_name(prefix, "enc1"), out);
  enc2.collect(join_name(prefix, "enc2"), out);
  up1.collect(join_name(prefix, "up1"), out);
  merge1.collect(join_name(prefix, "merge1"), out);
  up0.collect(join_name(prefix, "up0"), out);
  merge0.collect(join_name(prefix, "merge0"), out);
  head.collect(join_name(prefix, "head"), out);
}

template <typename T>
Tensor<T> upsample_disparity(const Tensor<T>& disp) {
  return resize(mul_scalar(disp, T(2)), disp.dim(2) * 2, disp.dim(3) * 2, ResizeMode::kBilinear);
}

template <typename T>
EsmStage<T>::EsmStage(int s, Index guide_in, Index guide_out, const EsmConfig& cfg,
                      std::mt19937_64& rng)
    : in_scale(s) {
  const Index cm = cfg.mix_at(s);
  if (cm % 4) {
    throw ConfigError("mixer width " + std::to_string(cm) + " at 1/" + std::to_string(s) +
                      " is not divisible by 4 (pixel shuffle)");
  }
  fuse = FuseBlock<T>(guide_in, cfg.fuse_channels, cm, rng);
  for (int i = 0; i < cfg.fm_blocks; ++i) mixers.emplace_back(cm, rng);
  refine = Refine2d<T>(cm / 4, guide_out, cfg.refine_channels, rng);
}

template <typename T>
Tensor<T> EsmStage<T>::forward(const Tensor<T>& disp, const Tensor<T>& guide_in,
                               const Tensor<T>& guide_out, bool training) {
  Tensor<T> x = fuse.forward(disp, guide_in, training);
  for (const auto& m : mixers) x = m.forward(x);
  x = pixel_shuffle(x, 2);
  if (guide_out.rank() != 4 || guide_out.dim(2) != x.dim(2) || guide_out.dim(3) != x.dim(3)) {
    throw ShapeError("esm stage 1/" + std::to_string(in_scale) + ": output guidance " +
                     to_string(guide_out.shape()) + " is not at twice the input resolution");
  }
  return add(upsample_disparity(disp), refine.forward(x, guide_out, training));
}

template <typename T>
void EsmStage<T>::collect(const std::string& prefix, ParamSet<T>& out) const {
  fuse.collect(join_name(prefix, "fuse"), out);
  for (size_t i = 0; i < mixers.size(); ++i) mixers[i].collect(join_name(prefix, "fm" + std::to_string(i)), out);
  refine.collect(join_name(prefix, "refine"), out);
}

template <typename T>
void EsmStage<T>::zero_refinement_head() {
  auto w = refine.head.weight.mutable_data();
  std::fill(w.begin(), w.end(), T(0));
  auto b = refine.head.bias.mutable_data();
  std::fill(b.begin(), b.end(), T(0));
}

#define ESM_INSTANTIATE_STAGE(T)                                   \
  template class FuseBlock<T>;                                     \
  template class FMBlock<T>;                                       \
  template class Refine2d<T>;                                      \
  template class EsmStage<T>;                                      \
  template Tensor<T> upsample_disparity(const Tensor<T>&);

ESM_INSTANTIATE_STAGE(float)
ESM_INSTANTIATE_STAGE(double)

}  // namespace esm
