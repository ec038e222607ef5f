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

#include "esm/backbone.hpp"

namespace esm {

namespace {
constexpr ConvParams kSame{2, 1, 1, 1};
constexpr ConvParams kDown{2, 2, 1, 1};
constexpr Activation kAct = Activation::kLeakyRelu;
}  // namespace

template <typename T>
const Tensor<T>& FeaturePyramid<T>::at(int scale) const {
  const Tensor<T>* t = nullptr;
  switch (scale) {
    case 1: t = &guide_1; break;
    case 2: t = &guide_2; break;
    case 4: t = &feats_4; break;
    case 8: t = &feats_8; break;
    case 16: t = &feats_16; break;
    default: break;
  }
  if (!t || !t->defined()) {
    throw ShapeError("feature pyramid has no map at scale 1/" + std::to_string(scale));
  }
  return *t;
}

template <typename T>
void check_image(const Tensor<T>& image, const char* what) {
  if (image.rank() != 4 || image.dim(1) != 3) {
    throw ShapeError(std::string(what) + " must be [B, 3, H, W], got " + to_string(image.shape()));
  }
  if (image.dim(2) % 16 || image.dim(3) % 16) {
    throw ShapeError(std::string(what) + " height and width must be divisible by 16, got " +
                     std::to_string(image.dim(2)) + "x" + std::to_string(image.dim(3)));
  }
}

template <typename T>
FeatureExtractor<T>::FeatureExtractor(const BackboneConfig& cfg, std::mt19937_64& rng) {
  Index in = 3;
  for (Index c : cfg.encoder) {
    enc_down.emplace_back(in, c, 3, kDown, kAct, rng);
    enc_same.emplace_back(c, c, 3, kSame, kAct, rng);
    in = c;
  }
  const Index e4 = cfg.encoder[1], e8 = cfg.encoder[2], e16 = cfg.encoder[3];
  out16 = Conv<T>(e16, cfg.c16, 3, kSame, true, rng);
  up8 = DeconvBnAct<T>(cfg.c16, e8, 3, kDown, kAct, rng);
  fuse8 = ConvBnAct<T>(2 * e8, cfg.c8, 3, kSame, kAct, rng);
  out8 = Conv<T>(cfg.c8, cfg.c8, 3, kSame, true, rng);
  up4 = DeconvBnAct<T>(cfg.c8, e4, 3, kDown, kAct, rng);
  fuse4 = ConvBnAct<T>(2 * e4, cfg.c4, 3, kSame, kAct, rng);
  out4 = Conv<T>(cfg.c4, cfg.c4, 3, kSame, true, rng);
  stem1 = ConvBnAct<T>(3, cfg.guide1, 3, kSame, kAct, rng);
  stem2 = ConvBnAct<T>(cfg.guide1, cfg.guide2, 3, kDown, kAct, rng);
}

template <typename T>
std::pair<FeaturePyramid<T>, FeaturePyramid<T>> FeatureExtractor<T>::forward(
    const Tensor<T>& left, const Tensor<T>& right, bool training) {
  check_image(left, "left image");
  check_image(right, "right image");
  if (left.shape() != right.shape()) {
    throw ShapeError("left " + to_string(left.shape()) + " and right " + to_string(right.shape()) +
                     " images differ in shape");
  }
  const Index B = left.dim(0);
  Tensor<T> x = concat<T>({left, right}, 0);
  std::vector<Tensor<T>> enc;
  for (size_t s = 0; s < enc_down.size(); ++s) {
    x = enc_same[s].forward(enc_down[s].forward(x, training), training);
    enc.push_back(x);
  }
  const Tensor<T>& e4 = enc[1];
  const Tensor<T>& e8 = enc[2];
  Tensor<T> f16 = out16.forward(enc[3]);
  Tensor<T> d8 = fuse8.forward(concat<T>({e8, up8.forward(f16, spatial_shape(e8), training)}, 1), training);
  Tensor<T> f8 = out8.forward(d8);
  Tensor<T> d4 = fuse4.forward(concat<T>({e4, up4.forward(d8, spatial_shape(e4), training)}, 1), training);
  Tensor<T> f4 = out4.forward(d4);

  FeaturePyramid<T> l, r;
  l.feats_4 = slice(f4, 0, 0, B);
  r.feats_4 = slice(f4, 0, B, B);
  l.feats_8 = slice(f8, 0, 0, B);
  r.feats_8 = slice(f8, 0, B, B);
  l.feats_16 = slice(f16, 0, 0, B);
  r.feats_16 = slice(f16, 0, B, B);
  l.guide_1 = stem1.forward(left, training);
  l.guide_2 = stem2.forward(l.guide_1, training);
  return {l, r};
}

template <typename T>
void FeatureExtractor<T>::collect(const std::string& prefix, ParamSet<T>& out) const {
  for (size_t s = 0; s < enc_down.size(); ++s) {
    enc_down[s].collect(join_name(prefix, "enc" + std::to_string(s) + ".down"), out);
    enc_same[s].collect(join_name(prefix, "enc" + std::to_string(s) + ".same"), out);
  }
  out16.collect(join_name(prefix, "out16"), out);
  up8.collect(join_name(prefix, "up8"), out);
  fuse8.collect(join_name(prefix, "fuse8"), out);
  out8.collect(join_name(prefix, "out8"), out);
  up4.collect(join_name(prefix, "up4"), out);
  fuse4.collect(join_name(prefix, "fuse4"), out);
  out4.collect(join_name(prefix, "out4"), out);
  stem1.collect(join_name(prefix, "stem1"), out);
  stem2.collect(join_name(prefix, "stem2"), out);
}

template struct FeaturePyramid<float>;
template struct FeaturePyramid<double>;
template class FeatureExtractor<float>;
template class FeatureExtractor<double>;
template void check_image(const Tensor<float>&, const char*);
template void check_image(const Tensor<double>&, const char*);

}  // namespace esm
