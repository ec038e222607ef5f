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

#include "esm/layers.hpp"

#include <cmath>

namespace esm {

template <typename T>
Tensor<T> activate(const Tensor<T>& x, Activation a) {
  switch (a) {
    case Activation::kLeakyRelu: return leaky_relu(x);
    case Activation::kGelu: return gelu(x);
    case Activation::kNone: break;
  }
  return x;
}

template <typename T>
Tensor<T> kaiming_uniform(const Shape& shape, Index fan_in, std::mt19937_64& rng) {
  const T bound = static_cast<T>(std::sqrt(6.0 / static_cast<double>(fan_in)));
  return Tensor<T>::uniform(shape, -bound, bound, rng).set_requires_grad();
}

namespace {

Shape kernel_shape(Index a, Index b, int kernel, int dims) {
  Shape s{a, b};
  for (int i = 0; i < dims; ++i) s.push_back(kernel);
  return s;
}

Index kernel_volume(int kernel, int dims) {
  Index v = 1;
  for (int i = 0; i < dims; ++i) v *= kernel;
  return v;
}

}  // namespace

template <typename T>
Conv<T>::Conv(Index in, Index out, int kernel, ConvParams p, bool with_bias, std::mt19937_64& rng)
    : params(p) {
  if (in % p.groups || out % p.groups) {
    throw ShapeError("conv layer: channels " + std::to_string(in) + "->" + std::to_string(out) +
                     " not divisible by groups " + std::to_string(p.groups));
  }
  const Index fan_in = in / p.groups * kernel_volume(kernel, p.dims);
  weight = kaiming_uniform<T>(kernel_shape(out, in / p.groups, kernel, p.dims), fan_in, rng);
  if (with_bias) bias = Tensor<T>::zeros({out}).set_requires_grad();
}

template <typename T>
void Conv<T>::collect(const std::string& prefix, ParamSet<T>& out) const {
  out.push_back({join_name(prefix, "weight"), weight, true});
  if (bias.defined()) out.push_back({join_name(prefix, "bias"), bias, true});
}

template <typename T>
Deconv<T>::Deconv(Index in, Index out, int kernel, ConvParams p, bool with_bias,
                  std::mt19937_64& rng)
    : params(p) {
  if (in % p.groups || out % p.groups) {
    throw ShapeError("deconv layer: channels not divisible by groups");
  }
  // Each output sees roughly in * k^d / stride^d input taps.
  Index fan_in = in / p.groups * kernel_volume(kernel, p.dims);
  for (int i = 0; i < p.dims; ++i) fan_in = std::max<Index>(1, fan_in / p.stride);
  weight = kaiming_uniform<T>(kernel_shape(in, out / p.groups, kernel, p.dims), fan_in, rng);
  if (with_bias) bias = Tensor<T>::zeros({out}).set_requires_grad();
}

template <typename T>
void Deconv<T>::collect(const std::string& prefix, ParamSet<T>& out) const {
  out.push_back({join_name(prefix, "weight"), weight, true});
  if (bias.defined()) out.push_back({join_name(prefix, "bias"), bias, true});
}

template <typename T>
BatchNorm<T>::BatchNorm(Index channels)
    : gamma(Tensor<T>::ones({channels}).set_requires_grad()),
      beta(Tensor<T>::zeros({channels}).set_requires_grad()),
      running_mean(Tensor<T>::zeros({channels})),
      running_var(Tensor<T>::ones({channels})) {}

template <typename T>
void BatchNorm<T>::collect(const std::string& prefix, ParamSet<T>& out) const {
  out.push_back({join_name(prefix, "gamma"), gamma, true});
  out.push_back({join_name(prefix, "beta"), beta, true});
  out.push_back({join_name(prefix, "running_mean"), running_mean, false});
  out.push_back({join_name(prefix, "running_var"), running_var, false});
}

template <typename T>
ConvBnAct<T>::ConvBnAct(Index in, Index out, int kernel, ConvParams p, Activation a,
                        std::mt19937_64& rng)
    : conv(in, out, kernel, p, false, rng), bn(out), act(a) {}

template <typename T>
void ConvBnAct<T>::collect(const std::string& prefix, ParamSet<T>& out) const {
  conv.collect(join_name(prefix, "conv"), out);
  bn.collect(join_name(prefix, "bn"), out);
}

template <typename T>
DeconvBnAct<T>::DeconvBnAct(Index in, Index out, int kernel, ConvParams p, Activation a,
                            std::mt19937_64& rng)
    : deconv(in, out, kernel, p, false, rng), bn(out), act(a) {}

template <typename T>
void DeconvBnAct<T>::collect(const std::string& prefix, ParamSet<T>& out) const {
  deconv.collect(join_name(prefix, "deconv"), out);
  bn.collect(join_name(prefix, "bn"), out);
}

#define ESM_INSTANTIATE_LAYERS(T)                                                   \
  template Tensor<T> activate(const Tensor<T>&, Activation);                        \
  template Tensor<T> kaiming_uniform<T>(const Shape&, Index, std::mt19937_64&);     \
  template class Conv<T>;                                                           \
  template class Deconv<T>;                                                         \
  template class BatchNorm<T>;                                                      \
  template class ConvBnAct<T>;                                                      \
  template class DeconvBnAct<T>;

ESM_INSTANTIATE_LAYERS(float)
ESM_INSTANTIATE_LAYERS(double)

}  // namespace esm
