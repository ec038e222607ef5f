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
#include <utility>
#include <vector>

#include "esm/tensor.hpp"

// Differentiable operator set. Every function here is pure: it never writes
// into its arguments' data, and records a backward closure when needed.
namespace esm {

// ---- elementwise ---------------------------------------------------------
// Binary ops broadcast only over singleton axes of equal-rank operands.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T s);
template <typename T> Tensor<T> mul_scalar(const Tensor<T>& a, T s);

template <typename T> Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T> Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T> Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <typename T> Tensor<T> operator*(const Tensor<T>& a, T s) { return mul_scalar(a, s); }
template <typename T> Tensor<T> operator*(T s, const Tensor<T>& a) { return mul_scalar(a, s); }
template <typename T> Tensor<T> operator+(const Tensor<T>& a, T s) { return add_scalar(a, s); }

// tanh approximation: 0.5 x (1 + tanh(0.7978845608 (x + 0.044715 x^3)))
template <typename T> Tensor<T> gelu(const Tensor<T>& x);
template <typename T> Tensor<T> leaky_relu(const Tensor<T>& x, T slope = T(0.01));
template <typename T> Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T> Tensor<T> square(const Tensor<T>& x);
template <typename T> Tensor<T> clamp(const Tensor<T>& x, T lo, T hi);

// ---- reductions and views ------------------------------------------------
template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);
template <typename T> Tensor<T> sum_axis(const Tensor<T>& x, int axis, bool keepdim = false);
template <typename T> Tensor<T> reshape(const Tensor<T>& x, const Shape& shape);
template <typename T> Tensor<T> unsqueeze(const Tensor<T>& x, int axis);
template <typename T> Tensor<T> squeeze(const Tensor<T>& x, int axis);
template <typename T> Tensor<T> slice(const Tensor<T>& x, int axis, Index start, Index length);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& xs, int axis);
template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& x, Index at);

// ---- convolution ---------------------------------------------------------
// Layout [B, C, *spatial] with spatial rank `dims` (2 or 3). Cross-correlation
// semantics. Weight [C_out, C_in/groups, *k]. `bias` may be undefined.
struct ConvParams {
  int dims = 2;
  int stride = 1;
  int padding = 0;
  int groups = 1;
};

template <typename T>
Tensor<T> conv(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
               const ConvParams& p);

// Transposed convolution, the adjoint of `conv` with identical parameters.
// Weight layout [C_in, C_out/groups, *k]. Output spatial size is
// (in - 1) * stride - 2 * padding + k unless `output_size` pins each axis
// (allowed range: that value plus [0, stride)).
template <typename T>
Tensor<T> deconv(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 const ConvParams& p, const Shape& output_size = {});

// ---- rearrangements ------------------------------------------------------
template <typename T> Tensor<T> pixel_shuffle(const Tensor<T>& x, int r);
template <typename T> Tensor<T> pixel_unshuffle(const Tensor<T>& x, int r);
// C -> (g, C/g) -> transpose -> flatten.
template <typename T> Tensor<T> channel_shuffle(const Tensor<T>& x, int groups);

// ---- normalisation -------------------------------------------------------
// Normalises over every axis but 1. In training mode the batch statistics
// are used and the running buffers are updated in place (they are state,
// not graph inputs). Variance is the biased estimate; eps floors it.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     Tensor<T>& running_mean, Tensor<T>& running_var, bool training,
                     T momentum = T(0.1), T eps = T(1e-5));

// ---- resampling ----------------------------------------------------------
enum class ResizeMode { kNearest, kBilinear };

// [B, C, H, W] -> [B, C, out_h, out_w]. Bilinear uses the half-pixel
// (align_corners = false) convention with edge clamping.
template <typename T>
Tensor<T> resize(const Tensor<T>& x, Index out_h, Index out_w, ResizeMode mode);
template <typename T>
Tensor<T> resize(const Tensor<T>& x, double scale, ResizeMode mode);

// ---- selection -----------------------------------------------------------
template <typename T> Tensor<T> softmax(const Tensor<T>& x, int axis);

template <typename T>
struct TopK {
  Tensor<T> values;            // sorted descending along the axis
  std::vector<Index> indices;  // same layout as values
};
// Ties resolve to the lowest index. Gradient flows into the selected entries.
template <typename T> TopK<T> topk(const Tensor<T>& x, int axis, Index k);

}  // namespace esm
