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

#include "esm/costvol.hpp"

#include <cmath>

namespace esm {

namespace {

template <typename T>
void check_pair(const char* op, const Tensor<T>& l, const Tensor<T>& r, Index disparities) {
  if (l.rank() != 4) throw ShapeError(std::string(op) + ": features must be [B, C, H, W], got " + to_string(l.shape()));
  if (l.shape() != r.shape()) {
    throw ShapeError(std::string(op) + ": left " + to_string(l.shape()) + " and right " +
                     to_string(r.shape()) + " differ");
  }
  if (disparities < 1) throw ShapeError(std::string(op) + ": disparity count must be >= 1");
}

}  // namespace

template <typename T>
Tensor<T> gwc_volume(const Tensor<T>& left, const Tensor<T>& right, Index D, Index G) {
  check_pair("gwc_volume", left, right, D);
  const Index B = left.dim(0), C = left.dim(1), H = left.dim(2), W = left.dim(3);
  if (G < 1 || C % G != 0) {
    throw ShapeError("gwc_volume: channel axis (1) length " + std::to_string(C) +
                     " is not divisible by groups " + std::to_string(G));
  }
  const Index per = C / G, HW = H * W;
  const T scale = static_cast<T>(G) / static_cast<T>(C);
  std::vector<T> out(static_cast<size_t>(B * G * D * HW), T(0));
  const T* fl = left.data().data();
  const T* fr = right.data().data();
  for (Index n = 0; n < B; ++n)
    for (Index g = 0; g < G; ++g)
      for (Index d = 0; d < D && d < W; ++d) {
        T* o = out.data() + (((n * G + g) * D + d) * HW);
        for (Index c = g * per; c < (g + 1) * per; ++c) {
          const T* a = fl + (n * C + c) * HW;
          const T* b = fr + (n * C + c) * HW;
          for (Index y = 0; y < H; ++y)
            for (Index x = d; x < W; ++x) o[y * W + x] += a[y * W + x] * b[y * W + x - d];
        }
        for (Index y = 0; y < H; ++y)
          for (Index x = d; x < W; ++x) o[y * W + x] *= scale;
      }
  auto li = left.impl(), ri = right.impl();
  return make_result<T>(
      {B, G, D, H, W}, std::move(out), "gwc_volume", {left, right},
      [li, ri, B, C, G, D, H, W, per, HW, scale](const TensorImpl<T>& o) {
        const T* go = o.grad.data();
        T* gl = li->requires_grad ? li->grad_buffer().data() : nullptr;
        T* gr = ri->requires_grad ? ri->grad_buffer().data() : nullptr;
        const T* fl = li->data.data();
        const T* fr = ri->data.data();
        for (Index n = 0; n < B; ++n)
          for (Index g = 0; g < G; ++g)
            for (Index d = 0; d < D && d < W; ++d) {
              const T* gd = go + (((n * G + g) * D + d) * HW);
              for (Index c = g * per; c < (g + 1) * per; ++c) {
                const Index base = (n * C + c) * HW;
                for (Index y = 0; y < H; ++y)
                  for (Index x = d; x < W; ++x) {
                    const T s = scale * gd[y * W + x];
                    if (gl) gl[base + y * W + x] += s * fr[base + y * W + x - d];
                    if (gr) gr[base + y * W + x - d] += s * fl[base + y * W + x];
                  }
              }
            }
      });
}

template <typename T>
Tensor<T> norm_corr_volume(const Tensor<T>& left, const Tensor<T>& right, Index D, T eps) {
  check_pair("norm_corr_volume", left, right, D);
  const Index B = left.dim(0), C = left.dim(1), H = left.dim(2), W = left.dim(3), HW = H * W;
  const T* fl = left.data().data();
  const T* fr = right.data().data();
  // Per-pixel feature norms.
  std::vector<T> nl(static_cast<size_t>(B * HW), T(0)), nr(nl.size(), T(0));
  for (Index n = 0; n < B; ++n)
    for (Index c = 0; c < C; ++c)
      for (Index p = 0; p < HW; ++p) {
        const T a = fl[(n * C + c) * HW + p], b = fr[(n * C + c) * HW + p];
        nl[n * HW + p] += a * a;
        nr[n * HW + p] += b * b;
      }
  for (auto& v : nl) v = std::sqrt(v);
  for (auto& v : nr) v = std::sqrt(v);

  std::vector<T> ip(static_cast<size_t>(B * D * HW), T(0));
  for (Index n = 0; n < B; ++n)
    for (Index d = 0; d < D && d < W; ++d) {
      T* o = ip.data() + (n * D + d) * HW;
      for (Index c = 0; c < C; ++c) {
        const T* a = fl + (n * C + c) * HW;
        const T* b = fr + (n * C + c) * HW;
        for (Index y = 0; y < H; ++y)
          for (Index x = d; x < W; ++x) o[y * W + x] += a[y * W + x] * b[y * W + x - d];
      }
    }
  std::vector<T> out(ip.size(), T(0));
  for (Index n = 0; n < B; ++n)
    for (Index d = 0; d < D && d < W; ++d)
      for (Index y = 0; y < H; ++y)
        for (Index x = d; x < W; ++x) {
          const Index i = (n * D + d) * HW + y * W + x;
          out[i] = ip[i] / (nl[n * HW + y * W + x] * nr[n * HW + y * W + x - d] + eps);
        }
  auto li = left.impl(), ri = right.impl();
  return make_result<T>(
      {B, 1, D, H, W}, std::move(out), "norm_corr_volume", {left, right},
      [li, ri, B, C, D, H, W, HW, eps, nl = std::move(nl), nr = std::move(nr),
       ip = std::move(ip)](const TensorImpl<T>& o) {
        const T* go = o.grad.data();
        T* gl = li->requires_grad ? li->grad_buffer().data() : nullptr;
        T* gr = ri->requires_grad ? ri->grad_buffer().data() : nullptr;
        const T* fl = li->data.data();
        const T* fr = ri->data.data();
        // dC/da = b / den - ip * nb / den^2 * a / na, symmetric for b.
        for (Index n = 0; n < B; ++n)
          for (Index d = 0; d < D && d < W; ++d)
            for (Index y = 0; y < H; ++y)
              for (Index x = d; x < W; ++x) {
                const Index i = (n * D + d) * HW + y * W + x;
                const Index pl = y * W + x, pr = y * W + x - d;
                const T na = nl[n * HW + pl], nb = nr[n * HW + pr];
                const T den = na * nb + eps;
                const T g = go[i];
                if (g == T(0)) continue;
                const T k = ip[i] / (den * den);
                const T ca = na > T(0) ? k * nb / na : T(0);
                const T cb = nb > T(0) ? k * na / nb : T(0);
                for (Index c = 0; c < C; ++c) {
                  const Index base = (n * C + c) * HW;
                  const T a = fl[base + pl], b = fr[base + pr];
                  if (gl) gl[base + pl] += g * (b / den - ca * a);
                  if (gr) gr[base + pr] += g * (a / den - cb * b);
                }
              }
      });
}

template Tensor<float> gwc_volume(const Tensor<float>&, const Tensor<float>&, Index, Index);
template Tensor<double> gwc_volume(const Tensor<double>&, const Tensor<double>&, Index, Index);
template Tensor<float> norm_corr_volume(const Tensor<float>&, const Tensor<float>&, Index, float);
template Tensor<double> norm_corr_volume(const Tensor<double>&, const Tensor<double>&, Index, double);

}  // namespace esm
