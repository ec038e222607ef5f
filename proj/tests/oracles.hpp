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

// Test-only reference implementations. Plain nested loops over the defining
// formulas; nothing here calls into the library's kernels.

#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "esm/ops.hpp"

namespace oracle {

using esm::Index;
using esm::Shape;
using Vol = esm::Tensor<double>;

inline Vol conv_loop(const Vol& x, const Vol& w, const Vol& b, const esm::ConvParams& p) {
  const bool is3 = p.dims == 3;
  const Index B = x.dim(0), Ci = x.dim(1), Co = w.dim(0);
  const Index D = is3 ? x.dim(2) : 1, H = x.dim(is3 ? 3 : 2), W = x.dim(is3 ? 4 : 3);
  const Index KD = is3 ? w.dim(2) : 1, KH = w.dim(is3 ? 3 : 2), KW = w.dim(is3 ? 4 : 3);
  const Index sd = is3 ? p.stride : 1, pd = is3 ? p.padding : 0;
  const Index OD = (D + 2 * pd - KD) / sd + 1;
  const Index OH = (H + 2 * p.padding - KH) / p.stride + 1;
  const Index OW = (W + 2 * p.padding - KW) / p.stride + 1;
  const Index cig = Ci / p.groups, cog = Co / p.groups;
  Shape os = is3 ? Shape{B, Co, OD, OH, OW} : Shape{B, Co, OH, OW};
  std::vector<double> out(static_cast<size_t>(esm::numel(os)), 0.0);
  auto X = [&](Index n, Index c, Index d, Index h, Index ww) {
    return x.data()[static_cast<size_t>((((n * Ci + c) * D + d) * H + h) * W + ww)];
  };
  auto Wt = [&](Index o, Index c, Index kd, Index kh, Index kw) {
    return w.data()[static_cast<size_t>((((o * cig + c) * KD + kd) * KH + kh) * KW + kw)];
  };
  for (Index n = 0; n < B; ++n)
    for (Index o = 0; o < Co; ++o)
      for (Index od = 0; od < OD; ++od)
        for (Index oh = 0; oh < OH; ++oh)
          for (Index ow = 0; ow < OW; ++ow) {
            double s = b.defined() ? b.data()[static_cast<size_t>(o)] : 0.0;
            const Index g = o / cog;
            for (Index c = 0; c < cig; ++c)
              for (Index kd = 0; kd < KD; ++kd)
                for (Index kh = 0; kh < KH; ++kh)
                  for (Index kw = 0; kw < KW; ++kw) {
                    const Index id = od * sd - pd + kd, ih = oh * p.stride - p.padding + kh,
                                iw = ow * p.stride - p.padding + kw;
                    if (id < 0 || id >= D || ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                    s += X(n, g * cig + c, id, ih, iw) * Wt(o, c, kd, kh, kw);
                  }
            out[static_cast<size_t>((((n * Co + o) * OD + od) * OH + oh) * OW + ow)] = s;
          }
  return Vol(os, std::move(out));
}

// C(d, x, y, g) = (Ng / Nc) <fl^g(x, y), fr^g(x - d, y)>, 0 where x < d.
inline Vol gwc_loop(const Vol& fl, const Vol& fr, Index D, Index Ng) {
  const Index B = fl.dim(0), Nc = fl.dim(1), H = fl.dim(2), W = fl.dim(3), per = Nc / Ng;
  std::vector<double> out(static_cast<size_t>(B * Ng * D * H * W), 0.0);
  auto F = [&](const Vol& f, Index n, Index c, Index y, Index x) {
    return f.data()[static_cast<size_t>(((n * Nc + c) * H + y) * W + x)];
  };
  for (Index n = 0; n < B; ++n)
    for (Index g = 0; g < Ng; ++g)
      for (Index d = 0; d < D; ++d)
        for (Index y = 0; y < H; ++y)
          for (Index x = 0; x < W; ++x) {
            if (x < d) continue;
            double s = 0;
            for (Index c = g * per; c < (g + 1) * per; ++c) s += F(fl, n, c, y, x) * F(fr, n, c, y, x - d);
            out[static_cast<size_t>((((n * Ng + g) * D + d) * H + y) * W + x)] =
                static_cast<double>(Ng) / static_cast<double>(Nc) * s;
          }
  return Vol({B, Ng, D, H, W}, std::move(out));
}

// Cosine similarity with eps added to the norm product.
inline Vol norm_corr_loop(const Vol& fl, const Vol& fr, Index D, double eps = 1e-5) {
  const Index B = fl.dim(0), Nc = fl.dim(1), H = fl.dim(2), W = fl.dim(3);
  std::vector<double> out(static_cast<size_t>(B * D * H * W), 0.0);
  auto F = [&](const Vol& f, Index n, Index c, Index y, Index x) {
    return f.data()[static_cast<size_t>(((n * Nc + c) * H + y) * W + x)];
  };
  for (Index n = 0; n < B; ++n)
    for (Index d = 0; d < D; ++d)
      for (Index y = 0; y < H; ++y)
        for (Index x = d; x < W; ++x) {
          double ip = 0, nl = 0, nr = 0;
          for (Index c = 0; c < Nc; ++c) {
            const double a = F(fl, n, c, y, x), b = F(fr, n, c, y, x - d);
            ip += a * b;
            nl += a * a;
            nr += b * b;
          }
          out[static_cast<size_t>(((n * D + d) * H + y) * W + x)] = ip / (std::sqrt(nl) * std::sqrt(nr) + eps);
        }
  return Vol({B, 1, D, H, W}, std::move(out));
}

// Top-k soft-argmax of one pixel's cost vector.
inline double topk_softargmax(const std::vector<double>& costs, Index k) {
  std::vector<Index> idx(costs.size());
  std::iota(idx.begin(), idx.end(), Index(0));
  std::stable_sort(idx.begin(), idx.end(), [&](Index a, Index b) {
    return costs[static_cast<size_t>(a)] > costs[static_cast<size_t>(b)];
  });
  const double m = costs[static_cast<size_t>(idx[0])];
  double z = 0, acc = 0;
  for (Index j = 0; j < k; ++j) {
    const double e = std::exp(costs[static_cast<size_t>(idx[static_cast<size_t>(j)])] - m);
    z += e;
    acc += e * static_cast<double>(idx[static_cast<size_t>(j)]);
  }
  return acc / z;
}

// Full soft-argmax over all bins, written independently of the top-k path.
inline double full_softargmax(const std::vector<double>& costs) {
  double m = -INFINITY;
  for (double c : costs) m = std::max(m, c);
  double z = 0, acc = 0;
  for (size_t d = 0; d < costs.size(); ++d) {
    const double e = std::exp(costs[d] - m);
    z += e;
    acc += e * static_cast<double>(d);
  }
  return acc / z;
}

struct MetricTriple {
  double epe, d1, bad;
};

inline MetricTriple metrics_loop(const std::vector<double>& pred, const std::vector<double>& gt,
                                 const std::vector<bool>& mask, double sigma) {
  double sum = 0;
  int n = 0, d1 = 0, bad = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    if (!mask[i]) continue;
    const double e = std::abs(pred[i] - gt[i]);
    sum += e;
    ++n;
    if (e > std::max(3.0, 0.05 * gt[i])) ++d1;
    if (e > sigma) ++bad;
  }
  return {sum / n, 100.0 * d1 / n, 100.0 * bad / n};
}

}  // namespace oracle
