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

#include "esm/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace esm {

namespace {

int normalize_axis(int axis, int rank, const char* op) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " out of range for rank " + std::to_string(rank));
  }
  return axis;
}

// Splits a shape around `axis` into (outer, n, inner) extents.
struct AxisSplit {
  Index outer = 1, n = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, int axis) {
  AxisSplit r;
  for (int i = 0; i < axis; ++i) r.outer *= s[static_cast<size_t>(i)];
  r.n = s[static_cast<size_t>(axis)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

// Per-output-element source offsets of a singleton-axis broadcast.
struct Broadcast {
  Shape out;
  std::vector<Index> off_a, off_b;
  bool same = false;
};

Broadcast make_broadcast(const Shape& a, const Shape& b, const char* op) {
  if (a.size() != b.size()) {
    throw ShapeError(std::string(op) + ": rank mismatch " + to_string(a) + " vs " + to_string(b));
  }
  Broadcast bc;
  bc.same = (a == b);
  bc.out.resize(a.size());
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i] == b[i] || b[i] == 1) {
      bc.out[i] = a[i];
    } else if (a[i] == 1) {
      bc.out[i] = b[i];
    } else {
      throw ShapeError(std::string(op) + ": axis " + std::to_string(i) + " has lengths " +
                       std::to_string(a[i]) + " and " + std::to_string(b[i]) +
                       "; only singleton axes broadcast");
    }
  }
  if (bc.same) return bc;
  const size_t r = a.size();
  std::vector<Index> sa(r), sb(r);
  Index ka = 1, kb = 1;
  for (size_t i = r; i-- > 0;) {
    sa[i] = (a[i] == 1) ? 0 : ka;
    sb[i] = (b[i] == 1) ? 0 : kb;
    ka *= a[i];
    kb *= b[i];
  }
  const Index n = numel(bc.out);
  bc.off_a.resize(static_cast<size_t>(n));
  bc.off_b.resize(static_cast<size_t>(n));
  std::vector<Index> idx(r, 0);
  Index oa = 0, ob = 0;
  for (Index e = 0; e < n; ++e) {
    bc.off_a[static_cast<size_t>(e)] = oa;
    bc.off_b[static_cast<size_t>(e)] = ob;
    for (size_t i = r; i-- > 0;) {
      ++idx[i];
      oa += sa[i];
      ob += sb[i];
      if (idx[i] < bc.out[i]) break;
      oa -= sa[i] * idx[i];
      ob -= sb[i] * idx[i];
      idx[i] = 0;
    }
  }
  return bc;
}

enum class BinOp { kAdd, kSub, kMul };

template <typename T>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, BinOp kind, const char* name) {
  auto bc = std::make_shared<Broadcast>(make_broadcast(a.shape(), b.shape(), name));
  const Index n = numel(bc->out);
  std::vector<T> out(static_cast<size_t>(n));
  const auto ad = a.data();
  const auto bd = b.data();
  auto fa = [&](Index e) { return bc->same ? e : bc->off_a[static_cast<size_t>(e)]; };
  auto fb = [&](Index e) { return bc->same ? e : bc->off_b[static_cast<size_t>(e)]; };
  for (Index e = 0; e < n; ++e) {
    const T x = ad[static_cast<size_t>(fa(e))];
    const T y = bd[static_cast<size_t>(fb(e))];
    out[static_cast<size_t>(e)] = kind == BinOp::kAdd ? x + y : kind == BinOp::kSub ? x - y : x * y;
  }
  auto ai = a.impl();
  auto bi = b.impl();
  return make_result<T>(bc->out, std::move(out), name, {a, b},
                        [ai, bi, bc, kind, n](const TensorImpl<T>& o) {
                          auto ia = [&](Index e) { return bc->same ? e : bc->off_a[static_cast<size_t>(e)]; };
                          auto ib = [&](Index e) { return bc->same ? e : bc->off_b[static_cast<size_t>(e)]; };
                          if (ai->requires_grad) {
                            auto& g = ai->grad_buffer();
                            for (Index e = 0; e < n; ++e) {
                              const T go = o.grad[static_cast<size_t>(e)];
                              const T d = kind == BinOp::kMul ? go * bi->data[static_cast<size_t>(ib(e))] : go;
                              g[static_cast<size_t>(ia(e))] += d;
                            }
                          }
                          if (bi->requires_grad) {
                            auto& g = bi->grad_buffer();
                            for (Index e = 0; e < n; ++e) {
                              const T go = o.grad[static_cast<size_t>(e)];
                              T d = go;
                              if (kind == BinOp::kSub) d = -go;
                              if (kind == BinOp::kMul) d = go * ai->data[static_cast<size_t>(ia(e))];
                              g[static_cast<size_t>(ib(e))] += d;
                            }
                          }
                        });
}

// Elementwise map with derivative computed from (x, y).
template <typename T, typename F, typename D>
Tensor<T> unary(const Tensor<T>& x, const char* name, F f, D df) {
  const auto xd = x.data();
  std::vector<T> out(xd.size());
  for (size_t i = 0; i < xd.size(); ++i) out[i] = f(xd[i]);
  auto xi = x.impl();
  return make_result<T>(x.shape(), std::move(out), name, {x},
                        [xi, df](const TensorImpl<T>& o) {
                          auto& g = xi->grad_buffer();
                          for (size_t i = 0; i < g.size(); ++i) {
                            g[i] += o.grad[i] * df(xi->data[i], o.data[i]);
                          }
                        });
}

// Output element e reads input element src[e]; gradient scatters back.
template <typename T>
Tensor<T> gather_permute(const Tensor<T>& x, Shape out_shape, std::vector<Index> src,
                         const char* name) {
  const auto xd = x.data();
  std::vector<T> out(src.size());
  for (size_t e = 0; e < src.size(); ++e) out[e] = xd[static_cast<size_t>(src[e])];
  auto xi = x.impl();
  auto map = std::make_shared<std::vector<Index>>(std::move(src));
  return make_result<T>(std::move(out_shape), std::move(out), name, {x},
                        [xi, map](const TensorImpl<T>& o) {
                          auto& g = xi->grad_buffer();
                          for (size_t e = 0; e < map->size(); ++e) {
                            g[static_cast<size_t>((*map)[e])] += o.grad[e];
                          }
                        });
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinOp::kAdd, "add");
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinOp::kSub, "sub");
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinOp::kMul, "mul");
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  return unary(a, "add_scalar", [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T s) {
  return unary(a, "mul_scalar", [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T kC = T(0.7978845608);
  constexpr T kA = T(0.044715);
  return unary(
      x, "gelu",
      [](T v) { return T(0.5) * v * (T(1) + std::tanh(kC * (v + kA * v * v * v))); },
      [](T v, T) {
        const T t = std::tanh(kC * (v + kA * v * v * v));
        return T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * kC * (T(1) + T(3) * kA * v * v);
      });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope) {
  return unary(
      x, "leaky_relu", [slope](T v) { return v > T(0) ? v : slope * v; },
      [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary(
      x, "sigmoid",
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
  return unary(x, "square", [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
  if (lo > hi) throw ShapeError("clamp: lo > hi");
  return unary(
      x, "clamp", [lo, hi](T v) { return std::min(std::max(v, lo), hi); },
      [lo, hi](T v, T) { return (v >= lo && v <= hi) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  const auto xd = x.data();
  T s = T(0);
  for (T v : xd) s += v;
  auto xi = x.impl();
  return make_result<T>(Shape{1}, {s}, "sum", {x}, [xi](const TensorImpl<T>& o) {
    auto& g = xi->grad_buffer();
    for (auto& v : g) v += o.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return mul_scalar(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> sum_axis(const Tensor<T>& x, int axis, bool keepdim) {
  axis = normalize_axis(axis, x.rank(), "sum_axis");
  const AxisSplit sp = split_at(x.shape(), axis);
  Shape os = x.shape();
  if (keepdim || os.size() == 1) {
    os[static_cast<size_t>(axis)] = 1;
  } else {
    os.erase(os.begin() + axis);
  }
  const auto xd = x.data();
  std::vector<T> out(static_cast<size_t>(sp.outer * sp.inner), T(0));
  for (Index o = 0; o < sp.outer; ++o)
    for (Index k = 0; k < sp.n; ++k)
      for (Index i = 0; i < sp.inner; ++i)
        out[static_cast<size_t>(o * sp.inner + i)] += xd[static_cast<size_t>((o * sp.n + k) * sp.inner + i)];
  auto xi = x.impl();
  return make_result<T>(os, std::move(out), "sum_axis", {x}, [xi, sp](const TensorImpl<T>& r) {
    auto& g = xi->grad_buffer();
    for (Index o = 0; o < sp.outer; ++o)
      for (Index k = 0; k < sp.n; ++k)
        for (Index i = 0; i < sp.inner; ++i)
          g[static_cast<size_t>((o * sp.n + k) * sp.inner + i)] += r.grad[static_cast<size_t>(o * sp.inner + i)];
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, const Shape& shape) {
  if (numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  auto xi = x.impl();
  return make_result<T>(shape, std::move(out), "reshape", {x}, [xi](const TensorImpl<T>& o) {
    auto& g = xi->grad_buffer();
    for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
  });
}

template <typename T>
Tensor<T> unsqueeze(const Tensor<T>& x, int axis) {
  const int r = x.rank() + 1;
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw ShapeError("unsqueeze: axis out of range");
  Shape s = x.shape();
  s.insert(s.begin() + axis, 1);
  return reshape(x, s);
}

template <typename T>
Tensor<T> squeeze(const Tensor<T>& x, int axis) {
  axis = normalize_axis(axis, x.rank(), "squeeze");
  if (x.dim(axis) != 1) {
    throw ShapeError("squeeze: axis " + std::to_string(axis) + " has length " +
                     std::to_string(x.dim(axis)));
  }
  Shape s = x.shape();
  s.erase(s.begin() + axis);
  return reshape(x, s);
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, int axis, Index start, Index length) {
  axis = normalize_axis(axis, x.rank(), "slice");
  const AxisSplit sp = split_at(x.shape(), axis);
  if (start < 0 || length <= 0 || start + length > sp.n) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " +
                     std::to_string(start + length) + ") exceeds axis " + std::to_string(axis) +
                     " of length " + std::to_string(sp.n));
  }
  Shape os = x.shape();
  os[static_cast<size_t>(axis)] = length;
  std::vector<Index> src;
  src.reserve(static_cast<size_t>(sp.outer * length * sp.inner));
  for (Index o = 0; o < sp.outer; ++o)
    for (Index k = 0; k < length; ++k)
      for (Index i = 0; i < sp.inner; ++i) src.push_back((o * sp.n + start + k) * sp.inner + i);
  return gather_permute(x, os, std::move(src), "slice");
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& x, Index at) {
  if (x.rank() < 2) throw ShapeError("split_channels: tensor has no channel axis");
  if (at <= 0 || at >= x.dim(1)) {
    throw ShapeError("split_channels: split point " + std::to_string(at) +
                     " must lie strictly inside channel axis of length " + std::to_string(x.dim(1)));
  }
  return {slice(x, 1, 0, at), slice(x, 1, at, x.dim(1) - at)};
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, int axis) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  axis = normalize_axis(axis, xs[0].rank(), "concat");
  Shape os = xs[0].shape();
  Index total = 0;
  for (size_t t = 0; t < xs.size(); ++t) {
    const Shape& s = xs[t].shape();
    if (s.size() != os.size()) throw ShapeError("concat: rank mismatch at input " + std::to_string(t));
    for (size_t i = 0; i < s.size(); ++i) {
      if (static_cast<int>(i) != axis && s[i] != os[i]) {
        throw ShapeError("concat: input " + std::to_string(t) + " has length " +
                         std::to_string(s[i]) + " on axis " + std::to_string(i) + ", expected " +
                         std::to_string(os[i]));
      }
    }
    total += s[static_cast<size_t>(axis)];
  }
  os[static_cast<size_t>(axis)] = total;
  const AxisSplit sp = split_at(os, axis);
  std::vector<T> out(static_cast<size_t>(numel(os)));
  std::vector<Index> offsets;
  Index off = 0;
  for (const auto& t : xs) {
    offsets.push_back(off);
    const Index n = t.dim(axis);
    const auto d = t.data();
    for (Index o = 0; o < sp.outer; ++o)
      std::copy_n(d.begin() + o * n * sp.inner, n * sp.inner,
                  out.begin() + (o * total + off) * sp.inner);
    off += n;
  }
  std::vector<std::shared_ptr<TensorImpl<T>>> impls;
  for (const auto& t : xs) impls.push_back(t.impl());
  return make_result<T>(os, std::move(out), "concat", xs,
                        [impls, offsets, sp, total, axis](const TensorImpl<T>& o) {
                          for (size_t t = 0; t < impls.size(); ++t) {
                            if (!impls[t]->requires_grad) continue;
                            auto& g = impls[t]->grad_buffer();
                            const Index len = impls[t]->shape[static_cast<size_t>(axis)];
                            for (Index b = 0; b < sp.outer; ++b)
                              for (Index k = 0; k < len * sp.inner; ++k)
                                g[static_cast<size_t>(b * len * sp.inner + k)] +=
                                    o.grad[static_cast<size_t>((b * total + offsets[t]) * sp.inner + k)];
                          }
                        });
}

template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, int r) {
  if (x.rank() != 4) throw ShapeError("pixel_shuffle: expected [B, C*r*r, H, W]");
  if (r < 1) throw ShapeError("pixel_shuffle: upscale factor must be >= 1");
  const Index B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (Cin % (r * r) != 0) {
    throw ShapeError("pixel_shuffle: channel axis (1) length " + std::to_string(Cin) +
                     " is not divisible by r^2 = " + std::to_string(r * r));
  }
  const Index C = Cin / (r * r);
  std::vector<Index> src;
  src.reserve(static_cast<size_t>(x.numel()));
  for (Index b = 0; b < B; ++b)
    for (Index c = 0; c < C; ++c)
      for (Index oh = 0; oh < H * r; ++oh)
        for (Index ow = 0; ow < W * r; ++ow) {
          const Index ic = c * r * r + (oh % r) * r + (ow % r);
          src.push_back(((b * Cin + ic) * H + oh / r) * W + ow / r);
        }
  return gather_permute(x, Shape{B, C, H * r, W * r}, std::move(src), "pixel_shuffle");
}

template <typename T>
Tensor<T> pixel_unshuffle(const Tensor<T>& x, int r) {
  if (x.rank() != 4) throw ShapeError("pixel_unshuffle: expected [B, C, H*r, W*r]");
  const Index B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (r < 1 || H % r != 0 || W % r != 0) {
    throw ShapeError("pixel_unshuffle: spatial axes not divisible by " + std::to_string(r));
  }
  const Index Co = C * r * r, Ho = H / r, Wo = W / r;
  std::vector<Index> src;
  src.reserve(static_cast<size_t>(x.numel()));
  for (Index b = 0; b < B; ++b)
    for (Index oc = 0; oc < Co; ++oc)
      for (Index h = 0; h < Ho; ++h)
        for (Index w = 0; w < Wo; ++w) {
          const Index c = oc / (r * r), i = (oc % (r * r)) / r, j = oc % r;
          src.push_back(((b * C + c) * H + h * r + i) * W + w * r + j);
        }
  return gather_permute(x, Shape{B, Co, Ho, Wo}, std::move(src), "pixel_unshuffle");
}

template <typename T>
Tensor<T> channel_shuffle(const Tensor<T>& x, int groups) {
  if (x.rank() < 2) throw ShapeError("channel_shuffle: tensor has no channel axis");
  const Index C = x.dim(1);
  if (groups < 1 || C % groups != 0) {
    throw ShapeError("channel_shuffle: channel axis (1) length " + std::to_string(C) +
                     " is not divisible by groups = " + std::to_string(groups));
  }
  const AxisSplit sp = split_at(x.shape(), 1);
  const Index per = C / groups;
  std::vector<Index> src;
  src.reserve(static_cast<size_t>(x.numel()));
  for (Index o = 0; o < sp.outer; ++o)
    for (Index c = 0; c < C; ++c) {
      // output channel c = (j, g) in the transposed (C/g, g) grid
      const Index ic = (c % groups) * per + c / groups;
      for (Index i = 0; i < sp.inner; ++i) src.push_back((o * C + ic) * sp.inner + i);
    }
  return gather_permute(x, x.shape(), std::move(src), "channel_shuffle");
}

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     Tensor<T>& running_mean, Tensor<T>& running_var, bool training, T momentum,
                     T eps) {
  if (x.rank() < 2) throw ShapeError("batch_norm: tensor has no channel axis");
  const AxisSplit sp = split_at(x.shape(), 1);
  const Index C = sp.n;
  for (const Tensor<T>* p : std::initializer_list<const Tensor<T>*>{&gamma, &beta, &running_mean, &running_var}) {
    if (p->numel() != C) {
      throw ShapeError("batch_norm: parameter length " + std::to_string(p->numel()) +
                       " does not match channel axis length " + std::to_string(C));
    }
  }
  const Index count = sp.outer * sp.inner;
  if (training && count < 2) {
    throw ShapeError("batch_norm: training mode needs >= 2 elements per channel, got " +
                     std::to_string(count));
  }
  const auto xd = x.data();
  std::vector<T> mu(static_cast<size_t>(C)), invstd(static_cast<size_t>(C));
  if (training) {
    auto rm = running_mean.mutable_data();
    auto rv = running_var.mutable_data();
    for (Index c = 0; c < C; ++c) {
      T m = T(0);
      for (Index o = 0; o < sp.outer; ++o)
        for (Index i = 0; i < sp.inner; ++i) m += xd[static_cast<size_t>((o * C + c) * sp.inner + i)];
      m /= static_cast<T>(count);
      T v = T(0);
      for (Index o = 0; o < sp.outer; ++o)
        for (Index i = 0; i < sp.inner; ++i) {
          const T d = xd[static_cast<size_t>((o * C + c) * sp.inner + i)] - m;
          v += d * d;
        }
      v /= static_cast<T>(count);
      mu[static_cast<size_t>(c)] = m;
      invstd[static_cast<size_t>(c)] = T(1) / std::sqrt(v + eps);
      const T unbiased = v * static_cast<T>(count) / static_cast<T>(count - 1);
      rm[static_cast<size_t>(c)] = (T(1) - momentum) * rm[static_cast<size_t>(c)] + momentum * m;
      rv[static_cast<size_t>(c)] = (T(1) - momentum) * rv[static_cast<size_t>(c)] + momentum * unbiased;
    }
  } else {
    const auto rm = running_mean.data();
    const auto rv = running_var.data();
    for (Index c = 0; c < C; ++c) {
      mu[static_cast<size_t>(c)] = rm[static_cast<size_t>(c)];
      invstd[static_cast<size_t>(c)] = T(1) / std::sqrt(rv[static_cast<size_t>(c)] + eps);
    }
  }
  const auto gd = gamma.data();
  const auto bd = beta.data();
  std::vector<T> xhat(xd.size()), out(xd.size());
  for (Index o = 0; o < sp.outer; ++o)
    for (Index c = 0; c < C; ++c)
      for (Index i = 0; i < sp.inner; ++i) {
        const size_t e = static_cast<size_t>((o * C + c) * sp.inner + i);
        xhat[e] = (xd[e] - mu[static_cast<size_t>(c)]) * invstd[static_cast<size_t>(c)];
        out[e] = xhat[e] * gd[static_cast<size_t>(c)] + bd[static_cast<size_t>(c)];
      }
  auto xi = x.impl();
  auto gi = gamma.impl();
  auto bi = beta.impl();
  auto saved = std::make_shared<std::vector<T>>(std::move(xhat));
  return make_result<T>(
      x.shape(), std::move(out), "batch_norm", {x, gamma, beta},
      [xi, gi, bi, saved, invstd, sp, C, count, training](const TensorImpl<T>& o) {
        const auto& xh = *saved;
        std::vector<T> sg(static_cast<size_t>(C), T(0)), sgx(static_cast<size_t>(C), T(0));
        for (Index b = 0; b < sp.outer; ++b)
          for (Index c = 0; c < C; ++c)
            for (Index i = 0; i < sp.inner; ++i) {
              const size_t e = static_cast<size_t>((b * C + c) * sp.inner + i);
              sg[static_cast<size_t>(c)] += o.grad[e];
              sgx[static_cast<size_t>(c)] += o.grad[e] * xh[e];
            }
        if (gi->requires_grad) {
          auto& g = gi->grad_buffer();
          for (Index c = 0; c < C; ++c) g[static_cast<size_t>(c)] += sgx[static_cast<size_t>(c)];
        }
        if (bi->requires_grad) {
          auto& g = bi->grad_buffer();
          for (Index c = 0; c < C; ++c) g[static_cast<size_t>(c)] += sg[static_cast<size_t>(c)];
        }
        if (!xi->requires_grad) return;
        auto& g = xi->grad_buffer();
        const T n = static_cast<T>(count);
        for (Index b = 0; b < sp.outer; ++b)
          for (Index c = 0; c < C; ++c) {
            const T gm = gi->data[static_cast<size_t>(c)];
            const T is = invstd[static_cast<size_t>(c)];
            for (Index i = 0; i < sp.inner; ++i) {
              const size_t e = static_cast<size_t>((b * C + c) * sp.inner + i);
              if (training) {
                g[e] += gm * is / n *
                        (n * o.grad[e] - sg[static_cast<size_t>(c)] - xh[e] * sgx[static_cast<size_t>(c)]);
              } else {
                g[e] += gm * is * o.grad[e];
              }
            }
          }
      });
}

template <typename T>
Tensor<T> resize(const Tensor<T>& x, Index out_h, Index out_w, ResizeMode mode) {
  if (x.rank() != 4) throw ShapeError("resize: expected [B, C, H, W], got " + to_string(x.shape()));
  if (out_h <= 0 || out_w <= 0) {
    throw ShapeError("resize: non-positive target size " + std::to_string(out_h) + "x" +
                     std::to_string(out_w));
  }
  const Index BC = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
  // Each output pixel is a weighted sum of up to four taps per plane.
  struct Tap {
    Index src;
    T w;
  };
  auto axis_taps = [mode](Index in, Index out) {
    std::vector<std::array<std::pair<Index, double>, 2>> taps(static_cast<size_t>(out));
    const double ratio = static_cast<double>(in) / static_cast<double>(out);
    for (Index o = 0; o < out; ++o) {
      if (mode == ResizeMode::kNearest) {
        const Index s = std::min(static_cast<Index>(std::floor(o * ratio)), in - 1);
        taps[static_cast<size_t>(o)] = {{{s, 1.0}, {s, 0.0}}};
      } else {
        double src = (o + 0.5) * ratio - 0.5;
        if (src < 0) src = 0;
        Index i0 = static_cast<Index>(std::floor(src));
        if (i0 > in - 1) i0 = in - 1;
        const Index i1 = std::min(i0 + 1, in - 1);
        const double l = src - static_cast<double>(i0);
        taps[static_cast<size_t>(o)] = {{{i0, 1.0 - l}, {i1, l}}};
      }
    }
    return taps;
  };
  const auto th = axis_taps(H, out_h);
  const auto tw = axis_taps(W, out_w);
  auto taps = std::make_shared<std::vector<std::array<Tap, 4>>>(static_cast<size_t>(out_h * out_w));
  for (Index oh = 0; oh < out_h; ++oh)
    for (Index ow = 0; ow < out_w; ++ow) {
      auto& t = (*taps)[static_cast<size_t>(oh * out_w + ow)];
      int k = 0;
      for (const auto& [yh, wh] : th[static_cast<size_t>(oh)])
        for (const auto& [xw, ww] : tw[static_cast<size_t>(ow)]) t[static_cast<size_t>(k++)] = {yh * W + xw, static_cast<T>(wh * ww)};
    }
  const auto xd = x.data();
  const Index plane_in = H * W, plane_out = out_h * out_w;
  std::vector<T> out(static_cast<size_t>(BC * plane_out));
  for (Index p = 0; p < BC; ++p)
    for (Index e = 0; e < plane_out; ++e) {
      T s = T(0);
      for (const Tap& t : (*taps)[static_cast<size_t>(e)]) s += t.w * xd[static_cast<size_t>(p * plane_in + t.src)];
      out[static_cast<size_t>(p * plane_out + e)] = s;
    }
  auto xi = x.impl();
  return make_result<T>(Shape{x.dim(0), x.dim(1), out_h, out_w}, std::move(out),
                        mode == ResizeMode::kNearest ? "resize_nearest" : "resize_bilinear", {x},
                        [xi, taps, BC, plane_in, plane_out](const TensorImpl<T>& o) {
                          auto& g = xi->grad_buffer();
                          for (Index p = 0; p < BC; ++p)
                            for (Index e = 0; e < plane_out; ++e) {
                              const T go = o.grad[static_cast<size_t>(p * plane_out + e)];
                              for (const Tap& t : (*taps)[static_cast<size_t>(e)])
                                g[static_cast<size_t>(p * plane_in + t.src)] += t.w * go;
                            }
                        });
}

template <typename T>
Tensor<T> resize(const Tensor<T>& x, double scale, ResizeMode mode) {
  if (!(scale > 0)) throw ShapeError("resize: scale must be positive");
  if (x.rank() != 4) throw ShapeError("resize: expected [B, C, H, W], got " + to_string(x.shape()));
  const auto oh = static_cast<Index>(std::floor(static_cast<double>(x.dim(2)) * scale));
  const auto ow = static_cast<Index>(std::floor(static_cast<double>(x.dim(3)) * scale));
  return resize(x, oh, ow, mode);
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  axis = normalize_axis(axis, x.rank(), "softmax");
  const AxisSplit sp = split_at(x.shape(), axis);
  const auto xd = x.data();
  std::vector<T> out(xd.size());
  for (Index o = 0; o < sp.outer; ++o)
    for (Index i = 0; i < sp.inner; ++i) {
      auto at = [&](Index k) { return static_cast<size_t>((o * sp.n + k) * sp.inner + i); };
      T m = xd[at(0)];
      for (Index k = 1; k < sp.n; ++k) m = std::max(m, xd[at(k)]);
      T s = T(0);
      for (Index k = 0; k < sp.n; ++k) {
        out[at(k)] = std::exp(xd[at(k)] - m);
        s += out[at(k)];
      }
      for (Index k = 0; k < sp.n; ++k) out[at(k)] /= s;
    }
  auto xi = x.impl();
  return make_result<T>(x.shape(), std::move(out), "softmax", {x}, [xi, sp](const TensorImpl<T>& r) {
    auto& g = xi->grad_buffer();
    for (Index o = 0; o < sp.outer; ++o)
      for (Index i = 0; i < sp.inner; ++i) {
        auto at = [&](Index k) { return static_cast<size_t>((o * sp.n + k) * sp.inner + i); };
        T dot = T(0);
        for (Index k = 0; k < sp.n; ++k) dot += r.grad[at(k)] * r.data[at(k)];
        for (Index k = 0; k < sp.n; ++k) g[at(k)] += r.data[at(k)] * (r.grad[at(k)] - dot);
      }
  });
}

template <typename T>
TopK<T> topk(const Tensor<T>& x, int axis, Index k) {
  axis = normalize_axis(axis, x.rank(), "topk");
  const AxisSplit sp = split_at(x.shape(), axis);
  if (k < 1 || k > sp.n) {
    throw ShapeError("topk: k = " + std::to_string(k) + " outside [1, " + std::to_string(sp.n) +
                     "] for axis " + std::to_string(axis));
  }
  const auto xd = x.data();
  Shape os = x.shape();
  os[static_cast<size_t>(axis)] = k;
  std::vector<Index> src(static_cast<size_t>(sp.outer * k * sp.inner));
  std::vector<Index> indices(src.size());
  std::vector<Index> order(static_cast<size_t>(sp.n));
  for (Index o = 0; o < sp.outer; ++o)
    for (Index i = 0; i < sp.inner; ++i) {
      auto at = [&](Index j) { return (o * sp.n + j) * sp.inner + i; };
      std::iota(order.begin(), order.end(), Index(0));
      std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](Index a, Index b) {
        const T va = xd[static_cast<size_t>(at(a))], vb = xd[static_cast<size_t>(at(b))];
        return va > vb || (va == vb && a < b);
      });
      for (Index j = 0; j < k; ++j) {
        const size_t e = static_cast<size_t>((o * k + j) * sp.inner + i);
        src[e] = at(order[static_cast<size_t>(j)]);
        indices[e] = order[static_cast<size_t>(j)];
      }
    }
  return {gather_permute(x, os, std::move(src), "topk"), std::move(indices)};
}

#define ESM_INSTANTIATE_OPS(T)                                                                  \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                            \
  template Tensor<T> mul_scalar(const Tensor<T>&, T);                                            \
  template Tensor<T> gelu(const Tensor<T>&);                                                     \
  template Tensor<T> leaky_relu(const Tensor<T>&, T);                                            \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                  \
  template Tensor<T> square(const Tensor<T>&);                                                   \
  template Tensor<T> clamp(const Tensor<T>&, T, T);                                              \
  template Tensor<T> sum(const Tensor<T>&);                                                      \
  template Tensor<T> mean(const Tensor<T>&);                                                     \
  template Tensor<T> sum_axis(const Tensor<T>&, int, bool);                                      \
  template Tensor<T> reshape(const Tensor<T>&, const Shape&);                                    \
  template Tensor<T> unsqueeze(const Tensor<T>&, int);                                           \
  template Tensor<T> squeeze(const Tensor<T>&, int);                                             \
  template Tensor<T> slice(const Tensor<T>&, int, Index, Index);                                 \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, int);                                 \
  template std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>&, Index);              \
  template Tensor<T> pixel_shuffle(const Tensor<T>&, int);                                       \
  template Tensor<T> pixel_unshuffle(const Tensor<T>&, int);                                     \
  template Tensor<T> channel_shuffle(const Tensor<T>&, int);                                     \
  template Tensor<T> batch_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>&, \
                                Tensor<T>&, bool, T, T);                                         \
  template Tensor<T> resize(const Tensor<T>&, Index, Index, ResizeMode);                         \
  template Tensor<T> resize(const Tensor<T>&, double, ResizeMode);                               \
  template Tensor<T> softmax(const Tensor<T>&, int);                                             \
  template TopK<T> topk(const Tensor<T>&, int, Index);

ESM_INSTANTIATE_OPS(float)
ESM_INSTANTIATE_OPS(double)

}  // namespace esm
