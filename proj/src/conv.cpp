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

// Convolution and its transpose share three kernels (forward, input-adjoint,
// weight-adjoint) built on im2col + GEMM. 2D problems run as 3D problems
// with a unit depth axis.

#include <Eigen/Core>
#include <array>

#include "esm/ops.hpp"

namespace esm {

namespace {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Geometry of a forward convolution `in -> out`.
struct Geometry {
  Index batch = 1, c_in = 1, c_out = 1, groups = 1;
  std::array<Index, 3> in{1, 1, 1}, k{1, 1, 1}, out{1, 1, 1};
  std::array<Index, 3> stride{1, 1, 1}, pad{0, 0, 0};

  Index cin_g() const { return c_in / groups; }
  Index cout_g() const { return c_out / groups; }
  Index ksize() const { return k[0] * k[1] * k[2]; }
  Index in_size() const { return in[0] * in[1] * in[2]; }
  Index out_size() const { return out[0] * out[1] * out[2]; }
};

const char* kAxisNames[3] = {"depth", "height", "width"};

// Maps a [B, C, *spatial] shape onto three spatial axes.
std::array<Index, 3> spatial3(const Shape& s, int dims) {
  if (dims == 2) return {1, s[2], s[3]};
  return {s[2], s[3], s[4]};
}

void check_rank(const Shape& s, int dims, const char* op, const char* what) {
  if (dims != 2 && dims != 3) throw ShapeError(std::string(op) + ": dims must be 2 or 3");
  if (static_cast<int>(s.size()) != dims + 2) {
    throw ShapeError(std::string(op) + ": " + what + " " + to_string(s) + " must have rank " +
                     std::to_string(dims + 2) + " for a " + std::to_string(dims) + "D problem");
  }
}

template <typename T>
void im2col(const T* x, const Geometry& g, Index c0, T* col) {
  const Index os = g.out_size();
  Index row = 0;
  for (Index c = 0; c < g.cin_g(); ++c) {
    const T* plane = x + (c0 + c) * g.in_size();
    for (Index kd = 0; kd < g.k[0]; ++kd)
      for (Index kh = 0; kh < g.k[1]; ++kh)
        for (Index kw = 0; kw < g.k[2]; ++kw, ++row) {
          T* dst = col + row * os;
          for (Index od = 0; od < g.out[0]; ++od) {
            const Index id = od * g.stride[0] - g.pad[0] + kd;
            for (Index oh = 0; oh < g.out[1]; ++oh) {
              const Index ih = oh * g.stride[1] - g.pad[1] + kh;
              T* d = dst + (od * g.out[1] + oh) * g.out[2];
              if (id < 0 || id >= g.in[0] || ih < 0 || ih >= g.in[1]) {
                std::fill(d, d + g.out[2], T(0));
                continue;
              }
              const T* s = plane + (id * g.in[1] + ih) * g.in[2];
              for (Index ow = 0; ow < g.out[2]; ++ow) {
                const Index iw = ow * g.stride[2] - g.pad[2] + kw;
                d[ow] = (iw < 0 || iw >= g.in[2]) ? T(0) : s[iw];
              }
            }
          }
        }
  }
}

template <typename T>
void col2im(const T* col, const Geometry& g, Index c0, T* x) {
  const Index os = g.out_size();
  Index row = 0;
  for (Index c = 0; c < g.cin_g(); ++c) {
    T* plane = x + (c0 + c) * g.in_size();
    for (Index kd = 0; kd < g.k[0]; ++kd)
      for (Index kh = 0; kh < g.k[1]; ++kh)
        for (Index kw = 0; kw < g.k[2]; ++kw, ++row) {
          const T* src = col + row * os;
          for (Index od = 0; od < g.out[0]; ++od) {
            const Index id = od * g.stride[0] - g.pad[0] + kd;
            if (id < 0 || id >= g.in[0]) continue;
            for (Index oh = 0; oh < g.out[1]; ++oh) {
              const Index ih = oh * g.stride[1] - g.pad[1] + kh;
              if (ih < 0 || ih >= g.in[1]) continue;
              const T* s = src + (od * g.out[1] + oh) * g.out[2];
              T* d = plane + (id * g.in[1] + ih) * g.in[2];
              for (Index ow = 0; ow < g.out[2]; ++ow) {
                const Index iw = ow * g.stride[2] - g.pad[2] + kw;
                if (iw >= 0 && iw < g.in[2]) d[iw] += s[ow];
              }
            }
          }
        }
  }
}

// y[B, c_out, out] = conv(x[B, c_in, in], w)
template <typename T>
void conv_forward(const T* x, const T* w, const Geometry& g, T* y) {
  const Index rows = g.cin_g() * g.ksize(), os = g.out_size();
  std::vector<T> col(static_cast<size_t>(rows * os));
  for (Index b = 0; b < g.batch; ++b)
    for (Index gr = 0; gr < g.groups; ++gr) {
      im2col(x + b * g.c_in * g.in_size(), g, gr * g.cin_g(), col.data());
      Eigen::Map<const MatRM<T>> W(w + gr * g.cout_g() * rows, g.cout_g(), rows);
      Eigen::Map<const MatRM<T>> C(col.data(), rows, os);
      Eigen::Map<MatRM<T>> Y(y + (b * g.c_out + gr * g.cout_g()) * os, g.cout_g(), os);
      Y.noalias() = W * C;
    }
}

// gx[B, c_in, in] += conv^T(gy[B, c_out, out], w)
template <typename T>
void conv_input_adjoint(const T* gy, const T* w, const Geometry& g, T* gx) {
  const Index rows = g.cin_g() * g.ksize(), os = g.out_size();
  MatRM<T> col(rows, os);
  for (Index b = 0; b < g.batch; ++b)
    for (Index gr = 0; gr < g.groups; ++gr) {
      Eigen::Map<const MatRM<T>> W(w + gr * g.cout_g() * rows, g.cout_g(), rows);
      Eigen::Map<const MatRM<T>> GY(gy + (b * g.c_out + gr * g.cout_g()) * os, g.cout_g(), os);
      col.noalias() = W.transpose() * GY;
      col2im(col.data(), g, gr * g.cin_g(), gx + b * g.c_in * g.in_size());
    }
}

// gw += d<conv(x, w), gy>/dw
template <typename T>
void conv_weight_adjoint(const T* x, const T* gy, const Geometry& g, T* gw) {
  const Index rows = g.cin_g() * g.ksize(), os = g.out_size();
  std::vector<T> col(static_cast<size_t>(rows * os));
  for (Index b = 0; b < g.batch; ++b)
    for (Index gr = 0; gr < g.groups; ++gr) {
      im2col(x + b * g.c_in * g.in_size(), g, gr * g.cin_g(), col.data());
      Eigen::Map<const MatRM<T>> C(col.data(), rows, os);
      Eigen::Map<const MatRM<T>> GY(gy + (b * g.c_out + gr * g.cout_g()) * os, g.cout_g(), os);
      Eigen::Map<MatRM<T>> GW(gw + gr * g.cout_g() * rows, g.cout_g(), rows);
      GW.noalias() += GY * C.transpose();
    }
}

template <typename T>
void add_bias(T* y, const T* bias, Index batch, Index channels, Index plane) {
  for (Index b = 0; b < batch; ++b)
    for (Index c = 0; c < channels; ++c) {
      T* p = y + (b * channels + c) * plane;
      for (Index i = 0; i < plane; ++i) p[i] += bias[c];
    }
}

template <typename T>
void bias_grad(const T* gy, Index batch, Index channels, Index plane, T* gb) {
  for (Index b = 0; b < batch; ++b)
    for (Index c = 0; c < channels; ++c) {
      const T* p = gy + (b * channels + c) * plane;
      T s = T(0);
      for (Index i = 0; i < plane; ++i) s += p[i];
      gb[c] += s;
    }
}

void check_params(const ConvParams& p, const char* op) {
  if (p.stride < 1) throw ShapeError(std::string(op) + ": stride must be >= 1");
  if (p.padding < 0) throw ShapeError(std::string(op) + ": padding must be >= 0");
  if (p.groups < 1) throw ShapeError(std::string(op) + ": groups must be >= 1");
}

template <typename T>
void check_bias(const Tensor<T>& bias, Index channels, const char* op) {
  if (bias.defined() && bias.numel() != channels) {
    throw ShapeError(std::string(op) + ": bias length " + std::to_string(bias.numel()) +
                     " does not match output channel count " + std::to_string(channels));
  }
}

}  // namespace

template <typename T>
Tensor<T> conv(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
               const ConvParams& p) {
  const char* op = "conv";
  check_params(p, op);
  check_rank(input.shape(), p.dims, op, "input");
  check_rank(weight.shape(), p.dims, op, "weight");
  Geometry g;
  g.batch = input.dim(0);
  g.c_in = input.dim(1);
  g.c_out = weight.dim(0);
  g.groups = p.groups;
  if (g.c_in % g.groups != 0) {
    throw ShapeError("conv: input channel axis (1) length " + std::to_string(g.c_in) +
                     " is not divisible by groups = " + std::to_string(g.groups));
  }
  if (g.c_out % g.groups != 0) {
    throw ShapeError("conv: weight output-channel axis (0) length " + std::to_string(g.c_out) +
                     " is not divisible by groups = " + std::to_string(g.groups));
  }
  if (weight.dim(1) != g.cin_g()) {
    throw ShapeError("conv: weight input-channel axis (1) has length " +
                     std::to_string(weight.dim(1)) + " but input provides " +
                     std::to_string(g.cin_g()) + " channels per group");
  }
  check_bias(bias, g.c_out, op);
  g.in = spatial3(input.shape(), p.dims);
  g.k = spatial3(weight.shape(), p.dims);
  const int first = p.dims == 2 ? 1 : 0;
  for (int a = first; a < 3; ++a) {
    g.stride[static_cast<size_t>(a)] = p.stride;
    g.pad[static_cast<size_t>(a)] = p.padding;
    const Index span = g.in[static_cast<size_t>(a)] + 2 * p.padding - g.k[static_cast<size_t>(a)];
    if (span < 0) {
      throw ShapeError(std::string("conv: ") + kAxisNames[a] + " axis of input " +
                       to_string(input.shape()) + " is smaller than the kernel after padding");
    }
    g.out[static_cast<size_t>(a)] = span / p.stride + 1;
  }
  std::vector<T> y(static_cast<size_t>(g.batch * g.c_out * g.out_size()));
  conv_forward(input.data().data(), weight.data().data(), g, y.data());
  if (bias.defined()) add_bias(y.data(), bias.data().data(), g.batch, g.c_out, g.out_size());

  Shape os{g.batch, g.c_out};
  for (int a = first; a < 3; ++a) os.push_back(g.out[static_cast<size_t>(a)]);
  std::vector<Tensor<T>> inputs{input, weight};
  if (bias.defined()) inputs.push_back(bias);
  auto xi = input.impl();
  auto wi = weight.impl();
  auto bi = bias.defined() ? bias.impl() : nullptr;
  return make_result<T>(os, std::move(y), op, inputs, [xi, wi, bi, g](const TensorImpl<T>& o) {
    if (xi->requires_grad) conv_input_adjoint(o.grad.data(), wi->data.data(), g, xi->grad_buffer().data());
    if (wi->requires_grad) conv_weight_adjoint(xi->data.data(), o.grad.data(), g, wi->grad_buffer().data());
    if (bi && bi->requires_grad) bias_grad(o.grad.data(), g.batch, g.c_out, g.out_size(), bi->grad_buffer().data());
  });
}

template <typename T>
Tensor<T> deconv(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 const ConvParams& p, const Shape& output_size) {
  const char* op = "deconv";
  check_params(p, op);
  check_rank(input.shape(), p.dims, op, "input");
  check_rank(weight.shape(), p.dims, op, "weight");
  // The adjoint conv maps the deconv output (its input) to the deconv input.
  Geometry g;
  g.batch = input.dim(0);
  g.c_out = input.dim(1);
  g.groups = p.groups;
  if (weight.dim(0) != g.c_out) {
    throw ShapeError("deconv: weight input-channel axis (0) has length " +
                     std::to_string(weight.dim(0)) + " but input channel axis (1) has " +
                     std::to_string(g.c_out));
  }
  if (g.c_out % g.groups != 0) {
    throw ShapeError("deconv: input channel axis (1) length " + std::to_string(g.c_out) +
                     " is not divisible by groups = " + std::to_string(g.groups));
  }
  g.c_in = weight.dim(1) * g.groups;
  check_bias(bias, g.c_in, op);
  g.out = spatial3(input.shape(), p.dims);
  g.k = spatial3(weight.shape(), p.dims);
  const int first = p.dims == 2 ? 1 : 0;
  if (!output_size.empty() && static_cast<int>(output_size.size()) != p.dims) {
    throw ShapeError("deconv: output_size must list one length per spatial axis");
  }
  for (int a = first; a < 3; ++a) {
    const auto ua = static_cast<size_t>(a);
    g.stride[ua] = p.stride;
    g.pad[ua] = p.padding;
    const Index base = (g.out[ua] - 1) * p.stride - 2 * p.padding + g.k[ua];
    Index target = base;
    if (!output_size.empty()) {
      target = output_size[static_cast<size_t>(a - first)];
      if (target < base || target >= base + p.stride) {
        throw ShapeError(std::string("deconv: requested ") + kAxisNames[a] + " length " +
                         std::to_string(target) + " outside reachable range [" +
                         std::to_string(base) + ", " + std::to_string(base + p.stride) + ")");
      }
    }
    if (target <= 0) {
      throw ShapeError(std::string("deconv: ") + kAxisNames[a] + " output length is not positive");
    }
    g.in[ua] = target;
  }
  std::vector<T> y(static_cast<size_t>(g.batch * g.c_in * g.in_size()), T(0));
  conv_input_adjoint(input.data().data(), weight.data().data(), g, y.data());
  if (bias.defined()) add_bias(y.data(), bias.data().data(), g.batch, g.c_in, g.in_size());

  Shape os{g.batch, g.c_in};
  for (int a = first; a < 3; ++a) os.push_back(g.in[static_cast<size_t>(a)]);
  std::vector<Tensor<T>> inputs{input, weight};
  if (bias.defined()) inputs.push_back(bias);
  auto xi = input.impl();
  auto wi = weight.impl();
  auto bi = bias.defined() ? bias.impl() : nullptr;
  return make_result<T>(os, std::move(y), op, inputs, [xi, wi, bi, g](const TensorImpl<T>& o) {
    if (xi->requires_grad) {
      std::vector<T> t(xi->data.size());
      conv_forward(o.grad.data(), wi->data.data(), g, t.data());
      auto& gx = xi->grad_buffer();
      for (size_t i = 0; i < t.size(); ++i) gx[i] += t[i];
    }
    if (wi->requires_grad) conv_weight_adjoint(o.grad.data(), xi->data.data(), g, wi->grad_buffer().data());
    if (bi && bi->requires_grad) bias_grad(o.grad.data(), g.batch, g.c_in, g.in_size(), bi->grad_buffer().data());
  });
}

template Tensor<float> conv(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&,
                            const ConvParams&);
template Tensor<double> conv(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&,
                             const ConvParams&);
template Tensor<float> deconv(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&,
                              const ConvParams&, const Shape&);
template Tensor<double> deconv(const Tensor<double>&, const Tensor<double>&,
                               const Tensor<double>&, const ConvParams&, const Shape&);

}  // namespace esm
