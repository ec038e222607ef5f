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

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace esm {

using Index = std::int64_t;
using Shape = std::vector<Index>;

Index numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Raised for any shape/argument contract violation; the message names the
/// offending axis or argument.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// NaN/Inf detected in a forward value or a gradient.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename T>
struct TensorImpl;

template <typename T>
struct GradNode {
  const char* op = "";
  std::vector<std::shared_ptr<TensorImpl<T>>> inputs;
  // Reads out.grad and accumulates into the grads of `inputs`.
  std::function<void(const TensorImpl<T>& out)> backward;
};

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until the backward pass touches it
  bool requires_grad = false;
  std::shared_ptr<GradNode<T>> node;

  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

/// Graph recording switch. Thread-local, so distinct graphs may be built on
/// distinct threads.
class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool on);
};

class NoGradGuard {
 public:
  NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

/// Dense row-major N-d array with optional participation in the gradient
/// tape. Copies share storage; forward ops never write into their inputs.
template <typename T>
class Tensor {
 public:
  using Scalar = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> values);

  static Tensor zeros(const Shape& shape) { return Tensor(shape, T(0)); }
  static Tensor ones(const Shape& shape) { return Tensor(shape, T(1)); }
  static Tensor full(const Shape& shape, T v) { return Tensor(shape, v); }
  static Tensor scalar(T v) { return Tensor(Shape{1}, v); }
  static Tensor uniform(const Shape& shape, T lo, T hi, std::mt19937_64& rng);
  static Tensor normal(const Shape& shape, T stddev, std::mt19937_64& rng);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  Index dim(int axis) const;
  Index numel() const { return static_cast<Index>(impl_->data.size()); }

  std::span<const T> data() const { return impl_->data; }
  // Direct write access; only for leaves (initialisers, optimisers, tests).
  std::span<T> mutable_data() { return impl_->data; }

  T item() const;
  T at(std::initializer_list<Index> idx) const;

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  Tensor& set_requires_grad(bool on = true);
  bool has_grad() const { return impl_ && !impl_->grad.empty(); }
  // Zero-filled view if the backward pass never reached this tensor.
  std::vector<T> grad() const;
  void zero_grad();
  const char* grad_fn_name() const;

  Tensor detach() const;
  Tensor clone() const { return detach(); }
  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> v(impl_->data.begin(), impl_->data.end());
    return Tensor<U>(impl_->shape, std::move(v));
  }

  const std::shared_ptr<TensorImpl<T>>& impl() const { return impl_; }
  static Tensor from_impl(std::shared_ptr<TensorImpl<T>> impl) {
    Tensor t;
    t.impl_ = std::move(impl);
    return t;
  }

 private:
  std::shared_ptr<TensorImpl<T>> impl_;
};

/// Builds an op result and, when recording is on and any input requires a
/// gradient, attaches the vector-Jacobian product to the tape.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> values, const char* op,
                      const std::vector<Tensor<T>>& inputs,
                      std::function<void(const TensorImpl<T>&)> backward);

struct BackwardOptions {
  // Scan each produced gradient for NaN/Inf and report the op that made it.
  bool check_finite = true;
};

/// Reverse pass from a scalar root. Non-scalar roots need an explicit seed.
template <typename T>
void backward(const Tensor<T>& root, const BackwardOptions& opts = {});
template <typename T>
void backward(const Tensor<T>& root, std::span<const T> seed,
              const BackwardOptions& opts = {});

template <typename T>
bool all_finite(std::span<const T> v);

}  // namespace esm
