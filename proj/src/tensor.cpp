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

#include "esm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace esm {

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set_enabled(bool on) { g_grad_enabled = on; }

Index numel(const Shape& shape) {
  Index n = 1;
  for (Index s : shape) n *= s;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {
void validate_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor rank must be >= 1");
  for (size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] <= 0) {
      throw ShapeError("axis " + std::to_string(i) + " of shape " + to_string(shape) +
                       " is not strictly positive");
    }
  }
}
}  // namespace

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : impl_(std::make_shared<TensorImpl<T>>()) {
  validate_shape(shape);
  impl_->data.assign(static_cast<size_t>(esm::numel(shape)), fill);
  impl_->shape = std::move(shape);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values)
    : impl_(std::make_shared<TensorImpl<T>>()) {
  validate_shape(shape);
  if (static_cast<Index>(values.size()) != esm::numel(shape)) {
    throw ShapeError("element count " + std::to_string(values.size()) +
                     " does not match shape " + to_string(shape));
  }
  impl_->data = std::move(values);
  impl_->shape = std::move(shape);
}

template <typename T>
Tensor<T> Tensor<T>::uniform(const Shape& shape, T lo, T hi, std::mt19937_64& rng) {
  Tensor t(shape);
  std::uniform_real_distribution<double> dist(static_cast<double>(lo), static_cast<double>(hi));
  for (auto& v : t.impl_->data) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
Tensor<T> Tensor<T>::normal(const Shape& shape, T stddev, std::mt19937_64& rng) {
  Tensor t(shape);
  std::normal_distribution<double> dist(0.0, static_cast<double>(stddev));
  for (auto& v : t.impl_->data) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
Index Tensor<T>::dim(int axis) const {
  const int r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(r));
  }
  return impl_->shape[static_cast<size_t>(axis)];
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
  return impl_->data[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<Index> idx) const {
  if (static_cast<int>(idx.size()) != rank()) {
    throw ShapeError("at(): index rank does not match tensor rank");
  }
  Index flat = 0;
  int a = 0;
  for (Index i : idx) {
    const Index n = impl_->shape[static_cast<size_t>(a)];
    if (i < 0 || i >= n) throw ShapeError("at(): index out of range on axis " + std::to_string(a));
    flat = flat * n + i;
    ++a;
  }
  return impl_->data[static_cast<size_t>(flat)];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  return *this;
}

template <typename T>
std::vector<T> Tensor<T>::grad() const {
  if (impl_->grad.empty()) return std::vector<T>(impl_->data.size(), T(0));
  return impl_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  impl_->grad.clear();
}

template <typename T>
const char* Tensor<T>::grad_fn_name() const {
  return impl_->node ? impl_->node->op : "";
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor<T>(impl_->shape, impl_->data);
}

template <typename T>
bool all_finite(std::span<const T> v) {
  return std::all_of(v.begin(), v.end(), [](T x) { return std::isfinite(x); });
}

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> values, const char* op,
                      const std::vector<Tensor<T>>& inputs,
                      std::function<void(const TensorImpl<T>&)> backward) {
  Tensor<T> out(std::move(shape), std::move(values));
  if (!GradMode::enabled()) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  auto node = std::make_shared<GradNode<T>>();
  node->op = op;
  for (const auto& in : inputs) node->inputs.push_back(in.impl());
  node->backward = std::move(backward);
  out.impl()->requires_grad = true;
  out.impl()->node = std::move(node);
  return out;
}

template <typename T>
void backward(const Tensor<T>& root, const BackwardOptions& opts) {
  if (root.numel() != 1) {
    throw ShapeError("backward() needs a scalar root or an explicit seed; got shape " +
                     to_string(root.shape()));
  }
  const T one = T(1);
  backward(root, std::span<const T>(&one, 1), opts);
}

template <typename T>
void backward(const Tensor<T>& root, std::span<const T> seed, const BackwardOptions& opts) {
  if (static_cast<Index>(seed.size()) != root.numel()) {
    throw ShapeError("backward() seed size does not match root shape " + to_string(root.shape()));
  }
  if (!root.requires_grad()) throw ShapeError("backward() on a tensor that does not require grad");

  // Iterative post-order DFS gives a topological order of the graph.
  std::vector<TensorImpl<T>*> order;
  std::unordered_set<TensorImpl<T>*> seen;
  std::vector<std::pair<TensorImpl<T>*, size_t>> stack;
  stack.emplace_back(root.impl().get(), 0);
  seen.insert(root.impl().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (node->node && next < node->node->inputs.size()) {
      TensorImpl<T>* child = node->node->inputs[next++].get();
      if (child->requires_grad && !seen.count(child)) {
        seen.insert(child);
        stack.emplace_back(child, 0);
      }
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  auto& g = root.impl()->grad_buffer();
  for (size_t i = 0; i < g.size(); ++i) g[i] += seed[i];
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl<T>* t = *it;
    if (!t->node || t->grad.empty()) continue;
    t->node->backward(*t);
    if (opts.check_finite) {
      for (const auto& in : t->node->inputs) {
        if (!in->grad.empty() && !all_finite<T>(in->grad)) {
          throw NumericalError(std::string("non-finite gradient produced by op '") +
                               t->node->op + "'");
        }
      }
    }
  }
}

template class Tensor<float>;
template class Tensor<double>;
template bool all_finite<float>(std::span<const float>);
template bool all_finite<double>(std::span<const double>);
template Tensor<float> make_result(Shape, std::vector<float>, const char*,
                                   const std::vector<Tensor<float>>&,
                                   std::function<void(const TensorImpl<float>&)>);
template Tensor<double> make_result(Shape, std::vector<double>, const char*,
                                    const std::vector<Tensor<double>>&,
                                    std::function<void(const TensorImpl<double>&)>);
template void backward(const Tensor<float>&, const BackwardOptions&);
template void backward(const Tensor<double>&, const BackwardOptions&);
template void backward(const Tensor<float>&, std::span<const float>, const BackwardOptions&);
template void backward(const Tensor<double>&, std::span<const double>, const BackwardOptions&);

}  // namespace esm
