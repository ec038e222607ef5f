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

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <cstring>
#include <sstream>

#include "doctest.h"
#include "esm/gradcheck.hpp"
#include "esm/ops.hpp"
#include "esm/serialize.hpp"
#include "oracles.hpp"

using namespace esm;
using T = Tensor<double>;

namespace {

T from(Shape s, std::vector<double> v) { return T(std::move(s), std::move(v)); }

double dot(const T& a, const T& b) {
  double s = 0;
  for (Index i = 0; i < a.numel(); ++i) s += a.data()[static_cast<size_t>(i)] * b.data()[static_cast<size_t>(i)];
  return s;
}

std::uint64_t checksum(const T& t) {
  std::uint64_t h = 1469598103934665603ull;
  for (double v : t.data()) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    h = (h ^ bits) * 1099511628211ull;
  }
  return h;
}

}  // namespace

TEST_CASE("conv: identity and sum kernels") {
  T x = from({1, 1, 2, 2}, {1, 2, 3, 4});
  T w = from({1, 1, 1, 1}, {1});
  T y = conv(x, w, T(), {.dims = 2});
  CHECK(std::vector<double>(y.data().begin(), y.data().end()) == std::vector<double>{1, 2, 3, 4});

  T ones = T::ones({1, 1, 3, 3});
  T k = T::ones({1, 1, 3, 3});
  T s = conv(ones, k, T(), {.dims = 2});
  CHECK(s.shape() == Shape{1, 1, 1, 1});
  CHECK(s.item() == doctest::Approx(9.0));
}

TEST_CASE("conv: matches nested-loop oracle in 2D and 3D") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    const int stride = 1 + trial % 2, pad = trial % 3 == 0 ? 0 : 1, groups = trial % 4 == 3 ? 2 : 1;
    T x = T::normal({2, 4, 8, 8}, 1.0, rng);
    T w = T::normal({6, 4 / groups, 3, 3}, 1.0, rng);
    T b = T::normal({6}, 1.0, rng);
    ConvParams p{.dims = 2, .stride = stride, .padding = pad, .groups = groups};
    T y = conv(x, w, b, p);
    T ref = oracle::conv_loop(x, w, b, p);
    REQUIRE(y.shape() == ref.shape());
    for (Index i = 0; i < y.numel(); ++i) CHECK(std::abs(y.data()[i] - ref.data()[i]) <= 1e-6);
  }
  for (int trial = 0; trial < 4; ++trial) {
    ConvParams p{.dims = 3, .stride = 1 + trial % 2, .padding = 1, .groups = 1};
    T x = T::normal({2, 4, 8, 8, 8}, 1.0, rng);
    T w = T::normal({3, 4, 3, 3, 3}, 1.0, rng);
    T y = conv(x, w, T(), p);
    T ref = oracle::conv_loop(x, w, T(), p);
    REQUIRE(y.shape() == ref.shape());
    for (Index i = 0; i < y.numel(); ++i) CHECK(std::abs(y.data()[i] - ref.data()[i]) <= 1e-6);
  }
}

TEST_CASE("conv: shape errors name the axis") {
  T x = T::zeros({1, 3, 4, 4});
  T w = T::zeros({2, 2, 3, 3});
  CHECK_THROWS_WITH_AS(conv(x, w, T(), {.dims = 2}), doctest::Contains("axis (1)"), ShapeError);
  CHECK_THROWS_AS(conv(x, w, T(), {.dims = 3}), ShapeError);
  CHECK_THROWS_AS(conv(T::zeros({1, 4, 4, 4}), T::zeros({2, 4, 3, 3}), T(), {.dims = 2, .groups = 3}), ShapeError);
}

TEST_CASE("deconv: stamp semantics, output size and adjointness") {
  T x = T::ones({1, 1, 2, 2});
  T w = T::ones({1, 1, 2, 2});
  T y = deconv(x, w, T(), {.dims = 2, .stride = 2});
  CHECK(y.shape() == Shape{1, 1, 4, 4});
  for (double v : y.data()) CHECK(v == 1.0);

  T a = T::zeros({1, 1, 4, 4});
  T k3 = T::zeros({1, 1, 3, 3});
  CHECK(deconv(a, k3, T(), {.dims = 2, .stride = 2, .padding = 1}).dim(2) == 7);
  CHECK(deconv(a, k3, T(), {.dims = 2, .stride = 2, .padding = 1}, {8, 8}).dim(3) == 8);
  CHECK_THROWS_AS(deconv(a, k3, T(), {.dims = 2, .stride = 2, .padding = 1}, {9, 8}), ShapeError);

  std::mt19937_64 rng(11);
  for (int dims : {2, 3}) {
    for (int trial = 0; trial < 5; ++trial) {
      ConvParams p{.dims = dims, .stride = 1 + trial % 2, .padding = 1, .groups = trial == 4 ? 2 : 1};
      Shape xs = dims == 2 ? Shape{2, 4, 7, 6} : Shape{1, 4, 5, 6, 7};
      Shape ws = dims == 2 ? Shape{6, 4 / p.groups, 3, 3} : Shape{6, 4 / p.groups, 3, 3, 3};
      T xx = T::normal(xs, 1.0, rng);
      T ww = T::normal(ws, 1.0, rng);
      T cy = conv(xx, ww, T(), p);
      T yy = T::normal(cy.shape(), 1.0, rng);
      Shape target(xs.begin() + 2, xs.end());
      T dx = deconv(yy, ww, T(), p, target);
      REQUIRE(dx.shape() == xx.shape());
      CHECK(std::abs(dot(cy, yy) - dot(xx, dx)) <= 1e-5 * std::max(1.0, std::abs(dot(cy, yy))));
    }
  }
}

TEST_CASE("pixel_shuffle: definition, inverse, multiset") {
  T x = from({1, 4, 1, 1}, {1, 2, 3, 4});
  T y = pixel_shuffle(x, 2);
  CHECK(y.shape() == Shape{1, 1, 2, 2});
  CHECK(y.at({0, 0, 0, 0}) == 1);
  CHECK(y.at({0, 0, 0, 1}) == 2);
  CHECK(y.at({0, 0, 1, 0}) == 3);
  CHECK(y.at({0, 0, 1, 1}) == 4);
  CHECK_THROWS_AS(pixel_shuffle(T::zeros({1, 6, 2, 2}), 2), ShapeError);

  std::mt19937_64 rng(3);
  T r = T::normal({2, 8, 3, 5}, 1.0, rng);
  T back = pixel_unshuffle(pixel_shuffle(r, 2), 2);
  CHECK(std::equal(back.data().begin(), back.data().end(), r.data().begin()));
}

TEST_CASE("channel_shuffle: transpose order and inverse") {
  T x = from({1, 4, 1, 1}, {0, 1, 2, 3});
  T y = channel_shuffle(x, 2);
  CHECK(std::vector<double>(y.data().begin(), y.data().end()) == std::vector<double>{0, 2, 1, 3});
  CHECK_THROWS_AS(channel_shuffle(T::zeros({1, 5, 1, 1}), 2), ShapeError);
  std::mt19937_64 rng(5);
  T r = T::normal({2, 6, 2, 2}, 1.0, rng);
  T back = channel_shuffle(channel_shuffle(r, 2), 3);
  CHECK(std::equal(back.data().begin(), back.data().end(), r.data().begin()));
}

TEST_CASE("split/concat round trip and shapes") {
  std::mt19937_64 rng(9);
  T x = T::normal({1, 4, 2, 2}, 1.0, rng);
  auto [a, b] = split_channels(x, 2);
  CHECK(a.shape() == Shape{1, 2, 2, 2});
  CHECK(b.shape() == Shape{1, 2, 2, 2});
  T c = concat<double>({a, b}, 1);
  CHECK(std::equal(c.data().begin(), c.data().end(), x.data().begin()));

  T v1 = T::zeros({1, 1, 2, 4, 4});
  T v2 = T::zeros({1, 1, 2, 4, 4});
  CHECK(concat<double>({v1, v2}, 2).shape() == Shape{1, 1, 4, 4, 4});
  CHECK_THROWS_AS(concat<double>({v1, T::zeros({1, 1, 2, 4, 3})}, 2), ShapeError);
  CHECK_THROWS_AS(split_channels(x, 4), ShapeError);
}

TEST_CASE("activations") {
  T z = from({3}, {0.0, 10.0, -10.0});
  T g = gelu(z);
  CHECK(g.data()[0] == 0.0);
  CHECK(std::abs(g.data()[1] - 10.0) <= 1e-6);
  CHECK(std::abs(g.data()[2]) <= 1e-6);

  auto r = grad_check([](const std::vector<T>& in) { return gelu(in[0]); }, {from({1}, {0.5})},
                      {.floor = 1e-12});
  CHECK(r.passed);
  CHECK(sigmoid(from({1}, {0.0})).item() == 0.5);
  CHECK(leaky_relu(from({1}, {-2.0}), 0.1).item() == doctest::Approx(-0.2));
  CHECK_THROWS_AS(add(T::zeros({2, 3}), T::zeros({3, 2})), ShapeError);
  CHECK(add(T::zeros({2, 3}), T::ones({1, 3})).shape() == Shape{2, 3});
}

TEST_CASE("batch_norm: statistics and modes") {
  T gamma = T::ones({2}), beta = T::zeros({2});
  T rm = T::zeros({2}), rv = T::ones({2});
  T c = T::full({2, 2, 3, 3}, 4.0);
  T y = batch_norm(c, gamma, beta, rm, rv, true);
  for (double v : y.data()) CHECK(v == 0.0);

  std::mt19937_64 rng(1);
  T x = T::normal({4, 2, 5, 5}, 3.0, rng);
  T yn = batch_norm(x, gamma, beta, rm, rv, true);
  for (Index ch = 0; ch < 2; ++ch) {
    double m = 0, v = 0;
    int n = 0;
    for (Index b = 0; b < 4; ++b)
      for (Index i = 0; i < 25; ++i) m += yn.data()[static_cast<size_t>((b * 2 + ch) * 25 + i)], ++n;
    m /= n;
    for (Index b = 0; b < 4; ++b)
      for (Index i = 0; i < 25; ++i) {
        const double d = yn.data()[static_cast<size_t>((b * 2 + ch) * 25 + i)] - m;
        v += d * d;
      }
    v /= n;
    CHECK(std::abs(m) <= 1e-6);
    CHECK(std::abs(v - 1.0) <= 1e-4);
  }
  CHECK_THROWS_AS(batch_norm(T::zeros({1, 2, 1, 1}), gamma, beta, rm, rv, true), ShapeError);
}

TEST_CASE("batch_norm: train and eval diverge after running stats move") {
  // Two batches through fresh stats (momentum 0.1): the running mean after
  // batch means 2 then 6 is 0.9 * 0.2 + 0.6 = 0.78, so eval output of the
  // value 6 is (6 - 0.78) / sqrt(rv + eps), far from the train-mode value.
  T gamma = T::ones({1}), beta = T::zeros({1});
  T rm = T::zeros({1}), rv = T::ones({1});
  batch_norm(from({2, 1}, {1, 3}), gamma, beta, rm, rv, true);
  T b2 = from({2, 1}, {5, 7});
  T train = batch_norm(b2, gamma, beta, rm, rv, true);
  CHECK(rm.data()[0] == doctest::Approx(0.78));
  // running var: 0.9 * (0.9 + 0.1 * 2) + 0.1 * 2 = 1.19
  CHECK(rv.data()[0] == doctest::Approx(1.19));
  T eval = batch_norm(b2, gamma, beta, rm, rv, false);
  CHECK(train.data()[0] == doctest::Approx(-1.0).epsilon(1e-4));
  CHECK(eval.data()[0] == doctest::Approx((5 - 0.78) / std::sqrt(1.19 + 1e-5)));
}

TEST_CASE("resize: nearest, constant preservation, bilinear weights") {
  T x = from({1, 1, 2, 2}, {1, 2, 3, 4});
  T n = resize(x, 2.0, ResizeMode::kNearest);
  CHECK(std::vector<double>(n.data().begin(), n.data().end()) ==
        std::vector<double>{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4});
  T c = resize(T::full({1, 2, 3, 5}, 2.5), 2.0, ResizeMode::kBilinear);
  for (double v : c.data()) CHECK(v == doctest::Approx(2.5));
  // Row [0, 1] at 2x: sample points -0.25 (clamped to 0), 0.25, 0.75, 1.25
  // (clamped to index 1), giving weights (1,0), (0.75,0.25), (0.25,0.75), (0,1).
  T row = resize(from({1, 1, 1, 2}, {0, 1}), 1, 4, ResizeMode::kBilinear);
  CHECK(row.data()[0] == doctest::Approx(0.0));
  CHECK(row.data()[1] == doctest::Approx(0.25));
  CHECK(row.data()[2] == doctest::Approx(0.75));
  CHECK(row.data()[3] == doctest::Approx(1.0));
  CHECK_THROWS_AS(resize(x, 0, 3, ResizeMode::kBilinear), ShapeError);
}

TEST_CASE("softmax and topk") {
  T s = softmax(from({2}, {0, 0}), 0);
  CHECK(s.data()[0] == 0.5);
  CHECK(s.data()[1] == 0.5);
  T big = softmax(from({2}, {1000, 0}), 0);
  CHECK(std::isfinite(big.data()[0]));
  CHECK(big.data()[0] == doctest::Approx(1.0));
  CHECK(big.data()[1] == doctest::Approx(0.0));

  auto tk = topk(from({3}, {1, 5, 3}), 0, 2);
  CHECK(tk.values.data()[0] == 5);
  CHECK(tk.values.data()[1] == 3);
  CHECK(tk.indices == std::vector<Index>{1, 2});
  auto tie = topk(from({4}, {2, 7, 7, 1}), 0, 2);
  CHECK(tie.indices == std::vector<Index>{1, 2});
  CHECK_THROWS_AS(topk(from({3}, {1, 2, 3}), 0, 4), ShapeError);
}

TEST_CASE("backward: analytic cases, scalar root, detach") {
  T x = from({2}, {1, 2});
  x.set_requires_grad();
  backward(sum(square(x)));
  CHECK(x.grad() == std::vector<double>{2, 4});

  T y = from({2}, {1, 2});
  y.set_requires_grad();
  CHECK_THROWS_AS(backward(square(y)), ShapeError);

  T d = y.detach();
  T loss = sum(mul(square(y), d));
  backward(loss);
  CHECK(!d.has_grad());
  CHECK(y.has_grad());
}

TEST_CASE("backward: non-finite gradient reports the op") {
  T x = from({1}, {0.0});
  x.set_requires_grad();
  T inf = from({1}, {INFINITY});
  T loss = sum(mul(x, inf));
  CHECK_THROWS_WITH_AS(backward(loss), doctest::Contains("mul"), NumericalError);
}

TEST_CASE("ops leave their inputs untouched") {
  std::mt19937_64 rng(21);
  T x = T::normal({2, 4, 6, 6}, 1.0, rng);
  T w = T::normal({4, 4, 3, 3}, 1.0, rng);
  T gm = T::ones({4}), bt = T::zeros({4}), rm = T::zeros({4}), rv = T::ones({4});
  x.set_requires_grad();
  w.set_requires_grad();
  const auto hx = checksum(x), hw = checksum(w);
  T y = gelu(batch_norm(conv(x, w, T(), {.dims = 2, .padding = 1}), gm, bt, rm, rv, true));
  y = channel_shuffle(pixel_shuffle(y, 2), 1);
  backward(sum(resize(y, 0.5, ResizeMode::kBilinear)));
  CHECK(checksum(x) == hx);
  CHECK(checksum(w) == hw);
}

TEST_CASE("ESMT serialization round trip is bit exact") {
  std::mt19937_64 rng(4);
  Tensor<float> t = Tensor<float>::normal({3, 2, 5}, 1.0f, rng);
  std::stringstream ss(std::ios::in | std::ios::out | std::ios::binary);
  write_tensor(ss, t);
  const std::string bytes = ss.str();
  CHECK(bytes.substr(0, 4) == "ESMT");
  TensorHeader h;
  Tensor<float> r = read_tensor<float>(ss, &h);
  CHECK(h.dtype == DType::kFloat32);
  CHECK(r.shape() == t.shape());
  CHECK(std::memcmp(r.data().data(), t.data().data(), t.numel() * sizeof(float)) == 0);

  std::stringstream bad(bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_AS(read_tensor<float>(bad), FormatError);
  std::stringstream magic("XSMT" + bytes.substr(4));
  CHECK_THROWS_AS(read_tensor<float>(magic), FormatError);
}
