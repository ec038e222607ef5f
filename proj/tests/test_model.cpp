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
#include <random>

#include "doctest.h"
#include "esm/costvol.hpp"
#include "esm/gradcheck.hpp"
#include "esm/loss.hpp"
#include "esm/model.hpp"
#include "oracles.hpp"

using namespace esm;
using T = Tensor<double>;

namespace {

double max_abs_diff(const T& a, const T& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0;
  for (size_t i = 0; i < a.data().size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

T rnd(const Shape& s, std::mt19937_64& rng) { return T::uniform(s, -1.0, 1.0, rng); }

}  // namespace

TEST_CASE("gwc volume: scalar product, shifted argmax, oracle") {
  T fl = T::full({1, 1, 2, 4}, 2.0), fr = T::full({1, 1, 2, 4}, 3.0);
  T v = gwc_volume(fl, fr, 2, 1);
  CHECK(v.shape() == Shape{1, 1, 2, 2, 4});
  CHECK(v.at({0, 0, 0, 1, 2}) == 6.0);
  CHECK(v.at({0, 0, 1, 0, 0}) == 0.0);  // x < d

  std::mt19937_64 rng(3);
  // right = left shifted so that left(x) == right(x - 3).
  const Index W = 12, shift = 3;
  // Unit-norm feature columns: the matching column maximises the dot product.
  std::vector<double> bv(static_cast<size_t>(8 * 4 * (W + shift)));
  std::normal_distribution<double> nd;
  for (auto& e : bv) e = nd(rng);
  const Index plane = 4 * (W + shift);
  for (Index p = 0; p < plane; ++p) {
    double n2 = 0;
    for (Index c = 0; c < 8; ++c) n2 += bv[static_cast<size_t>(c * plane + p)] * bv[static_cast<size_t>(c * plane + p)];
    for (Index c = 0; c < 8; ++c) bv[static_cast<size_t>(c * plane + p)] /= std::sqrt(n2);
  }
  T base({1, 8, 4, W + shift}, bv);
  T left = slice(base, 3, 0, W), right = slice(base, 3, shift, W);
  T vol = gwc_volume(left, right, 6, 1);
  for (Index y = 0; y < 4; ++y)
    for (Index x = shift; x < W; ++x) {
      Index best = 0;
      for (Index d = 1; d < 6; ++d)
        if (d <= x && vol.at({0, 0, d, y, x}) > vol.at({0, 0, best, y, x})) best = d;
      CHECK(best == shift);
    }

  for (int t = 0; t < 5; ++t) {
    T a = rnd({2, 16, 5, 9}, rng), b = rnd({2, 16, 5, 9}, rng);
    CHECK(max_abs_diff(gwc_volume(a, b, 7, 4), oracle::gwc_loop(a, b, 7, 4)) <= 1e-12);
  }
  CHECK_THROWS_AS(gwc_volume(T::ones({1, 6, 2, 2}), T::ones({1, 6, 2, 2}), 2, 4), ShapeError);
}

TEST_CASE("gwc volume with one channel per group is the elementwise product") {
  std::mt19937_64 rng(4);
  T a = rnd({1, 3, 2, 5}, rng), b = rnd({1, 3, 2, 5}, rng);
  T v = gwc_volume(a, b, 1, 3);
  T prod = unsqueeze(mul(a, b), 2);
  CHECK(max_abs_diff(v, prod) <= 1e-15);
}

TEST_CASE("norm-corr volume: identical, antiparallel, oracle, bounds") {
  std::mt19937_64 rng(5);
  // Norms >= 1 keep the eps bias below 1e-5.
  T a = T::uniform({1, 4, 3, 6}, 1.0, 2.0, rng);
  T same = norm_corr_volume(a, a, 3);
  T neg = norm_corr_volume(a, mul_scalar(a, -1.0), 3);
  for (Index y = 0; y < 3; ++y)
    for (Index x = 0; x < 6; ++x) {
      CHECK(std::abs(same.at({0, 0, 0, y, x}) - 1.0) <= 1e-5);
      CHECK(std::abs(neg.at({0, 0, 0, y, x}) + 1.0) <= 1e-5);
    }
  for (int t = 0; t < 5; ++t) {
    T l = rnd({2, 6, 4, 7}, rng), r = rnd({2, 6, 4, 7}, rng);
    T v = norm_corr_volume(l, r, 5);
    CHECK(max_abs_diff(v, oracle::norm_corr_loop(l, r, 5)) <= 1e-12);
    for (double c : v.data()) CHECK(std::abs(c) <= 1.0 + 1e-4);
  }
}

TEST_CASE("cost volumes: gradients, and none into invalid bins") {
  std::mt19937_64 rng(6);
  GradCheckOptions o;
  o.seed = 1;
  auto g = grad_check([](const std::vector<T>& in) { return gwc_volume(in[0], in[1], 3, 2); },
                      {rnd({1, 4, 2, 5}, rng), rnd({1, 4, 2, 5}, rng)}, o);
  CHECK_MESSAGE(g.passed, g.summary());
  auto n = grad_check([](const std::vector<T>& in) { return norm_corr_volume(in[0], in[1], 3); },
                      {rnd({1, 4, 2, 5}, rng), rnd({1, 4, 2, 5}, rng)}, o);
  CHECK_MESSAGE(n.passed, n.summary());

  // A loss that only touches x < d bins must leave features without gradient.
  T l = rnd({1, 2, 1, 4}, rng).set_requires_grad(), r = rnd({1, 2, 1, 4}, rng).set_requires_grad();
  T v = gwc_volume(l, r, 3, 1);
  std::vector<double> seed(static_cast<size_t>(v.numel()), 0.0);
  seed[static_cast<size_t>(1 * 4 + 0)] = 1.0;  // d = 1, x = 0
  seed[static_cast<size_t>(2 * 4 + 1)] = 1.0;  // d = 2, x = 1
  backward(v, std::span<const double>(seed));
  for (double x : l.grad()) CHECK(x == 0.0);
  for (double x : r.grad()) CHECK(x == 0.0);
}

TEST_CASE("regression: one-hot, midpoint, full soft-argmax, shift invariance") {
  // Off-peak bins sit far enough below the peak that exp() underflows to 0.
  std::vector<double> v(8, -1000.0);
  v[5] = 0.0;
  T onehot({1, 1, 8, 1, 1}, v);
  for (Index k = 1; k <= 8; ++k) CHECK(regress_disparity(onehot, k).item() == 5.0);
  std::vector<double> two(8, -10.0);
  two[3] = two[4] = 2.0;
  CHECK(std::abs(regress_disparity(T({1, 1, 8, 1, 1}, two), 2).item() - 3.5) <= 1e-12);

  std::mt19937_64 rng(7);
  T r = rnd({2, 1, 6, 3, 4}, rng);
  T full = regress_disparity(r, 6);
  T top2 = regress_disparity(r, 2);
  for (Index n = 0; n < 2; ++n)
    for (Index y = 0; y < 3; ++y)
      for (Index x = 0; x < 4; ++x) {
        std::vector<double> c;
        for (Index d = 0; d < 6; ++d) c.push_back(r.at({n, 0, d, y, x}));
        CHECK(std::abs(full.at({n, 0, y, x}) - oracle::full_softargmax(c)) <= 1e-12);
        CHECK(std::abs(top2.at({n, 0, y, x}) - oracle::topk_softargmax(c, 2)) <= 1e-12);
      }
  T shifted = regress_disparity(add_scalar(r, 7.5), 3);
  CHECK(max_abs_diff(shifted, regress_disparity(r, 3)) <= 1e-12);
  CHECK_THROWS_AS(regress_disparity(r, 0), ShapeError);
  CHECK_THROWS_AS(regress_disparity(r, 7), ShapeError);
}

TEST_CASE("hourglass3d: shape contract and minimum size") {
  std::mt19937_64 rng(8);
  HourglassConfig hc;
  hc.j = 16;
  Hourglass3d<double> hg(8, hc, rng);
  T out = hg.forward(rnd({1, 8, 8, 16, 32}, rng), true);
  CHECK(out.shape() == Shape{1, 1, 8, 16, 32});
  // Odd sizes come back exactly.
  T odd = hg.forward(rnd({2, 8, 3, 5, 7}, rng), true);
  CHECK(odd.shape() == Shape{2, 1, 3, 5, 7});
  CHECK_THROWS_WITH_AS(hg.forward(rnd({1, 8, 1, 4, 8}, rng), true),
                       doctest::Contains("disparity axis has length 1"), ShapeError);
}

TEST_CASE("hourglass3d: reduced two-level gradient check") {
  std::mt19937_64 rng(9);
  HourglassConfig hc;
  hc.i = 2;
  hc.j = 2;
  hc.levels = 2;
  auto hg = std::make_shared<Hourglass3d<double>>(2, hc, rng);
  ParamSet<double> ps;
  hg->collect("", ps);
  GradCheckOptions o;
  o.max_probes_per_input = 6;
  o.seed = 2;
  auto rep = grad_check([hg](const std::vector<T>& in) { return hg->forward(in[0], true); },
                        {rnd({2, 2, 3, 4, 4}, rng)}, o);
  CHECK_MESSAGE(rep.passed, rep.summary());
}

TEST_CASE("backbone: shapes, weight sharing, gradient reaches first layer") {
  std::mt19937_64 rng(10);
  BackboneConfig bc;
  FeatureExtractor<double> fe(bc, rng);
  T img = T::uniform({1, 3, 64, 128}, 0.0, 1.0, rng);
  auto [l, r] = fe.forward(img, img, true);
  CHECK(l.feats_4.shape() == Shape{1, 48, 16, 32});
  CHECK(l.feats_8.shape() == Shape{1, 64, 8, 16});
  CHECK(l.feats_16.shape() == Shape{1, 96, 4, 8});
  CHECK(l.guide_2.shape() == Shape{1, 8, 32, 64});
  CHECK(l.guide_1.shape() == Shape{1, 4, 64, 128});
  CHECK(!r.guide_1.defined());
  CHECK(max_abs_diff(l.feats_4, r.feats_4) == 0.0);
  CHECK(max_abs_diff(l.feats_16, r.feats_16) == 0.0);

  backward(sum(square(l.feats_4)));
  const auto g = fe.enc_down[0].conv.weight.grad();
  CHECK(std::any_of(g.begin(), g.end(), [](double v) { return v != 0.0; }));

  CHECK_THROWS_WITH_AS(fe.forward(T::ones({1, 3, 40, 128}), T::ones({1, 3, 40, 128}), true),
                       doctest::Contains("divisible by 16"), ShapeError);
}

TEST_CASE("fm_block: zero weights give identity; shape; gradient") {
  std::mt19937_64 rng(11);
  FMBlock<double> fm(8, rng);
  T x = rnd({1, 8, 5, 6}, rng);
  CHECK(fm.forward(x).shape() == x.shape());
  FMBlock<double> zero = fm;
  zero.pointwise.weight = T::zeros(fm.pointwise.weight.shape());
  zero.depthwise.weight = T::zeros(fm.depthwise.weight.shape());
  CHECK(max_abs_diff(zero.forward(x), x) == 0.0);
  CHECK_THROWS_AS(FMBlock<double>(7, rng), ShapeError);

  FMBlock<double> b2(8, rng);
  GradCheckOptions o;
  o.seed = 3;
  auto rep = grad_check([&](const std::vector<T>& in) { return b2.forward(fm.forward(in[0])); },
                        {rnd({1, 8, 3, 4}, rng)}, o);
  CHECK_MESSAGE(rep.passed, rep.summary());
}

TEST_CASE("fuse block: shape, constant field, gradient to both inputs") {
  std::mt19937_64 rng(12);
  FuseBlock<double> fb(8, 16, 32, rng);
  T out = fb.forward(rnd({1, 1, 16, 32}, rng), rnd({1, 8, 16, 32}, rng), true);
  CHECK(out.shape() == Shape{1, 32, 16, 32});
  FuseBlock<double> fresh(8, 16, 32, rng);
  T c = fresh.forward(T::zeros({1, 1, 4, 5}), T::zeros({1, 8, 4, 5}), false);
  for (Index ch = 0; ch < 32; ++ch)
    for (Index i = 0; i < 20; ++i)
      CHECK(c.data()[static_cast<size_t>(ch * 20 + i)] == c.data()[static_cast<size_t>(ch * 20)]);
  CHECK_THROWS_AS(fb.forward(T::zeros({1, 1, 4, 5}), T::zeros({1, 8, 8, 10}), true), ShapeError);

  FuseBlock<double> small(2, 4, 4, rng);
  GradCheckOptions o;
  o.seed = 4;
  auto rep = grad_check([&](const std::vector<T>& in) { return small.forward(in[0], in[1], true); },
                        {rnd({2, 1, 3, 3}, rng), rnd({2, 2, 3, 3}, rng)}, o);
  CHECK_MESSAGE(rep.passed, rep.summary());
}

TEST_CASE("refine2d: zero head, symmetric shape, responds to guidance") {
  std::mt19937_64 rng(13);
  Refine2d<double> rf(4, 4, 8, rng);
  T f = rnd({1, 4, 8, 10}, rng), g = rnd({1, 4, 8, 10}, rng);
  T out = rf.forward(f, g, false);
  CHECK(out.shape() == Shape{1, 1, 8, 10});
  T gp = concat<double>({slice(g, 1, 2, 2), slice(g, 1, 0, 2)}, 1);
  CHECK(max_abs_diff(out, rf.forward(f, gp, false)) > 1e-6);
  rf.head.weight = T::zeros(rf.head.weight.shape());
  T zero = rf.forward(f, g, false);
  for (double v : zero.data()) CHECK(v == 0.0);
}

TEST_CASE("esm stage: residual form and shape chain") {
  ModelConfig cfg = make_model_config(Variant::kS, VolumeKind::kGwc, 32);
  StereoModel<double> m(cfg);
  CHECK(m.stages.size() == 4);
  m.zero_refinement_heads();
  std::mt19937_64 rng(14);
  T left = T::uniform({1, 3, 64, 128}, 0.0, 1.0, rng), right = T::uniform({1, 3, 64, 128}, 0.0, 1.0, rng);
  auto out = m.forward(left, right, false);
  REQUIRE(out.maps.size() == 5);
  const Index hs[] = {4, 8, 16, 32, 64};
  for (size_t i = 0; i < 5; ++i) CHECK(out.maps[i].height() == hs[i]);
  T chain = out.maps[0].data;
  for (int s = 0; s < 4; ++s) chain = upsample_disparity(chain);
  CHECK(max_abs_diff(chain, out.maps.back().data) <= 1e-12);

  T c = upsample_disparity(T::full({1, 1, 3, 4}, 1.25));
  for (double v : c.data()) CHECK(v == 2.5);
}

TEST_CASE("loss: smooth_l1 values, gradient near the kink") {
  T x({4}, {0.5, 2.0, 1.0, -3.0});
  T y = smooth_l1(x);
  CHECK(y.data()[0] == 0.125);
  CHECK(y.data()[1] == 1.5);
  CHECK(y.data()[2] == 0.5);
  CHECK(y.data()[3] == 2.5);
  auto rep = grad_check([](const std::vector<T>& in) { return smooth_l1(in[0]); },
                        {T({4}, {0.999, 1.001, -0.999, -1.001})});
  CHECK_MESSAGE(rep.passed, rep.summary());
}

TEST_CASE("loss: multiscale cases") {
  T gt = T::full({1, 1, 4, 4}, 2.0);
  T mask = T::ones({1, 1, 4, 4});
  std::vector<DisparityMap<double>> one{{T::full({1, 1, 4, 4}, 2.5), 1}};
  CHECK(multiscale_loss(one, gt, mask, LossWeights{}).item() == doctest::Approx(0.125).epsilon(1e-15));

  std::vector<DisparityMap<double>> perfect{{T::full({1, 1, 1, 1}, 0.5), 4},
                                            {T::full({1, 1, 2, 2}, 1.0), 2},
                                            {T::full({1, 1, 4, 4}, 2.0), 1}};
  CHECK(multiscale_loss(perfect, gt, mask, LossWeights{}).item() == 0.0);

  // Hand-summed: coarse (1x1) off by 2 -> 1.5 * 1/10; middle off by 0.5 at one
  // of four pixels -> 0.125/4 * 1/6; fine off by 1 everywhere -> 0.5 * 1.
  T gt2 = T::full({1, 1, 2, 2}, 4.0);
  T m2 = T::ones({1, 1, 2, 2});
  std::vector<DisparityMap<double>> three{{T::full({1, 1, 1, 1}, 4.0), 2},
                                          {T({1, 1, 2, 2}, {2.5, 2.0, 2.0, 2.0}), 1},
                                          {T::full({1, 1, 2, 2}, 5.0), 1}};
  // Middle map is at full size too, so gt is not rescaled for it.
  three[1].data = T({1, 1, 2, 2}, {4.5, 4.0, 4.0, 4.0});
  const double want = 1.5 / 10.0 + (0.125 / 4.0) / 6.0 + 0.5;
  LossStats st;
  CHECK(std::abs(multiscale_loss(three, gt2, m2, LossWeights{}, &st).item() - want) <= 1e-12);
  CHECK(st.terms.size() == 3);

  T none = T::zeros({1, 1, 2, 2});
  LossStats st2;
  T l = multiscale_loss(three, gt2, none, LossWeights{}, &st2);
  CHECK(l.item() == 0.0);
  CHECK(st2.empty_scales == 3);
}

TEST_CASE("metrics: fixtures and oracle") {
  std::vector<double> p{1, 2}, g{1, 4};
  std::vector<unsigned char> m{1, 1};
  CHECK(epe(p, g, m) == 1.0);
  CHECK(bad_sigma(std::vector<double>{1, 3}, std::vector<double>{0, 0}, m, 2.0) == 50.0);
  CHECK(bad_sigma(std::vector<double>{2}, std::vector<double>{0}, std::vector<unsigned char>{1}, 2.0) == 0.0);
  CHECK(d1(std::vector<double>{104}, std::vector<double>{100}, std::vector<unsigned char>{1}) == 0.0);
  CHECK(d1(std::vector<double>{14}, std::vector<double>{10}, std::vector<unsigned char>{1}) == 100.0);
  CHECK_THROWS_AS(epe(p, g, std::vector<unsigned char>{0, 0}), MetricError);

  std::mt19937_64 rng(15);
  std::uniform_real_distribution<double> u(0.0, 50.0), e(-6.0, 6.0);
  std::bernoulli_distribution b(0.8);
  for (int t = 0; t < 5; ++t) {
    std::vector<double> pr(64), gt(64);
    std::vector<unsigned char> mk(64);
    std::vector<bool> mb(64);
    for (int i = 0; i < 64; ++i) {
      gt[i] = u(rng);
      pr[i] = gt[i] + e(rng);
      mb[i] = b(rng);
      mk[i] = mb[i];
    }
    auto o = oracle::metrics_loop(pr, gt, mb, 3.0);
    CHECK(std::abs(epe(pr, gt, mk) - o.epe) <= 1e-9);
    CHECK(d1(pr, gt, mk) == o.d1);
    CHECK(bad_sigma(pr, gt, mk, 3.0) == o.bad);
    // All gt < 60: relative term never binds.
    CHECK(d1(pr, gt, mk) == bad_sigma(pr, gt, mk, 3.0));
  }
}

TEST_CASE("eval report serializes") {
  EvalAccumulator acc;
  acc.add(std::vector<double>{1, 2}, std::vector<double>{1, 4}, std::vector<unsigned char>{1, 1});
  EvalReport r = acc.report();
  CHECK(r.epe == 1.0);
  CHECK(r.bad.at(1.0) == 50.0);
  CHECK(r.to_text().find("epe=1\n") != std::string::npos);
  CHECK(r.to_json().find("\"valid_pixels\": 2") != std::string::npos);
}
