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

#include "esm/gradsuite.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <memory>
#include <random>

#include "esm/aggregate.hpp"
#include "esm/costvol.hpp"
#include "esm/esm.hpp"
#include "esm/loss.hpp"
#include "esm/ops.hpp"

namespace esm {

namespace {

using T = Tensor<double>;
using Inputs = std::vector<T>;

T rnd(const Shape& s, std::mt19937_64& rng) { return T::normal(s, 1.0, rng); }

// Moves values that sit within `margin` of a kink to a safe distance.
T away_from(T x, std::initializer_list<double> kinks, double margin = 0.02) {
  for (double& v : x.mutable_data())
    for (double k : kinks)
      if (std::abs(v - k) < margin) v = k + (v >= k ? margin : -margin);
  return x;
}

// Values along `axis` are a shuffled ladder with spacing >= 0.2, so the
// top-k selection is stable under the probe step.
T ladder(const Shape& s, int axis, std::mt19937_64& rng) {
  T x(s);
  const Index n = s[static_cast<size_t>(axis)];
  Index inner = 1;
  for (size_t a = static_cast<size_t>(axis) + 1; a < s.size(); ++a) inner *= s[a];
  const Index outer = x.numel() / (n * inner);
  std::uniform_real_distribution<double> jitter(-0.05, 0.05);
  auto d = x.mutable_data();
  std::vector<Index> perm(static_cast<size_t>(n));
  for (Index o = 0; o < outer; ++o)
    for (Index i = 0; i < inner; ++i) {
      for (Index k = 0; k < n; ++k) perm[static_cast<size_t>(k)] = k;
      std::shuffle(perm.begin(), perm.end(), rng);
      for (Index k = 0; k < n; ++k)
        d[static_cast<size_t>((o * n + k) * inner + i)] = 0.3 * static_cast<double>(perm[static_cast<size_t>(k)]) + jitter(rng);
    }
  return x;
}

GradCheckOptions opts_for(std::uint64_t seed, Index probes = 0, double eps = 1e-4) {
  GradCheckOptions o;
  o.seed = seed;
  o.max_probes_per_input = probes;
  o.eps = eps;
  return o;
}

GradSuiteCase unary(std::string name, std::function<T(const T&)> f, std::initializer_list<double> kinks = {}) {
  std::vector<double> k(kinks);
  return {std::move(name), [f, k](std::uint64_t seed) {
            std::mt19937_64 rng(seed);
            T x = rnd({2, 3, 4}, rng);
            for (double kink : k) x = away_from(x, {kink});
            return grad_check([f](const Inputs& in) { return f(in[0]); }, {x}, opts_for(seed));
          }};
}

// Small composite blocks need weight surgery so the weights are inputs too.
template <typename Block>
std::shared_ptr<Block> shared(Block b) {
  return std::make_shared<Block>(std::move(b));
}

}  // namespace

std::vector<GradSuiteCase> grad_suite_cases() {
  std::vector<GradSuiteCase> cases;

  // ---- elementwise ------------------------------------------------------------
  auto binary = [&](std::string name, std::function<T(const T&, const T&)> f) {
    cases.push_back({std::move(name), [f](std::uint64_t seed) {
                       std::mt19937_64 rng(seed);
                       return grad_check([f](const Inputs& in) { return f(in[0], in[1]); },
                                         {rnd({2, 3, 4}, rng), rnd({2, 3, 4}, rng)}, opts_for(seed));
                     }});
  };
  binary("add", [](const T& a, const T& b) { return add(a, b); });
  binary("sub", [](const T& a, const T& b) { return sub(a, b); });
  binary("mul", [](const T& a, const T& b) { return mul(a, b); });
  cases.push_back(unary("add_scalar", [](const T& x) { return add_scalar(x, 1.7); }));
  cases.push_back(unary("mul_scalar", [](const T& x) { return mul_scalar(x, -2.5); }));
  cases.push_back(unary("gelu", [](const T& x) { return gelu(x); }));
  cases.push_back(unary("leaky_relu", [](const T& x) { return leaky_relu(x, 0.1); }, {0.0}));
  cases.push_back(unary("sigmoid", [](const T& x) { return sigmoid(x); }));
  cases.push_back(unary("square", [](const T& x) { return square(x); }));
  cases.push_back(unary("clamp", [](const T& x) { return clamp(x, -0.5, 0.8); }, {-0.5, 0.8}));
  cases.push_back(unary("smooth_l1", [](const T& x) { return smooth_l1(mul_scalar(x, 2.0)); }));

  // ---- reductions and shape ops -------------------------------------------------
  cases.push_back(unary("sum", [](const T& x) { return sum(x); }));
  cases.push_back(unary("mean", [](const T& x) { return mean(x); }));
  cases.push_back({"sum_axis", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     const int axis = static_cast<int>(seed % 3);
                     const bool keep = seed % 2 == 0;
                     return grad_check([=](const Inputs& in) { return sum_axis(in[0], axis, keep); },
                                       {rnd({2, 3, 4}, rng)}, opts_for(seed));
                   }});
  cases.push_back(unary("reshape", [](const T& x) { return mul(reshape(x, {4, 6}), reshape(x, {4, 6})); }));
  cases.push_back(unary("unsqueeze_squeeze", [](const T& x) { return square(squeeze(unsqueeze(x, 1), 1)); }));
  cases.push_back({"slice", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     const int axis = static_cast<int>(seed % 3);
                     return grad_check([=](const Inputs& in) { return square(slice(in[0], axis, 1, 2)); },
                                       {rnd({3, 4, 5}, rng)}, opts_for(seed));
                   }});
  cases.push_back({"concat", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     const int axis = static_cast<int>(seed % 3);
                     Shape sa{2, 3, 4}, sb{2, 3, 4};
                     sb[static_cast<size_t>(axis)] = 1;
                     return grad_check([=](const Inputs& in) { return square(concat<double>({in[0], in[1]}, axis)); },
                                       {rnd(sa, rng), rnd(sb, rng)}, opts_for(seed));
                   }});
  cases.push_back({"split_channels", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     return grad_check(
                         [](const Inputs& in) {
                           auto [a, b] = split_channels(in[0], 2);
                           return concat<double>({square(a), mul_scalar(b, 3.0)}, 1);
                         },
                         {rnd({2, 5, 2, 3}, rng)}, opts_for(seed));
                   }});

  // ---- convolution ----------------------------------------------------------------
  auto conv_case = [&](std::string name, int dims, bool transposed) {
    cases.push_back({std::move(name), [dims, transposed](std::uint64_t seed) {
                       std::mt19937_64 rng(seed);
                       ConvParams p;
                       p.dims = dims;
                       p.stride = 1 + static_cast<int>(seed % 2);
                       p.padding = static_cast<int>((seed / 2) % 2);
                       p.groups = 1 + static_cast<int>((seed / 4) % 2);
                       const Index cin = 4, cout = 2 * p.groups, k = 3;
                       Shape xs{2, cin}, ws;
                       for (int d = 0; d < dims; ++d) xs.push_back(dims == 2 ? 5 + d : 4);
                       if (transposed) {
                         ws = {cin, cout / p.groups};
                       } else {
                         ws = {cout, cin / p.groups};
                       }
                       for (int d = 0; d < dims; ++d) ws.push_back(k);
                       Shape out_size;
                       if (transposed && p.stride == 2) {
                         // Exercise the extra-row range of the output size.
                         for (int d = 0; d < dims; ++d)
                           out_size.push_back((xs[static_cast<size_t>(2 + d)] - 1) * 2 - 2 * p.padding + k + 1);
                       }
                       return grad_check(
                           [=](const Inputs& in) {
                             return transposed ? deconv(in[0], in[1], in[2], p, out_size) : conv(in[0], in[1], in[2], p);
                           },
                           {rnd(xs, rng), rnd(ws, rng), rnd({cout}, rng)}, opts_for(seed, dims == 3 ? 64 : 0));
                     }});
  };
  conv_case("conv2d", 2, false);
  conv_case("conv3d", 3, false);
  conv_case("deconv2d", 2, true);
  conv_case("deconv3d", 3, true);

  // ---- rearrangements ----------------------------------------------------------------
  cases.push_back({"pixel_shuffle", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     return grad_check([](const Inputs& in) { return square(pixel_shuffle(in[0], 2)); },
                                       {rnd({2, 8, 2, 3}, rng)}, opts_for(seed));
                   }});
  cases.push_back({"pixel_unshuffle", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     return grad_check([](const Inputs& in) { return square(pixel_unshuffle(in[0], 2)); },
                                       {rnd({1, 2, 4, 6}, rng)}, opts_for(seed));
                   }});
  cases.push_back({"channel_shuffle", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     const int g = seed % 2 ? 2 : 3;
                     return grad_check([g](const Inputs& in) { return square(channel_shuffle(in[0], g)); },
                                       {rnd({2, 6, 2, 2}, rng)}, opts_for(seed));
                   }});

  // ---- normalisation and resampling ---------------------------------------------------
  cases.push_back({"batch_norm_train", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     auto rm = std::make_shared<T>(T::zeros({3}));
                     auto rv = std::make_shared<T>(T::ones({3}));
                     return grad_check(
                         [rm, rv](const Inputs& in) { return batch_norm(in[0], in[1], in[2], *rm, *rv, true); },
                         {rnd({2, 3, 2, 3}, rng), rnd({3}, rng), rnd({3}, rng)}, opts_for(seed));
                   }});
  cases.push_back({"batch_norm_eval", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     auto rm = std::make_shared<T>(rnd({3}, rng));
                     auto rv = std::make_shared<T>(T::uniform({3}, 0.5, 2.0, rng));
                     return grad_check(
                         [rm, rv](const Inputs& in) { return batch_norm(in[0], in[1], in[2], *rm, *rv, false); },
                         {rnd({2, 3, 2, 3}, rng), rnd({3}, rng), rnd({3}, rng)}, opts_for(seed));
                   }});
  cases.push_back({"resize_bilinear", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     std::uniform_int_distribution<Index> size(2, 9);
                     const Index oh = size(rng), ow = size(rng);
                     return grad_check([=](const Inputs& in) { return resize(in[0], oh, ow, ResizeMode::kBilinear); },
                                       {rnd({2, 2, 4, 5}, rng)}, opts_for(seed));
                   }});
  cases.push_back({"resize_nearest", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     std::uniform_int_distribution<Index> size(2, 9);
                     const Index oh = size(rng), ow = size(rng);
                     return grad_check([=](const Inputs& in) { return resize(in[0], oh, ow, ResizeMode::kNearest); },
                                       {rnd({1, 2, 4, 5}, rng)}, opts_for(seed));
                   }});
  cases.push_back({"upsample_disparity", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     return grad_check([](const Inputs& in) { return upsample_disparity(in[0]); },
                                       {rnd({2, 1, 3, 4}, rng)}, opts_for(seed));
                   }});

  // ---- selection ----------------------------------------------------------------------
  cases.push_back({"softmax", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     const int axis = static_cast<int>(seed % 3);
                     return grad_check([axis](const Inputs& in) { return softmax(in[0], axis); },
                                       {rnd({2, 4, 3}, rng)}, opts_for(seed));
                   }});
  cases.push_back({"topk", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     return grad_check([](const Inputs& in) { return square(topk(in[0], 1, 2).values); },
                                       {ladder({2, 5, 3}, 1, rng)}, opts_for(seed));
                   }});
  cases.push_back({"regression_k2", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     return grad_check([](const Inputs& in) { return regress_disparity(in[0], 2); },
                                       {ladder({2, 1, 6, 2, 3}, 2, rng)}, opts_for(seed));
                   }});
  cases.push_back({"regression_full", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     return grad_check([](const Inputs& in) { return regress_disparity(in[0], 6); },
                                       {rnd({2, 1, 6, 2, 3}, rng)}, opts_for(seed));
                   }});

  // ---- cost volumes and loss ---------------------------------------------------------------
  cases.push_back({"gwc_volume", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     const Index groups = seed % 2 ? 2 : 4;
                     return grad_check([=](const Inputs& in) { return gwc_volume(in[0], in[1], 4, groups); },
                                       {rnd({2, 4, 2, 6}, rng), rnd({2, 4, 2, 6}, rng)}, opts_for(seed));
                   }});
  cases.push_back({"norm_corr_volume", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     return grad_check([](const Inputs& in) { return norm_corr_volume(in[0], in[1], 4); },
                                       {rnd({2, 4, 2, 6}, rng), rnd({2, 4, 2, 6}, rng)}, opts_for(seed));
                   }});
  cases.push_back({"masked_smooth_l1", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     T gt = rnd({2, 1, 3, 4}, rng);
                     T mask = T::uniform({2, 1, 3, 4}, 0.0, 1.0, rng);
                     for (double& m : mask.mutable_data()) m = m < 0.3 ? 0.0 : 1.0;
                     mask.mutable_data()[0] = 1.0;
                     return grad_check(
                         [=](const Inputs& in) { return masked_smooth_l1(mul_scalar(in[0], 2.0), gt, mask); },
                         {rnd({2, 1, 3, 4}, rng)}, opts_for(seed));
                   }});
  cases.push_back({"multiscale_loss", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     T gt = T::uniform({2, 1, 8, 8}, 0.5, 6.0, rng);
                     T mask = T::ones({2, 1, 8, 8});
                     for (Index i = 0; i < 8; ++i) mask.mutable_data()[static_cast<size_t>(i * 9)] = 0.0;
                     LossWeights w;
                     return grad_check(
                         [=](const Inputs& in) {
                           std::vector<DisparityMap<double>> maps{{in[0], 4}, {in[1], 2}, {in[2], 1}};
                           return multiscale_loss(maps, gt, mask, w);
                         },
                         {T::uniform({2, 1, 2, 2}, 0.0, 2.0, rng), T::uniform({2, 1, 4, 4}, 0.0, 3.0, rng),
                          T::uniform({2, 1, 8, 8}, 0.0, 6.0, rng)},
                         opts_for(seed));
                   }});

  // ---- composite blocks -------------------------------------------------------------------
  // A small step keeps probes off leaky-ReLU kinks and tames batch-norm
  // curvature at these tiny batch sizes.
  cases.push_back({"fm_block", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     auto b = shared(FMBlock<double>(8, rng));
                     return grad_check(
                         [b](const Inputs& in) {
                           b->pointwise.weight = in[1];
                           b->depthwise.weight = in[2];
                           return b->forward(in[0]);
                         },
                         {rnd({2, 8, 3, 4}, rng), b->pointwise.weight.detach(), b->depthwise.weight.detach()},
                         opts_for(seed, 48));
                   }});
  cases.push_back({"fuse", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     auto b = shared(FuseBlock<double>(2, 4, 4, rng));
                     return grad_check(
                         [b](const Inputs& in) {
                           b->mix1.conv.weight = in[2];
                           return b->forward(in[0], in[1], true);
                         },
                         {rnd({2, 1, 3, 3}, rng), rnd({2, 2, 3, 3}, rng), b->mix1.conv.weight.detach()},
                         opts_for(seed, 32, 1e-6));
                   }});
  cases.push_back({"hourglass2d_refine", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     auto b = shared(Refine2d<double>(2, 2, 4, rng));
                     return grad_check(
                         [b](const Inputs& in) {
                           b->stem.conv.weight = in[2];
                           return b->forward(in[0], in[1], true);
                         },
                         {rnd({2, 2, 4, 5}, rng), rnd({2, 2, 4, 5}, rng), b->stem.conv.weight.detach()},
                         opts_for(seed, 32, 1e-6));
                   }});
  cases.push_back({"hourglass3d_reduced", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     HourglassConfig hc;
                     hc.i = 2;
                     hc.j = 2;
                     hc.levels = 2;
                     auto b = shared(Hourglass3d<double>(2, hc, rng));
                     return grad_check(
                         [b](const Inputs& in) {
                           b->head.weight = in[1];
                           return b->forward(in[0], true);
                         },
                         {rnd({2, 2, 4, 4, 4}, rng), b->head.weight.detach()}, opts_for(seed, 32, 1e-6));
                   }});
  cases.push_back({"esm_stage", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     EsmConfig ec;
                     ec.mix_channels = {{2, 8}};
                     ec.fuse_channels = 4;
                     ec.refine_channels = 4;
                     ec.fm_blocks = 1;
                     auto b = shared(EsmStage<double>(2, 2, 2, ec, rng));
                     return grad_check([b](const Inputs& in) { return b->forward(in[0], in[1], in[2], true); },
                                       {T::uniform({2, 1, 2, 3}, 0.0, 3.0, rng), rnd({2, 2, 2, 3}, rng),
                                        rnd({2, 2, 4, 6}, rng)},
                                       opts_for(seed, 24, 1e-6));
                   }});
  return cases;
}

std::vector<GradSuiteResult> run_grad_suite(const GradSuiteOptions& opts) {
  std::vector<GradSuiteResult> out;
  for (const auto& c : grad_suite_cases()) {
    if (!opts.filter.empty() && c.name.find(opts.filter) == std::string::npos) continue;
    GradSuiteResult r;
    r.name = c.name;
    const auto t0 = std::chrono::steady_clock::now();
    double worst = -1;
    for (int s = 0; s < opts.seeds; ++s) {
      const std::uint64_t seed = opts.first_seed + static_cast<std::uint64_t>(s);
      GradCheckReport rep;
      try {
        rep = c.run(seed);
      } catch (const std::exception& e) {
        rep.passed = false;
        rep.max_rel_error = INFINITY;
        r.worst = "seed " + std::to_string(seed) + ": threw " + e.what();
        worst = INFINITY;
      }
      ++r.seeds;
      if (!rep.passed) ++r.failures;
      if (rep.max_rel_error > worst) {
        worst = rep.max_rel_error;
        r.worst = "seed " + std::to_string(seed) + ": " + rep.summary();
      }
    }
    r.max_rel_error = worst;
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (opts.on_case) opts.on_case(r);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace esm
