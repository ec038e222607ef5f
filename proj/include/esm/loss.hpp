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

#include <map>
#include <span>
#include <string>
#include <vector>

#include "esm/aggregate.hpp"
#include "esm/config.hpp"

namespace esm {

// 0.5 x^2 for |x| < 1, |x| - 0.5 otherwise.
template <typename T> Tensor<T> smooth_l1(const Tensor<T>& x);

/// 1 where 0 < d < d_max, else 0.
template <typename T>
Tensor<T> valid_mask(const Tensor<T>& gt, T d_max);

/// Ground truth and mask brought to a coarser grid. Values are divided by the
/// scale factor; a coarse pixel is valid only if its bilinear footprint is
/// entirely valid.
template <typename T>
struct ScaledTarget {
  Tensor<T> gt, mask;
};
template <typename T>
ScaledTarget<T> downscale_target(const Tensor<T>& gt, const Tensor<T>& mask, Index h, Index w);

/// Masked mean of smooth_l1(pred - gt). Returns an undefined tensor if the
/// mask is empty.
template <typename T>
Tensor<T> masked_smooth_l1(const Tensor<T>& pred, const Tensor<T>& gt, const Tensor<T>& mask);

struct LossStats {
  int empty_scales = 0;  // scales skipped for lack of valid pixels
  std::vector<double> terms;  // per map, coarse to fine, unweighted
};

/// Weighted sum over maps (coarse to fine). Weights are assigned from the
/// finest map outwards.
template <typename T>
Tensor<T> multiscale_loss(const std::vector<DisparityMap<T>>& maps, const Tensor<T>& gt,
                          const Tensor<T>& mask, const LossWeights& weights,
                          LossStats* stats = nullptr);

// ---- metrics ---------------------------------------------------------------
class MetricError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

double epe(std::span<const double> pred, std::span<const double> gt, std::span<const unsigned char> mask);
// Percentage of valid pixels with |err| > max(3, 0.05 gt).
double d1(std::span<const double> pred, std::span<const double> gt, std::span<const unsigned char> mask);
// Percentage of valid pixels with |err| > sigma (strict).
double bad_sigma(std::span<const double> pred, std::span<const double> gt,
                 std::span<const unsigned char> mask, double sigma);

struct EvalReport {
  double epe = 0;
  double d1 = 0;
  std::map<double, double> bad;  // sigma -> percent
  long long valid_pixels = 0;
  int samples = 0;

  std::string to_text() const;
  std::string to_json() const;
  bool operator==(const EvalReport&) const = default;
};

/// Pools errors over many images; every valid pixel weighs the same.
class EvalAccumulator {
 public:
  explicit EvalAccumulator(std::vector<double> sigmas = {1.0, 2.0, 3.0});
  void add(std::span<const double> pred, std::span<const double> gt, std::span<const unsigned char> mask);
  EvalReport report() const;

 private:
  std::vector<double> sigmas_;
  std::vector<long long> bad_counts_;
  double abs_sum_ = 0;
  long long d1_count_ = 0;
  long long count_ = 0;
  int samples_ = 0;
};

}  // namespace esm
