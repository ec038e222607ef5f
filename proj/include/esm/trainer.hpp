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

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "esm/data_io.hpp"
#include "esm/loss.hpp"
#include "esm/model.hpp"

namespace esm {

// ---- optimiser ---------------------------------------------------------------

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

template <typename T>
struct OptimState {
  std::vector<std::vector<T>> m, v;  // per parameter, created on the first step
  long long step = 0;
};

/// Decoupled weight decay, then a bias-corrected Adam step:
///   p <- p (1 - lr wd)
///   m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2
///   p <- p - lr (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
/// Parameters without a gradient are treated as having a zero gradient.
template <typename T>
void adamw_step(std::vector<Tensor<T>>& params, OptimState<T>& state, double lr, const AdamWConfig& cfg);

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
template <typename T>
double clip_grad_norm(std::vector<Tensor<T>>& params, double max_norm);

// ---- schedule ----------------------------------------------------------------

/// lr(epoch) = base / factor^(number of milestones <= epoch). The decay takes
/// effect from the milestone epoch itself.
struct Schedule {
  double base_lr = 1e-3;
  double factor = 2.0;
  std::vector<int> milestones{20, 32, 40, 48, 56};

  double lr_at(int epoch) const;
  void validate() const;
};

/// The 60-epoch plan (milestones 20, 32, 40, 48, 56) compressed to `epochs`.
Schedule scaled_schedule(int epochs, double base_lr = 1e-3);

// ---- checkpoints ---------------------------------------------------------------

/// Directory layout:
///   manifest.json   parameter name -> file, shape, dtype; optimiser files; step
///   config.txt      model keys (key = value)
///   params/*.esmt   one tensor per parameter or buffer
///   optim/*.esmt    first and second moments
/// The directory is assembled next to the target and renamed into place.
template <typename T>
void save_checkpoint(const fs::path& dir, const StereoModel<T>& model, const OptimState<T>* optim = nullptr);

ModelConfig read_checkpoint_config(const fs::path& dir);

/// Loads parameters (and optimiser state when given) into a model built from
/// the same config. Shapes are checked per tensor.
template <typename T>
void load_checkpoint(const fs::path& dir, StereoModel<T>& model, OptimState<T>* optim = nullptr);

// ---- training ------------------------------------------------------------------

struct TrainOptions {
  int epochs = 10;
  int max_steps = 0;  // > 0 stops early
  Index batch = 2;
  Index crop_h = 64, crop_w = 128;
  bool random_crop = true;
  Schedule schedule;
  AdamWConfig adamw;
  double clip_norm = 0.0;  // <= 0 disables clipping
  std::uint64_t seed = 1;
  fs::path checkpoint_dir;  // empty: no checkpoints
  int checkpoint_every = 0;  // epochs; 0 = only at the end
  std::function<void(int step, int epoch, double loss)> on_step;
};

/// Consumes "train.*" keys: epochs, steps, batch, crop (HxW), random_crop,
/// lr, weight_decay, clip, checkpoint_every, milestones (comma list).
void apply_train_keys(TrainOptions& t, KeyValues& kv);

struct TrainResult {
  std::vector<double> losses;  // per step
  int steps = 0;
  int epochs = 0;
};

/// Mask used for scoring and supervision: ground truth present and
/// 0 < d < dmax.
Tensor<float> supervision_mask(const Tensor<float>& gt, const Tensor<float>& present, Index d_max);

/// Minibatch training over `data`. A non-finite loss or parameter update
/// aborts with NumericalError after writing the last finite parameters to
/// `checkpoint_dir` (if set).
TrainResult train(StereoModel<float>& model, const std::vector<StereoSample>& data, const TrainOptions& opts,
                  OptimState<float>* state = nullptr);

/// Single pair, [3, H, W] each, in inference mode. Sizes that are not a
/// multiple of 16 are zero-padded on the top and right; the result is
/// cropped back to [H, W].
Tensor<float> infer_disparity(StereoModel<float>& model, const Tensor<float>& left, const Tensor<float>& right);

/// Full-image evaluation of the final map in inference mode.
EvalReport evaluate(StereoModel<float>& model, const std::vector<StereoSample>& data);

/// Adds one prediction [H, W] (or [1, H, W]) against a sample's ground truth
/// with the supervision mask.
void accumulate(EvalAccumulator& acc, const Tensor<float>& pred, const StereoSample& s, Index d_max);

// ---- overfit harness --------------------------------------------------------------

struct OverfitOptions {
  ModelConfig model = make_model_config(Variant::kS, VolumeKind::kGwc, 32);
  int pairs = 8;
  RandomDotOptions data;  // seed is offset per pair
  TrainOptions train;
};

/// Desk preset: S, gwc, dmax 32, 64x128, 8 random-dot pairs, batch 2,
/// 500 steps, clipping at 5.
OverfitOptions overfit_preset(VolumeKind kind = VolumeKind::kGwc, std::uint64_t seed = 1);

struct OverfitResult {
  EvalReport before, after;
  TrainResult train;
  double seconds = 0;
};

OverfitResult overfit_harness(const OverfitOptions& opts);

}  // namespace esm
