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
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "esm/tensor.hpp"

namespace esm {

namespace fs = std::filesystem;

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---- PFM ---------------------------------------------------------------------
// "Pf" (one channel), "W H", scale (negative = little-endian), float rows
// stored bottom-up.

enum class PfmErrorKind { kIo, kBadMagic, kUnsupportedChannels, kBadHeader, kZeroScale, kTruncated };

class PfmError : public DataError {
 public:
  PfmError(PfmErrorKind kind, const std::string& msg) : DataError(msg), kind_(kind) {}
  PfmErrorKind kind() const { return kind_; }

 private:
  PfmErrorKind kind_;
};

struct PfmImage {
  Tensor<float> data;  // [H, W], top row first
  float scale = -1.0f;
};

PfmImage read_pfm(const fs::path& path);
PfmImage parse_pfm(const std::string& bytes);
std::string encode_pfm(const Tensor<float>& map, float scale = -1.0f);
void write_pfm(const fs::path& path, const Tensor<float>& map, float scale = -1.0f);

// ---- PNG -------------------------------------------------------------------

/// KITTI-style disparity: 16-bit grayscale, value / 256, raw 0 = no data.
struct DisparityImage {
  Tensor<float> disparity;  // [1, H, W]
  Tensor<float> mask;       // [1, H, W], 1 = has ground truth
};
DisparityImage read_disparity_png16(const fs::path& path);
void write_png16(const fs::path& path, const std::vector<std::uint16_t>& raw, Index height, Index width);

/// 8-bit colour image as [3, H, W] in [0, 1]. Gray and alpha inputs are
/// expanded or stripped.
Tensor<float> read_image(const fs::path& path);
void write_rgb8(const fs::path& path, const std::vector<std::uint8_t>& rgb, Index height, Index width);
void write_image(const fs::path& path, const Tensor<float>& chw);

// ---- samples -----------------------------------------------------------------

struct StereoSample {
  Tensor<float> left, right;  // [3, H, W] in [0, 1]
  Tensor<float> gt;           // [1, H, W] in pixels
  Tensor<float> mask;         // [1, H, W], 1 = valid ground truth
  std::string id;
};

/// Random-dot stereogram with a block-wise constant integer disparity field
/// in [0, d_max). The right view is the left view warped by the field; where
/// two sources land on one pixel the larger disparity wins. Left pixels that
/// fall outside the right view or are hidden are marked invalid. Right pixels
/// nothing maps to get fresh dots.
struct RandomDotOptions {
  Index height = 64, width = 128;
  Index d_max = 16;
  Index block = 16;
  Index dot = 2;  // side of one dot in pixels
  std::uint64_t seed = 0;
};
StereoSample generate_random_dot_pair(const RandomDotOptions& opts);

/// Left, right and ground-truth paths per line, whitespace separated. Lines
/// with two paths are also accepted (prediction, ground truth) for scoring
/// stored predictions. `#` starts a comment. Relative paths resolve against
/// the manifest's directory.
struct ManifestEntry {
  std::vector<fs::path> paths;
  int line = 0;
};
std::vector<ManifestEntry> read_manifest(const fs::path& path);
std::string format_manifest(const std::vector<std::vector<std::string>>& rows);

/// Ground truth by extension: .pfm (non-finite = no data, stored as 0), or
/// .png (16-bit).
DisparityImage read_disparity(const fs::path& path);
StereoSample load_sample(const ManifestEntry& e);

struct Batch {
  Tensor<float> left, right;  // [B, 3, h, w]
  Tensor<float> gt, mask;     // [B, 1, h, w]
};

/// Crops every sample to h x w (random offsets when `random_crop`, centred
/// otherwise) and stacks them. The same window applies to all four planes.
Batch make_batch(const std::vector<const StereoSample*>& samples, Index h, Index w,
                 bool random_crop, std::mt19937_64& rng);

}  // namespace esm
