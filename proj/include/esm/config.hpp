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

#include <array>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "esm/tensor.hpp"

namespace esm {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Volume resolution variant: S builds the cost volume at 1/16, M at 1/8,
/// L at 1/4.
enum class Variant { kS, kM, kL };
enum class VolumeKind { kGwc, kNormCorr };

std::string to_string(Variant v);
std::string to_string(VolumeKind k);
Variant parse_variant(const std::string& s);
VolumeKind parse_kind(const std::string& s);

struct BackboneConfig {
  std::array<Index, 4> encoder{16, 24, 32, 48};  // strided stages at 1/2 .. 1/16
  Index c4 = 48, c8 = 64, c16 = 96;              // decoder outputs
  Index guide2 = 8, guide1 = 4;                  // left-only stem

  Index channels_at(int scale) const;
};

struct HourglassConfig {
  Index i = 8;  // shared base width
  Index j = 4;  // variant width
  int levels = 3;

  // Width at encoder level l (0 = input resolution): j, i+j, i+2j, i+4j, ...
  Index channels(int level) const { return level == 0 ? j : i + (Index(1) << (level - 1)) * j; }
};

struct EsmConfig {
  // Mixer width keyed by the stage's input scale.
  std::map<int, Index> mix_channels{{16, 32}, {8, 32}, {4, 24}, {2, 16}};
  Index fuse_channels = 16;
  Index refine_channels = 16;
  int fm_blocks = 2;

  Index mix_at(int in_scale) const;
};

struct LossWeights {
  // Finest first; coarser scales beyond the list reuse the last entry.
  std::vector<double> finest_first{1.0, 1.0 / 6.0, 1.0 / 10.0};

  double weight(size_t rank_from_finest) const {
    return rank_from_finest < finest_first.size() ? finest_first[rank_from_finest]
                                                  : finest_first.back();
  }
};

struct ModelConfig {
  Variant variant = Variant::kS;
  VolumeKind kind = VolumeKind::kGwc;
  Index d_max = 32;
  Index groups = 8;  // N_g for group-wise correlation
  Index topk = 1;
  std::uint64_t seed = 1;
  BackboneConfig backbone;
  HourglassConfig hourglass;
  EsmConfig esm;
  LossWeights loss;

  int volume_scale() const;
  Index disparity_bins() const { return d_max / volume_scale(); }
  // ESM stages needed to climb from the volume scale to full resolution.
  int esm_stages() const;
  Index volume_channels() const { return kind == VolumeKind::kGwc ? groups : 1; }
  void validate() const;
};

/// Per-variant defaults: S -> (1/16, j = 4, k = 1), M -> (1/8, j = 8, k = 1),
/// L -> (1/4, j = 16, k = 2); i = 8 throughout.
ModelConfig make_model_config(Variant v, VolumeKind kind, Index d_max = 32);

/// Flat `key = value` text with `#` comments. Unknown keys are rejected.
using KeyValues = std::map<std::string, std::string>;
KeyValues parse_key_values(const std::string& text);
std::string format_key_values(const KeyValues& kv);

void apply_model_keys(ModelConfig& cfg, KeyValues& kv);
KeyValues model_keys(const ModelConfig& cfg);

}  // namespace esm
