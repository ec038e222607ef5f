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

#include "esm/model.hpp"

#include "esm/costvol.hpp"

namespace esm {

template <typename T>
StereoModel<T>::StereoModel(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(cfg_.seed);
  backbone = FeatureExtractor<T>(cfg_.backbone, rng);
  aggregator = Hourglass3d<T>(cfg_.volume_channels(), cfg_.hourglass, rng);
  for (int s = cfg_.volume_scale(); s > 1; s /= 2) {
    stages.emplace_back(s, cfg_.backbone.channels_at(s), cfg_.backbone.channels_at(s / 2), cfg_.esm, rng);
  }
}

template <typename T>
ModelOutput<T> StereoModel<T>::forward(const Tensor<T>& left, const Tensor<T>& right, bool training) {
  auto [pl, pr] = backbone.forward(left, right, training);
  const int vs = cfg_.volume_scale();
  ModelOutput<T> out;
  const Index need = cfg_.disparity_bins();
  out.volume = build_volume(pl.at(vs), pr.at(vs), cfg_);
  if (out.volume.dim(2) != need) throw ShapeError("cost volume has the wrong disparity count");
  Tensor<T> agg = aggregator.forward(out.volume, training);
  DisparityMap<T> d{regress_disparity(agg, cfg_.topk), vs};
  out.maps.push_back(d);
  for (auto& stage : stages) {
    const int s = stage.in_scale;
    d = DisparityMap<T>{stage.forward(d.data, pl.at(s), pl.at(s / 2), training), s / 2};
    out.maps.push_back(d);
  }
  if (!training) {
    out.maps.back().data = clamp(out.maps.back().data, T(0), static_cast<T>(cfg_.d_max));
  }
  return out;
}

template <typename T>
ParamSet<T> StereoModel<T>::parameters() const {
  ParamSet<T> ps;
  backbone.collect("backbone", ps);
  aggregator.collect("aggregate3d", ps);
  for (size_t i = 0; i < stages.size(); ++i) stages[i].collect("esm.stage" + std::to_string(i), ps);
  return ps;
}

template <typename T>
std::vector<Tensor<T>> StereoModel<T>::trainable() const {
  std::vector<Tensor<T>> out;
  for (auto& p : parameters())
    if (p.trainable) out.push_back(p.tensor);
  return out;
}

template <typename T>
void StereoModel<T>::zero_refinement_heads() {
  for (auto& s : stages) s.zero_refinement_head();
}

template class StereoModel<float>;
template class StereoModel<double>;

}  // namespace esm
