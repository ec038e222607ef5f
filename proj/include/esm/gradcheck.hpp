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
#include <string>
#include <vector>

#include "esm/tensor.hpp"

namespace esm {

struct GradCheckOptions {
  double eps = 1e-4;
  double tol = 1e-4;
  // Gradients below this magnitude are compared on an absolute scale.
  double floor = 1e-3;
  // Elements probed per input; <= 0 probes every element.
  Index max_probes_per_input = 0;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  bool passed = true;
  double max_rel_error = 0.0;
  Index probes = 0;
  int worst_input = -1;
  Index worst_element = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::string summary() const;
};

using GradFn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

/// Compares the reverse-mode gradient of <fn(inputs), R> against central
/// differences, R being a fixed random projection so non-scalar outputs are
/// checked in every direction. Inputs are leaves; they are perturbed in place
/// and restored. Error per probe: |a - n| / max(|a|, |n|, floor).
GradCheckReport grad_check(const GradFn& fn, std::vector<Tensor<double>> inputs,
                           const GradCheckOptions& opts = {});

}  // namespace esm
