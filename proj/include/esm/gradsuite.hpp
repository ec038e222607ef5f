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

#include "esm/gradcheck.hpp"

namespace esm {

/// One entry of the finite-difference suite. `run` builds fresh random
/// inputs (and weights) from the seed and checks them in double precision.
struct GradSuiteCase {
  std::string name;
  std::function<GradCheckReport(std::uint64_t seed)> run;
};

/// Every differentiable op plus the composite blocks.
std::vector<GradSuiteCase> grad_suite_cases();

struct GradSuiteResult {
  std::string name;
  int seeds = 0;
  int failures = 0;
  double max_rel_error = 0;
  double seconds = 0;
  std::string worst;  // summary of the worst seed

  bool passed() const { return failures == 0; }
};

struct GradSuiteOptions {
  int seeds = 20;
  std::uint64_t first_seed = 1;
  std::string filter;  // substring match on case names; empty runs all
  std::function<void(const GradSuiteResult&)> on_case;
};

std::vector<GradSuiteResult> run_grad_suite(const GradSuiteOptions& opts = {});

}  // namespace esm
