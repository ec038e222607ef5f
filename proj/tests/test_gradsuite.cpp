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

#include <set>

#include "doctest.h"
#include "esm/gradsuite.hpp"
#include "esm/ops.hpp"

using namespace esm;

TEST_CASE("gradient suite: every case passes on 20 seeds") {
  GradSuiteOptions o;
  o.seeds = 20;
  for (const auto& r : run_grad_suite(o)) {
    INFO(r.name << ": " << r.worst);
    CHECK(r.seeds == 20);
    CHECK(r.passed());
    CHECK(r.max_rel_error <= 1e-4);
  }
}

TEST_CASE("gradient suite: covers the composite blocks") {
  std::set<std::string> names;
  for (const auto& c : grad_suite_cases()) names.insert(c.name);
  for (const char* n : {"fm_block", "fuse", "hourglass2d_refine", "hourglass3d_reduced", "regression_k2", "esm_stage",
                        "conv3d", "deconv3d", "batch_norm_train", "gwc_volume", "norm_corr_volume"}) {
    CHECK_MESSAGE(names.count(n) == 1, n);
  }
}

TEST_CASE("gradient suite: a wrong gradient is caught") {
  // One factor detached: analytic gradient is x, numeric is 2x.
  auto rep = grad_check([](const std::vector<Tensor<double>>& in) { return sum(in[0] * in[0].detach()); },
                        {Tensor<double>({3}, 1.0)});
  CHECK_FALSE(rep.passed);
}
