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

#include "esm/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "esm/ops.hpp"

namespace esm {

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  os << (passed ? "ok" : "FAILED") << " max_rel_err=" << max_rel_error << " probes=" << probes;
  if (!passed) {
    os << " worst=input" << worst_input << "[" << worst_element << "] analytic=" << worst_analytic
       << " numeric=" << worst_numeric;
  }
  return os.str();
}

GradCheckReport grad_check(const GradFn& fn, std::vector<Tensor<double>> inputs,
                           const GradCheckOptions& opts) {
  std::mt19937_64 rng(opts.seed ^ 0x9e3779b97f4a7c15ull);
  Tensor<double> projection;

  auto objective = [&](bool record) {
    for (auto& in : inputs) in.zero_grad();
    const Tensor<double> out = fn(inputs);
    if (!projection.defined()) projection = Tensor<double>::normal(out.shape(), 1.0, rng);
    if (projection.shape() != out.shape()) {
      throw ShapeError("grad_check: function output shape changed between evaluations");
    }
    Tensor<double> loss = sum(mul(out, projection));
    if (record) backward(loss);
    return loss.item();
  };

  for (auto& in : inputs) in.set_requires_grad(true);
  objective(true);
  std::vector<std::vector<double>> analytic;
  for (const auto& in : inputs) analytic.push_back(in.grad());

  GradCheckReport report;
  NoGradGuard no_grad;
  for (size_t t = 0; t < inputs.size(); ++t) {
    auto data = inputs[t].mutable_data();
    std::vector<Index> probes(data.size());
    std::iota(probes.begin(), probes.end(), Index(0));
    if (opts.max_probes_per_input > 0 && static_cast<Index>(probes.size()) > opts.max_probes_per_input) {
      std::shuffle(probes.begin(), probes.end(), rng);
      probes.resize(static_cast<size_t>(opts.max_probes_per_input));
    }
    for (Index e : probes) {
      const double orig = data[static_cast<size_t>(e)];
      data[static_cast<size_t>(e)] = orig + opts.eps;
      const double fp = objective(false);
      data[static_cast<size_t>(e)] = orig - opts.eps;
      const double fm = objective(false);
      data[static_cast<size_t>(e)] = orig;
      const double numeric = (fp - fm) / (2.0 * opts.eps);
      const double a = analytic[t][static_cast<size_t>(e)];
      const double err =
          std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), opts.floor});
      ++report.probes;
      if (!(err <= report.max_rel_error)) {
        report.max_rel_error = std::isnan(err) ? INFINITY : err;
        report.worst_input = static_cast<int>(t);
        report.worst_element = e;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  report.passed = report.max_rel_error <= opts.tol;
  return report;
}

}  // namespace esm
