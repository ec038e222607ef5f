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

#include "esm/loss.hpp"

#include <cmath>
#include <sstream>

#include "json.hpp"

namespace esm {

template <typename T>
Tensor<T> smooth_l1(const Tensor<T>& x) {
  const auto xs = x.data();
  std::vector<T> out(xs.size());
  for (size_t i = 0; i < xs.size(); ++i) {
    const T a = std::abs(xs[i]);
    out[i] = a < T(1) ? T(0.5) * xs[i] * xs[i] : a - T(0.5);
  }
  auto xi = x.impl();
  return make_result<T>(x.shape(), std::move(out), "smooth_l1", {x}, [xi](const TensorImpl<T>& o) {
    auto& g = xi->grad_buffer();
    for (size_t i = 0; i < g.size(); ++i) {
      const T v = xi->data[i];
      const T d = std::abs(v) < T(1) ? v : (v > 0 ? T(1) : T(-1));
      g[i] += o.grad[i] * d;
    }
  });
}

template <typename T>
Tensor<T> valid_mask(const Tensor<T>& gt, T d_max) {
  std::vector<T> m(gt.data().size());
  for (size_t i = 0; i < m.size(); ++i) m[i] = gt.data()[i] > T(0) && gt.data()[i] < d_max ? T(1) : T(0);
  return Tensor<T>(gt.shape(), std::move(m));
}

template <typename T>
ScaledTarget<T> downscale_target(const Tensor<T>& gt, const Tensor<T>& mask, Index h, Index w) {
  if (gt.rank() != 4 || gt.shape() != mask.shape()) {
    throw ShapeError("downscale_target: gt " + to_string(gt.shape()) + " and mask " +
                     to_string(mask.shape()) + " must both be [B, 1, H, W]");
  }
  if (h == gt.dim(2) && w == gt.dim(3)) return {gt.detach(), mask.detach()};
  NoGradGuard ng;
  const T factor = static_cast<T>(gt.dim(3)) / static_cast<T>(w);
  ScaledTarget<T> t;
  t.gt = mul_scalar(resize(mul(gt, mask), h, w, ResizeMode::kBilinear), T(1) / factor);
  Tensor<T> m = resize(mask, h, w, ResizeMode::kBilinear);
  auto md = m.mutable_data();
  for (auto& v : md) v = v >= T(1) - T(1e-6) ? T(1) : T(0);
  t.mask = m;
  return t;
}

template <typename T>
Tensor<T> masked_smooth_l1(const Tensor<T>& pred, const Tensor<T>& gt, const Tensor<T>& mask) {
  if (pred.shape() != gt.shape() || pred.shape() != mask.shape()) {
    throw ShapeError("masked_smooth_l1: pred " + to_string(pred.shape()) + ", gt " +
                     to_string(gt.shape()) + " and mask " + to_string(mask.shape()) + " differ");
  }
  double n = 0;
  for (T v : mask.data()) n += v;
  if (n == 0) return {};
  return mul_scalar(sum(mul(smooth_l1(sub(pred, gt)), mask)), static_cast<T>(1.0 / n));
}

template <typename T>
Tensor<T> multiscale_loss(const std::vector<DisparityMap<T>>& maps, const Tensor<T>& gt,
                          const Tensor<T>& mask, const LossWeights& weights, LossStats* stats) {
  if (maps.empty()) throw ShapeError("multiscale_loss: no predictions");
  Tensor<T> total;
  const size_t n = maps.size();
  for (size_t i = 0; i < n; ++i) {
    const Tensor<T>& p = maps[i].data;
    ScaledTarget<T> t = downscale_target(gt, mask, p.dim(2), p.dim(3));
    Tensor<T> term = masked_smooth_l1(p, t.gt, t.mask);
    if (!term.defined()) {
      if (stats) {
        ++stats->empty_scales;
        stats->terms.push_back(0.0);
      }
      continue;
    }
    if (stats) stats->terms.push_back(static_cast<double>(term.item()));
    Tensor<T> weighted = mul_scalar(term, static_cast<T>(weights.weight(n - 1 - i)));
    total = total.defined() ? add(total, weighted) : weighted;
  }
  if (!total.defined()) {
    // Keep the graph connected so callers can still run backward.
    total = mul_scalar(sum(maps.back().data), T(0));
  }
  return total;
}

// ---- metrics ----------------------------------------------------------------

namespace {

void check_metric_args(const char* op, std::span<const double> pred, std::span<const double> gt,
                       std::span<const unsigned char> mask) {
  if (pred.size() != gt.size() || pred.size() != mask.size()) {
    throw MetricError(std::string(op) + ": pred, gt and mask sizes differ");
  }
}

template <typename F>
double masked_percent(const char* op, std::span<const double> pred, std::span<const double> gt,
                      std::span<const unsigned char> mask, F is_bad) {
  check_metric_args(op, pred, gt, mask);
  long long n = 0, bad = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    if (!mask[i]) continue;
    ++n;
    if (is_bad(std::abs(pred[i] - gt[i]), gt[i])) ++bad;
  }
  if (n == 0) throw MetricError(std::string(op) + ": mask selects no pixels");
  return 100.0 * static_cast<double>(bad) / static_cast<double>(n);
}

bool d1_outlier(double err, double gt) { return err > std::max(3.0, 0.05 * gt); }

}  // namespace

double epe(std::span<const double> pred, std::span<const double> gt, std::span<const unsigned char> mask) {
  check_metric_args("epe", pred, gt, mask);
  double s = 0;
  long long n = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    if (!mask[i]) continue;
    s += std::abs(pred[i] - gt[i]);
    ++n;
  }
  if (n == 0) throw MetricError("epe: mask selects no pixels");
  return s / static_cast<double>(n);
}

double d1(std::span<const double> pred, std::span<const double> gt, std::span<const unsigned char> mask) {
  return masked_percent("d1", pred, gt, mask, d1_outlier);
}

double bad_sigma(std::span<const double> pred, std::span<const double> gt,
                 std::span<const unsigned char> mask, double sigma) {
  if (!(sigma > 0)) throw MetricError("bad_sigma: sigma must be positive");
  return masked_percent("bad_sigma", pred, gt, mask, [sigma](double e, double) { return e > sigma; });
}

EvalAccumulator::EvalAccumulator(std::vector<double> sigmas)
    : sigmas_(std::move(sigmas)), bad_counts_(sigmas_.size(), 0) {}

void EvalAccumulator::add(std::span<const double> pred, std::span<const double> gt,
                          std::span<const unsigned char> mask) {
  check_metric_args("eval", pred, gt, mask);
  for (size_t i = 0; i < pred.size(); ++i) {
    if (!mask[i]) continue;
    const double e = std::abs(pred[i] - gt[i]);
    abs_sum_ += e;
    ++count_;
    if (d1_outlier(e, gt[i])) ++d1_count_;
    for (size_t s = 0; s < sigmas_.size(); ++s)
      if (e > sigmas_[s]) ++bad_counts_[s];
  }
  ++samples_;
}

EvalReport EvalAccumulator::report() const {
  if (count_ == 0) throw MetricError("eval: no valid pixels in any sample");
  EvalReport r;
  const double n = static_cast<double>(count_);
  r.epe = abs_sum_ / n;
  r.d1 = 100.0 * static_cast<double>(d1_count_) / n;
  for (size_t s = 0; s < sigmas_.size(); ++s) r.bad[sigmas_[s]] = 100.0 * static_cast<double>(bad_counts_[s]) / n;
  r.valid_pixels = count_;
  r.samples = samples_;
  return r;
}

namespace {
std::string sigma_key(double s) {
  std::ostringstream os;
  os << "bad_" << s;
  return os.str();
}
}  // namespace

std::string EvalReport::to_text() const {
  std::ostringstream os;
  os.precision(17);
  os << "epe=" << epe << '\n' << "d1=" << d1 << '\n';
  for (const auto& [s, v] : bad) os << sigma_key(s) << '=' << v << '\n';
  os << "valid_pixels=" << valid_pixels << '\n' << "samples=" << samples << '\n';
  return os.str();
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["epe"] = epe;
  j["d1"] = d1;
  nlohmann::ordered_json b = nlohmann::ordered_json::object();
  for (const auto& [s, v] : bad) {
    std::ostringstream k;
    k << s;
    b[k.str()] = v;
  }
  j["bad_sigma"] = b;
  j["valid_pixels"] = valid_pixels;
  j["samples"] = samples;
  return j.dump(2) + "\n";
}

#define ESM_INSTANTIATE_LOSS(T)                                                              \
  template Tensor<T> smooth_l1(const Tensor<T>&);                                            \
  template Tensor<T> valid_mask(const Tensor<T>&, T);                                        \
  template ScaledTarget<T> downscale_target(const Tensor<T>&, const Tensor<T>&, Index, Index); \
  template Tensor<T> masked_smooth_l1(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);  \
  template Tensor<T> multiscale_loss(const std::vector<DisparityMap<T>>&, const Tensor<T>&,   \
                                     const Tensor<T>&, const LossWeights&, LossStats*);

ESM_INSTANTIATE_LOSS(float)
ESM_INSTANTIATE_LOSS(double)

}  // namespace esm
