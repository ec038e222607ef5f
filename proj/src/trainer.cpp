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

#include "esm/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "esm/ops.hpp"
#include "esm/parallel.hpp"
#include "esm/serialize.hpp"
#include "json.hpp"

namespace esm {

using json = nlohmann::ordered_json;

// ---- optimiser ---------------------------------------------------------------

template <typename T>
void adamw_step(std::vector<Tensor<T>>& params, OptimState<T>& state, double lr, const AdamWConfig& cfg) {
  if (state.m.empty()) {
    for (auto& p : params) {
      state.m.emplace_back(static_cast<size_t>(p.numel()), T(0));
      state.v.emplace_back(static_cast<size_t>(p.numel()), T(0));
    }
  }
  if (state.m.size() != params.size()) throw std::invalid_argument("adamw: optimiser state does not match parameters");
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (size_t k = 0; k < params.size(); ++k) {
    auto& impl = *params[k].impl();
    auto& m = state.m[k];
    auto& v = state.v[k];
    if (m.size() != impl.data.size()) throw std::invalid_argument("adamw: moment size mismatch");
    const bool has = !impl.grad.empty();
    for (size_t i = 0; i < impl.data.size(); ++i) {
      const double g = has ? static_cast<double>(impl.grad[i]) : 0.0;
      double p = static_cast<double>(impl.data[i]) * (1.0 - lr * cfg.weight_decay);
      const double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * g;
      const double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      p -= lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg.eps);
      impl.data[i] = static_cast<T>(p);
    }
  }
}

template <typename T>
double clip_grad_norm(std::vector<Tensor<T>>& params, double max_norm) {
  double sq = 0;
  for (auto& p : params)
    for (T g : p.impl()->grad) sq += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const T s = static_cast<T>(max_norm / (norm + 1e-6));
    for (auto& p : params)
      for (T& g : p.impl()->grad) g *= s;
  }
  return norm;
}

template void adamw_step(std::vector<Tensor<float>>&, OptimState<float>&, double, const AdamWConfig&);
template void adamw_step(std::vector<Tensor<double>>&, OptimState<double>&, double, const AdamWConfig&);
template double clip_grad_norm(std::vector<Tensor<float>>&, double);
template double clip_grad_norm(std::vector<Tensor<double>>&, double);

// ---- schedule ----------------------------------------------------------------

double Schedule::lr_at(int epoch) const {
  int passed = 0;
  for (int m : milestones) passed += epoch >= m ? 1 : 0;
  return base_lr / std::pow(factor, passed);
}

void Schedule::validate() const {
  if (!(base_lr > 0) || !(factor >= 1)) throw ConfigError("schedule: need base_lr > 0 and factor >= 1");
  for (size_t i = 1; i < milestones.size(); ++i)
    if (milestones[i] <= milestones[i - 1]) throw ConfigError("schedule: milestones must be strictly increasing");
}

Schedule scaled_schedule(int epochs, double base_lr) {
  if (epochs < 1) throw ConfigError("schedule: epochs must be >= 1");
  Schedule s;
  s.base_lr = base_lr;
  s.milestones.clear();
  for (int m : {20, 32, 40, 48, 56}) {
    const int lo = s.milestones.empty() ? 1 : s.milestones.back() + 1;
    s.milestones.push_back(std::max(lo, static_cast<int>(std::lround(m * epochs / 60.0))));
  }
  return s;
}

// ---- checkpoints ---------------------------------------------------------------

namespace {

constexpr const char* kCheckpointFormat = "esmstereo-checkpoint";

std::string read_text(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw DataError("cannot open " + p.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

json shape_json(const Shape& s) {
  json a = json::array();
  for (Index d : s) a.push_back(d);
  return a;
}

template <typename T>
Tensor<T> moment_tensor(const std::vector<T>& v, const Shape& shape) {
  return Tensor<T>(shape, v);
}

}  // namespace

template <typename T>
void save_checkpoint(const fs::path& dir, const StereoModel<T>& model, const OptimState<T>* optim) {
  fs::path target = fs::absolute(dir).lexically_normal();
  if (target.filename().empty()) target = target.parent_path();
  if (!target.parent_path().empty()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.parent_path() / (target.filename().string() + ".partial");
  fs::remove_all(tmp);
  fs::create_directories(tmp / "params");

  json manifest;
  manifest["format"] = kCheckpointFormat;
  manifest["version"] = 1;
  manifest["dtype"] = std::string(dtype_name(dtype_of<T>()));
  manifest["config"] = model_keys(model.config());
  json params = json::array();
  const ParamSet<T> ps = model.parameters();
  for (const auto& p : ps) {
    const std::string file = "params/" + p.name + ".esmt";
    save_tensor(tmp / file, p.tensor);
    params.push_back({{"name", p.name},
                      {"file", file},
                      {"shape", shape_json(p.tensor.shape())},
                      {"dtype", std::string(dtype_name(dtype_of<T>()))},
                      {"trainable", p.trainable}});
  }
  manifest["params"] = params;
  if (optim && !optim->m.empty()) {
    fs::create_directories(tmp / "optim");
    json files = json::array();
    size_t k = 0;
    for (const auto& p : ps) {
      if (!p.trainable) continue;
      if (k >= optim->m.size()) throw std::invalid_argument("save_checkpoint: optimiser state too short");
      const std::string m = "optim/" + p.name + ".m.esmt", v = "optim/" + p.name + ".v.esmt";
      save_tensor(tmp / m, moment_tensor(optim->m[k], p.tensor.shape()));
      save_tensor(tmp / v, moment_tensor(optim->v[k], p.tensor.shape()));
      files.push_back({{"name", p.name}, {"m", m}, {"v", v}});
      ++k;
    }
    manifest["optimizer"] = {{"step", optim->step}, {"moments", files}};
  }
  atomic_write(tmp / "config.txt", format_key_values(model_keys(model.config())));
  atomic_write(tmp / "manifest.json", manifest.dump(2) + "\n");

  const fs::path old = target.parent_path() / (target.filename().string() + ".old");
  fs::remove_all(old);
  if (fs::exists(target)) fs::rename(target, old);
  fs::rename(tmp, target);
  fs::remove_all(old);
}

ModelConfig read_checkpoint_config(const fs::path& dir) {
  KeyValues kv = parse_key_values(read_text(dir / "config.txt"));
  ModelConfig cfg;
  if (auto it = kv.find("variant"); it != kv.end()) {
    cfg = make_model_config(parse_variant(it->second), VolumeKind::kGwc);
  }
  apply_model_keys(cfg, kv);
  cfg.validate();
  return cfg;
}

template <typename T>
void load_checkpoint(const fs::path& dir, StereoModel<T>& model, OptimState<T>* optim) {
  json manifest;
  try {
    manifest = json::parse(read_text(dir / "manifest.json"));
  } catch (const json::exception& e) {
    throw DataError(dir.string() + ": bad checkpoint manifest: " + e.what());
  }
  if (manifest.value("format", "") != kCheckpointFormat) throw DataError(dir.string() + ": not a checkpoint");
  std::map<std::string, std::string> files;
  for (const auto& p : manifest.at("params")) files[p.at("name").get<std::string>()] = p.at("file").get<std::string>();

  ParamSet<T> ps = model.parameters();
  for (auto& p : ps) {
    auto it = files.find(p.name);
    if (it == files.end()) throw DataError("checkpoint is missing " + p.name);
    // Either precision loads; values are converted.
    TensorHeader h;
    Tensor<T> t;
    try {
      t = load_tensor<T>(dir / it->second, &h);
    } catch (const FormatError& e) {
      throw DataError(std::string("checkpoint tensor ") + p.name + ": " + e.what());
    }
    if (h.shape != p.tensor.shape()) {
      throw DataError("checkpoint shape mismatch for " + p.name + ": " + to_string(h.shape) + " vs " +
                      to_string(p.tensor.shape()));
    }
    std::copy(t.data().begin(), t.data().end(), p.tensor.mutable_data().begin());
    files.erase(it);
  }
  if (!files.empty()) throw DataError("checkpoint has unknown parameter " + files.begin()->first);

  if (optim) {
    *optim = OptimState<T>{};
    if (!manifest.contains("optimizer")) return;
    const auto& o = manifest["optimizer"];
    optim->step = o.at("step").get<long long>();
    std::map<std::string, std::pair<std::string, std::string>> mv;
    for (const auto& e : o.at("moments")) {
      mv[e.at("name").get<std::string>()] = {e.at("m").get<std::string>(), e.at("v").get<std::string>()};
    }
    for (auto& p : ps) {
      if (!p.trainable) continue;
      auto it = mv.find(p.name);
      if (it == mv.end()) throw DataError("checkpoint optimiser state is missing " + p.name);
      Tensor<T> m = load_tensor<T>(dir / it->second.first), v = load_tensor<T>(dir / it->second.second);
      if (m.shape() != p.tensor.shape() || v.shape() != p.tensor.shape()) {
        throw DataError("checkpoint optimiser shape mismatch for " + p.name);
      }
      optim->m.emplace_back(m.data().begin(), m.data().end());
      optim->v.emplace_back(v.data().begin(), v.data().end());
    }
  }
}

template void save_checkpoint(const fs::path&, const StereoModel<float>&, const OptimState<float>*);
template void save_checkpoint(const fs::path&, const StereoModel<double>&, const OptimState<double>*);
template void load_checkpoint(const fs::path&, StereoModel<float>&, OptimState<float>*);
template void load_checkpoint(const fs::path&, StereoModel<double>&, OptimState<double>*);

// ---- training ------------------------------------------------------------------

void apply_train_keys(TrainOptions& t, KeyValues& kv) {
  auto take = [&](const char* key, auto&& fn) {
    if (auto it = kv.find(key); it != kv.end()) {
      try {
        fn(it->second);
      } catch (const std::logic_error&) {
        throw ConfigError(std::string(key) + ": bad value '" + it->second + "'");
      }
      kv.erase(it);
    }
  };
  take("train.epochs", [&](const std::string& v) { t.epochs = std::stoi(v); });
  take("train.steps", [&](const std::string& v) { t.max_steps = std::stoi(v); });
  take("train.batch", [&](const std::string& v) { t.batch = std::stoll(v); });
  take("train.crop", [&](const std::string& v) {
    const auto x = v.find('x');
    if (x == std::string::npos) throw ConfigError("train.crop is HxW");
    t.crop_h = std::stoll(v.substr(0, x));
    t.crop_w = std::stoll(v.substr(x + 1));
  });
  take("train.random_crop", [&](const std::string& v) { t.random_crop = v == "1" || v == "true"; });
  take("train.lr", [&](const std::string& v) { t.schedule.base_lr = std::stod(v); });
  take("train.weight_decay", [&](const std::string& v) { t.adamw.weight_decay = std::stod(v); });
  take("train.clip", [&](const std::string& v) { t.clip_norm = std::stod(v); });
  take("train.checkpoint_every", [&](const std::string& v) { t.checkpoint_every = std::stoi(v); });
  take("train.milestones", [&](const std::string& v) {
    t.schedule.milestones.clear();
    std::istringstream is(v);
    std::string item;
    while (std::getline(is, item, ',')) t.schedule.milestones.push_back(std::stoi(item));
  });
  if (t.epochs < 1 || t.batch < 1 || t.max_steps < 0) throw ConfigError("train: epochs and batch must be >= 1");
}

Tensor<float> supervision_mask(const Tensor<float>& gt, const Tensor<float>& present, Index d_max) {
  if (gt.shape() != present.shape()) throw ShapeError("supervision_mask: shape mismatch");
  std::vector<float> m(gt.data().size());
  const float hi = static_cast<float>(d_max);
  for (size_t i = 0; i < m.size(); ++i) {
    const float d = gt.data()[i];
    m[i] = present.data()[i] > 0.5f && d > 0.0f && d < hi ? 1.0f : 0.0f;
  }
  return Tensor<float>(gt.shape(), std::move(m));
}

namespace {

std::vector<float> snapshot(const std::vector<Tensor<float>>& params) {
  std::vector<float> out;
  for (auto& p : params) out.insert(out.end(), p.data().begin(), p.data().end());
  return out;
}

void restore(std::vector<Tensor<float>>& params, const std::vector<float>& snap) {
  size_t o = 0;
  for (auto& p : params) {
    auto d = p.mutable_data();
    std::copy(snap.begin() + static_cast<std::ptrdiff_t>(o), snap.begin() + static_cast<std::ptrdiff_t>(o + d.size()),
              d.begin());
    o += d.size();
  }
}

bool params_finite(const std::vector<Tensor<float>>& params) {
  for (auto& p : params)
    if (!all_finite(p.data())) return false;
  return true;
}

}  // namespace

TrainResult train(StereoModel<float>& model, const std::vector<StereoSample>& data, const TrainOptions& opts,
                  OptimState<float>* state) {
  opts.schedule.validate();
  if (data.empty()) throw DataError("train: no samples");
  if (opts.batch < 1 || static_cast<size_t>(opts.batch) > data.size()) {
    throw ConfigError("train: batch must be in [1, number of samples]");
  }
  OptimState<float> local;
  OptimState<float>& st = state ? *state : local;
  std::vector<Tensor<float>> params = model.trainable();
  // Everything the step may touch, running statistics included.
  std::vector<Tensor<float>> state_tensors;
  for (auto& p : model.parameters()) state_tensors.push_back(p.tensor);
  std::mt19937_64 rng(opts.seed);
  const Index d_max = model.config().d_max;
  const auto& weights = model.config().loss;

  std::vector<float> last_good;
  OptimState<float> st_good;
  auto abort_numerical = [&](const std::string& why) {
    restore(state_tensors, last_good);
    st = st_good;
    if (!opts.checkpoint_dir.empty()) save_checkpoint(opts.checkpoint_dir, model, &st);
    throw NumericalError(why + (opts.checkpoint_dir.empty()
                                    ? std::string()
                                    : "; last finite parameters saved to " + opts.checkpoint_dir.string()));
  };

  TrainResult res;
  std::vector<size_t> order(data.size());
  std::iota(order.begin(), order.end(), size_t{0});
  const size_t per_epoch = data.size() / static_cast<size_t>(opts.batch);
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    const double lr = opts.schedule.lr_at(epoch);
    std::shuffle(order.begin(), order.end(), rng);
    for (size_t b = 0; b < per_epoch; ++b) {
      if (opts.max_steps > 0 && res.steps >= opts.max_steps) break;
      std::vector<const StereoSample*> picked;
      for (Index i = 0; i < opts.batch; ++i) picked.push_back(&data[order[b * static_cast<size_t>(opts.batch) + static_cast<size_t>(i)]]);
      Batch batch = make_batch(picked, opts.crop_h, opts.crop_w, opts.random_crop, rng);
      const Tensor<float> mask = supervision_mask(batch.gt, batch.mask, d_max);

      last_good = snapshot(state_tensors);
      st_good = st;
      for (auto& p : params) p.zero_grad();
      ModelOutput<float> out = model.forward(batch.left, batch.right, true);
      Tensor<float> loss = multiscale_loss(out.maps, batch.gt, mask, weights);
      if (!loss.defined()) {
        // No supervised pixel in the whole batch.
        res.losses.push_back(0.0);
        ++res.steps;
        continue;
      }
      const double lv = static_cast<double>(loss.item());
      if (!std::isfinite(lv)) abort_numerical("non-finite loss at step " + std::to_string(res.steps));
      try {
        backward(loss);
      } catch (const NumericalError& e) {
        abort_numerical(std::string("non-finite gradient at step ") + std::to_string(res.steps) + ": " + e.what());
      }
      if (opts.clip_norm > 0) clip_grad_norm(params, opts.clip_norm);
      adamw_step(params, st, lr, opts.adamw);
      if (!params_finite(state_tensors)) {
        abort_numerical("non-finite parameters after step " + std::to_string(res.steps));
      }
      res.losses.push_back(lv);
      ++res.steps;
      if (opts.on_step) opts.on_step(res.steps, epoch, lv);
    }
    res.epochs = epoch + 1;
    if (!opts.checkpoint_dir.empty() && opts.checkpoint_every > 0 && (epoch + 1) % opts.checkpoint_every == 0) {
      save_checkpoint(opts.checkpoint_dir, model, &st);
    }
    if (opts.max_steps > 0 && res.steps >= opts.max_steps) break;
  }
  for (auto& p : params) p.zero_grad();
  if (!opts.checkpoint_dir.empty()) save_checkpoint(opts.checkpoint_dir, model, &st);
  return res;
}

// ---- evaluation ------------------------------------------------------------------

Tensor<float> infer_disparity(StereoModel<float>& model, const Tensor<float>& left, const Tensor<float>& right) {
  if (left.rank() != 3 || left.dim(0) != 3 || left.shape() != right.shape()) {
    throw ShapeError("infer: expected two [3, H, W] images of equal size");
  }
  const Index h = left.dim(1), w = left.dim(2);
  const Index ph = (h + 15) / 16 * 16, pw = (w + 15) / 16 * 16;
  const Index top = ph - h;
  auto pad = [&](const Tensor<float>& img) {
    if (ph == h && pw == w) return reshape(img, {1, 3, h, w});
    std::vector<float> v(static_cast<size_t>(3 * ph * pw), 0.0f);
    for (Index c = 0; c < 3; ++c)
      for (Index y = 0; y < h; ++y)
        std::copy_n(img.data().begin() + (c * h + y) * w, w, v.begin() + (c * ph + y + top) * pw);
    return Tensor<float>({1, 3, ph, pw}, std::move(v));
  };
  NoGradGuard ng;
  ModelOutput<float> out = model.forward(pad(left), pad(right), false);
  const Tensor<float>& full = out.final_map().data;
  std::vector<float> d(static_cast<size_t>(h * w));
  for (Index y = 0; y < h; ++y) std::copy_n(full.data().begin() + (y + top) * pw, w, d.begin() + y * w);
  return Tensor<float>({h, w}, std::move(d));
}

void accumulate(EvalAccumulator& acc, const Tensor<float>& pred, const StereoSample& s, Index d_max) {
  if (pred.numel() != s.gt.numel()) throw ShapeError("evaluate: prediction and ground truth sizes differ");
  const Tensor<float> m = supervision_mask(s.gt, s.mask, d_max);
  std::vector<double> p(pred.data().begin(), pred.data().end()), g(s.gt.data().begin(), s.gt.data().end());
  std::vector<unsigned char> mk(m.data().size());
  for (size_t i = 0; i < mk.size(); ++i) mk[i] = m.data()[i] > 0.5f ? 1 : 0;
  acc.add(p, g, mk);
}

EvalReport evaluate(StereoModel<float>& model, const std::vector<StereoSample>& data) {
  // Samples run in parallel; accumulation order stays fixed.
  std::vector<Tensor<float>> preds(data.size());
  parallel_for(data.size(), [&](size_t i) { preds[i] = infer_disparity(model, data[i].left, data[i].right); });
  EvalAccumulator acc;
  for (size_t i = 0; i < data.size(); ++i) accumulate(acc, preds[i], data[i], model.config().d_max);
  return acc.report();
}

// ---- overfit harness --------------------------------------------------------------

OverfitOptions overfit_preset(VolumeKind kind, std::uint64_t seed) {
  OverfitOptions o;
  o.model = make_model_config(Variant::kS, kind, 32);
  o.model.topk = 2;
  o.model.seed = seed;
  o.pairs = 8;
  o.data.height = 64;
  o.data.width = 128;
  o.data.d_max = 16;
  o.data.block = 16;
  o.data.seed = seed * 1000;
  o.train.batch = 2;
  o.train.crop_h = 64;
  o.train.crop_w = 128;
  o.train.random_crop = false;
  o.train.max_steps = 500;
  o.train.epochs = 125;  // 8 pairs / batch 2 = 4 steps per epoch
  o.train.schedule = scaled_schedule(o.train.epochs, 1e-3);
  o.train.clip_norm = 5.0;
  o.train.seed = seed;
  return o;
}

OverfitResult overfit_harness(const OverfitOptions& opts) {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<StereoSample> data;
  for (int i = 0; i < opts.pairs; ++i) {
    RandomDotOptions d = opts.data;
    d.seed = opts.data.seed + static_cast<std::uint64_t>(i);
    data.push_back(generate_random_dot_pair(d));
  }
  StereoModel<float> model(opts.model);
  OverfitResult r;
  r.before = evaluate(model, data);
  r.train = train(model, data, opts.train);
  r.after = evaluate(model, data);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace esm
