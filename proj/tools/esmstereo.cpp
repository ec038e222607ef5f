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

// esmstereo: train | eval | infer | gradcheck | synth
//
// Exit codes: 0 ok, 1 usage or config error, 2 data error, 3 numerical failure.

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "esm/gradsuite.hpp"
#include "esm/ops.hpp"
#include "esm/parallel.hpp"
#include "esm/serialize.hpp"
#include "esm/trainer.hpp"
#include "esm/visualize.hpp"

namespace {

using namespace esm;

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

struct ModelFlags {
  std::string config_file;
  std::string variant = "S";
  std::string kind = "gwc";
  Index dmax = 32;
  std::uint64_t seed = 1;
  CLI::App* app = nullptr;

  void add(CLI::App* sub) {
    app = sub;
    sub->add_option("--config", config_file, "key = value config file; flags override it")->check(CLI::ExistingFile);
    sub->add_option("--variant", variant, "S, M or L")->check(CLI::IsMember({"S", "M", "L", "s", "m", "l"}));
    sub->add_option("--kind", kind, "cost volume: gwc or nc")->check(CLI::IsMember({"gwc", "nc"}));
    sub->add_option("--dmax", dmax, "maximum disparity, a multiple of 16")->check(CLI::PositiveNumber);
    sub->add_option("--seed", seed, "seed for initialisation, shuffling and synthesis");
  }
  bool given(const char* flag) const { return app->count(flag) > 0; }

  // Config file first, explicit flags on top. Returns unconsumed keys.
  KeyValues keys() const {
    KeyValues kv;
    if (!config_file.empty()) {
      std::ifstream is(config_file);
      std::ostringstream ss;
      ss << is.rdbuf();
      kv = parse_key_values(ss.str());
    }
    if (given("--variant")) kv["variant"] = variant;
    if (given("--kind")) kv["kind"] = kind;
    if (given("--dmax")) kv["dmax"] = std::to_string(dmax);
    if (given("--seed")) kv["seed"] = std::to_string(seed);
    return kv;
  }

  ModelConfig model(KeyValues& kv) const {
    ModelConfig cfg = make_model_config(Variant::kS, VolumeKind::kGwc, 32);
    apply_model_keys(cfg, kv);
    cfg.validate();
    return cfg;
  }

  // Model from a checkpoint; explicit model flags must agree with it.
  ModelConfig from_checkpoint(const std::string& dir) const {
    ModelConfig cfg = read_checkpoint_config(dir);
    auto clash = [&](const char* flag, const std::string& want, const std::string& have) {
      if (given(flag) && want != have) {
        throw ConfigError(std::string(flag) + " " + want + " disagrees with the checkpoint (" + have + ")");
      }
    };
    clash("--variant", parse_variant(variant) == cfg.variant ? to_string(cfg.variant) : variant, to_string(cfg.variant));
    clash("--kind", kind, to_string(cfg.kind));
    clash("--dmax", std::to_string(dmax), std::to_string(cfg.d_max));
    return cfg;
  }
};

void reject_leftovers(const KeyValues& kv) {
  if (!kv.empty()) throw ConfigError("unknown config key '" + kv.begin()->first + "'");
}

std::vector<StereoSample> load_samples(const std::string& manifest) {
  std::vector<StereoSample> out;
  for (const auto& e : read_manifest(manifest)) out.push_back(load_sample(e));
  if (out.empty()) throw DataError(manifest + ": no samples");
  return out;
}

Tensor<float> plane(const Tensor<float>& t) {
  // [1, H, W] or [H, W] -> [H, W]
  return t.rank() == 3 ? reshape(t, {t.dim(1), t.dim(2)}) : t;
}

void write_report(const fs::path& out, const EvalReport& r) {
  fs::create_directories(out);
  atomic_write(out / "report.txt", r.to_text());
  atomic_write(out / "report.json", r.to_json());
}

// ---- train -----------------------------------------------------------------------

struct TrainFlags {
  ModelFlags model;
  std::string manifest, checkpoint, out;
  int epochs = 0, steps = 0, log_every = 10;
  bool resume = false, overfit = false;
};

int cmd_train(const TrainFlags& f) {
  KeyValues kv = f.model.keys();
  ModelConfig cfg = f.model.model(kv);
  TrainOptions t;
  if (f.overfit) {
    OverfitOptions preset = overfit_preset(cfg.kind, cfg.seed);
    cfg.topk = preset.model.topk;
    t = preset.train;
  }
  apply_train_keys(t, kv);
  reject_leftovers(kv);
  if (f.epochs > 0) t.epochs = f.epochs;
  if (f.steps > 0) t.max_steps = f.steps;
  if (f.epochs > 0 && !f.overfit) t.schedule = scaled_schedule(t.epochs, t.schedule.base_lr);
  t.seed = cfg.seed;
  t.checkpoint_dir = f.checkpoint;

  std::vector<StereoSample> data;
  if (f.overfit && f.manifest.empty()) {
    OverfitOptions preset = overfit_preset(cfg.kind, cfg.seed);
    for (int i = 0; i < preset.pairs; ++i) {
      RandomDotOptions r = preset.data;
      r.seed += static_cast<std::uint64_t>(i);
      data.push_back(generate_random_dot_pair(r));
    }
  } else {
    if (f.manifest.empty()) throw CLI::RequiredError("--manifest");
    data = load_samples(f.manifest);
  }

  StereoModel<float> model(cfg);
  OptimState<float> st;
  if (f.resume) load_checkpoint(f.checkpoint, model, &st);
  std::ostringstream curve;
  curve << "step,epoch,loss\n";
  t.on_step = [&](int step, int epoch, double loss) {
    curve << step << "," << epoch << "," << std::setprecision(9) << loss << "\n";
    if (f.log_every > 0 && step % f.log_every == 0) {
      std::cout << "step " << step << " epoch " << epoch << " lr " << t.schedule.lr_at(epoch) << " loss " << loss
                << std::endl;
    }
  };
  std::cout << "training " << to_string(cfg.variant) << "-" << to_string(cfg.kind) << " dmax=" << cfg.d_max
            << " on " << data.size() << " samples, " << model.trainable().size() << " parameter tensors"
            << std::endl;
  TrainResult r = train(model, data, t, &st);
  std::cout << "done: " << r.steps << " steps, " << r.epochs << " epochs, checkpoint " << f.checkpoint << std::endl;
  if (!f.out.empty()) {
    fs::create_directories(f.out);
    atomic_write(fs::path(f.out) / "loss.csv", curve.str());
    const EvalReport rep = evaluate(model, data);
    write_report(f.out, rep);
    std::cout << rep.to_text();
  }
  return kOk;
}

// ---- eval ------------------------------------------------------------------------

struct EvalFlags {
  ModelFlags model;
  std::string manifest, checkpoint, out = ".";
};

int cmd_eval(const EvalFlags& f) {
  const auto entries = read_manifest(f.manifest);
  if (entries.empty()) throw DataError(f.manifest + ": no samples");
  std::unique_ptr<StereoModel<float>> model;
  Index d_max = f.model.dmax;
  if (!f.checkpoint.empty()) {
    model = std::make_unique<StereoModel<float>>(f.model.from_checkpoint(f.checkpoint));
    load_checkpoint(f.checkpoint, *model);
    d_max = model->config().d_max;
  }
  std::vector<Tensor<float>> preds(entries.size());
  std::vector<StereoSample> samples(entries.size());
  parallel_for(entries.size(), [&](size_t i) {
    const auto& e = entries[i];
    if (e.paths.size() == 2) {
      // Stored prediction against ground truth.
      DisparityImage gt = read_disparity(e.paths[1]);
      samples[i].gt = gt.disparity;
      samples[i].mask = gt.mask;
      preds[i] = read_disparity(e.paths[0]).disparity;
    } else {
      if (!model) throw DataError("manifest line " + std::to_string(e.line) + ": three paths need --checkpoint");
      samples[i] = load_sample(e);
      preds[i] = infer_disparity(*model, samples[i].left, samples[i].right);
    }
    if (preds[i].numel() != samples[i].gt.numel()) {
      throw DataError("manifest line " + std::to_string(e.line) + ": prediction and ground truth sizes differ");
    }
  });
  EvalAccumulator acc;
  for (size_t i = 0; i < entries.size(); ++i) accumulate(acc, preds[i], samples[i], d_max);
  const EvalReport r = acc.report();
  write_report(f.out, r);
  std::cout << r.to_text();
  return kOk;
}

// ---- infer -----------------------------------------------------------------------

struct InferFlags {
  ModelFlags model;
  std::string manifest, left, right, gt, checkpoint, out;
  bool zero_refinement = false, dump_maps = false, dump_volume = false;
};

int cmd_infer(const InferFlags& f) {
  ModelConfig cfg;
  if (!f.checkpoint.empty()) {
    cfg = f.model.from_checkpoint(f.checkpoint);
  } else {
    KeyValues kv = f.model.keys();
    cfg = f.model.model(kv);
    reject_leftovers(kv);
    std::cerr << "warning: no --checkpoint, using an untrained model (seed " << cfg.seed << ")\n";
  }
  StereoModel<float> model(cfg);
  if (!f.checkpoint.empty()) load_checkpoint(f.checkpoint, model);
  if (f.zero_refinement) model.zero_refinement_heads();

  struct Job {
    std::string id;
    Tensor<float> left, right, gt, mask;
  };
  std::vector<Job> jobs;
  if (!f.manifest.empty()) {
    for (const auto& e : read_manifest(f.manifest)) {
      Job j;
      j.id = e.paths[0].stem().string();
      j.left = read_image(e.paths[0]);
      if (e.paths.size() < 2) throw DataError("manifest line " + std::to_string(e.line) + ": need left and right");
      j.right = read_image(e.paths[1]);
      if (e.paths.size() == 3) {
        DisparityImage g = read_disparity(e.paths[2]);
        j.gt = g.disparity;
        j.mask = g.mask;
      }
      jobs.push_back(std::move(j));
    }
  } else {
    if (f.left.empty() || f.right.empty()) throw CLI::ValidationError("infer", "give --manifest or --left and --right");
    Job j;
    j.id = fs::path(f.left).stem().string();
    j.left = read_image(f.left);
    j.right = read_image(f.right);
    if (!f.gt.empty()) {
      DisparityImage g = read_disparity(f.gt);
      j.gt = g.disparity;
      j.mask = g.mask;
    }
    jobs.push_back(std::move(j));
  }

  const fs::path out(f.out);
  fs::create_directories(out);
  EvalAccumulator acc;
  bool scored = false;
  for (const auto& j : jobs) {
    if (j.left.shape() != j.right.shape()) throw DataError(j.id + ": left and right sizes differ");
    const Tensor<float> d = infer_disparity(model, j.left, j.right);
    const Index h = d.dim(0), w = d.dim(1);
    write_pfm(out / (j.id + ".pfm"), d);
    write_rgb8(out / (j.id + "_color.png"), colorize_disparity(d, static_cast<double>(cfg.d_max)), h, w);
    if (j.gt.defined()) {
      const Tensor<float> m = supervision_mask(j.gt, j.mask, cfg.d_max);
      write_rgb8(out / (j.id + "_error.png"), error_map(d, plane(j.gt), plane(m)), h, w);
      StereoSample s;
      s.gt = j.gt;
      s.mask = j.mask;
      accumulate(acc, d, s, cfg.d_max);
      scored = true;
    }
    if (f.dump_maps || f.dump_volume) {
      if (h % 16 || w % 16) throw DataError(j.id + ": --dump-maps/--dump-volume need sizes divisible by 16");
      NoGradGuard ng;
      ModelOutput<float> o = model.forward(reshape(j.left, {1, 3, h, w}), reshape(j.right, {1, 3, h, w}), false);
      if (f.dump_maps) {
        for (size_t k = 0; k < o.maps.size(); ++k) {
          const auto& m = o.maps[k];
          write_pfm(out / (j.id + "_map" + std::to_string(k) + ".pfm"), reshape(m.data, {m.height(), m.width()}));
        }
      }
      if (f.dump_volume) save_tensor(out / (j.id + "_volume.esmt"), o.volume);
    }
    std::cout << j.id << ": " << h << "x" << w << " -> " << (out / (j.id + ".pfm")).string() << "\n";
  }
  if (scored) {
    const EvalReport r = acc.report();
    write_report(out, r);
    std::cout << r.to_text();
  }
  return kOk;
}

// ---- gradcheck -------------------------------------------------------------------

int cmd_gradcheck(int seeds, const std::string& filter) {
  GradSuiteOptions o;
  o.seeds = seeds;
  o.filter = filter;
  int failed = 0;
  o.on_case = [&](const GradSuiteResult& r) {
    failed += r.passed() ? 0 : 1;
    std::cout << std::left << std::setw(22) << r.name << (r.passed() ? "ok    " : "FAILED") << " seeds=" << r.seeds
              << " max_rel_err=" << std::scientific << std::setprecision(2) << r.max_rel_error << std::defaultfloat
              << " " << std::fixed << std::setprecision(2) << r.seconds << "s" << std::defaultfloat << "\n";
    if (!r.passed()) std::cout << "    " << r.worst << "\n";
  };
  const auto results = run_grad_suite(o);
  if (results.empty()) throw ConfigError("no gradient case matches '" + filter + "'");
  std::cout << results.size() - static_cast<size_t>(failed) << "/" << results.size() << " cases passed\n";
  return failed ? kNumerical : kOk;
}

// ---- synth -----------------------------------------------------------------------

struct SynthFlags {
  std::string out;
  int count = 8;
  std::uint64_t seed = 1;
  Index height = 64, width = 128, range = 16, block = 16, dot = 2;
};

std::vector<std::uint8_t> to_rgb8(const Tensor<float>& chw) {
  const Index h = chw.dim(1), w = chw.dim(2);
  std::vector<std::uint8_t> rgb(static_cast<size_t>(3 * h * w));
  for (Index c = 0; c < 3; ++c)
    for (Index i = 0; i < h * w; ++i)
      rgb[static_cast<size_t>(i * 3 + c)] =
          static_cast<std::uint8_t>(std::lround(chw.data()[static_cast<size_t>(c * h * w + i)] * 255.0f));
  return rgb;
}

int cmd_synth(const SynthFlags& f) {
  const fs::path out(f.out);
  for (const char* d : {"left", "right", "disp"}) fs::create_directories(out / d);
  std::vector<std::vector<std::string>> rows;
  for (int i = 0; i < f.count; ++i) {
    RandomDotOptions o;
    o.height = f.height;
    o.width = f.width;
    o.d_max = f.range;
    o.block = f.block;
    o.dot = f.dot;
    o.seed = f.seed * 1000 + static_cast<std::uint64_t>(i);
    StereoSample s = generate_random_dot_pair(o);
    char name[32];
    std::snprintf(name, sizeof name, "%06d", i);
    write_rgb8(out / "left" / (std::string(name) + ".png"), to_rgb8(s.left), f.height, f.width);
    write_rgb8(out / "right" / (std::string(name) + ".png"), to_rgb8(s.right), f.height, f.width);
    // Pixels without ground truth are stored as +inf.
    std::vector<float> g(s.gt.data().begin(), s.gt.data().end());
    for (size_t k = 0; k < g.size(); ++k)
      if (s.mask.data()[k] == 0.0f) g[k] = std::numeric_limits<float>::infinity();
    write_pfm(out / "disp" / (std::string(name) + ".pfm"), Tensor<float>({f.height, f.width}, std::move(g)));
    rows.push_back({"left/" + std::string(name) + ".png", "right/" + std::string(name) + ".png",
                    "disp/" + std::string(name) + ".pfm"});
  }
  atomic_write(out / "manifest.txt", format_manifest(rows));
  std::cout << "wrote " << f.count << " pairs and " << (out / "manifest.txt").string() << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Efficient stereo matching network: training, evaluation and inference on the CPU"};
  app.require_subcommand(1);

  TrainFlags tf;
  auto* train = app.add_subcommand("train", "train a model from a manifest and write a checkpoint");
  tf.model.add(train);
  train->add_option("--manifest", tf.manifest, "left right gt per line")->check(CLI::ExistingFile);
  train->add_option("--checkpoint", tf.checkpoint, "checkpoint directory to write")->required();
  train->add_option("--out", tf.out, "directory for loss.csv and a training-set report");
  train->add_option("--epochs", tf.epochs, "epochs; milestones are rescaled to this length")->check(CLI::PositiveNumber);
  train->add_option("--steps", tf.steps, "stop after this many steps")->check(CLI::PositiveNumber);
  train->add_option("--log-every", tf.log_every, "progress line every N steps (0 = quiet)");
  train->add_flag("--resume", tf.resume, "continue from --checkpoint, optimiser state included");
  train->add_flag("--overfit", tf.overfit, "desk overfit preset; without --manifest trains on 8 random-dot pairs");

  EvalFlags ef;
  auto* eval = app.add_subcommand("eval", "score a manifest and write report.txt / report.json");
  ef.model.add(eval);
  eval->add_option("--manifest", ef.manifest, "pred gt, or left right gt, per line")->required()->check(CLI::ExistingFile);
  eval->add_option("--checkpoint", ef.checkpoint, "checkpoint for left/right/gt lines")->check(CLI::ExistingDirectory);
  eval->add_option("--out", ef.out, "report directory")->capture_default_str();

  InferFlags inf;
  auto* infer = app.add_subcommand("infer", "write disparity PFM, colour PNG and error PNG per pair");
  inf.model.add(infer);
  infer->add_option("--manifest", inf.manifest, "left right [gt] per line")->check(CLI::ExistingFile);
  infer->add_option("--left", inf.left, "left image")->check(CLI::ExistingFile);
  infer->add_option("--right", inf.right, "right image")->check(CLI::ExistingFile);
  infer->add_option("--gt", inf.gt, "ground truth for the error map")->check(CLI::ExistingFile);
  infer->add_option("--checkpoint", inf.checkpoint, "checkpoint directory")->check(CLI::ExistingDirectory);
  infer->add_option("--out", inf.out, "output directory")->required();
  infer->add_flag("--zero-refinement", inf.zero_refinement, "zero every refinement head after loading");
  infer->add_flag("--dump-maps", inf.dump_maps, "also write every intermediate disparity map");
  infer->add_flag("--dump-volume", inf.dump_volume, "also write the raw cost volume (ESMT)");

  int gc_seeds = 20;
  std::string gc_filter;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every op and block (64-bit)");
  gradcheck->add_option("--seeds", gc_seeds, "random instances per case")->capture_default_str()->check(CLI::PositiveNumber);
  gradcheck->add_option("--filter", gc_filter, "only cases whose name contains this");

  SynthFlags sf;
  auto* synth = app.add_subcommand("synth", "write random-dot stereo pairs and a manifest");
  synth->add_option("--out", sf.out, "output directory")->required();
  synth->add_option("--count", sf.count, "number of pairs")->capture_default_str()->check(CLI::PositiveNumber);
  synth->add_option("--seed", sf.seed, "seed")->capture_default_str();
  synth->add_option("--height", sf.height, "image height (multiple of 16)")->capture_default_str();
  synth->add_option("--width", sf.width, "image width (multiple of 16)")->capture_default_str();
  synth->add_option("--range", sf.range, "disparities drawn from [0, range)")->capture_default_str();
  synth->add_option("--block", sf.block, "side of the constant-disparity blocks")->capture_default_str();
  synth->add_option("--dot", sf.dot, "side of one dot")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    if (*train) return cmd_train(tf);
    if (*eval) return cmd_eval(ef);
    if (*infer) return cmd_infer(inf);
    if (*gradcheck) return cmd_gradcheck(gc_seeds, gc_filter);
    if (*synth) return cmd_synth(sf);
  } catch (const CLI::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const FormatError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const ShapeError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}
