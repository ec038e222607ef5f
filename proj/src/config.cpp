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

#include "esm/config.hpp"

#include <charconv>
#include <sstream>

namespace esm {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::kS: return "S";
    case Variant::kM: return "M";
    case Variant::kL: return "L";
  }
  return "?";
}

std::string to_string(VolumeKind k) { return k == VolumeKind::kGwc ? "gwc" : "nc"; }

Variant parse_variant(const std::string& s) {
  if (s == "S" || s == "s") return Variant::kS;
  if (s == "M" || s == "m") return Variant::kM;
  if (s == "L" || s == "l") return Variant::kL;
  throw ConfigError("unknown variant '" + s + "' (expected S, M or L)");
}

VolumeKind parse_kind(const std::string& s) {
  if (s == "gwc") return VolumeKind::kGwc;
  if (s == "nc") return VolumeKind::kNormCorr;
  throw ConfigError("unknown cost-volume kind '" + s + "' (expected gwc or nc)");
}

Index BackboneConfig::channels_at(int scale) const {
  switch (scale) {
    case 1: return guide1;
    case 2: return guide2;
    case 4: return c4;
    case 8: return c8;
    case 16: return c16;
    default: throw ConfigError("no feature map at scale 1/" + std::to_string(scale));
  }
}

Index EsmConfig::mix_at(int in_scale) const {
  auto it = mix_channels.find(in_scale);
  if (it == mix_channels.end()) {
    throw ConfigError("no mixer width configured for input scale 1/" + std::to_string(in_scale));
  }
  return it->second;
}

int ModelConfig::volume_scale() const {
  switch (variant) {
    case Variant::kS: return 16;
    case Variant::kM: return 8;
    case Variant::kL: return 4;
  }
  return 16;
}

int ModelConfig::esm_stages() const {
  int n = 0;
  for (int s = volume_scale(); s > 1; s /= 2) ++n;
  return n;
}

void ModelConfig::validate() const {
  if (d_max <= 0 || d_max % 16 != 0) {
    throw ConfigError("dmax must be a positive multiple of 16, got " + std::to_string(d_max));
  }
  if (groups <= 0) throw ConfigError("groups must be positive");
  if (kind == VolumeKind::kGwc && backbone.channels_at(volume_scale()) % groups != 0) {
    throw ConfigError("feature channels at the volume scale are not divisible by groups");
  }
  if (topk < 1 || topk > disparity_bins()) {
    throw ConfigError("topk = " + std::to_string(topk) + " outside [1, " +
                      std::to_string(disparity_bins()) + "]");
  }
  if (hourglass.levels < 1) throw ConfigError("hourglass needs at least one level");
  for (int s = volume_scale(); s > 1; s /= 2) {
    if (esm.mix_at(s) % 4 != 0) {
      throw ConfigError("mixer width at 1/" + std::to_string(s) + " must be a multiple of 4");
    }
  }
  if (loss.finest_first.empty()) throw ConfigError("loss weights must not be empty");
  for (double w : loss.finest_first) {
    if (!(w > 0)) throw ConfigError("loss weights must be positive");
  }
}

ModelConfig make_model_config(Variant v, VolumeKind kind, Index d_max) {
  ModelConfig c;
  c.variant = v;
  c.kind = kind;
  c.d_max = d_max;
  c.hourglass.i = 8;
  switch (v) {
    case Variant::kS:
      c.hourglass.j = 4;
      c.topk = 1;
      break;
    case Variant::kM:
      c.hourglass.j = 8;
      c.topk = 1;
      break;
    case Variant::kL:
      c.hourglass.j = 16;
      c.topk = 2;
      break;
  }
  return c;
}

KeyValues parse_key_values(const std::string& text) {
  KeyValues kv;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(is, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    kv[key] = value;
  }
  return kv;
}

std::string format_key_values(const KeyValues& kv) {
  std::ostringstream os;
  for (const auto& [k, v] : kv) os << k << " = " << v << '\n';
  return os.str();
}

namespace {

Index to_index(const std::string& key, const std::string& v) {
  Index out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("key '" + key + "': '" + v + "' is not an integer");
  }
  return out;
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(v);
  while (std::getline(is, item, ',')) {
    const auto b = item.find_first_not_of(' ');
    const auto e = item.find_last_not_of(' ');
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

std::string join(const std::vector<std::string>& items) {
  std::string s;
  for (size_t i = 0; i < items.size(); ++i) s += (i ? "," : "") + items[i];
  return s;
}

std::string fmt_double(double d) {
  std::ostringstream os;
  os.precision(17);
  os << d;
  return os.str();
}

}  // namespace

void apply_model_keys(ModelConfig& cfg, KeyValues& kv) {
  auto take = [&](const char* key, auto&& fn) {
    if (auto it = kv.find(key); it != kv.end()) {
      fn(it->second);
      kv.erase(it);
    }
  };
  // Variant first so that explicit width keys override its defaults.
  take("variant", [&](const std::string& v) {
    const ModelConfig d = make_model_config(parse_variant(v), cfg.kind, cfg.d_max);
    cfg.variant = d.variant;
    cfg.hourglass.j = d.hourglass.j;
    cfg.topk = d.topk;
  });
  take("kind", [&](const std::string& v) { cfg.kind = parse_kind(v); });
  take("dmax", [&](const std::string& v) { cfg.d_max = to_index("dmax", v); });
  take("groups", [&](const std::string& v) { cfg.groups = to_index("groups", v); });
  take("topk", [&](const std::string& v) { cfg.topk = to_index("topk", v); });
  take("seed", [&](const std::string& v) { cfg.seed = static_cast<std::uint64_t>(to_index("seed", v)); });
  take("hourglass.i", [&](const std::string& v) { cfg.hourglass.i = to_index("hourglass.i", v); });
  take("hourglass.j", [&](const std::string& v) { cfg.hourglass.j = to_index("hourglass.j", v); });
  take("hourglass.levels", [&](const std::string& v) {
    cfg.hourglass.levels = static_cast<int>(to_index("hourglass.levels", v));
  });
  take("backbone.encoder", [&](const std::string& v) {
    const auto items = split_list(v);
    if (items.size() != 4) throw ConfigError("backbone.encoder needs four widths");
    for (size_t i = 0; i < 4; ++i) cfg.backbone.encoder[i] = to_index("backbone.encoder", items[i]);
  });
  take("backbone.c4", [&](const std::string& v) { cfg.backbone.c4 = to_index("backbone.c4", v); });
  take("backbone.c8", [&](const std::string& v) { cfg.backbone.c8 = to_index("backbone.c8", v); });
  take("backbone.c16", [&](const std::string& v) { cfg.backbone.c16 = to_index("backbone.c16", v); });
  take("backbone.guide2", [&](const std::string& v) { cfg.backbone.guide2 = to_index("backbone.guide2", v); });
  take("backbone.guide1", [&](const std::string& v) { cfg.backbone.guide1 = to_index("backbone.guide1", v); });
  take("esm.mix", [&](const std::string& v) {
    // "16:32,8:32,4:24,2:16"
    cfg.esm.mix_channels.clear();
    for (const auto& item : split_list(v)) {
      const auto colon = item.find(':');
      if (colon == std::string::npos) throw ConfigError("esm.mix entries are scale:width");
      cfg.esm.mix_channels[static_cast<int>(to_index("esm.mix", item.substr(0, colon)))] =
          to_index("esm.mix", item.substr(colon + 1));
    }
  });
  take("esm.fuse_channels", [&](const std::string& v) { cfg.esm.fuse_channels = to_index("esm.fuse_channels", v); });
  take("esm.refine_channels", [&](const std::string& v) { cfg.esm.refine_channels = to_index("esm.refine_channels", v); });
  take("loss.weights", [&](const std::string& v) {
    cfg.loss.finest_first.clear();
    for (const auto& item : split_list(v)) {
      try {
        cfg.loss.finest_first.push_back(std::stod(item));
      } catch (const std::exception&) {
        throw ConfigError("loss.weights: '" + item + "' is not a number");
      }
    }
  });
}

KeyValues model_keys(const ModelConfig& cfg) {
  KeyValues kv;
  kv["variant"] = to_string(cfg.variant);
  kv["kind"] = to_string(cfg.kind);
  kv["dmax"] = std::to_string(cfg.d_max);
  kv["groups"] = std::to_string(cfg.groups);
  kv["topk"] = std::to_string(cfg.topk);
  kv["seed"] = std::to_string(cfg.seed);
  kv["hourglass.i"] = std::to_string(cfg.hourglass.i);
  kv["hourglass.j"] = std::to_string(cfg.hourglass.j);
  kv["hourglass.levels"] = std::to_string(cfg.hourglass.levels);
  std::vector<std::string> enc;
  for (Index e : cfg.backbone.encoder) enc.push_back(std::to_string(e));
  kv["backbone.encoder"] = join(enc);
  kv["backbone.c4"] = std::to_string(cfg.backbone.c4);
  kv["backbone.c8"] = std::to_string(cfg.backbone.c8);
  kv["backbone.c16"] = std::to_string(cfg.backbone.c16);
  kv["backbone.guide2"] = std::to_string(cfg.backbone.guide2);
  kv["backbone.guide1"] = std::to_string(cfg.backbone.guide1);
  std::vector<std::string> mix;
  for (const auto& [s, c] : cfg.esm.mix_channels) mix.push_back(std::to_string(s) + ":" + std::to_string(c));
  kv["esm.mix"] = join(mix);
  kv["esm.fuse_channels"] = std::to_string(cfg.esm.fuse_channels);
  kv["esm.refine_channels"] = std::to_string(cfg.esm.refine_channels);
  std::vector<std::string> w;
  for (double d : cfg.loss.finest_first) w.push_back(fmt_double(d));
  kv["loss.weights"] = join(w);
  return kv;
}

}  // namespace esm
