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

#include "esm/data_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "esm/serialize.hpp"

namespace esm {

// ---- PFM ---------------------------------------------------------------------

namespace {

class HeaderReader {
 public:
  explicit HeaderReader(const std::string& s) : s_(s) {}

  std::string token() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
    const size_t b = pos_;
    while (pos_ < s_.size() && !std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
    return s_.substr(b, pos_ - b);
  }
  // The header ends with exactly one whitespace byte after the scale.
  size_t payload_offset() const { return pos_ + 1; }

 private:
  const std::string& s_;
  size_t pos_ = 0;
};

std::uint32_t byteswap32(std::uint32_t v) {
  return (v >> 24) | ((v >> 8) & 0xff00u) | ((v << 8) & 0xff0000u) | (v << 24);
}

}  // namespace

PfmImage parse_pfm(const std::string& bytes) {
  HeaderReader r(bytes);
  const std::string magic = r.token();
  if (magic == "PF") throw PfmError(PfmErrorKind::kUnsupportedChannels, "PFM: three-channel 'PF' files are not supported");
  if (magic != "Pf") throw PfmError(PfmErrorKind::kBadMagic, "PFM: bad magic '" + magic.substr(0, 8) + "'");
  Index w = 0, h = 0;
  double scale = 0;
  try {
    size_t used = 0;
    const std::string ws = r.token(), hs = r.token(), ss = r.token();
    w = std::stoll(ws, &used);
    if (used != ws.size()) throw std::invalid_argument(ws);
    h = std::stoll(hs, &used);
    if (used != hs.size()) throw std::invalid_argument(hs);
    scale = std::stod(ss, &used);
    if (used != ss.size()) throw std::invalid_argument(ss);
  } catch (const std::exception&) {
    throw PfmError(PfmErrorKind::kBadHeader, "PFM: malformed dimension or scale line");
  }
  if (w <= 0 || h <= 0) throw PfmError(PfmErrorKind::kBadHeader, "PFM: non-positive dimensions");
  if (scale == 0.0) throw PfmError(PfmErrorKind::kZeroScale, "PFM: scale must be non-zero");
  const size_t off = r.payload_offset();
  const size_t need = static_cast<size_t>(w * h) * 4;
  if (off > bytes.size() || bytes.size() - off < need) {
    throw PfmError(PfmErrorKind::kTruncated, "PFM: payload holds " +
                                                 std::to_string(off > bytes.size() ? 0 : bytes.size() - off) +
                                                 " bytes, expected " + std::to_string(need));
  }
  const bool little = scale < 0;
  std::vector<float> v(static_cast<size_t>(w * h));
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      std::uint32_t u;
      std::memcpy(&u, bytes.data() + off + static_cast<size_t>(((h - 1 - y) * w + x) * 4), 4);
      if (little != (std::endian::native == std::endian::little)) u = byteswap32(u);
      std::memcpy(&v[static_cast<size_t>(y * w + x)], &u, 4);
    }
  return {Tensor<float>({h, w}, std::move(v)), static_cast<float>(scale)};
}

PfmImage read_pfm(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw PfmError(PfmErrorKind::kIo, "PFM: cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_pfm(ss.str());
}

std::string encode_pfm(const Tensor<float>& map, float scale) {
  if (map.rank() != 2 && !(map.rank() == 3 && map.dim(0) == 1)) {
    throw DataError("PFM: expected an [H, W] or [1, H, W] map, got " + to_string(map.shape()));
  }
  if (scale == 0.0f) throw PfmError(PfmErrorKind::kZeroScale, "PFM: scale must be non-zero");
  const Index h = map.dim(-2), w = map.dim(-1);
  std::ostringstream os;
  os.precision(9);
  os << "Pf\n" << w << ' ' << h << '\n' << scale << '\n';
  std::string out = os.str();
  const size_t off = out.size();
  out.resize(off + static_cast<size_t>(w * h) * 4);
  const bool little = scale < 0;
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      std::uint32_t u;
      std::memcpy(&u, &map.data()[static_cast<size_t>(y * w + x)], 4);
      if (little != (std::endian::native == std::endian::little)) u = byteswap32(u);
      std::memcpy(out.data() + off + static_cast<size_t>(((h - 1 - y) * w + x) * 4), &u, 4);
    }
  return out;
}

void write_pfm(const fs::path& path, const Tensor<float>& map, float scale) {
  atomic_write(path, encode_pfm(map, scale));
}

// ---- synthetic pairs ------------------------------------------------------------

StereoSample generate_random_dot_pair(const RandomDotOptions& o) {
  if (o.height <= 0 || o.width <= 0 || o.height % 16 || o.width % 16) {
    throw DataError("random dots: height and width must be positive multiples of 16");
  }
  if (o.d_max < 1 || 4 * o.d_max >= o.width) {
    throw DataError("random dots: d_max must satisfy 1 <= d_max < width / 4 (d_max " +
                    std::to_string(o.d_max) + ", width " + std::to_string(o.width) + ")");
  }
  if (o.block < 1 || o.dot < 1) throw DataError("random dots: block and dot sizes must be >= 1");
  const Index H = o.height, W = o.width, HW = H * W;
  std::mt19937_64 rng(o.seed);
  std::uniform_int_distribution<int> level(0, 255), disp(0, static_cast<int>(o.d_max) - 1);

  auto dots = [&](std::vector<float>& img) {
    img.assign(static_cast<size_t>(3 * HW), 0.0f);
    for (Index cy = 0; cy < H; cy += o.dot)
      for (Index cx = 0; cx < W; cx += o.dot)
        for (Index c = 0; c < 3; ++c) {
          const float v = static_cast<float>(level(rng) / 255.0);
          for (Index y = cy; y < std::min(H, cy + o.dot); ++y)
            for (Index x = cx; x < std::min(W, cx + o.dot); ++x) img[static_cast<size_t>(c * HW + y * W + x)] = v;
        }
  };

  const Index by = (H + o.block - 1) / o.block, bx = (W + o.block - 1) / o.block;
  std::vector<int> tiles(static_cast<size_t>(by * bx));
  for (auto& t : tiles) t = disp(rng);
  std::vector<float> left, fresh;
  dots(left);
  dots(fresh);

  std::vector<float> right(fresh);
  std::vector<int> owner(static_cast<size_t>(HW), -1);  // disparity that claimed the right pixel
  std::vector<float> gt(static_cast<size_t>(HW)), mask(static_cast<size_t>(HW), 0.0f);
  for (Index y = 0; y < H; ++y)
    for (Index x = 0; x < W; ++x) {
      const int d = tiles[static_cast<size_t>((y / o.block) * bx + x / o.block)];
      gt[static_cast<size_t>(y * W + x)] = static_cast<float>(d);
      const Index xr = x - d;
      if (xr < 0) continue;
      int& own = owner[static_cast<size_t>(y * W + xr)];
      if (d > own) {
        own = d;
        for (Index c = 0; c < 3; ++c) right[static_cast<size_t>(c * HW + y * W + xr)] = left[static_cast<size_t>(c * HW + y * W + x)];
      }
    }
  for (Index y = 0; y < H; ++y)
    for (Index x = 0; x < W; ++x) {
      const int d = static_cast<int>(gt[static_cast<size_t>(y * W + x)]);
      const Index xr = x - d;
      if (xr >= 0 && owner[static_cast<size_t>(y * W + xr)] == d) mask[static_cast<size_t>(y * W + x)] = 1.0f;
    }
  StereoSample s;
  s.left = Tensor<float>({3, H, W}, std::move(left));
  s.right = Tensor<float>({3, H, W}, std::move(right));
  s.gt = Tensor<float>({1, H, W}, std::move(gt));
  s.mask = Tensor<float>({1, H, W}, std::move(mask));
  s.id = "rds-" + std::to_string(o.seed);
  return s;
}

// ---- manifests -------------------------------------------------------------------

std::vector<ManifestEntry> read_manifest(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open manifest " + path.string());
  const fs::path base = path.parent_path();
  std::vector<ManifestEntry> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    std::istringstream ls(line);
    ManifestEntry e;
    e.line = lineno;
    std::string tok;
    while (ls >> tok) {
      fs::path p(tok);
      e.paths.push_back(p.is_absolute() ? p : base / p);
    }
    if (e.paths.empty()) continue;
    if (e.paths.size() != 2 && e.paths.size() != 3) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 2 or 3 paths, got " +
                      std::to_string(e.paths.size()));
    }
    out.push_back(std::move(e));
  }
  if (out.empty()) throw DataError("manifest " + path.string() + " lists no samples");
  return out;
}

std::string format_manifest(const std::vector<std::vector<std::string>>& rows) {
  std::string s = "# left right ground-truth\n";
  for (const auto& r : rows) {
    for (size_t i = 0; i < r.size(); ++i) s += (i ? " " : "") + r[i];
    s += '\n';
  }
  return s;
}

DisparityImage read_disparity(const fs::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".pfm") {
    PfmImage p = read_pfm(path);
    const Index h = p.data.dim(0), w = p.data.dim(1);
    std::vector<float> d(p.data.data().begin(), p.data.data().end()), m(d.size());
    for (size_t i = 0; i < d.size(); ++i) {
      m[i] = std::isfinite(d[i]) ? 1.0f : 0.0f;
      if (m[i] == 0.0f) d[i] = 0.0f;
    }
    return {Tensor<float>({1, h, w}, std::move(d)), Tensor<float>({1, h, w}, std::move(m))};
  }
  if (ext == ".png") return read_disparity_png16(path);
  throw DataError(path.string() + ": unknown disparity format (want .pfm or .png)");
}

StereoSample load_sample(const ManifestEntry& e) {
  if (e.paths.size() != 3) throw DataError("manifest line " + std::to_string(e.line) + ": need left, right and gt paths");
  StereoSample s;
  s.left = read_image(e.paths[0]);
  s.right = read_image(e.paths[1]);
  DisparityImage g = read_disparity(e.paths[2]);
  s.gt = g.disparity;
  s.mask = g.mask;
  if (s.left.shape() != s.right.shape() || s.left.dim(1) != s.gt.dim(1) || s.left.dim(2) != s.gt.dim(2)) {
    throw DataError("manifest line " + std::to_string(e.line) + ": image and ground-truth sizes differ");
  }
  s.id = e.paths[0].stem().string();
  return s;
}

// ---- batching --------------------------------------------------------------------

Batch make_batch(const std::vector<const StereoSample*>& samples, Index h, Index w, bool random_crop,
                 std::mt19937_64& rng) {
  if (samples.empty()) throw DataError("make_batch: no samples");
  if (h <= 0 || w <= 0 || h % 16 || w % 16) throw DataError("make_batch: crop must be positive multiples of 16");
  const Index B = static_cast<Index>(samples.size());
  std::vector<float> l(static_cast<size_t>(B * 3 * h * w)), r(l.size()), g(static_cast<size_t>(B * h * w)), m(g.size());
  for (Index b = 0; b < B; ++b) {
    const StereoSample& s = *samples[static_cast<size_t>(b)];
    const Index H = s.left.dim(1), W = s.left.dim(2);
    if (h > H || w > W) {
      throw DataError("make_batch: crop " + std::to_string(h) + "x" + std::to_string(w) + " exceeds image " +
                      std::to_string(H) + "x" + std::to_string(W));
    }
    Index oy = (H - h) / 2, ox = (W - w) / 2;
    if (random_crop) {
      oy = std::uniform_int_distribution<Index>(0, H - h)(rng);
      ox = std::uniform_int_distribution<Index>(0, W - w)(rng);
    }
    auto copy = [&](const Tensor<float>& src, Index C, std::vector<float>& dst) {
      for (Index c = 0; c < C; ++c)
        for (Index y = 0; y < h; ++y)
          std::memcpy(dst.data() + ((b * C + c) * h + y) * w,
                      src.data().data() + (c * H + oy + y) * W + ox, static_cast<size_t>(w) * sizeof(float));
    };
    copy(s.left, 3, l);
    copy(s.right, 3, r);
    copy(s.gt, 1, g);
    copy(s.mask, 1, m);
  }
  return {Tensor<float>({B, 3, h, w}, std::move(l)), Tensor<float>({B, 3, h, w}, std::move(r)),
          Tensor<float>({B, 1, h, w}, std::move(g)), Tensor<float>({B, 1, h, w}, std::move(m))};
}

}  // namespace esm
