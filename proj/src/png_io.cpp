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

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstring>
#include <fstream>
#include <sstream>

#include "esm/data_io.hpp"
#include "esm/serialize.hpp"

namespace esm {

namespace {

struct PngRaw {
  png_uint_32 width = 0, height = 0;
  int bit_depth = 0, color_type = 0, channels = 0;
  std::vector<unsigned char> pixels;  // rows top-down, samples big-endian
};

struct ReadCursor {
  const unsigned char* data;
  size_t size, pos;
};

struct ErrorSlot {
  char message[256];
};

void on_error(png_structp png, png_const_charp msg) {
  auto* slot = static_cast<ErrorSlot*>(png_get_error_ptr(png));
  std::snprintf(slot->message, sizeof slot->message, "%s", msg);
  png_longjmp(png, 1);
}

void on_warning(png_structp, png_const_charp) {}

void read_from_cursor(png_structp png, png_bytep out, png_size_t n) {
  auto* c = static_cast<ReadCursor*>(png_get_io_ptr(png));
  if (c->pos + n > c->size) png_error(png, "truncated PNG stream");
  std::memcpy(out, c->data + c->pos, n);
  c->pos += n;
}

// Only POD locals live in this frame; libpng may longjmp out of it.
bool decode(const std::string& bytes, PngRaw* out, ErrorSlot* err) {
  if (bytes.size() < 8 || png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8)) {
    std::snprintf(err->message, sizeof err->message, "not a PNG file");
    return false;
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, err, on_error, on_warning);
  png_infop info = png_create_info_struct(png);
  ReadCursor cursor{reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), 0};
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    return false;
  }
  png_set_read_fn(png, &cursor, read_from_cursor);
  png_read_info(png, info);
  out->width = png_get_image_width(png, info);
  out->height = png_get_image_height(png, info);
  out->bit_depth = png_get_bit_depth(png, info);
  out->color_type = png_get_color_type(png, info);
  if (out->color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (out->bit_depth < 8) png_set_packing(png);
  if (out->color_type == PNG_COLOR_TYPE_GRAY && out->bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);
  out->channels = png_get_channels(png, info);
  const size_t rowbytes = png_get_rowbytes(png, info);
  out->pixels.resize(rowbytes * out->height);
  for (png_uint_32 y = 0; y < out->height; ++y) png_read_row(png, out->pixels.data() + y * rowbytes, nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return true;
}

std::string slurp(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

PngRaw load_png(const fs::path& path) {
  const std::string bytes = slurp(path);
  PngRaw raw;
  ErrorSlot err{};
  if (!decode(bytes, &raw, &err)) throw DataError(path.string() + ": " + err.message);
  return raw;
}

struct WriteSink {
  std::string bytes;
};

void write_to_sink(png_structp png, png_bytep data, png_size_t n) {
  static_cast<WriteSink*>(png_get_io_ptr(png))->bytes.append(reinterpret_cast<const char*>(data), n);
}

void flush_sink(png_structp) {}

bool encode(const unsigned char* rows, png_uint_32 w, png_uint_32 h, int depth, int color,
            size_t rowbytes, WriteSink* sink, ErrorSlot* err) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, err, on_error, on_warning);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    return false;
  }
  png_set_write_fn(png, sink, write_to_sink, flush_sink);
  png_set_IHDR(png, info, w, h, depth, color, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (png_uint_32 y = 0; y < h; ++y) png_write_row(png, rows + y * rowbytes);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return true;
}

void save_png(const fs::path& path, const std::vector<unsigned char>& rows, Index h, Index w,
              int depth, int color, size_t rowbytes) {
  WriteSink sink;
  ErrorSlot err{};
  if (!encode(rows.data(), static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), depth, color,
              rowbytes, &sink, &err)) {
    throw DataError(path.string() + ": " + err.message);
  }
  atomic_write(path, sink.bytes);
}

}  // namespace

DisparityImage read_disparity_png16(const fs::path& path) {
  PngRaw raw = load_png(path);
  if (raw.bit_depth != 16 || raw.color_type != PNG_COLOR_TYPE_GRAY) {
    throw DataError(path.string() + ": disparity PNG must be 16-bit grayscale (got " +
                    std::to_string(raw.bit_depth) + "-bit, " + std::to_string(raw.channels) +
                    " channel(s))");
  }
  const Index h = raw.height, w = raw.width;
  std::vector<float> d(static_cast<size_t>(h * w)), m(d.size());
  for (size_t i = 0; i < d.size(); ++i) {
    const unsigned v = (unsigned(raw.pixels[2 * i]) << 8) | raw.pixels[2 * i + 1];
    d[i] = static_cast<float>(v / 256.0);
    m[i] = v == 0 ? 0.0f : 1.0f;
  }
  return {Tensor<float>({1, h, w}, std::move(d)), Tensor<float>({1, h, w}, std::move(m))};
}

void write_png16(const fs::path& path, const std::vector<std::uint16_t>& raw, Index h, Index w) {
  if (static_cast<Index>(raw.size()) != h * w) throw DataError("write_png16: size mismatch");
  std::vector<unsigned char> rows(raw.size() * 2);
  for (size_t i = 0; i < raw.size(); ++i) {
    rows[2 * i] = static_cast<unsigned char>(raw[i] >> 8);
    rows[2 * i + 1] = static_cast<unsigned char>(raw[i] & 0xff);
  }
  save_png(path, rows, h, w, 16, PNG_COLOR_TYPE_GRAY, static_cast<size_t>(w) * 2);
}

Tensor<float> read_image(const fs::path& path) {
  PngRaw raw = load_png(path);
  const Index h = raw.height, w = raw.width;
  const int c = raw.channels;
  const int bytes = raw.bit_depth == 16 ? 2 : 1;
  const double maxv = raw.bit_depth == 16 ? 65535.0 : 255.0;
  std::vector<float> out(static_cast<size_t>(3 * h * w));
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      const unsigned char* px = raw.pixels.data() + ((y * w + x) * c) * bytes;
      auto sample = [&](int k) {
        const unsigned char* s = px + k * bytes;
        const unsigned v = bytes == 2 ? (unsigned(s[0]) << 8) | s[1] : s[0];
        return static_cast<float>(v / maxv);
      };
      for (int ch = 0; ch < 3; ++ch) {
        // Gray (+alpha) replicates channel 0; alpha is dropped.
        const int src = c >= 3 ? ch : 0;
        out[static_cast<size_t>((ch * h + y) * w + x)] = sample(src);
      }
    }
  return Tensor<float>({3, h, w}, std::move(out));
}

void write_rgb8(const fs::path& path, const std::vector<std::uint8_t>& rgb, Index h, Index w) {
  if (static_cast<Index>(rgb.size()) != 3 * h * w) throw DataError("write_rgb8: size mismatch");
  std::vector<unsigned char> rows(rgb.begin(), rgb.end());
  save_png(path, rows, h, w, 8, PNG_COLOR_TYPE_RGB, static_cast<size_t>(w) * 3);
}

void write_image(const fs::path& path, const Tensor<float>& chw) {
  if (chw.rank() != 3 || chw.dim(0) != 3) throw DataError("write_image: expected [3, H, W]");
  const Index h = chw.dim(1), w = chw.dim(2);
  std::vector<std::uint8_t> rgb(static_cast<size_t>(3 * h * w));
  for (Index c = 0; c < 3; ++c)
    for (Index i = 0; i < h * w; ++i) {
      const float v = std::clamp(chw.data()[static_cast<size_t>(c * h * w + i)], 0.0f, 1.0f);
      rgb[static_cast<size_t>(i * 3 + c)] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
    }
  write_rgb8(path, rgb, h, w);
}

}  // namespace esm
