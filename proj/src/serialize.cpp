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

#include "esm/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace esm {

static_assert(std::endian::native == std::endian::little,
              "tensor serialization assumes a little-endian host");

namespace {
constexpr char kMagic[4] = {'E', 'S', 'M', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename U>
void put(std::ostream& os, U v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
U get(std::istream& is, const char* what) {
  U v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(U))) {
    throw FormatError(std::string("ESMT: truncated while reading ") + what);
  }
  return v;
}

template <typename S, typename T>
std::vector<T> read_payload(std::istream& is, Index n) {
  std::vector<S> raw(static_cast<size_t>(n));
  if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n * sizeof(S)))) {
    throw FormatError("ESMT: truncated payload");
  }
  return std::vector<T>(raw.begin(), raw.end());
}
}  // namespace

std::string_view dtype_name(DType d) {
  switch (d) {
    case DType::kFloat32: return "float32";
    case DType::kFloat64: return "float64";
  }
  return "unknown";
}

template <typename T>
void write_tensor(std::ostream& os, const Tensor<T>& t) {
  os.write(kMagic, 4);
  put<std::uint32_t>(os, kVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(dtype_of<T>()));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
  for (Index e : t.shape()) put<std::uint64_t>(os, static_cast<std::uint64_t>(e));
  os.write(reinterpret_cast<const char*>(t.data().data()),
           static_cast<std::streamsize>(t.data().size() * sizeof(T)));
}

template <typename T>
Tensor<T> read_tensor(std::istream& is, TensorHeader* header) {
  char magic[4];
  if (!is.read(magic, 4)) throw FormatError("ESMT: truncated header");
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("ESMT: bad magic");
  const auto version = get<std::uint32_t>(is, "version");
  if (version != kVersion) throw FormatError("ESMT: unsupported version " + std::to_string(version));
  const auto code = get<std::uint32_t>(is, "dtype");
  if (code != 1 && code != 2) throw FormatError("ESMT: unknown dtype code " + std::to_string(code));
  const auto rank = get<std::uint32_t>(is, "rank");
  if (rank == 0 || rank > 16) throw FormatError("ESMT: implausible rank " + std::to_string(rank));
  Shape shape;
  for (std::uint32_t i = 0; i < rank; ++i) {
    const auto e = get<std::uint64_t>(is, "shape");
    if (e == 0 || e > (1ull << 40)) throw FormatError("ESMT: bad extent on axis " + std::to_string(i));
    shape.push_back(static_cast<Index>(e));
  }
  const Index n = numel(shape);
  std::vector<T> values = code == 1 ? read_payload<float, T>(is, n) : read_payload<double, T>(is, n);
  if (header) {
    header->dtype = static_cast<DType>(code);
    header->shape = shape;
  }
  return Tensor<T>(std::move(shape), std::move(values));
}

void atomic_write(const std::filesystem::path& path, std::string_view bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

template <typename T>
void save_tensor(const std::filesystem::path& path, const Tensor<T>& t) {
  std::ostringstream os(std::ios::binary);
  write_tensor(os, t);
  atomic_write(path, os.str());
}

template <typename T>
Tensor<T> load_tensor(const std::filesystem::path& path, TensorHeader* header) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  return read_tensor<T>(is, header);
}

template void write_tensor(std::ostream&, const Tensor<float>&);
template void write_tensor(std::ostream&, const Tensor<double>&);
template Tensor<float> read_tensor(std::istream&, TensorHeader*);
template Tensor<double> read_tensor(std::istream&, TensorHeader*);
template void save_tensor(const std::filesystem::path&, const Tensor<float>&);
template void save_tensor(const std::filesystem::path&, const Tensor<double>&);
template Tensor<float> load_tensor(const std::filesystem::path&, TensorHeader*);
template Tensor<double> load_tensor(const std::filesystem::path&, TensorHeader*);

}  // namespace esm
