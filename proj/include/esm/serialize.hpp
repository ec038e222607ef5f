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
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>

#include "esm/tensor.hpp"

namespace esm {

/// Binary tensor container used for checkpoints and debug dumps.
///
/// Layout, all little-endian:
///   char[4]  magic "ESMT"
///   u32      version (1)
///   u32      dtype code (1 = float32, 2 = float64)
///   u32      rank
///   u64      extent, repeated rank times
///   payload  numel elements of dtype, row-major
enum class DType : std::uint32_t { kFloat32 = 1, kFloat64 = 2 };

template <typename T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::kFloat32; }
template <>
constexpr DType dtype_of<double>() { return DType::kFloat64; }

std::string_view dtype_name(DType d);

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TensorHeader {
  DType dtype = DType::kFloat32;
  Shape shape;
};

template <typename T>
void write_tensor(std::ostream& os, const Tensor<T>& t);
// Reads either dtype and converts to T.
template <typename T>
Tensor<T> read_tensor(std::istream& is, TensorHeader* header = nullptr);

template <typename T>
void save_tensor(const std::filesystem::path& path, const Tensor<T>& t);
template <typename T>
Tensor<T> load_tensor(const std::filesystem::path& path, TensorHeader* header = nullptr);

/// Writes to a sibling temp file and renames it over `path`.
void atomic_write(const std::filesystem::path& path, std::string_view bytes);

}  // namespace esm
