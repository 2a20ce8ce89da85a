// Copyright 2026 The Skewbench Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Little-endian encode/decode helpers shared by the binary file formats.

#ifndef SKEWBENCH_SRC_BINARY_IO_H_
#define SKEWBENCH_SRC_BINARY_IO_H_

#include <array>
#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>

#include "skewbench/common.h"

namespace skewbench::internal {

template <typename UInt>
void PutLE(std::ostream& out, UInt value) {
  std::array<char, sizeof(UInt)> bytes;
  for (size_t i = 0; i < sizeof(UInt); ++i) {
    bytes[i] = static_cast<char>((value >> (8 * i)) & 0xff);
  }
  out.write(bytes.data(), bytes.size());
}

inline void PutF32(std::ostream& out, float v) {
  PutLE(out, std::bit_cast<uint32_t>(v));
}
inline void PutF64(std::ostream& out, double v) {
  PutLE(out, std::bit_cast<uint64_t>(v));
}

template <typename UInt>
UInt GetLE(std::istream& in, const std::string& what) {
  std::array<unsigned char, sizeof(UInt)> bytes;
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
    throw FormatError("unexpected end of file while reading " + what);
  }
  UInt value = 0;
  for (size_t i = 0; i < sizeof(UInt); ++i) {
    value |= static_cast<UInt>(bytes[i]) << (8 * i);
  }
  return value;
}

inline float GetF32(std::istream& in, const std::string& what) {
  return std::bit_cast<float>(GetLE<uint32_t>(in, what));
}
inline double GetF64(std::istream& in, const std::string& what) {
  return std::bit_cast<double>(GetLE<uint64_t>(in, what));
}

}  // namespace skewbench::internal

#endif  // SKEWBENCH_SRC_BINARY_IO_H_
