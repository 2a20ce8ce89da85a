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

#ifndef SKEWBENCH_COMMON_H_
#define SKEWBENCH_COMMON_H_

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace skewbench {

inline constexpr std::string_view kVersion = "0.3.0";

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad caller input: shapes, ranges, incompatible options.
class InvalidArgumentError : public Error {
 public:
  using Error::Error;
};

// Missing or truncated input file. The message names the file.
class IngestionError : public Error {
 public:
  using Error::Error;
};

// File present but its contents do not follow the expected layout.
class FormatError : public Error {
 public:
  using Error::Error;
};

// NaN or infinity where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Experiment configuration failed validation. The message carries the
// offending field path, e.g. "optim.lr".
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Mixes a base seed with a purpose tag so that independent consumers
// (dataset noise, weight init, batch order, ...) draw from unrelated
// streams. Stable across platforms: FNV-1a over the tag, then splitmix64.
inline uint64_t DeriveSeed(uint64_t seed, std::string_view tag) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : tag) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (h | 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

using Rng = std::mt19937_64;

}  // namespace skewbench

#endif  // SKEWBENCH_COMMON_H_
