// Copyright 2026 The SPSR Authors.
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

// Flat binary weight bundles: a sequence of named f32 arrays.
//
//   u16 name_length, name bytes, u8 rank, u32 dims[rank], f32 data[prod(dims)]
//
// All fields are little-endian. Records repeat until end of stream.

#ifndef SPSR_WEIGHTS_H_
#define SPSR_WEIGHTS_H_

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace spsr {

struct WeightArray {
  std::vector<std::uint32_t> dims;
  std::vector<float> data;

  std::size_t size() const;
  bool operator==(const WeightArray&) const = default;
};

class WeightBundle {
 public:
  // Throws FormatError on inconsistent dims or non-finite data.
  void set(const std::string& name, WeightArray array);
  const WeightArray* find(const std::string& name) const;
  const std::map<std::string, WeightArray>& arrays() const { return arrays_; }
  bool empty() const { return arrays_.empty(); }

  // Throws FormatError on truncated or malformed input and on duplicate
  // names.
  static WeightBundle read(std::istream& in);
  static WeightBundle load(const std::filesystem::path& path);
  void write(std::ostream& out) const;

  bool operator==(const WeightBundle&) const = default;

 private:
  std::map<std::string, WeightArray> arrays_;
};

}  // namespace spsr

#endif  // SPSR_WEIGHTS_H_
