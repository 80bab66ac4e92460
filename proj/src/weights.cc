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

#include "spsr/weights.h"

#include <bit>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>

#include "spsr/error.h"

namespace spsr {

namespace {

constexpr int kMaxRank = 8;

static_assert(std::endian::native == std::endian::little,
              "weight I/O assumes a little-endian host");

template <typename T>
bool read_pod(std::istream& in, T& v) {
  return static_cast<bool>(
      in.read(reinterpret_cast<char*>(&v), sizeof(T)));
}

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

}  // namespace

std::size_t WeightArray::size() const {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

void WeightBundle::set(const std::string& name, WeightArray array) {
  SPSR_CHECK(!name.empty() && name.size() <= 0xFFFF, FormatError,
             "weight name must have 1..65535 bytes");
  SPSR_CHECK(array.dims.size() <= kMaxRank, FormatError,
             "weight '" + name + "': rank above 8");
  SPSR_CHECK(array.size() == array.data.size(), FormatError,
             "weight '" + name + "': data size does not match dims");
  for (float v : array.data) {
    SPSR_CHECK(std::isfinite(v), FormatError,
               "weight '" + name + "': non-finite value");
  }
  arrays_[name] = std::move(array);
}

const WeightArray* WeightBundle::find(const std::string& name) const {
  const auto it = arrays_.find(name);
  return it == arrays_.end() ? nullptr : &it->second;
}

WeightBundle WeightBundle::read(std::istream& in) {
  WeightBundle bundle;
  while (true) {
    std::uint16_t name_len = 0;
    if (!read_pod(in, name_len)) {
      SPSR_CHECK(in.gcount() == 0, FormatError,
                 "weights: truncated record header");
      break;
    }
    std::string name(name_len, '\0');
    SPSR_CHECK(in.read(name.data(), name_len), FormatError,
               "weights: truncated name");
    std::uint8_t rank = 0;
    SPSR_CHECK(read_pod(in, rank), FormatError,
               "weights: truncated rank for '" + name + "'");
    SPSR_CHECK(rank <= kMaxRank, FormatError,
               "weights: rank above 8 for '" + name + "'");
    WeightArray a;
    a.dims.resize(rank);
    for (auto& d : a.dims) {
      SPSR_CHECK(read_pod(in, d), FormatError,
                 "weights: truncated dims for '" + name + "'");
    }
    const std::size_t n = a.size();
    SPSR_CHECK(n <= (std::size_t{1} << 32), FormatError,
               "weights: array '" + name + "' too large");
    a.data.resize(n);
    SPSR_CHECK(in.read(reinterpret_cast<char*>(a.data.data()),
                       static_cast<std::streamsize>(n * sizeof(float))),
               FormatError, "weights: truncated data for '" + name + "'");
    SPSR_CHECK(bundle.find(name) == nullptr, FormatError,
               "weights: duplicate array '" + name + "'");
    bundle.set(name, std::move(a));
  }
  return bundle;
}

WeightBundle WeightBundle::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  SPSR_CHECK(in.is_open(), FormatError,
             "cannot open weights file " + path.string());
  return read(in);
}

void WeightBundle::write(std::ostream& out) const {
  for (const auto& [name, a] : arrays_) {
    write_pod(out, static_cast<std::uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod(out, static_cast<std::uint8_t>(a.dims.size()));
    for (auto d : a.dims) write_pod(out, d);
    out.write(reinterpret_cast<const char*>(a.data.data()),
              static_cast<std::streamsize>(a.data.size() * sizeof(float)));
  }
}

}  // namespace spsr
