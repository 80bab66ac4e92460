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

// Seeded synthetic masks for tests and benchmarks.

#ifndef SPSR_SYNTHETIC_H_
#define SPSR_SYNTHETIC_H_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "spsr/geometry.h"
#include "spsr/mask.h"

namespace spsr::harness {

enum class ShapeKind { kDisk, kEllipse, kBlob };

// Throws ContractError for unknown names.
ShapeKind parse_shape(const std::string& name);
std::string shape_name(ShapeKind kind);

struct SyntheticShapeSpec {
  ShapeKind kind = ShapeKind::kDisk;
  int width = 448;
  int height = 448;
  std::uint64_t seed = 0;
  // Disk radius or blob base radius; drawn from the seed when unset.
  std::optional<double> radius;
  int harmonics = 4;        // blob only
  double amplitude = 0.3;   // blob only: sum of relative harmonic amplitudes
};

struct SyntheticSample {
  BinaryMask mask;
  geometry::Box box;  // tight box in pixel-edge coordinates
};

// Shapes lie fully inside the canvas; violations throw ContractError. Blobs
// keep only their largest 4-connected component.
SyntheticSample gen_synthetic(const SyntheticShapeSpec& spec);

// `count` specs with per-sample seeds derived from `seed`.
std::vector<SyntheticShapeSpec> synthetic_corpus(ShapeKind kind, int count,
                                                 std::uint64_t seed,
                                                 int width = 448,
                                                 int height = 448);

// Size of the largest 4-connected foreground component.
std::uint64_t largest_component(const BinaryMask& mask,
                                BinaryMask* component = nullptr);

}  // namespace spsr::harness

#endif  // SPSR_SYNTHETIC_H_
