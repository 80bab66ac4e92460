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

// Oracle-mode benchmark over a synthetic corpus: sparse versus dense MACs,
// active fractions and boundary quality.

#ifndef SPSR_BENCH_H_
#define SPSR_BENCH_H_

#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "spsr/pipeline.h"
#include "spsr/synthetic.h"

namespace spsr::harness {

struct BenchConfig {
  ShapeKind shape = ShapeKind::kBlob;
  int count = 50;
  std::uint64_t seed = 0;
  int f0 = 64;
  std::size_t top_n = pipeline::kDefaultTopN;
  int stages = pipeline::kMaxStages;
  int threads = 1;
  bool force_dense_active = false;
  int canvas = 448;
};

struct BenchStage {
  int stage = 0;
  int grid = 0;
  int features = 0;
  double mean_active_fraction = 0.0;
  std::uint64_t dense_macs = 0;
  std::uint64_t sparse_macs = 0;
};

struct BenchReport {
  BenchConfig config;
  double reduction_fraction = 0.0;
  std::uint64_t dense_macs = 0;
  std::uint64_t sparse_macs = 0;
  std::vector<BenchStage> stages;
  // Boundary IoU against the reference, pasted on the canvas: the final
  // mask versus the nearest-upsampled 14x14 mask.
  std::vector<double> boundary_iou_refined;
  std::vector<double> boundary_iou_coarse;
  double wall_seconds = 0.0;  // not part of the JSON report
};

BenchReport run_bench(const BenchConfig& config);
nlohmann::json bench_to_json(const BenchReport& report);

}  // namespace spsr::harness

#endif  // SPSR_BENCH_H_
