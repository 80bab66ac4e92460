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

// Multiply-accumulate accounting.
//
// One multiply followed by an add counts as a single operation. Bias adds,
// standalone additions, comparisons, sorting and index arithmetic are not
// counted. Bilinear sampling costs 4 MACs per sampled location per channel.

#ifndef SPSR_COST_H_
#define SPSR_COST_H_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace spsr::cost {

std::uint64_t macs_conv(std::uint64_t cells, int kernel_size, int in_features,
                        int out_features, int dilation = 1);

inline std::uint64_t macs_linear(std::uint64_t rows, int in_features,
                                 int out_features) {
  return macs_conv(rows, 1, in_features, out_features, 1);
}

std::uint64_t macs_bilinear(std::uint64_t samples, int channels);

struct LedgerEntry {
  std::string op;
  int stage = 0;
  std::uint64_t macs = 0;
  std::uint64_t active_cells = 0;
  std::uint64_t total_cells = 0;

  bool operator==(const LedgerEntry&) const = default;
};

struct StageTotals {
  std::uint64_t macs = 0;
  std::uint64_t active_cells = 0;
  std::uint64_t total_cells = 0;
};

// Zero-MAC marker entry recording the cell counts of one RoI at one stage.
// per_stage() sums active/total cells over these markers only, since every
// other entry repeats the same cells.
inline constexpr const char* kCellCountOp = "cells";

class CostLedger {
 public:
  void add(LedgerEntry entry);
  void add(std::string op, int stage, std::uint64_t macs,
           std::uint64_t active_cells, std::uint64_t total_cells);
  // Appends all entries of `other`; totals are plain integer sums so the
  // merge is associative and commutative.
  void merge(const CostLedger& other);

  std::uint64_t total_macs() const;
  std::map<int, StageTotals> per_stage() const;
  const std::vector<LedgerEntry>& entries() const { return entries_; }
  bool empty() const { return entries_.empty(); }

 private:
  std::vector<LedgerEntry> entries_;
};

struct StageComparison {
  int stage = 0;
  std::uint64_t dense_macs = 0;
  std::uint64_t sparse_macs = 0;
  std::int64_t delta_macs = 0;  // dense - sparse
};

struct Comparison {
  double reduction_fraction = 0.0;  // 1 - sparse / dense
  std::uint64_t dense_macs = 0;
  std::uint64_t sparse_macs = 0;
  std::vector<StageComparison> stages;
};

// Both ledgers must describe the same stages over the same total cell
// counts; throws DimensionError otherwise.
Comparison compare(const CostLedger& dense, const CostLedger& sparse);

// Closed-form reduction for head-level totals, e.g. 85.3 G vs 285.6 G.
inline double reduction(double dense_macs, double sparse_macs) {
  return dense_macs > 0.0 ? 1.0 - sparse_macs / dense_macs : 0.0;
}

}  // namespace spsr::cost

#endif  // SPSR_COST_H_
