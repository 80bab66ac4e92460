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

#include "spsr/cost.h"

#include <utility>

#include "spsr/error.h"

namespace spsr::cost {

std::uint64_t macs_conv(std::uint64_t cells, int kernel_size, int in_features,
                        int out_features, int dilation) {
  SPSR_CHECK(kernel_size > 0 && in_features > 0 && out_features > 0 &&
                 dilation > 0,
             ContractError, "macs_conv: dimensions must be positive");
  // Dilation changes where taps land, not how many there are.
  const auto k = static_cast<std::uint64_t>(kernel_size);
  return cells * k * k * static_cast<std::uint64_t>(in_features) *
         static_cast<std::uint64_t>(out_features);
}

std::uint64_t macs_bilinear(std::uint64_t samples, int channels) {
  SPSR_CHECK(channels > 0, ContractError, "macs_bilinear: channels <= 0");
  return 4u * samples * static_cast<std::uint64_t>(channels);
}

void CostLedger::add(LedgerEntry entry) {
  SPSR_CHECK(entry.active_cells <= entry.total_cells, ContractError,
             "ledger entry '" + entry.op + "': active_cells > total_cells");
  entries_.push_back(std::move(entry));
}

void CostLedger::add(std::string op, int stage, std::uint64_t macs,
                     std::uint64_t active_cells, std::uint64_t total_cells) {
  add(LedgerEntry{std::move(op), stage, macs, active_cells, total_cells});
}

void CostLedger::merge(const CostLedger& other) {
  entries_.insert(entries_.end(), other.entries_.begin(),
                  other.entries_.end());
}

std::uint64_t CostLedger::total_macs() const {
  std::uint64_t total = 0;
  for (const auto& e : entries_) total += e.macs;
  return total;
}

std::map<int, StageTotals> CostLedger::per_stage() const {
  std::map<int, StageTotals> out;
  for (const auto& e : entries_) {
    auto& t = out[e.stage];
    t.macs += e.macs;
    if (e.op == kCellCountOp) {
      t.active_cells += e.active_cells;
      t.total_cells += e.total_cells;
    }
  }
  return out;
}

Comparison compare(const CostLedger& dense, const CostLedger& sparse) {
  const auto d = dense.per_stage();
  const auto s = sparse.per_stage();
  SPSR_CHECK(d.size() == s.size(), DimensionError,
             "compare: ledgers cover different stages");
  Comparison out;
  for (const auto& [stage, dt] : d) {
    auto it = s.find(stage);
    SPSR_CHECK(it != s.end(), DimensionError,
               "compare: stage " + std::to_string(stage) +
                   " missing from sparse ledger");
    SPSR_CHECK(dt.total_cells == it->second.total_cells, DimensionError,
               "compare: stage " + std::to_string(stage) +
                   " has mismatched total cell counts");
    StageComparison sc;
    sc.stage = stage;
    sc.dense_macs = dt.macs;
    sc.sparse_macs = it->second.macs;
    sc.delta_macs = static_cast<std::int64_t>(dt.macs) -
                    static_cast<std::int64_t>(it->second.macs);
    out.dense_macs += sc.dense_macs;
    out.sparse_macs += sc.sparse_macs;
    out.stages.push_back(sc);
  }
  out.reduction_fraction =
      reduction(static_cast<double>(out.dense_macs),
                static_cast<double>(out.sparse_macs));
  return out;
}

}  // namespace spsr::cost
