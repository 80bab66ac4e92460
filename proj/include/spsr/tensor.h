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

// Dense and structure-preserving sparse (SPS) feature grids.
//
// An SpsTensor splits the features of an H x W grid into an N_A x F matrix
// of active features, an N_P x F matrix of passive features, and a dense
// H x W index map. Index i < N_A addresses active row i, index i >= N_A
// addresses passive row i - N_A. Every active index occurs exactly once in
// the map; a passive index may cover several cells.
//
// Both tensor types are immutable once built. All operations below are pure
// functions returning new values.

#ifndef SPSR_TENSOR_H_
#define SPSR_TENSOR_H_

#include <array>
#include <compare>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace spsr {

using Real = double;
using FeatureIndex = std::uint32_t;

struct CellCoord {
  int y = 0;
  int x = 0;
  int stage = 0;  // informational; not part of the ordering

  friend bool operator==(const CellCoord& a, const CellCoord& b) {
    return a.y == b.y && a.x == b.x;
  }
  friend std::strong_ordering operator<=>(const CellCoord& a,
                                          const CellCoord& b) {
    if (auto c = a.y <=> b.y; c != 0) return c;
    return a.x <=> b.x;
  }
};

struct Offset {
  int dy = 0;
  int dx = 0;
};

// Out-of-grid neighbors read as the zero vector. This is the only policy.
enum class PaddingMode { kZeroVector };
struct PaddingPolicy {
  PaddingMode mode = PaddingMode::kZeroVector;
};

class DenseTensor {
 public:
  // Zero-filled [channels, height, width].
  DenseTensor(int channels, int height, int width);
  DenseTensor(int channels, int height, int width, std::vector<Real> data);

  int channels() const { return channels_; }
  int height() const { return height_; }
  int width() const { return width_; }

  Real at(int f, int y, int x) const { return data_[offset(f, y, x)]; }
  Real& at(int f, int y, int x) { return data_[offset(f, y, x)]; }
  std::span<const Real> data() const { return data_; }

  bool operator==(const DenseTensor&) const = default;

 private:
  std::size_t offset(int f, int y, int x) const {
    return (static_cast<std::size_t>(f) * height_ + y) * width_ + x;
  }

  int channels_;
  int height_;
  int width_;
  std::vector<Real> data_;
};

class SpsTensor {
 public:
  // Takes ownership of row-major active (N_A x F) and passive (N_P x F)
  // matrices and a row-major H x W index map. Every invariant is checked by a
  // full scan; violations throw ContractError.
  SpsTensor(int channels, int height, int width, std::vector<Real> active,
            std::vector<Real> passive, std::vector<FeatureIndex> index_map);

  int channels() const { return channels_; }
  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t num_cells() const {
    return static_cast<std::size_t>(height_) * width_;
  }
  std::size_t num_active() const { return num_active_; }
  std::size_t num_passive() const { return num_passive_; }

  std::span<const Real> active_data() const { return active_; }
  std::span<const Real> passive_data() const { return passive_; }
  std::span<const FeatureIndex> index_map() const { return index_map_; }

  std::span<const Real> active_row(std::size_t i) const;
  std::span<const Real> passive_row(std::size_t i) const;
  // Resolves an index from the map to its feature row.
  std::span<const Real> feature_row(FeatureIndex index) const;

  bool in_grid(int y, int x) const {
    return y >= 0 && y < height_ && x >= 0 && x < width_;
  }
  FeatureIndex index_at(int y, int x) const;
  bool is_active(int y, int x) const {
    return index_at(y, x) < num_active_;
  }
  // Cell of active row i.
  CellCoord active_cell(std::size_t i) const;
  // Cells of all active rows, in row order.
  std::vector<CellCoord> active_cells() const;

  // Same passive rows and index map, new active rows. The feature size may
  // only change when there are no passive rows.
  SpsTensor with_active(std::vector<Real> active, int channels) const;
  SpsTensor with_active(std::vector<Real> active) const {
    return with_active(std::move(active), channels_);
  }

  bool operator==(const SpsTensor&) const = default;

 private:
  int channels_;
  int height_;
  int width_;
  std::size_t num_active_;
  std::size_t num_passive_;
  std::vector<Real> active_;
  std::vector<Real> passive_;
  std::vector<FeatureIndex> index_map_;
  std::vector<std::uint32_t> active_pos_;  // active row -> y * W + x
};

// A feature map F_in -> F_out applied to one row at a time.
struct RowMap {
  int in_features = 0;
  int out_features = 0;
  std::function<void(std::span<const Real> in, std::span<Real> out)> apply;
};

// Active rows follow row-major order of `active_cells`; each remaining cell
// gets its own passive row, also in row-major order. Duplicate cells are
// ignored. Throws BoundsError for cells outside the grid.
SpsTensor from_dense(const DenseTensor& dense,
                     std::span<const CellCoord> active_cells);

DenseTensor to_dense(const SpsTensor& sps);

// Re-splits an existing SPS tensor on the same grid: the given cells become
// the new active set (row-major), every other referenced feature is kept as
// a passive row exactly once, and the index map is renumbered.
SpsTensor resplit(const SpsTensor& sps,
                  std::span<const CellCoord> active_cells);

// Row i of the returned |offsets| x F matrix is the feature at
// (y + dy_i, x + dx_i), or zeros outside the grid. `cell` must be active.
std::vector<Real> gather_neighborhood(const SpsTensor& sps, CellCoord cell,
                                      std::span<const Offset> offsets);

// 2x upsampling of the grid. Active parent p yields children 4p + c with
// c = 2 * dy + dx and feature child_maps[c](parent). Passive rows are kept
// unchanged and their index is copied into all four child cells.
SpsTensor subdivide(const SpsTensor& sps,
                    const std::array<RowMap, 4>& child_maps);

// Row-major offsets of a K x K kernel at the given dilation.
std::vector<Offset> kernel_offsets(int kernel_size, int dilation);

}  // namespace spsr

#endif  // SPSR_TENSOR_H_
