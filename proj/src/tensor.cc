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

#include "spsr/tensor.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>

#include "spsr/error.h"

namespace spsr {
namespace {

constexpr std::uint32_t kUnset = std::numeric_limits<std::uint32_t>::max();

std::string cell_str(int y, int x) {
  return "(" + std::to_string(y) + ", " + std::to_string(x) + ")";
}

// Sorted, deduplicated copy with bounds checking against an H x W grid.
std::vector<CellCoord> canonical_cells(std::span<const CellCoord> cells,
                                       int height, int width) {
  std::vector<CellCoord> out(cells.begin(), cells.end());
  for (const auto& c : out) {
    SPSR_CHECK(c.y >= 0 && c.y < height && c.x >= 0 && c.x < width,
               BoundsError,
               "cell " + cell_str(c.y, c.x) + " outside " +
                   std::to_string(height) + "x" + std::to_string(width) +
                   " grid");
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace

DenseTensor::DenseTensor(int channels, int height, int width)
    : DenseTensor(channels, height, width,
                  std::vector<Real>(static_cast<std::size_t>(
                                        std::max(channels, 0)) *
                                        std::max(height, 0) *
                                        std::max(width, 0),
                                    0.0)) {}

DenseTensor::DenseTensor(int channels, int height, int width,
                         std::vector<Real> data)
    : channels_(channels),
      height_(height),
      width_(width),
      data_(std::move(data)) {
  SPSR_CHECK(channels >= 1 && height >= 1 && width >= 1, DimensionError,
             "DenseTensor: F, H, W must be >= 1");
  SPSR_CHECK(data_.size() == static_cast<std::size_t>(channels) * height *
                                 width,
             DimensionError, "DenseTensor: data size != F * H * W");
  for (Real v : data_) {
    SPSR_CHECK(std::isfinite(v), ContractError,
               "DenseTensor: non-finite entry");
  }
}

SpsTensor::SpsTensor(int channels, int height, int width,
                     std::vector<Real> active, std::vector<Real> passive,
                     std::vector<FeatureIndex> index_map)
    : channels_(channels),
      height_(height),
      width_(width),
      active_(std::move(active)),
      passive_(std::move(passive)),
      index_map_(std::move(index_map)) {
  SPSR_CHECK(channels >= 1 && height >= 1 && width >= 1, DimensionError,
             "SpsTensor: F, H, W must be >= 1");
  const auto f = static_cast<std::size_t>(channels);
  SPSR_CHECK(active_.size() % f == 0 && passive_.size() % f == 0,
             DimensionError, "SpsTensor: feature matrices not a multiple of F");
  num_active_ = active_.size() / f;
  num_passive_ = passive_.size() / f;
  SPSR_CHECK(index_map_.size() == num_cells(), DimensionError,
             "SpsTensor: index map size != H * W");
  const std::size_t total = num_active_ + num_passive_;
  SPSR_CHECK(total >= 1, ContractError, "SpsTensor: no features");
  SPSR_CHECK(total <= std::numeric_limits<FeatureIndex>::max(), ContractError,
             "SpsTensor: too many features for 32-bit indices");

  active_pos_.assign(num_active_, kUnset);
  std::vector<bool> passive_seen(num_passive_, false);
  for (std::size_t pos = 0; pos < index_map_.size(); ++pos) {
    const FeatureIndex idx = index_map_[pos];
    SPSR_CHECK(idx < total, ContractError,
               "SpsTensor: index " + std::to_string(idx) + " out of range");
    if (idx < num_active_) {
      SPSR_CHECK(active_pos_[idx] == kUnset, ContractError,
                 "SpsTensor: active index " + std::to_string(idx) +
                     " appears more than once");
      active_pos_[idx] = static_cast<std::uint32_t>(pos);
    } else {
      passive_seen[idx - num_active_] = true;
    }
  }
  for (std::size_t i = 0; i < num_active_; ++i) {
    SPSR_CHECK(active_pos_[i] != kUnset, ContractError,
               "SpsTensor: active index " + std::to_string(i) +
                   " missing from index map");
  }
  for (std::size_t i = 0; i < num_passive_; ++i) {
    SPSR_CHECK(passive_seen[i], ContractError,
               "SpsTensor: passive index " + std::to_string(num_active_ + i) +
                   " missing from index map");
  }
  for (Real v : active_) {
    SPSR_CHECK(std::isfinite(v), ContractError, "SpsTensor: non-finite entry");
  }
  for (Real v : passive_) {
    SPSR_CHECK(std::isfinite(v), ContractError, "SpsTensor: non-finite entry");
  }
}

std::span<const Real> SpsTensor::active_row(std::size_t i) const {
  SPSR_CHECK(i < num_active_, BoundsError, "active_row out of range");
  return std::span<const Real>(active_).subspan(i * channels_, channels_);
}

std::span<const Real> SpsTensor::passive_row(std::size_t i) const {
  SPSR_CHECK(i < num_passive_, BoundsError, "passive_row out of range");
  return std::span<const Real>(passive_).subspan(i * channels_, channels_);
}

std::span<const Real> SpsTensor::feature_row(FeatureIndex index) const {
  return index < num_active_ ? active_row(index)
                             : passive_row(index - num_active_);
}

FeatureIndex SpsTensor::index_at(int y, int x) const {
  SPSR_CHECK(in_grid(y, x), BoundsError,
             "cell " + cell_str(y, x) + " outside grid");
  return index_map_[static_cast<std::size_t>(y) * width_ + x];
}

CellCoord SpsTensor::active_cell(std::size_t i) const {
  SPSR_CHECK(i < num_active_, BoundsError, "active_cell out of range");
  const auto pos = active_pos_[i];
  return CellCoord{static_cast<int>(pos / width_),
                   static_cast<int>(pos % width_)};
}

std::vector<CellCoord> SpsTensor::active_cells() const {
  std::vector<CellCoord> out;
  out.reserve(num_active_);
  for (std::size_t i = 0; i < num_active_; ++i) out.push_back(active_cell(i));
  return out;
}

SpsTensor SpsTensor::with_active(std::vector<Real> active,
                                 int channels) const {
  SPSR_CHECK(channels == channels_ || num_passive_ == 0, DimensionError,
             "with_active: feature size change requires a fully active "
             "tensor");
  SPSR_CHECK(active.size() == num_active_ * static_cast<std::size_t>(channels),
             DimensionError, "with_active: expected N_A x F rows");
  return SpsTensor(channels, height_, width_, std::move(active), passive_,
                   index_map_);
}

SpsTensor from_dense(const DenseTensor& dense,
                     std::span<const CellCoord> active_cells) {
  const int f = dense.channels(), h = dense.height(), w = dense.width();
  const auto cells = canonical_cells(active_cells, h, w);
  std::vector<bool> is_active(static_cast<std::size_t>(h) * w, false);
  for (const auto& c : cells) is_active[static_cast<std::size_t>(c.y) * w + c.x] = true;

  const std::size_t n_active = cells.size();
  std::vector<Real> active, passive;
  active.reserve(n_active * f);
  passive.reserve((is_active.size() - n_active) * f);
  std::vector<FeatureIndex> index_map(is_active.size());
  FeatureIndex next_active = 0;
  FeatureIndex next_passive = static_cast<FeatureIndex>(n_active);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t pos = static_cast<std::size_t>(y) * w + x;
      auto& dst = is_active[pos] ? active : passive;
      for (int c = 0; c < f; ++c) dst.push_back(dense.at(c, y, x));
      index_map[pos] = is_active[pos] ? next_active++ : next_passive++;
    }
  }
  return SpsTensor(f, h, w, std::move(active), std::move(passive),
                   std::move(index_map));
}

DenseTensor to_dense(const SpsTensor& sps) {
  DenseTensor out(sps.channels(), sps.height(), sps.width());
  for (int y = 0; y < sps.height(); ++y) {
    for (int x = 0; x < sps.width(); ++x) {
      const auto row = sps.feature_row(sps.index_at(y, x));
      for (int c = 0; c < sps.channels(); ++c) out.at(c, y, x) = row[c];
    }
  }
  return out;
}

SpsTensor resplit(const SpsTensor& sps,
                  std::span<const CellCoord> active_cells) {
  const int f = sps.channels(), h = sps.height(), w = sps.width();
  const auto cells = canonical_cells(active_cells, h, w);
  std::vector<bool> is_active(sps.num_cells(), false);
  for (const auto& c : cells) is_active[static_cast<std::size_t>(c.y) * w + c.x] = true;

  const std::size_t n_active = cells.size();
  std::vector<Real> active, passive;
  active.reserve(n_active * f);
  std::vector<FeatureIndex> index_map(sps.num_cells());
  // Old feature index -> new passive index, assigned on first reference.
  std::vector<FeatureIndex> remap(sps.num_active() + sps.num_passive(),
                                  kUnset);
  FeatureIndex next_active = 0;
  FeatureIndex next_passive = static_cast<FeatureIndex>(n_active);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t pos = static_cast<std::size_t>(y) * w + x;
      const FeatureIndex old = sps.index_map()[pos];
      const auto row = sps.feature_row(old);
      if (is_active[pos]) {
        active.insert(active.end(), row.begin(), row.end());
        index_map[pos] = next_active++;
      } else {
        if (remap[old] == kUnset) {
          remap[old] = next_passive++;
          passive.insert(passive.end(), row.begin(), row.end());
        }
        index_map[pos] = remap[old];
      }
    }
  }
  return SpsTensor(f, h, w, std::move(active), std::move(passive),
                   std::move(index_map));
}

std::vector<Real> gather_neighborhood(const SpsTensor& sps, CellCoord cell,
                                      std::span<const Offset> offsets) {
  SPSR_CHECK(sps.in_grid(cell.y, cell.x), BoundsError,
             "gather_neighborhood: cell " + cell_str(cell.y, cell.x) +
                 " outside grid");
  SPSR_CHECK(sps.is_active(cell.y, cell.x), ContractError,
             "gather_neighborhood: cell " + cell_str(cell.y, cell.x) +
                 " is not active");
  const int f = sps.channels();
  std::vector<Real> out(offsets.size() * f, 0.0);
  for (std::size_t i = 0; i < offsets.size(); ++i) {
    const int y = cell.y + offsets[i].dy;
    const int x = cell.x + offsets[i].dx;
    if (!sps.in_grid(y, x)) continue;
    const auto row = sps.feature_row(sps.index_at(y, x));
    std::copy(row.begin(), row.end(), out.begin() + i * f);
  }
  return out;
}

SpsTensor subdivide(const SpsTensor& sps,
                    const std::array<RowMap, 4>& child_maps) {
  const int f = sps.channels();
  for (const auto& m : child_maps) {
    SPSR_CHECK(m.in_features == f && m.out_features == f && m.apply,
               DimensionError,
               "subdivide: child transform must map F -> F (F = " +
                   std::to_string(f) + ")");
  }
  const std::size_t n_active = sps.num_active();
  std::vector<Real> active(4 * n_active * f);
  for (std::size_t p = 0; p < n_active; ++p) {
    const auto parent = sps.active_row(p);
    for (int c = 0; c < 4; ++c) {
      child_maps[c].apply(
          parent, std::span<Real>(active).subspan((4 * p + c) * f, f));
    }
  }
  std::vector<Real> passive(sps.passive_data().begin(),
                            sps.passive_data().end());

  const int h = sps.height(), w = sps.width();
  const int h2 = 2 * h, w2 = 2 * w;
  const auto shift = static_cast<FeatureIndex>(3 * n_active);
  std::vector<FeatureIndex> index_map(static_cast<std::size_t>(h2) * w2);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const FeatureIndex parent = sps.index_at(y, x);
      for (int dy = 0; dy < 2; ++dy) {
        for (int dx = 0; dx < 2; ++dx) {
          const FeatureIndex child =
              parent < n_active ? 4 * parent + 2 * dy + dx : parent + shift;
          index_map[static_cast<std::size_t>(2 * y + dy) * w2 + 2 * x + dx] =
              child;
        }
      }
    }
  }
  return SpsTensor(f, h2, w2, std::move(active), std::move(passive),
                   std::move(index_map));
}

std::vector<Offset> kernel_offsets(int kernel_size, int dilation) {
  SPSR_CHECK(kernel_size > 0 && kernel_size % 2 == 1, ContractError,
             "kernel size must be odd and positive");
  SPSR_CHECK(dilation > 0, ContractError, "dilation must be positive");
  const int half = kernel_size / 2;
  std::vector<Offset> out;
  out.reserve(static_cast<std::size_t>(kernel_size) * kernel_size);
  for (int ky = -half; ky <= half; ++ky) {
    for (int kx = -half; kx <= half; ++kx) {
      out.push_back({ky * dilation, kx * dilation});
    }
  }
  return out;
}

}  // namespace spsr
