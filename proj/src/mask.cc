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

#include "spsr/mask.h"

#include <algorithm>
#include <string>
#include <utility>

#include "spsr/error.h"

namespace spsr {

BinaryMask::BinaryMask(int width, int height)
    : BinaryMask(width, height,
                 std::vector<std::uint8_t>(
                     static_cast<std::size_t>(std::max(width, 0)) *
                         std::max(height, 0),
                     0)) {}

BinaryMask::BinaryMask(int width, int height, std::vector<std::uint8_t> pixels)
    : width_(width), height_(height), pixels_(std::move(pixels)) {
  SPSR_CHECK(width >= 0 && height >= 0, DimensionError,
             "BinaryMask: negative dimensions");
  SPSR_CHECK(pixels_.size() == static_cast<std::size_t>(width) * height,
             DimensionError, "BinaryMask: pixel count != width * height");
  for (auto& p : pixels_) p = p != 0 ? 1 : 0;
}

std::uint64_t BinaryMask::area() const {
  std::uint64_t n = 0;
  for (auto p : pixels_) n += p;
  return n;
}

Rle rle_encode(const BinaryMask& mask) {
  Rle rle{mask.width(), mask.height(), {}};
  std::uint8_t current = 0;
  std::uint32_t run = 0;
  for (int x = 0; x < mask.width(); ++x) {
    for (int y = 0; y < mask.height(); ++y) {
      const std::uint8_t v = mask.at(y, x) ? 1 : 0;
      if (v != current) {
        rle.counts.push_back(run);
        run = 0;
        current = v;
      }
      ++run;
    }
  }
  rle.counts.push_back(run);
  return rle;
}

std::uint64_t rle_area(const Rle& rle) {
  std::uint64_t n = 0;
  for (std::size_t i = 1; i < rle.counts.size(); i += 2) n += rle.counts[i];
  return n;
}

BinaryMask rle_decode(const Rle& rle) {
  SPSR_CHECK(rle.width >= 0 && rle.height >= 0, FormatError,
             "RLE: negative size");
  std::uint64_t sum = 0;
  for (auto c : rle.counts) sum += c;
  const auto expected = static_cast<std::uint64_t>(rle.width) * rle.height;
  SPSR_CHECK(sum == expected, FormatError,
             "RLE: counts sum to " + std::to_string(sum) + ", expected " +
                 std::to_string(expected));
  BinaryMask mask(rle.width, rle.height);
  std::uint64_t pos = 0;
  for (std::size_t i = 0; i < rle.counts.size(); ++i) {
    const bool fg = (i % 2) == 1;
    for (std::uint32_t k = 0; k < rle.counts[i]; ++k, ++pos) {
      if (fg) {
        const auto x = static_cast<int>(pos / rle.height);
        const auto y = static_cast<int>(pos % rle.height);
        mask.set(y, x, true);
      }
    }
  }
  return mask;
}

MaskOverlap mask_overlap(const BinaryMask& a, const BinaryMask& b) {
  SPSR_CHECK(a.same_canvas(b), DimensionError, "mask IoU: canvas mismatch");
  MaskOverlap o;
  const auto& pa = a.pixels();
  const auto& pb = b.pixels();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    o.intersection += pa[i] & pb[i];
    o.union_ += pa[i] | pb[i];
  }
  return o;
}

double mask_iou(const BinaryMask& a, const BinaryMask& b) {
  const auto o = mask_overlap(a, b);
  return o.union_ == 0 ? 0.0
                       : static_cast<double>(o.intersection) /
                             static_cast<double>(o.union_);
}

double rle_iou(const Rle& a, const Rle& b) {
  SPSR_CHECK(a.width == b.width && a.height == b.height, DimensionError,
             "RLE IoU: canvas mismatch");
  std::uint64_t inter = 0;
  std::size_t ia = 0, ib = 0;
  std::uint64_t ra = a.counts.empty() ? 0 : a.counts[0];
  std::uint64_t rb = b.counts.empty() ? 0 : b.counts[0];
  while (ia < a.counts.size() && ib < b.counts.size()) {
    if (ra == 0) {
      if (++ia < a.counts.size()) ra = a.counts[ia];
      continue;
    }
    if (rb == 0) {
      if (++ib < b.counts.size()) rb = b.counts[ib];
      continue;
    }
    const std::uint64_t step = std::min(ra, rb);
    if ((ia % 2) == 1 && (ib % 2) == 1) inter += step;
    ra -= step;
    rb -= step;
  }
  const std::uint64_t uni = rle_area(a) + rle_area(b) - inter;
  return uni == 0 ? 0.0
                  : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace spsr
