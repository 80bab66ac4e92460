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

#ifndef SPSR_MASK_H_
#define SPSR_MASK_H_

#include <cstdint>
#include <vector>

namespace spsr {

// Column-major run lengths, alternating background / foreground and always
// starting with a (possibly empty) background run.
struct Rle {
  int width = 0;
  int height = 0;
  std::vector<std::uint32_t> counts;

  bool operator==(const Rle&) const = default;
};

class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int width, int height);  // all background
  BinaryMask(int width, int height, std::vector<std::uint8_t> pixels);

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty_canvas() const { return width_ == 0 || height_ == 0; }

  bool at(int y, int x) const {
    return pixels_[static_cast<std::size_t>(y) * width_ + x] != 0;
  }
  void set(int y, int x, bool v) {
    pixels_[static_cast<std::size_t>(y) * width_ + x] = v ? 1 : 0;
  }
  bool same_canvas(const BinaryMask& o) const {
    return width_ == o.width_ && height_ == o.height_;
  }

  std::uint64_t area() const;
  // Row-major 0/1 pixels.
  const std::vector<std::uint8_t>& pixels() const { return pixels_; }

  bool operator==(const BinaryMask&) const = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> pixels_;
};

Rle rle_encode(const BinaryMask& mask);
// Throws FormatError when the counts do not sum to width * height.
BinaryMask rle_decode(const Rle& rle);

std::uint64_t rle_area(const Rle& rle);

// Pixel IoU; 0 when the union is empty. Throws DimensionError on canvas
// mismatch.
double mask_iou(const BinaryMask& a, const BinaryMask& b);
// Same value computed by merging runs, without decoding.
double rle_iou(const Rle& a, const Rle& b);

struct MaskOverlap {
  std::uint64_t intersection = 0;
  std::uint64_t union_ = 0;
};
MaskOverlap mask_overlap(const BinaryMask& a, const BinaryMask& b);

}  // namespace spsr

#endif  // SPSR_MASK_H_
