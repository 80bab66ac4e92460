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

// Box geometry, anchors, box encoding, static matching and duplicate removal.
// Ties (equal IoU, equal score) are always broken by ascending index.

#ifndef SPSR_GEOMETRY_H_
#define SPSR_GEOMETRY_H_

#include <span>
#include <vector>

namespace spsr {
class BinaryMask;
}

namespace spsr::geometry {

struct Box {
  double x0 = 0.0;
  double y0 = 0.0;
  double x1 = 0.0;
  double y1 = 0.0;

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  double area() const { return width() * height(); }
  double cx() const { return 0.5 * (x0 + x1); }
  double cy() const { return 0.5 * (y0 + y1); }
  bool valid() const { return x1 >= x0 && y1 >= y0; }
  bool operator==(const Box&) const = default;
};

double iou(const Box& a, const Box& b);

struct IouVariants {
  double iou = 0.0;
  double giou = 0.0;
  double diou = 0.0;
  double ciou = 0.0;
  double eiou = 0.0;
};

// Penalized IoUs (GIoU, DIoU, CIoU, EIoU) as scalar values; the regression
// losses are 1 - value.
IouVariants iou_variants(const Box& a, const Box& b);

struct AnchorSpec {
  std::vector<double> sizes;   // scale multipliers of the base size
  std::vector<double> ratios;  // width / height
  std::vector<int> levels;     // pyramid level l has stride 2^l
  double base_multiplier = 4.0;  // base size = base_multiplier * stride

  // 3 sizes x 3 ratios = 9 anchor types per cell.
  static AnchorSpec retinanet(std::vector<int> levels);
  int num_types() const {
    return static_cast<int>(sizes.size() * ratios.size());
  }
};

struct GridDims {
  int height = 0;
  int width = 0;
};

struct Anchor {
  Box box;
  int type = 0;   // size_index * ratios.size() + ratio_index
  int level = 0;
};

// Order: level, row, column, type. `grids` has one entry per spec level.
std::vector<Anchor> gen_anchors(const AnchorSpec& spec,
                                std::span<const GridDims> grids);

struct BoxDeltas {
  double dx = 0.0;
  double dy = 0.0;
  double dw = 0.0;
  double dh = 0.0;
};

BoxDeltas encode_box(const Box& anchor, const Box& gt);
Box decode_box(const Box& anchor, const BoxDeltas& deltas);

inline constexpr int kStage1TopK = 5;
inline constexpr int kStage2TopK = 15;

struct MatchResult {
  std::vector<int> anchor_to_gt;             // -1 for negatives
  std::vector<std::vector<int>> gt_anchors;  // ascending anchor index
};

// Static top-k matching: depends on anchors and ground truth only.
MatchResult topk_match(std::span<const Box> anchors, std::span<const Box> gts,
                       int k);

struct ScoredBox {
  Box box;
  double score = 0.0;
};

inline constexpr double kNmsThreshold = 0.50;
inline constexpr double kNmsThresholdBest = 0.65;
inline constexpr double kNmsThresholdAp75 = 0.70;

// Greedy NMS. Returns kept indices in descending score order.
std::vector<int> nms(std::span<const ScoredBox> dets, double thresh);

struct ClassDetection {
  Box box;
  int box_index = 0;
  int label = 0;
  double score = 0.0;
};

// Expands every box into one detection per class, applies class-aware NMS
// and keeps the `top` highest scores. scores[i] is the class-score vector of
// boxes[i].
std::vector<ClassDetection> multiclass_inference(
    std::span<const Box> boxes, const std::vector<std::vector<double>>& scores,
    int top = 100, double nms_thresh = kNmsThreshold);

// Ground-truth-informed duplicate removal used as an upper bound. In score
// order, a detection is removed when it overlaps no still-unmatched ground
// truth by at least `overlap_thresh` and has IoU >= 0.5 with an already
// kept detection. Returns kept indices in descending score order.
std::vector<int> upbnd_removal(std::span<const ScoredBox> dets,
                               std::span<const Box> gts,
                               double overlap_thresh);

struct ScoredMask {
  const BinaryMask* mask = nullptr;
  double score = 0.0;
};

// Greedy NMS with mask IoU. All masks must share a canvas.
std::vector<int> mask_nms(std::span<const ScoredMask> masks, double thresh);

// Indices sorted by descending score, ties by ascending index.
std::vector<int> score_order(std::span<const double> scores);

}  // namespace spsr::geometry

#endif  // SPSR_GEOMETRY_H_
