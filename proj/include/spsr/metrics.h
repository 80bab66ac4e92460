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

// COCO-style average precision, boundary IoU and panoptic quality.

#ifndef SPSR_METRICS_H_
#define SPSR_METRICS_H_

#include <map>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include "spsr/geometry.h"
#include "spsr/mask.h"

namespace spsr::metrics {

// ---------------------------------------------------------------------------
// Average precision
// ---------------------------------------------------------------------------

enum class MatchStatus { kTruePositive, kFalsePositive, kIgnored };

// Greedy matching of one image's predictions for one class. `ious` is a
// row-major num_preds x num_gts matrix. Predictions are visited by
// descending score (ties by index); each takes the unmatched ground truth
// with the highest IoU and is a true positive iff that IoU is strictly above
// `thresh`, in which case the ground truth leaves the pool.
//
// Ground truths flagged in `gt_ignore` never produce true positives: a
// prediction whose best candidate is an ignored ground truth is itself
// ignored, as is an unmatched prediction flagged in `pred_ignore_if_fp`.
// Returned statuses are indexed like the inputs.
std::vector<MatchStatus> match_predictions(
    std::span<const double> scores, std::span<const double> ious,
    std::size_t num_gts, double thresh, std::span<const bool> gt_ignore = {},
    std::span<const bool> pred_ignore_if_fp = {});

struct PrPoint {
  double recall = 0.0;
  double precision = 0.0;
};

struct PrCurve {
  std::vector<PrPoint> points;    // one per ranked prediction (k = 1..n)
  std::vector<double> modified;   // p_mod at each point's recall
  double area = 0.0;
};

// Builds the precision/recall curve from statuses already in ranked order
// (ignored entries are skipped) and integrates the monotone envelope
// p_mod(r) = max_{r' >= r} p(r') of the piecewise-linear curve exactly.
// The envelope extends flat down to r = 0 and is zero past the largest
// recall reached.
PrCurve pr_curve(std::span<const MatchStatus> ranked, std::size_t num_gts);

// AP of one class in one image at one IoU threshold. No ground truth gives 0.
double ap_single(std::span<const double> scores, std::span<const double> ious,
                 std::size_t num_gts, double thresh);

enum class GeometryKind { kBox, kMask, kBoundary };

struct EvalEntry {
  int image_id = 0;
  int class_id = 0;
  double score = 1.0;  // ignored for ground truth
  std::optional<geometry::Box> box;
  std::optional<BinaryMask> mask;

  // Mask pixel count when a mask exists, else box area.
  double area() const;
};

struct AreaRange {
  double lo = 0.0;
  double hi = 0.0;  // exclusive
};

inline constexpr AreaRange kAreaAll{0.0, 1e300};
inline constexpr AreaRange kAreaSmall{0.0, 32.0 * 32.0};
inline constexpr AreaRange kAreaMedium{32.0 * 32.0, 96.0 * 96.0};
inline constexpr AreaRange kAreaLarge{96.0 * 96.0, 1e300};

// The ten thresholds 0.50, 0.55, ..., 0.95.
std::vector<double> coco_iou_thresholds();

struct ApSuite {
  double ap = 0.0;
  double ap50 = 0.0;
  double ap75 = 0.0;
  double ap_small = 0.0;
  double ap_medium = 0.0;
  double ap_large = 0.0;
};

class ApEvaluator {
 public:
  ApEvaluator(std::span<const EvalEntry> preds,
              std::span<const EvalEntry> gts, GeometryKind kind,
              double boundary_d_frac = 0.02);

  // Mean over classes that have at least one in-range ground truth; classes
  // without any are skipped. Returns 0 when no class qualifies.
  double ap(double thresh, AreaRange range = kAreaAll) const;
  // Mean over the ten COCO thresholds, averaged per class first.
  double ap_coco(AreaRange range = kAreaAll) const;
  ApSuite suite() const;

 private:
  struct Group {  // one (class, image)
    std::vector<double> scores;
    std::vector<double> pred_areas;
    std::vector<double> gt_areas;
    std::vector<double> ious;  // preds x gts
  };

  // Per class: ranked (score, status) entries across images.
  std::optional<double> class_ap(int class_id, double thresh,
                                 AreaRange range) const;

  std::map<int, std::vector<Group>> groups_;
};

ApSuite ap_suite(std::span<const EvalEntry> preds,
                 std::span<const EvalEntry> gts, GeometryKind kind);

// ---------------------------------------------------------------------------
// Boundary IoU
// ---------------------------------------------------------------------------

// Band width in pixels for a canvas: round(d_frac * diagonal), at least 1.
int boundary_width(int width, int height, double d_frac = 0.02);

// Pixels of `mask` within `d` pixels (Chebyshev) of its contour: the mask
// minus its erosion by a (2d+1) x (2d+1) square. Outside the canvas counts
// as background.
BinaryMask boundary_band(const BinaryMask& mask, int d);

// IoU of the two masks restricted to the union of their boundary bands.
double boundary_iou(const BinaryMask& a, const BinaryMask& b,
                    double d_frac = 0.02);

// Same, reusing precomputed bands.
double boundary_iou_from_bands(const BinaryMask& a, const BinaryMask& band_a,
                               const BinaryMask& b, const BinaryMask& band_b);

// ---------------------------------------------------------------------------
// Panoptic quality
// ---------------------------------------------------------------------------

struct PanopticSegment {
  int class_id = 0;
  bool is_thing = true;
  BinaryMask mask;
  double score = 1.0;
};

struct PanopticImage {
  int image_id = 0;
  std::vector<PanopticSegment> segments;
};

struct PqClassStats {
  bool is_thing = true;
  int tp = 0;
  int fp = 0;
  int fn = 0;
  double iou_sum = 0.0;
  double pq = 0.0;
  double sq = 0.0;
  double rq = 0.0;
};

struct PqSummary {
  double pq = 0.0;
  double sq = 0.0;
  double rq = 0.0;
  int num_classes = 0;
};

struct PqReport {
  std::map<int, PqClassStats> per_class;
  PqSummary all;
  PqSummary things;
  PqSummary stuff;
};

// Segments within an image must be pixel-disjoint on both sides (throws
// ContractError otherwise). Segments of the same class match when their IoU
// is strictly above 0.5. Averages run over classes that occur in the ground
// truth. A class is a thing class iff it is in `thing_classes`.
PqReport pq(std::span<const PanopticImage> preds,
            std::span<const PanopticImage> gts,
            const std::set<int>& thing_classes);

// Throws ContractError if any two segments share a pixel.
void check_disjoint(std::span<const PanopticSegment> segments);

}  // namespace spsr::metrics

#endif  // SPSR_METRICS_H_
