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

#include <algorithm>
#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "properties.h"
#include "spsr/error.h"
#include "spsr/mask.h"
#include "spsr/metrics.h"

namespace spsr::metrics {
namespace {

using testing::Rng;

// ----- RLE ------------------------------------------------------------------

TEST(Rle, EmptyAndFull) {
  EXPECT_EQ(rle_encode(BinaryMask(3, 2)).counts, (std::vector<std::uint32_t>{6}));
  BinaryMask full(3, 2, std::vector<std::uint8_t>(6, 1));
  EXPECT_EQ(rle_encode(full).counts, (std::vector<std::uint32_t>{0, 6}));
}

TEST(Rle, ColumnMajor) {
  // 2x2, only (y=1, x=0) set: column-major order is (0,0), (1,0), (0,1), (1,1).
  BinaryMask m(2, 2);
  m.set(1, 0, true);
  EXPECT_EQ(rle_encode(m).counts, (std::vector<std::uint32_t>{1, 1, 2}));
}

TEST(Rle, RandomRoundTrip) {
  Rng rng(1);
  for (int c = 0; c < 1000; ++c) {
    const auto m = testing::random_mask(rng, 16, 16, testing::uniform(rng, 0, 1));
    const auto r = rle_encode(m);
    ASSERT_EQ(rle_decode(r), m);
    ASSERT_EQ(rle_area(r), m.area());
  }
}

TEST(Rle, CountSumMismatchThrows) {
  EXPECT_THROW(rle_decode({2, 2, {1, 2}}), FormatError);
}

TEST(Rle, IouMatchesPixelCount) {
  Rng rng(2);
  for (int c = 0; c < 300; ++c) {
    const int w = testing::uniform_int(rng, 1, 20), h = testing::uniform_int(rng, 1, 20);
    const auto a = testing::random_mask(rng, w, h, testing::uniform(rng, 0, 1));
    const auto b = testing::random_mask(rng, w, h, testing::uniform(rng, 0, 1));
    std::uint64_t inter = 0, uni = 0;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        inter += a.at(y, x) && b.at(y, x);
        uni += a.at(y, x) || b.at(y, x);
      }
    }
    const double want = uni == 0 ? 0.0 : static_cast<double>(inter) / uni;
    ASSERT_EQ(mask_iou(a, b), want);
    ASSERT_EQ(rle_iou(rle_encode(a), rle_encode(b)), want);
  }
}

// ----- AP -------------------------------------------------------------------

TEST(Ap, SinglePerfectMatch) {
  EXPECT_DOUBLE_EQ(ap_single(std::vector<double>{0.5}, std::vector<double>{1.0}, 1, 0.5), 1.0);
}

TEST(Ap, HandInstance) {
  const std::vector<double> scores{0.9, 0.8, 0.7};
  const std::vector<double> ious{1.0, 0.0, 0.0, 0.0, 0.0, 1.0};
  EXPECT_NEAR(ap_single(scores, ious, 2, 0.5), 0.5 * 1.0 + 0.5 * (2.0 / 3.0), 1e-9);
}

TEST(Ap, AllFalsePositives) {
  EXPECT_EQ(ap_single(std::vector<double>{0.9, 0.4}, std::vector<double>{0.1, 0.3}, 1, 0.5), 0.0);
}

TEST(Ap, NoGroundTruthIsZero) {
  EXPECT_EQ(ap_single(std::vector<double>{}, std::vector<double>{}, 0, 0.5), 0.0);
  EXPECT_EQ(ap_single(std::vector<double>{0.9}, std::vector<double>{}, 0, 0.5), 0.0);
}

TEST(Ap, IouEqualToThresholdIsNotAMatch) {
  EXPECT_EQ(ap_single(std::vector<double>{0.9}, std::vector<double>{0.5}, 1, 0.5), 0.0);
}

TEST(Ap, MatchedGroundTruthLeavesThePool) {
  // Both predictions overlap the single gt; the second is an FP.
  const auto st = match_predictions(std::vector<double>{0.9, 0.8},
                                    std::vector<double>{0.9, 0.95}, 1, 0.5);
  EXPECT_EQ(st[0], MatchStatus::kTruePositive);
  EXPECT_EQ(st[1], MatchStatus::kFalsePositive);
}

TEST(Ap, ModifiedCurveIsMonotoneAndAreaBounded) {
  Rng rng(3);
  for (int c = 0; c < 500; ++c) {
    const auto in = testing::random_ap_instance(rng);
    const auto st = match_predictions(in.scores, in.ious, in.num_gts, in.thresh);
    std::vector<MatchStatus> ranked;
    for (int p : geometry::score_order(in.scores)) ranked.push_back(st[p]);
    const auto curve = pr_curve(ranked, in.num_gts);
    for (std::size_t i = 1; i < curve.modified.size(); ++i) {
      ASSERT_LE(curve.modified[i], curve.modified[i - 1]);
    }
    ASSERT_GE(curve.area, 0.0);
    ASSERT_LE(curve.area, 1.0 + 1e-12);
  }
}

// Brute-force area: evaluate the envelope of the piecewise-linear curve on a
// fine recall grid. The maximum of a piecewise-linear function over [r, R]
// sits at r itself or at a vertex.
double sampled_area(const PrCurve& c) {
  if (c.points.empty()) return 0.0;
  const int n = 200000;
  double area = 0.0;
  for (int i = 0; i < n; ++i) {
    const double r = (i + 0.5) / n;
    if (r > c.points.back().recall) break;
    double best = 0.0;
    for (std::size_t k = 0; k < c.points.size(); ++k) {
      if (c.points[k].recall >= r) best = std::max(best, c.points[k].precision);
      if (k + 1 < c.points.size()) {
        const auto& p = c.points[k];
        const auto& q = c.points[k + 1];
        if (q.recall > p.recall && r >= p.recall && r <= q.recall) {
          best = std::max(best, p.precision + (q.precision - p.precision) *
                                                  (r - p.recall) / (q.recall - p.recall));
        }
      }
    }
    area += best / n;
  }
  return area;
}

TEST(Ap, ExactAreaMatchesSampledEnvelope) {
  Rng rng(4);
  for (int c = 0; c < 30; ++c) {
    const auto in = testing::random_ap_instance(rng);
    const auto st = match_predictions(in.scores, in.ious, in.num_gts, in.thresh);
    std::vector<MatchStatus> ranked;
    for (int p : geometry::score_order(in.scores)) ranked.push_back(st[p]);
    const auto curve = pr_curve(ranked, in.num_gts);
    ASSERT_NEAR(curve.area, sampled_area(curve), 1e-4);
  }
}

TEST(Ap, MonotoneTransformInvariance) {
  const auto r = testing::ap_invariance_suite(200, 5);
  EXPECT_EQ(r.failures, 0) << r.first_failure;
}

TEST(Ap, FalsePositiveDeletion) {
  const auto r = testing::ap_fp_deletion_suite(200, 6);
  EXPECT_EQ(r.failures, 0) << r.first_failure;
}

EvalEntry box_entry(int image, int cls, geometry::Box b, double score = 1.0) {
  EvalEntry e;
  e.image_id = image;
  e.class_id = cls;
  e.box = b;
  e.score = score;
  return e;
}

TEST(ApSuite, PerfectDetectionsScoreOne) {
  const std::vector<EvalEntry> gts{box_entry(0, 1, {0, 0, 50, 50}),
                                   box_entry(0, 1, {100, 100, 250, 250})};
  const auto s = ap_suite(gts, gts, GeometryKind::kBox);
  EXPECT_EQ(s.ap, 1.0);
  EXPECT_EQ(s.ap50, 1.0);
  EXPECT_EQ(s.ap75, 1.0);
  EXPECT_EQ(s.ap_medium, 1.0);
  EXPECT_EQ(s.ap_large, 1.0);
  EXPECT_EQ(s.ap_small, 0.0);  // no small gts: every class skipped
}

TEST(ApSuite, SmallGroundTruthOnlyCountsAsSmall) {
  const std::vector<EvalEntry> gts{box_entry(0, 0, {0, 0, 10, 10}),
                                   box_entry(0, 0, {100, 100, 300, 300})};
  const std::vector<EvalEntry> preds{box_entry(0, 0, {0, 0, 10, 10}, 0.9)};
  const auto s = ap_suite(preds, gts, GeometryKind::kBox);
  EXPECT_EQ(s.ap_small, 1.0);
  EXPECT_EQ(s.ap_large, 0.0);
  EXPECT_DOUBLE_EQ(s.ap, 0.5);
}

TEST(ApSuite, EqualsMeanOfSingleClassAp) {
  Rng rng(7);
  for (int c = 0; c < 50; ++c) {
    const auto gts = testing::random_boxes(rng, 1, 1, 5, false);
    const auto preds = testing::jittered_predictions(rng, gts, 1, 1);
    std::vector<double> scores, ious;
    for (const auto& p : preds) {
      scores.push_back(p.score);
      for (const auto& g : gts) ious.push_back(geometry::iou(*p.box, *g.box));
    }
    if (gts.empty()) continue;
    double sum = 0.0;
    for (double t : coco_iou_thresholds()) sum += ap_single(scores, ious, gts.size(), t);
    const ApEvaluator ev(preds, gts, GeometryKind::kBox);
    ASSERT_EQ(ev.ap_coco(), sum / 10.0);
    ASSERT_EQ(ev.ap(0.5), ap_single(scores, ious, gts.size(), 0.5));
  }
}

TEST(ApSuite, ClassWithoutGroundTruthIsSkipped) {
  const std::vector<EvalEntry> gts{box_entry(0, 0, {0, 0, 50, 50})};
  const std::vector<EvalEntry> preds{box_entry(0, 0, {0, 0, 50, 50}, 0.9),
                                     box_entry(0, 7, {0, 0, 50, 50}, 0.9)};
  EXPECT_EQ(ap_suite(preds, gts, GeometryKind::kBox).ap, 1.0);
}

TEST(ApSuite, MaskGeometryUsesPixelIou) {
  BinaryMask a(8, 8), b(8, 8);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 8; ++x) a.set(y, x, true);
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 8; ++x) b.set(y, x, true);
  EvalEntry g, p;
  g.mask = a;
  p.mask = b;  // IoU 0.75
  p.score = 0.5;
  const std::vector<EvalEntry> gts{g}, preds{p};
  const ApEvaluator ev(preds, gts, GeometryKind::kMask);
  EXPECT_EQ(ev.ap(0.7), 1.0);
  EXPECT_EQ(ev.ap(0.75), 0.0);
}

// ----- boundary IoU ---------------------------------------------------------

BinaryMask square(int n, int x0, int y0, int x1, int y1) {
  BinaryMask m(n, n);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) m.set(y, x, true);
  return m;
}

TEST(BoundaryIou, IdenticalAndDisjoint) {
  const auto a = square(64, 10, 10, 30, 30);
  EXPECT_EQ(boundary_iou(a, a), 1.0);
  EXPECT_EQ(boundary_iou(a, square(64, 40, 40, 60, 60)), 0.0);
}

TEST(BoundaryIou, InteriorDifferencesMatterLess) {
  auto a = square(64, 4, 4, 60, 60);
  auto b = a;
  for (int y = 20; y < 44; ++y)
    for (int x = 20; x < 44; ++x) b.set(y, x, false);
  EXPECT_GT(boundary_iou(a, b), mask_iou(a, b));
}

TEST(BoundaryIou, BandMatchesBruteForce) {
  Rng rng(8);
  for (int c = 0; c < 40; ++c) {
    const int w = testing::uniform_int(rng, 1, 24), h = testing::uniform_int(rng, 1, 24);
    const auto m = testing::random_mask(rng, w, h, testing::uniform(rng, 0.3, 1.0));
    const int d = testing::uniform_int(rng, 1, 4);
    const auto band = boundary_band(m, d);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        bool interior = m.at(y, x);
        for (int dy = -d; dy <= d && interior; ++dy) {
          for (int dx = -d; dx <= d && interior; ++dx) {
            const int yy = y + dy, xx = x + dx;
            interior = yy >= 0 && yy < h && xx >= 0 && xx < w && m.at(yy, xx);
          }
        }
        ASSERT_EQ(band.at(y, x), m.at(y, x) && !interior);
      }
    }
  }
}

TEST(BoundaryIou, SymmetricAndSelfOne) {
  Rng rng(9);
  for (int c = 0; c < 50; ++c) {
    const auto a = testing::random_mask(rng, 20, 20, 0.6);
    const auto b = testing::random_mask(rng, 20, 20, 0.6);
    if (a.area() == 0) continue;
    ASSERT_EQ(boundary_iou(a, a), 1.0);
    ASSERT_EQ(boundary_iou(a, b), boundary_iou(b, a));
  }
}

TEST(BoundaryIou, WidthIsTwoPercentOfDiagonal) {
  EXPECT_EQ(boundary_width(448, 448), 13);  // 0.02 * 633.6
  EXPECT_EQ(boundary_width(10, 10), 1);
  EXPECT_THROW(boundary_iou(BinaryMask(2, 2), BinaryMask(3, 2)), DimensionError);
}

// ----- PQ -------------------------------------------------------------------

PanopticSegment seg(int cls, BinaryMask m, bool thing = true) {
  PanopticSegment s;
  s.class_id = cls;
  s.is_thing = thing;
  s.mask = std::move(m);
  return s;
}

TEST(Pq, Perfect) {
  const std::vector<PanopticImage> imgs{
      {0, {seg(0, square(10, 0, 0, 5, 5)), seg(1, square(10, 5, 5, 10, 10), false)}}};
  const auto r = pq(imgs, imgs, {0});
  EXPECT_EQ(r.all.pq, 1.0);
  EXPECT_EQ(r.all.sq, 1.0);
  EXPECT_EQ(r.all.rq, 1.0);
  EXPECT_EQ(r.things.num_classes, 1);
  EXPECT_EQ(r.stuff.num_classes, 1);
}

// One TP at IoU 0.8, one FN and one FP, single class.
std::pair<std::vector<PanopticImage>, std::vector<PanopticImage>> toy_pq() {
  const auto g1 = square(20, 0, 0, 10, 10);   // 100 px
  const auto p1 = square(20, 0, 0, 10, 8);    // 80 px inside: IoU 0.8
  const auto g2 = square(20, 12, 12, 16, 16);  // missed
  const auto p2 = square(20, 12, 0, 16, 4);    // spurious
  return {{{0, {seg(0, p1), seg(0, p2)}}}, {{0, {seg(0, g1), seg(0, g2)}}}};
}

TEST(Pq, ToyInstance) {
  const auto [preds, gts] = toy_pq();
  const auto r = pq(preds, gts, {0});
  const auto& c = r.per_class.at(0);
  EXPECT_EQ(c.tp, 1);
  EXPECT_EQ(c.fp, 1);
  EXPECT_EQ(c.fn, 1);
  EXPECT_DOUBLE_EQ(c.pq, 0.4);
  EXPECT_DOUBLE_EQ(c.sq, 0.8);
  EXPECT_DOUBLE_EQ(c.rq, 0.5);
}

TEST(Pq, OverlappingInputRejected) {
  auto [preds, gts] = toy_pq();
  preds[0].segments.push_back(preds[0].segments[0]);
  EXPECT_THROW(pq(preds, gts, {0}), ContractError);
}

TEST(Pq, AddingFalsePositiveLowersRqAndPq) {
  auto [preds, gts] = toy_pq();
  const auto before = pq(preds, gts, {0}).per_class.at(0);
  preds[0].segments.push_back(seg(0, square(20, 17, 17, 20, 20)));
  const auto after = pq(preds, gts, {0}).per_class.at(0);
  EXPECT_LT(after.rq, before.rq);
  EXPECT_LT(after.pq, before.pq);
}

TEST(Pq, HalfOverlapIsNotAMatch) {
  const std::vector<PanopticImage> gts{{0, {seg(0, square(10, 0, 0, 4, 10))}}};
  // IoU exactly 0.5: 20 shared pixels out of a 40-pixel union.
  const std::vector<PanopticImage> preds{{0, {seg(0, square(10, 0, 0, 2, 10))}}};
  const auto r = pq(preds, gts, {0});
  EXPECT_EQ(r.per_class.at(0).tp, 0);
}

TEST(Pq, IdentityOverRandomInstances) {
  const auto r = testing::pq_identity_suite(200, 10);
  EXPECT_EQ(r.failures, 0) << r.first_failure;
}

TEST(Pq, DuplicateImageIdRejected) {
  const std::vector<PanopticImage> imgs{{0, {}}, {0, {}}};
  EXPECT_THROW(pq(imgs, imgs, {}), FormatError);
}

}  // namespace
}  // namespace spsr::metrics
