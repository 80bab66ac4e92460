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

#include "spsr/metrics.h"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <string>
#include <tuple>
#include <utility>

#include "spsr/error.h"

namespace spsr::metrics {

// ---------------------------------------------------------------------------
// Average precision
// ---------------------------------------------------------------------------

std::vector<MatchStatus> match_predictions(
    std::span<const double> scores, std::span<const double> ious,
    std::size_t num_gts, double thresh, std::span<const bool> gt_ignore,
    std::span<const bool> pred_ignore_if_fp) {
  const std::size_t np = scores.size();
  SPSR_CHECK(ious.size() == np * num_gts, DimensionError,
             "match_predictions: IoU matrix is not preds x gts");
  SPSR_CHECK(gt_ignore.empty() || gt_ignore.size() == num_gts, DimensionError,
             "match_predictions: gt_ignore size mismatch");
  SPSR_CHECK(pred_ignore_if_fp.empty() || pred_ignore_if_fp.size() == np,
             DimensionError, "match_predictions: pred flag size mismatch");
  auto ignored_gt = [&](std::size_t g) {
    return !gt_ignore.empty() && gt_ignore[g];
  };

  std::vector<MatchStatus> status(np, MatchStatus::kFalsePositive);
  std::vector<bool> taken(num_gts, false);
  for (int p : geometry::score_order(scores)) {
    // Best unmatched target, preferring regular over ignored ones.
    int best = -1;
    double best_iou = -1.0;
    for (int pass = 0; pass < 2 && best < 0; ++pass) {
      for (std::size_t g = 0; g < num_gts; ++g) {
        if (taken[g] || ignored_gt(g) != (pass == 1)) continue;
        const double v = ious[p * num_gts + g];
        if (v > best_iou) {
          best_iou = v;
          best = static_cast<int>(g);
        }
      }
      if (best >= 0 && !(best_iou > thresh)) {
        best = -1;
        best_iou = -1.0;
      }
    }
    if (best >= 0) {
      taken[best] = true;
      status[p] = ignored_gt(best) ? MatchStatus::kIgnored
                                   : MatchStatus::kTruePositive;
    } else if (!pred_ignore_if_fp.empty() && pred_ignore_if_fp[p]) {
      status[p] = MatchStatus::kIgnored;
    }
  }
  return status;
}

namespace {

// Integral over [0, len] of max(floor, a + (b - a) * t / len).
double area_above_floor(double a, double b, double floor, double len) {
  if (len <= 0.0) return 0.0;
  if (a <= floor && b <= floor) return floor * len;
  if (a >= floor && b >= floor) return 0.5 * (a + b) * len;
  const double t = (floor - a) / (b - a) * len;
  return a > floor ? 0.5 * (a + floor) * t + floor * (len - t)
                   : floor * t + 0.5 * (floor + b) * (len - t);
}

}  // namespace

PrCurve pr_curve(std::span<const MatchStatus> ranked, std::size_t num_gts) {
  PrCurve curve;
  if (num_gts == 0) return curve;
  std::size_t tp = 0, k = 0;
  for (auto s : ranked) {
    if (s == MatchStatus::kIgnored) continue;
    ++k;
    if (s == MatchStatus::kTruePositive) ++tp;
    curve.points.push_back({static_cast<double>(tp) / num_gts,
                            static_cast<double>(tp) / k});
  }
  const std::size_t n = curve.points.size();
  if (n == 0) return curve;

  // suffix[i] = max precision over points i..n-1. Recall is non-decreasing
  // in k, so this is the envelope over all vertices at recall >= r_i.
  std::vector<double> suffix(n);
  suffix[n - 1] = curve.points[n - 1].precision;
  for (std::size_t i = n - 1; i-- > 0;) {
    suffix[i] = std::max(suffix[i + 1], curve.points[i].precision);
  }
  curve.modified.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    // Vertices sharing this recall further down the ranking count too.
    std::size_t j = i;
    while (j > 0 && curve.points[j - 1].recall == curve.points[i].recall) --j;
    curve.modified[i] = suffix[j];
  }

  // Flat extension from r = 0 to the first recall level.
  double area = curve.points[0].recall * suffix[0];
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const auto& p = curve.points[i];
    const auto& q = curve.points[i + 1];
    if (q.recall == p.recall) continue;
    // On (p.recall, q.recall] the envelope is the larger of the segment p->q
    // and the best vertex at or beyond q.
    area += area_above_floor(p.precision, q.precision, suffix[i + 1],
                             q.recall - p.recall);
  }
  curve.area = area;
  return curve;
}

double ap_single(std::span<const double> scores, std::span<const double> ious,
                 std::size_t num_gts, double thresh) {
  SPSR_CHECK(thresh > 0.0 && thresh <= 1.0, ContractError,
             "ap_single: threshold must lie in (0, 1]");
  const auto status = match_predictions(scores, ious, num_gts, thresh);
  std::vector<MatchStatus> ranked;
  for (int p : geometry::score_order(scores)) ranked.push_back(status[p]);
  return pr_curve(ranked, num_gts).area;
}

double EvalEntry::area() const {
  if (mask) return static_cast<double>(mask->area());
  if (box) return box->area();
  return 0.0;
}

std::vector<double> coco_iou_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back((50 + 5 * i) / 100.0);
  return t;
}

namespace {

bool in_range(double area, AreaRange r) { return area >= r.lo && area < r.hi; }

const BinaryMask& require_mask(const EvalEntry& e) {
  SPSR_CHECK(e.mask.has_value(), FormatError,
             "mask evaluation: entry for image " + std::to_string(e.image_id) +
                 " has no mask");
  return *e.mask;
}

}  // namespace

ApEvaluator::ApEvaluator(std::span<const EvalEntry> preds,
                         std::span<const EvalEntry> gts, GeometryKind kind,
                         double boundary_d_frac) {
  using Key = std::pair<int, int>;  // class, image
  std::map<Key, std::pair<std::vector<const EvalEntry*>,
                          std::vector<const EvalEntry*>>>
      by_key;
  for (const auto& p : preds) by_key[{p.class_id, p.image_id}].first.push_back(&p);
  for (const auto& g : gts) by_key[{g.class_id, g.image_id}].second.push_back(&g);

  for (const auto& [key, lists] : by_key) {
    const auto& [ps, gs] = lists;
    Group grp;
    for (const auto* p : ps) {
      grp.scores.push_back(p->score);
      grp.pred_areas.push_back(p->area());
    }
    for (const auto* g : gs) grp.gt_areas.push_back(g->area());
    grp.ious.resize(ps.size() * gs.size());

    std::vector<BinaryMask> pred_bands, gt_bands;
    if (kind == GeometryKind::kBoundary) {
      for (const auto* p : ps) {
        const auto& m = require_mask(*p);
        pred_bands.push_back(boundary_band(
            m, boundary_width(m.width(), m.height(), boundary_d_frac)));
      }
      for (const auto* g : gs) {
        const auto& m = require_mask(*g);
        gt_bands.push_back(boundary_band(
            m, boundary_width(m.width(), m.height(), boundary_d_frac)));
      }
    }
    for (std::size_t i = 0; i < ps.size(); ++i) {
      for (std::size_t j = 0; j < gs.size(); ++j) {
        double v = 0.0;
        switch (kind) {
          case GeometryKind::kBox:
            SPSR_CHECK(ps[i]->box && gs[j]->box, FormatError,
                       "box evaluation: entry without a box");
            v = geometry::iou(*ps[i]->box, *gs[j]->box);
            break;
          case GeometryKind::kMask:
            v = mask_iou(require_mask(*ps[i]), require_mask(*gs[j]));
            break;
          case GeometryKind::kBoundary:
            v = boundary_iou_from_bands(*ps[i]->mask, pred_bands[i],
                                        *gs[j]->mask, gt_bands[j]);
            break;
        }
        grp.ious[i * gs.size() + j] = v;
      }
    }
    groups_[key.first].push_back(std::move(grp));
  }
}

std::optional<double> ApEvaluator::class_ap(int class_id, double thresh,
                                            AreaRange range) const {
  const auto it = groups_.find(class_id);
  if (it == groups_.end()) return std::nullopt;

  std::size_t num_gts = 0;
  // (score, group, rank-in-group, status)
  std::vector<std::tuple<double, std::size_t, std::size_t, MatchStatus>> all;
  for (std::size_t gi = 0; gi < it->second.size(); ++gi) {
    const auto& grp = it->second[gi];
    std::vector<bool> gt_ignore(grp.gt_areas.size());
    std::vector<bool> pred_ignore(grp.scores.size());
    for (std::size_t j = 0; j < grp.gt_areas.size(); ++j) {
      gt_ignore[j] = !in_range(grp.gt_areas[j], range);
      if (!gt_ignore[j]) ++num_gts;
    }
    for (std::size_t i = 0; i < grp.scores.size(); ++i) {
      pred_ignore[i] = !in_range(grp.pred_areas[i], range);
    }
    // std::vector<bool> has no contiguous storage; copy into plain arrays.
    std::unique_ptr<bool[]> gi_buf(new bool[gt_ignore.size() + 1]);
    std::unique_ptr<bool[]> pi_buf(new bool[pred_ignore.size() + 1]);
    std::copy(gt_ignore.begin(), gt_ignore.end(), gi_buf.get());
    std::copy(pred_ignore.begin(), pred_ignore.end(), pi_buf.get());
    const auto status = match_predictions(
        grp.scores, grp.ious, grp.gt_areas.size(), thresh,
        std::span<const bool>(gi_buf.get(), gt_ignore.size()),
        std::span<const bool>(pi_buf.get(), pred_ignore.size()));
    const auto order = geometry::score_order(grp.scores);
    for (std::size_t r = 0; r < order.size(); ++r) {
      all.emplace_back(grp.scores[order[r]], gi, r, status[order[r]]);
    }
  }
  if (num_gts == 0) return std::nullopt;
  std::stable_sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
    return std::get<0>(a) > std::get<0>(b);
  });
  std::vector<MatchStatus> ranked;
  ranked.reserve(all.size());
  for (const auto& e : all) ranked.push_back(std::get<3>(e));
  return pr_curve(ranked, num_gts).area;
}

double ApEvaluator::ap(double thresh, AreaRange range) const {
  double sum = 0.0;
  int n = 0;
  for (const auto& [cls, unused] : groups_) {
    if (auto v = class_ap(cls, thresh, range)) {
      sum += *v;
      ++n;
    }
  }
  return n > 0 ? sum / n : 0.0;
}

double ApEvaluator::ap_coco(AreaRange range) const {
  const auto thresholds = coco_iou_thresholds();
  double sum = 0.0;
  int n = 0;
  for (const auto& [cls, unused] : groups_) {
    double cls_sum = 0.0;
    bool defined = false;
    for (double t : thresholds) {
      if (auto v = class_ap(cls, t, range)) {
        cls_sum += *v;
        defined = true;
      }
    }
    if (defined) {
      sum += cls_sum / static_cast<double>(thresholds.size());
      ++n;
    }
  }
  return n > 0 ? sum / n : 0.0;
}

ApSuite ApEvaluator::suite() const {
  ApSuite s;
  s.ap = ap_coco(kAreaAll);
  s.ap50 = ap(0.5);
  s.ap75 = ap(0.75);
  s.ap_small = ap_coco(kAreaSmall);
  s.ap_medium = ap_coco(kAreaMedium);
  s.ap_large = ap_coco(kAreaLarge);
  return s;
}

ApSuite ap_suite(std::span<const EvalEntry> preds,
                 std::span<const EvalEntry> gts, GeometryKind kind) {
  return ApEvaluator(preds, gts, kind).suite();
}

// ---------------------------------------------------------------------------
// Boundary IoU
// ---------------------------------------------------------------------------

int boundary_width(int width, int height, double d_frac) {
  const double diag = std::hypot(static_cast<double>(width),
                                 static_cast<double>(height));
  return std::max(1, static_cast<int>(std::lround(d_frac * diag)));
}

namespace {

// 1D erosion along a line of n values with stride: out[i] = 1 iff every
// position in [i - d, i + d] is inside [0, n) and set.
void erode_line(const std::uint8_t* in, std::uint8_t* out, int n,
                std::size_t stride, int d, std::vector<int>& prefix) {
  prefix.assign(n + 1, 0);
  for (int i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + (in[i * stride] ? 0 : 1);
  for (int i = 0; i < n; ++i) {
    const int lo = i - d, hi = i + d;
    const bool inside = lo >= 0 && hi < n;
    out[i * stride] = inside && prefix[hi + 1] - prefix[lo] == 0 ? 1 : 0;
  }
}

}  // namespace

BinaryMask boundary_band(const BinaryMask& mask, int d) {
  SPSR_CHECK(d >= 0, ContractError, "boundary_band: negative width");
  const int w = mask.width(), h = mask.height();
  std::vector<std::uint8_t> tmp(mask.pixels().size());
  std::vector<std::uint8_t> eroded(mask.pixels().size());
  std::vector<int> prefix;
  const auto* src = mask.pixels().data();
  for (int y = 0; y < h; ++y) {
    erode_line(src + static_cast<std::size_t>(y) * w,
               tmp.data() + static_cast<std::size_t>(y) * w, w, 1, d, prefix);
  }
  for (int x = 0; x < w; ++x) {
    erode_line(tmp.data() + x, eroded.data() + x, h, w, d, prefix);
  }
  std::vector<std::uint8_t> band(mask.pixels().size());
  for (std::size_t i = 0; i < band.size(); ++i) {
    band[i] = src[i] && !eroded[i] ? 1 : 0;
  }
  return BinaryMask(w, h, std::move(band));
}

double boundary_iou_from_bands(const BinaryMask& a, const BinaryMask& band_a,
                               const BinaryMask& b, const BinaryMask& band_b) {
  SPSR_CHECK(a.same_canvas(b) && a.same_canvas(band_a) &&
                 b.same_canvas(band_b),
             DimensionError, "boundary_iou: canvas mismatch");
  const auto& pa = a.pixels();
  const auto& pb = b.pixels();
  const auto& ba = band_a.pixels();
  const auto& bb = band_b.pixels();
  std::uint64_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (!(ba[i] | bb[i])) continue;
    inter += pa[i] & pb[i];
    uni += pa[i] | pb[i];
  }
  return uni == 0 ? 0.0
                  : static_cast<double>(inter) / static_cast<double>(uni);
}

double boundary_iou(const BinaryMask& a, const BinaryMask& b, double d_frac) {
  SPSR_CHECK(a.same_canvas(b), DimensionError,
             "boundary_iou: canvas mismatch");
  const int d = boundary_width(a.width(), a.height(), d_frac);
  return boundary_iou_from_bands(a, boundary_band(a, d), b,
                                 boundary_band(b, d));
}

// ---------------------------------------------------------------------------
// Panoptic quality
// ---------------------------------------------------------------------------

void check_disjoint(std::span<const PanopticSegment> segments) {
  if (segments.empty()) return;
  const auto& canvas = segments.front().mask;
  std::vector<std::uint8_t> seen(canvas.pixels().size(), 0);
  for (std::size_t s = 0; s < segments.size(); ++s) {
    const auto& m = segments[s].mask;
    SPSR_CHECK(m.same_canvas(canvas), DimensionError,
               "panoptic segments do not share a canvas");
    const auto& px = m.pixels();
    for (std::size_t i = 0; i < px.size(); ++i) {
      if (!px[i]) continue;
      SPSR_CHECK(!seen[i], ContractError,
                 "panoptic segments overlap (segment " + std::to_string(s) +
                     ")");
      seen[i] = 1;
    }
  }
}

namespace {

void finish(PqClassStats& c) {
  const double denom = c.tp + 0.5 * c.fp + 0.5 * c.fn;
  c.pq = denom > 0.0 ? c.iou_sum / denom : 0.0;
  c.sq = c.tp > 0 ? c.iou_sum / c.tp : 0.0;
  c.rq = denom > 0.0 ? c.tp / denom : 0.0;
}

PqSummary average(const std::map<int, PqClassStats>& per_class,
                  const std::set<int>& present, int want /* -1 all, 1 thing, 0 stuff */) {
  PqSummary s;
  for (const auto& [cls, st] : per_class) {
    if (!present.contains(cls)) continue;
    if (want >= 0 && st.is_thing != (want == 1)) continue;
    s.pq += st.pq;
    s.sq += st.sq;
    s.rq += st.rq;
    ++s.num_classes;
  }
  if (s.num_classes > 0) {
    s.pq /= s.num_classes;
    s.sq /= s.num_classes;
    s.rq /= s.num_classes;
  }
  return s;
}

}  // namespace

PqReport pq(std::span<const PanopticImage> preds,
            std::span<const PanopticImage> gts,
            const std::set<int>& thing_classes) {
  std::map<int, std::pair<const PanopticImage*, const PanopticImage*>> images;
  for (const auto& p : preds) {
    SPSR_CHECK(images[p.image_id].first == nullptr, FormatError,
               "pq: duplicate prediction image " + std::to_string(p.image_id));
    images[p.image_id].first = &p;
  }
  for (const auto& g : gts) {
    SPSR_CHECK(images[g.image_id].second == nullptr, FormatError,
               "pq: duplicate ground-truth image " +
                   std::to_string(g.image_id));
    images[g.image_id].second = &g;
  }

  PqReport report;
  std::set<int> present;
  auto stats = [&](int cls) -> PqClassStats& {
    auto& st = report.per_class[cls];
    st.is_thing = thing_classes.contains(cls);
    return st;
  };

  static const std::vector<PanopticSegment> kNone;
  for (const auto& [id, pair] : images) {
    const auto& ps = pair.first ? pair.first->segments : kNone;
    const auto& gs = pair.second ? pair.second->segments : kNone;
    check_disjoint(ps);
    check_disjoint(gs);
    std::vector<bool> p_matched(ps.size(), false), g_matched(gs.size(), false);
    for (std::size_t j = 0; j < gs.size(); ++j) {
      present.insert(gs[j].class_id);
      for (std::size_t i = 0; i < ps.size(); ++i) {
        if (p_matched[i] || ps[i].class_id != gs[j].class_id) continue;
        const double v = mask_iou(ps[i].mask, gs[j].mask);
        if (v > 0.5) {
          p_matched[i] = g_matched[j] = true;
          auto& st = stats(gs[j].class_id);
          ++st.tp;
          st.iou_sum += v;
          break;
        }
      }
    }
    for (std::size_t j = 0; j < gs.size(); ++j) {
      if (!g_matched[j]) ++stats(gs[j].class_id).fn;
    }
    for (std::size_t i = 0; i < ps.size(); ++i) {
      if (!p_matched[i]) ++stats(ps[i].class_id).fp;
    }
  }
  for (auto& [cls, st] : report.per_class) finish(st);
  report.all = average(report.per_class, present, -1);
  report.things = average(report.per_class, present, 1);
  report.stuff = average(report.per_class, present, 0);
  return report;
}

}  // namespace spsr::metrics
