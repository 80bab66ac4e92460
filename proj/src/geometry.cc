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

#include "spsr/geometry.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "spsr/error.h"
#include "spsr/mask.h"

namespace spsr::geometry {
namespace {

Box enclosing(const Box& a, const Box& b) {
  return {std::min(a.x0, b.x0), std::min(a.y0, b.y0), std::max(a.x1, b.x1),
          std::max(a.y1, b.y1)};
}

double intersection_area(const Box& a, const Box& b) {
  const double w = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
  const double h = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
  return (w > 0.0 && h > 0.0) ? w * h : 0.0;
}

double safe_div(double num, double den) { return den > 0.0 ? num / den : 0.0; }

void check_box(const Box& b, const char* op) {
  SPSR_CHECK(b.valid(), ContractError,
             std::string(op) + ": box with x1 < x0 or y1 < y0");
}

}  // namespace

double iou(const Box& a, const Box& b) {
  check_box(a, "iou");
  check_box(b, "iou");
  const double inter = intersection_area(a, b);
  return safe_div(inter, a.area() + b.area() - inter);
}

IouVariants iou_variants(const Box& a, const Box& b) {
  IouVariants v;
  v.iou = iou(a, b);
  const Box c = enclosing(a, b);
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;

  v.giou = v.iou - safe_div(c.area() - uni, c.area());

  const double rho2 = (a.cx() - b.cx()) * (a.cx() - b.cx()) +
                      (a.cy() - b.cy()) * (a.cy() - b.cy());
  const double c2 = c.width() * c.width() + c.height() * c.height();
  const double center_penalty = safe_div(rho2, c2);
  v.diou = v.iou - center_penalty;

  const double da = std::atan2(b.width(), b.height()) -
                    std::atan2(a.width(), a.height());
  const double aspect = 4.0 / (std::numbers::pi * std::numbers::pi) * da * da;
  const double alpha = safe_div(aspect, (1.0 - v.iou) + aspect);
  v.ciou = v.diou - alpha * aspect;

  const double dw = a.width() - b.width();
  const double dh = a.height() - b.height();
  v.eiou = v.diou - safe_div(dw * dw, c.width() * c.width()) -
           safe_div(dh * dh, c.height() * c.height());
  return v;
}

AnchorSpec AnchorSpec::retinanet(std::vector<int> levels) {
  AnchorSpec s;
  s.sizes = {1.0, std::pow(2.0, 1.0 / 3.0), std::pow(2.0, 2.0 / 3.0)};
  s.ratios = {0.5, 1.0, 2.0};
  s.levels = std::move(levels);
  return s;
}

std::vector<Anchor> gen_anchors(const AnchorSpec& spec,
                                std::span<const GridDims> grids) {
  SPSR_CHECK(!spec.sizes.empty() && !spec.ratios.empty() &&
                 !spec.levels.empty(),
             ContractError, "gen_anchors: empty sizes, ratios or levels");
  SPSR_CHECK(grids.size() == spec.levels.size(), DimensionError,
             "gen_anchors: need one grid per level");
  for (double s : spec.sizes) {
    SPSR_CHECK(s > 0.0, ContractError, "gen_anchors: non-positive size");
  }
  for (double r : spec.ratios) {
    SPSR_CHECK(r > 0.0, ContractError, "gen_anchors: non-positive ratio");
  }
  SPSR_CHECK(spec.base_multiplier > 0.0, ContractError,
             "gen_anchors: non-positive base multiplier");

  std::vector<Anchor> out;
  for (std::size_t l = 0; l < spec.levels.size(); ++l) {
    const double stride = std::ldexp(1.0, spec.levels[l]);
    const double base = spec.base_multiplier * stride;
    for (int y = 0; y < grids[l].height; ++y) {
      for (int x = 0; x < grids[l].width; ++x) {
        const double cx = (x + 0.5) * stride;
        const double cy = (y + 0.5) * stride;
        int type = 0;
        for (double size : spec.sizes) {
          for (double ratio : spec.ratios) {
            const double side = base * size;
            const double w = side * std::sqrt(ratio);
            const double h = side / std::sqrt(ratio);
            out.push_back({{cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w,
                            cy + 0.5 * h},
                           type++,
                           spec.levels[l]});
          }
        }
      }
    }
  }
  return out;
}

BoxDeltas encode_box(const Box& anchor, const Box& gt) {
  SPSR_CHECK(anchor.width() > 0.0 && anchor.height() > 0.0, ContractError,
             "encode_box: anchor must have positive size");
  SPSR_CHECK(gt.width() > 0.0 && gt.height() > 0.0, ContractError,
             "encode_box: ground truth must have positive size");
  return {(gt.cx() - anchor.cx()) / anchor.width(),
          (gt.cy() - anchor.cy()) / anchor.height(),
          std::log(gt.width() / anchor.width()),
          std::log(gt.height() / anchor.height())};
}

Box decode_box(const Box& anchor, const BoxDeltas& d) {
  SPSR_CHECK(anchor.width() > 0.0 && anchor.height() > 0.0, ContractError,
             "decode_box: anchor must have positive size");
  const double cx = anchor.cx() + d.dx * anchor.width();
  const double cy = anchor.cy() + d.dy * anchor.height();
  const double w = anchor.width() * std::exp(d.dw);
  const double h = anchor.height() * std::exp(d.dh);
  return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

MatchResult topk_match(std::span<const Box> anchors, std::span<const Box> gts,
                       int k) {
  SPSR_CHECK(k >= 1, ContractError, "topk_match: k must be >= 1");
  const std::size_t na = anchors.size(), ng = gts.size();
  std::vector<double> ious(na * ng);
  for (std::size_t a = 0; a < na; ++a) {
    for (std::size_t g = 0; g < ng; ++g) ious[a * ng + g] = iou(anchors[a], gts[g]);
  }

  MatchResult m;
  m.anchor_to_gt.assign(na, -1);
  m.gt_anchors.assign(ng, {});
  std::vector<int> order(na);
  for (std::size_t g = 0; g < ng; ++g) {
    std::iota(order.begin(), order.end(), 0);
    auto by_iou = [&](int a, int b) {
      const double ia = ious[a * ng + g], ib = ious[b * ng + g];
      return ia != ib ? ia > ib : a < b;
    };
    const std::size_t take = std::min<std::size_t>(k, na);
    std::partial_sort(order.begin(), order.begin() + take, order.end(),
                      by_iou);
    for (std::size_t i = 0; i < take; ++i) {
      const int a = order[i];
      const double v = ious[a * ng + g];
      if (v <= 0.0) break;
      const int prev = m.anchor_to_gt[a];
      // Gts are visited in ascending order, so a strict comparison keeps the
      // lower gt index on ties.
      if (prev < 0 || v > ious[a * ng + prev]) {
        m.anchor_to_gt[a] = static_cast<int>(g);
      }
    }
  }
  for (std::size_t a = 0; a < na; ++a) {
    if (m.anchor_to_gt[a] >= 0) {
      m.gt_anchors[m.anchor_to_gt[a]].push_back(static_cast<int>(a));
    }
  }
  return m;
}

std::vector<int> score_order(std::span<const double> scores) {
  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scores[a] > scores[b]; });
  return order;
}

namespace {

template <typename Overlap>
std::vector<int> greedy_nms(std::span<const double> scores, double thresh,
                            Overlap overlap) {
  SPSR_CHECK(thresh >= 0.0 && thresh <= 1.0, ContractError,
             "nms: threshold must lie in [0, 1]");
  std::vector<int> kept;
  for (int i : score_order(scores)) {
    bool suppressed = false;
    for (int j : kept) {
      if (overlap(i, j) > thresh) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(i);
  }
  return kept;
}

}  // namespace

std::vector<int> nms(std::span<const ScoredBox> dets, double thresh) {
  std::vector<double> scores;
  scores.reserve(dets.size());
  for (const auto& d : dets) scores.push_back(d.score);
  return greedy_nms(scores, thresh, [&](int i, int j) {
    return iou(dets[i].box, dets[j].box);
  });
}

std::vector<ClassDetection> multiclass_inference(
    std::span<const Box> boxes, const std::vector<std::vector<double>>& scores,
    int top, double nms_thresh) {
  SPSR_CHECK(scores.size() == boxes.size(), DimensionError,
             "multiclass_inference: one score vector per box required");
  SPSR_CHECK(top >= 0, ContractError, "multiclass_inference: top < 0");
  std::size_t num_classes = 0;
  for (const auto& s : scores) {
    num_classes = std::max(num_classes, s.size());
    for (double v : s) {
      SPSR_CHECK(v >= 0.0 && v <= 1.0, ContractError,
                 "multiclass_inference: scores must lie in [0, 1]");
    }
  }

  std::vector<ClassDetection> kept;
  for (std::size_t c = 0; c < num_classes; ++c) {
    std::vector<ScoredBox> cls;
    std::vector<int> box_index;
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      if (c >= scores[i].size()) continue;
      cls.push_back({boxes[i], scores[i][c]});
      box_index.push_back(static_cast<int>(i));
    }
    for (int k : nms(cls, nms_thresh)) {
      kept.push_back({cls[k].box, box_index[k], static_cast<int>(c),
                      cls[k].score});
    }
  }
  std::sort(kept.begin(), kept.end(),
            [](const ClassDetection& a, const ClassDetection& b) {
              if (a.score != b.score) return a.score > b.score;
              if (a.box_index != b.box_index) return a.box_index < b.box_index;
              return a.label < b.label;
            });
  if (kept.size() > static_cast<std::size_t>(top)) kept.resize(top);
  return kept;
}

std::vector<int> upbnd_removal(std::span<const ScoredBox> dets,
                               std::span<const Box> gts,
                               double overlap_thresh) {
  std::vector<bool> gt_matched(gts.size(), false);
  std::vector<double> scores;
  for (const auto& d : dets) scores.push_back(d.score);

  std::vector<int> kept;
  for (int i : score_order(scores)) {
    int best_gt = -1;
    double best = -1.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (gt_matched[g]) continue;
      const double v = iou(dets[i].box, gts[g]);
      if (v > best) {
        best = v;
        best_gt = static_cast<int>(g);
      }
    }
    if (best_gt >= 0 && best >= overlap_thresh) {
      gt_matched[best_gt] = true;
      kept.push_back(i);
      continue;
    }
    bool duplicate = false;
    for (int j : kept) {
      if (iou(dets[i].box, dets[j].box) >= 0.5) {
        duplicate = true;
        break;
      }
    }
    if (!duplicate) kept.push_back(i);
  }
  return kept;
}

std::vector<int> mask_nms(std::span<const ScoredMask> masks, double thresh) {
  std::vector<double> scores;
  for (const auto& m : masks) {
    SPSR_CHECK(m.mask != nullptr, ContractError, "mask_nms: null mask");
    SPSR_CHECK(m.mask->same_canvas(*masks.front().mask), DimensionError,
               "mask_nms: masks do not share a canvas");
    scores.push_back(m.score);
  }
  return greedy_nms(scores, thresh, [&](int i, int j) {
    return mask_iou(*masks[i].mask, *masks[j].mask);
  });
}

}  // namespace spsr::geometry
