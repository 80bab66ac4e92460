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

#include "spsr/pipeline.h"

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <tuple>
#include <utility>

#include "spsr/error.h"
#include "spsr/geometry.h"
#include "spsr/util.h"

namespace spsr::pipeline {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string str(int v) { return std::to_string(v); }

}  // namespace

StageConfig stage_config(int stage, int f0, std::size_t top_n) {
  SPSR_CHECK(stage >= 0 && stage <= kMaxStages, ContractError,
             "stage must lie in 0..3");
  SPSR_CHECK(f0 > 0 && f0 % (1 << stage) == 0, ContractError,
             "F_0 = " + str(f0) + " is not divisible by 2^" + str(stage));
  return {stage, kBaseGrid << stage, kBaseGrid << stage, f0 >> stage, top_n};
}

void RoiBox::validate() const {
  SPSR_CHECK(std::isfinite(x0) && std::isfinite(y0) && std::isfinite(x1) &&
                 std::isfinite(y1),
             ContractError, "RoI box has non-finite coordinates");
  SPSR_CHECK(x1 > x0 && y1 > y0, ContractError,
             "degenerate RoI box (need x1 > x0 and y1 > y0)");
}

int assign_level(const RoiBox& box) {
  box.validate();
  const double s = std::sqrt(box.width() * box.height()) / 56.0;
  const double lg = std::floor(std::log2(s));
  const int k = 2 + static_cast<int>(std::min(lg, 3.0));
  return std::max(k, kMinLevel);
}

int stage_level(int k0, int stage) {
  SPSR_CHECK(stage >= 0 && stage <= kMaxStages, ContractError,
             "stage must lie in 0..3");
  return std::max(k0 - stage, kMinLevel);
}

std::vector<std::vector<CellCoord>> select_active(
    std::span<const std::vector<CellScore>> per_roi, std::size_t top_n,
    double min_score) {
  struct Candidate {
    double score;
    std::size_t roi;
    CellCoord cell;
  };
  std::vector<Candidate> all;
  for (std::size_t r = 0; r < per_roi.size(); ++r) {
    for (const auto& cs : per_roi[r]) {
      SPSR_CHECK(!std::isnan(cs.score), ContractError,
                 "select_active: NaN refinement score");
      if (cs.score >= min_score) all.push_back({cs.score, r, cs.cell});
    }
  }
  const auto better = [](const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.roi != b.roi) return a.roi < b.roi;
    return a.cell < b.cell;
  };
  if (top_n < all.size()) {
    std::nth_element(all.begin(), all.begin() + top_n, all.end(), better);
    all.resize(top_n);
  }
  std::vector<std::vector<CellCoord>> out(per_roi.size());
  for (const auto& c : all) out[c.roi].push_back(c.cell);
  for (auto& cells : out) std::sort(cells.begin(), cells.end());
  return out;
}

Targets make_targets(const BinaryMask& gt, int grid_h, int grid_w) {
  SPSR_CHECK(grid_h > 0 && grid_w > 0, ContractError,
             "make_targets: empty grid");
  const int mh = gt.height(), mw = gt.width();
  SPSR_CHECK(mh >= grid_h && mw >= grid_w, DimensionError,
             "make_targets: mask " + str(mw) + "x" + str(mh) +
                 " is smaller than the grid " + str(grid_w) + "x" +
                 str(grid_h));
  // Inclusive prefix sums of foreground pixels.
  std::vector<std::uint32_t> sum(static_cast<std::size_t>(mh + 1) * (mw + 1), 0);
  const auto at = [&](int y, int x) -> std::uint32_t& {
    return sum[static_cast<std::size_t>(y) * (mw + 1) + x];
  };
  for (int y = 0; y < mh; ++y) {
    for (int x = 0; x < mw; ++x) {
      at(y + 1, x + 1) =
          at(y, x + 1) + at(y + 1, x) - at(y, x) + (gt.at(y, x) ? 1 : 0);
    }
  }
  Targets t{grid_h, grid_w, {}, {}};
  t.seg.resize(static_cast<std::size_t>(grid_h) * grid_w);
  t.refine.resize(t.seg.size());
  for (int y = 0; y < grid_h; ++y) {
    const int r0 = static_cast<int>(static_cast<std::int64_t>(y) * mh / grid_h);
    const int r1 =
        static_cast<int>(static_cast<std::int64_t>(y + 1) * mh / grid_h);
    const int cy =
        static_cast<int>(static_cast<std::int64_t>(2 * y + 1) * mh / (2 * grid_h));
    for (int x = 0; x < grid_w; ++x) {
      const int c0 =
          static_cast<int>(static_cast<std::int64_t>(x) * mw / grid_w);
      const int c1 =
          static_cast<int>(static_cast<std::int64_t>(x + 1) * mw / grid_w);
      const int cx = static_cast<int>(static_cast<std::int64_t>(2 * x + 1) *
                                      mw / (2 * grid_w));
      const std::uint32_t fg = at(r1, c1) - at(r0, c1) - at(r1, c0) + at(r0, c0);
      const auto area = static_cast<std::uint32_t>((r1 - r0) * (c1 - c0));
      const std::size_t i = static_cast<std::size_t>(y) * grid_w + x;
      t.seg[i] = gt.at(cy, cx) ? 1 : 0;
      t.refine[i] = fg > 0 && fg < area ? 1 : 0;
    }
  }
  return t;
}

double sigmoid(double logit) { return 1.0 / (1.0 + std::exp(-logit)); }

MaskGrid upsample_nearest(const MaskGrid& grid, int factor) {
  SPSR_CHECK(factor >= 1, ContractError, "upsample factor must be positive");
  MaskGrid out(grid.height * factor, grid.width * factor);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      out.at(y, x) = grid.at(y / factor, x / factor);
    }
  }
  return out;
}

MaskGrid assemble_mask(const MaskGrid& prev, std::span<const CellCoord> cells,
                       std::span<const double> logits) {
  SPSR_CHECK(cells.size() == logits.size(), DimensionError,
             "assemble_mask: one logit per active cell required");
  MaskGrid out = upsample_nearest(prev, 2);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto& c = cells[i];
    SPSR_CHECK(c.y >= 0 && c.y < out.height && c.x >= 0 && c.x < out.width,
               BoundsError,
               "assemble_mask: cell (" + str(c.y) + ", " + str(c.x) +
                   ") outside the grid");
    SPSR_CHECK(!std::isnan(logits[i]), ContractError,
               "assemble_mask: NaN logit");
    out.at(c.y, c.x) = sigmoid(logits[i]);
  }
  return out;
}

BinaryMask threshold(const MaskGrid& grid) {
  BinaryMask m(grid.width, grid.height);
  for (int y = 0; y < grid.height; ++y) {
    for (int x = 0; x < grid.width; ++x) m.set(y, x, grid.at(y, x) >= 0.5);
  }
  return m;
}

BinaryMask paste_mask(const MaskGrid& roi_mask, const RoiBox& box,
                      int image_width, int image_height) {
  box.validate();
  SPSR_CHECK(image_width >= 0 && image_height >= 0, DimensionError,
             "paste_mask: negative image size");
  SPSR_CHECK(roi_mask.height > 0 && roi_mask.width > 0, DimensionError,
             "paste_mask: empty RoI mask");
  BinaryMask out(image_width, image_height);
  const int gh = roi_mask.height, gw = roi_mask.width;
  // Pixel centers px + 0.5 in [x0, x1).
  const int px0 = std::max(0, static_cast<int>(std::ceil(box.x0 - 0.5)));
  const int px1 = std::min(image_width, static_cast<int>(std::ceil(box.x1 - 0.5)));
  const int py0 = std::max(0, static_cast<int>(std::ceil(box.y0 - 0.5)));
  const int py1 = std::min(image_height, static_cast<int>(std::ceil(box.y1 - 0.5)));
  const auto clamp_axis = [](double u, int n, int& i0, int& i1, double& f) {
    u = std::clamp(u, 0.0, static_cast<double>(n - 1));
    i0 = static_cast<int>(std::floor(u));
    i1 = std::min(i0 + 1, n - 1);
    f = u - i0;
  };
  for (int py = py0; py < py1; ++py) {
    const double v = (py + 0.5 - box.y0) / box.height() * gh - 0.5;
    int y0, y1;
    double fy;
    clamp_axis(v, gh, y0, y1, fy);
    for (int px = px0; px < px1; ++px) {
      const double u = (px + 0.5 - box.x0) / box.width() * gw - 0.5;
      int x0, x1;
      double fx;
      clamp_axis(u, gw, x0, x1, fx);
      const double p = (1 - fy) * ((1 - fx) * roi_mask.at(y0, x0) +
                                   fx * roi_mask.at(y0, x1)) +
                       fy * ((1 - fx) * roi_mask.at(y1, x0) +
                             fx * roi_mask.at(y1, x1));
      if (p >= 0.5) out.set(py, px, true);
    }
  }
  return out;
}

double mask_score(std::span<const double> mask_probs) {
  double sum = 0.0;
  std::size_t n = 0;
  for (double p : mask_probs) {
    SPSR_CHECK(p >= 0.0 && p <= 1.0, ContractError,
               "mask probability outside [0, 1]");
    if (p >= 0.5) {
      sum += p;
      ++n;
    }
  }
  return n > 0 ? sum / static_cast<double>(n) : 0.0;
}

double seg_score(const ScoreInputs& si) {
  SPSR_CHECK(si.s_cls >= 0.0 && si.s_cls <= 1.0, ContractError,
             "classification score outside [0, 1]");
  return si.s_cls * mask_score(si.mask_probs);
}

std::vector<metrics::PanopticSegment> panoptic_postprocess(
    std::span<const PanopticDetection> dets, const PanopticParams& params) {
  std::vector<int> alive;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    SPSR_CHECK(dets[i].mask.same_canvas(dets.front().mask), DimensionError,
               "panoptic_postprocess: masks do not share a canvas");
    if (dets[i].s_cls >= params.min_cls_score) alive.push_back(static_cast<int>(i));
  }
  if (alive.empty()) return {};

  std::vector<geometry::ScoredMask> scored;
  for (int i : alive) {
    scored.push_back({&dets[i].mask, dets[i].s_cls * dets[i].s_mask});
  }
  std::vector<int> kept;  // indices into dets, descending score
  for (int k : geometry::mask_nms(scored, params.mask_nms_iou)) {
    kept.push_back(alive[k]);
  }

  const auto& canvas = dets.front().mask;
  const int w = canvas.width(), h = canvas.height();
  std::vector<BinaryMask> exclusive(kept.size(), BinaryMask(w, h));
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      int best = -1;
      double best_score = 0.0;
      for (std::size_t k = 0; k < kept.size(); ++k) {
        const auto& d = dets[kept[k]];
        if (!d.mask.at(y, x)) continue;
        const double s = d.s_cls * d.s_mask;
        if (best < 0 || s > best_score) {
          best = static_cast<int>(k);
          best_score = s;
        }
      }
      if (best >= 0 && best_score >= params.pixel_score_floor) {
        exclusive[best].set(y, x, true);
      }
    }
  }

  std::vector<metrics::PanopticSegment> out;
  std::map<int, std::size_t> stuff_slot;
  for (std::size_t k = 0; k < kept.size(); ++k) {
    const auto& d = dets[kept[k]];
    if (mask_iou(exclusive[k], d.mask) < params.min_overlap_iou) continue;
    if (exclusive[k].area() < params.min_pixels) continue;
    const double score = d.s_cls * d.s_mask;
    if (!d.is_thing) {
      const auto it = stuff_slot.find(d.class_id);
      if (it != stuff_slot.end()) {
        auto& merged = out[it->second].mask;
        std::vector<std::uint8_t> px(merged.pixels());
        const auto& add = exclusive[k].pixels();
        for (std::size_t i = 0; i < px.size(); ++i) px[i] |= add[i];
        merged = BinaryMask(w, h, std::move(px));
        continue;
      }
      stuff_slot[d.class_id] = out.size();
    }
    out.push_back({d.class_id, d.is_thing, std::move(exclusive[k]), score});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

void ModelShape::validate() const {
  SPSR_CHECK(stages >= 1 && stages <= kMaxStages, ContractError,
             "stages must lie in 1..3");
  SPSR_CHECK(f0 >= 2 && f0 % (1 << stages) == 0, ContractError,
             "F_0 = " + str(f0) + " must be divisible by 2^" + str(stages));
}

namespace {

using Dims = std::vector<std::uint32_t>;
using Layout = std::map<std::string, Dims>;

void add_linear(Layout& l, const std::string& name, int in, int out) {
  l[name + ".weight"] = {static_cast<std::uint32_t>(out),
                         static_cast<std::uint32_t>(in)};
  l[name + ".bias"] = {static_cast<std::uint32_t>(out)};
}

void add_conv(Layout& l, const std::string& name, int f) {
  const auto u = static_cast<std::uint32_t>(f);
  l[name + ".weight"] = {u, u, 3, 3};
  l[name + ".bias"] = {u};
}

void add_mlp(Layout& l, const std::string& name, int in, int hidden, int out) {
  add_linear(l, name + ".l0", in, hidden);
  add_linear(l, name + ".l1", hidden, out);
}

std::string stage_prefix(int s) { return "stage" + str(s); }

class ArraySource {
 public:
  ArraySource(const WeightBundle& bundle, const Layout& layout,
              std::uint64_t seed)
      : bundle_(bundle), layout_(layout), seed_(seed) {}

  std::vector<Real> get(const std::string& name) const {
    const Dims& dims = layout_.at(name);
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    std::vector<Real> out(n);
    if (const WeightArray* a = bundle_.find(name)) {
      SPSR_CHECK(a->dims == dims, FormatError,
                 "weights: array '" + name + "' has unexpected dims");
      std::copy(a->data.begin(), a->data.end(), out.begin());
      return out;
    }
    std::mt19937_64 rng(derive_seed(seed_, name));
    std::normal_distribution<double> dist(0.0, kWeightInitStd);
    for (auto& v : out) v = static_cast<float>(dist(rng));
    return out;
  }

  ops::LinearTransform linear(const std::string& name,
                              ops::Activation act) const {
    const Dims& d = layout_.at(name + ".weight");
    ops::LinearTransform t;
    t.out_features = static_cast<int>(d[0]);
    t.in_features = static_cast<int>(d[1]);
    t.weights = get(name + ".weight");
    t.bias = get(name + ".bias");
    t.activation = act;
    t.validate();
    return t;
  }

  ops::Mlp mlp(const std::string& name) const {
    return ops::Mlp::two_layer(linear(name + ".l0", ops::Activation::kRelu),
                               linear(name + ".l1", ops::Activation::kNone));
  }

  ops::ConvKernel conv(const std::string& name, int dilation) const {
    const Dims& d = layout_.at(name + ".weight");
    ops::ConvKernel k;
    k.out_features = static_cast<int>(d[0]);
    k.in_features = static_cast<int>(d[1]);
    k.kernel_size = 3;
    k.dilation = dilation;
    k.weights = get(name + ".weight");
    k.bias = get(name + ".bias");
    k.validate();
    return k;
  }

 private:
  const WeightBundle& bundle_;
  const Layout& layout_;
  std::uint64_t seed_;
};

WeightArray to_array(const Dims& dims, std::span<const Real> values) {
  WeightArray a;
  a.dims = dims;
  a.data.assign(values.begin(), values.end());
  return a;
}

void put_linear(WeightBundle& b, const Layout& l, const std::string& name,
                const ops::LinearTransform& t) {
  b.set(name + ".weight", to_array(l.at(name + ".weight"), t.weights));
  b.set(name + ".bias", to_array(l.at(name + ".bias"), t.bias));
}

void put_mlp(WeightBundle& b, const Layout& l, const std::string& name,
             const ops::Mlp& m) {
  put_linear(b, l, name + ".l0", m.layers().at(0));
  put_linear(b, l, name + ".l1", m.layers().at(1));
}

void put_conv(WeightBundle& b, const Layout& l, const std::string& name,
              const ops::ConvKernel& k) {
  b.set(name + ".weight", to_array(l.at(name + ".weight"), k.weights));
  b.set(name + ".bias", to_array(l.at(name + ".bias"), k.bias));
}

}  // namespace

std::map<std::string, std::vector<std::uint32_t>> weight_layout(
    const ModelShape& shape) {
  shape.validate();
  const int f0 = shape.f0;
  Layout l;
  add_mlp(l, "stage0.query_fuse", 2 * f0, f0, f0);
  for (int i = 0; i < kStage0Convs; ++i) add_conv(l, "stage0.conv" + str(i), f0);
  add_mlp(l, "stage0.seg", f0, f0, 1);
  add_mlp(l, "stage0.refine", f0, f0, 1);
  for (int s = 1; s <= shape.stages; ++s) {
    const int fp = f0 >> (s - 1), fs = f0 >> s;
    const std::string p = stage_prefix(s);
    for (int c = 0; c < 4; ++c) add_mlp(l, p + ".child" + str(c), fp, fp, fp);
    add_mlp(l, p + ".neck_fuse", fp + f0, fp, fp);
    add_linear(l, p + ".halve", fp, fs);
    for (int d : {1, 3, 5}) add_conv(l, p + ".sfm.d" + str(d), fs);
    add_mlp(l, p + ".seg", fs, fs, 1);
    add_mlp(l, p + ".refine", fs, fs, 1);
  }
  return l;
}

Model Model::from_bundle(const WeightBundle& bundle, const ModelShape& shape,
                         std::uint64_t seed) {
  const Layout layout = weight_layout(shape);
  const ArraySource src(bundle, layout, seed);
  Model m;
  m.shape = shape;
  m.query_fuse = src.mlp("stage0.query_fuse");
  for (int i = 0; i < kStage0Convs; ++i) {
    m.convs[i] = src.conv("stage0.conv" + str(i), 1);
  }
  m.seg0 = src.mlp("stage0.seg");
  m.refine0 = src.mlp("stage0.refine");
  for (int s = 1; s <= shape.stages; ++s) {
    const std::string p = stage_prefix(s);
    StageWeights w;
    for (int c = 0; c < 4; ++c) w.children[c] = src.mlp(p + ".child" + str(c));
    w.neck_fuse = src.mlp(p + ".neck_fuse");
    w.halve = src.linear(p + ".halve", ops::Activation::kNone);
    w.sfm_d1 = src.conv(p + ".sfm.d1", 1);
    w.sfm_d3 = src.conv(p + ".sfm.d3", 3);
    w.sfm_d5 = src.conv(p + ".sfm.d5", 5);
    w.seg = src.mlp(p + ".seg");
    w.refine = src.mlp(p + ".refine");
    m.stages.push_back(std::move(w));
  }
  return m;
}

WeightBundle Model::to_bundle() const {
  const Layout l = weight_layout(shape);
  WeightBundle b;
  put_mlp(b, l, "stage0.query_fuse", query_fuse);
  for (int i = 0; i < kStage0Convs; ++i) {
    put_conv(b, l, "stage0.conv" + str(i), convs[i]);
  }
  put_mlp(b, l, "stage0.seg", seg0);
  put_mlp(b, l, "stage0.refine", refine0);
  for (int s = 1; s <= shape.stages; ++s) {
    const std::string p = stage_prefix(s);
    const StageWeights& w = stages[s - 1];
    for (int c = 0; c < 4; ++c) put_mlp(b, l, p + ".child" + str(c), w.children[c]);
    put_mlp(b, l, p + ".neck_fuse", w.neck_fuse);
    put_linear(b, l, p + ".halve", w.halve);
    put_conv(b, l, p + ".sfm.d1", w.sfm_d1);
    put_conv(b, l, p + ".sfm.d3", w.sfm_d3);
    put_conv(b, l, p + ".sfm.d5", w.sfm_d5);
    put_mlp(b, l, p + ".seg", w.seg);
    put_mlp(b, l, p + ".refine", w.refine);
  }
  return b;
}

// ---------------------------------------------------------------------------
// External features
// ---------------------------------------------------------------------------

PyramidSampler::PyramidSampler(std::map<int, DenseTensor> levels)
    : levels_(std::move(levels)) {
  SPSR_CHECK(!levels_.empty(), ContractError, "feature pyramid has no levels");
  channels_ = levels_.begin()->second.channels();
  for (const auto& [k, t] : levels_) {
    SPSR_CHECK(k >= 0 && k < 30, ContractError,
               "feature pyramid level out of range");
    SPSR_CHECK(t.channels() == channels_, DimensionError,
               "feature pyramid levels differ in channel count");
  }
}

PyramidSampler PyramidSampler::synthetic(int channels, int image_width,
                                         int image_height, std::uint64_t seed) {
  SPSR_CHECK(channels > 0 && image_width > 0 && image_height > 0,
             ContractError, "synthetic pyramid needs positive sizes");
  std::map<int, DenseTensor> levels;
  for (int k = kMinLevel; k <= kMaxLevel; ++k) {
    const int stride = 1 << k;
    const int h = std::max(1, (image_height + stride - 1) / stride);
    const int w = std::max(1, (image_width + stride - 1) / stride);
    std::vector<Real> data(static_cast<std::size_t>(channels) * h * w);
    std::mt19937_64 rng(derive_seed(seed, "neck.p" + str(k)));
    std::normal_distribution<double> dist(0.0, 1.0);
    for (auto& v : data) v = static_cast<float>(dist(rng));
    levels.emplace(k, DenseTensor(channels, h, w, std::move(data)));
  }
  return PyramidSampler(std::move(levels));
}

PyramidSampler PyramidSampler::from_bundle(const WeightBundle& bundle) {
  std::map<int, DenseTensor> levels;
  for (int k = 0; k < 30; ++k) {
    const WeightArray* a = bundle.find("neck.p" + str(k));
    if (a == nullptr) continue;
    SPSR_CHECK(a->dims.size() == 3, FormatError,
               "neck.p" + str(k) + " must have rank 3 [C, H, W]");
    levels.emplace(k, DenseTensor(static_cast<int>(a->dims[0]),
                                  static_cast<int>(a->dims[1]),
                                  static_cast<int>(a->dims[2]),
                                  std::vector<Real>(a->data.begin(),
                                                    a->data.end())));
  }
  SPSR_CHECK(!levels.empty(), FormatError,
             "weights contain no neck.p{k} feature maps");
  return PyramidSampler(std::move(levels));
}

void PyramidSampler::sample(int level, double px, double py,
                            std::span<Real> out) const {
  const auto it = levels_.find(level);
  SPSR_CHECK(it != levels_.end(), ContractError,
             "feature pyramid has no level " + str(level));
  const double stride = std::ldexp(1.0, level);
  ops::sample_bilinear(it->second, py / stride - 0.5, px / stride - 0.5, out);
}

// ---------------------------------------------------------------------------
// Refinement
// ---------------------------------------------------------------------------

namespace {

struct Ledgers {
  cost::CostLedger sparse;
  cost::CostLedger dense;

  // `rows` processed out of `total` cells, each costing `per_row` MACs.
  void add(const std::string& op, int stage, std::uint64_t rows,
           std::uint64_t total, std::uint64_t per_row) {
    sparse.add(op, stage, rows * per_row, rows, total);
    dense.add(op, stage, total * per_row, total, total);
  }
  void cells(int stage, std::uint64_t active, std::uint64_t total) {
    add(cost::kCellCountOp, stage, active, total, 0);
  }
};

struct RoiState {
  std::optional<SpsTensor> tensor;
  std::vector<CellScore> candidates;
  MaskGrid mask;
  RoiResult result;
  Ledgers ledgers;
  int k0 = kMinLevel;
  std::uint64_t active = 0;
};

std::vector<Real> default_query(const RefineConfig& config, int image_id,
                                std::size_t roi, int f0) {
  std::mt19937_64 rng(derive_seed(
      derive_seed(config.seed, "query." + str(image_id)), roi));
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<Real> q(f0);
  for (auto& v : q) v = static_cast<float>(dist(rng));
  return q;
}

// Head outputs at the active rows of `t`: seg logits and refinement scores.
void run_heads(const SpsTensor& t, const ops::Mlp& seg, const ops::Mlp& refine,
               std::vector<double>& logits, std::vector<double>& scores) {
  logits.resize(t.num_active());
  scores.resize(t.num_active());
  double out = 0.0;
  for (std::size_t i = 0; i < t.num_active(); ++i) {
    seg.apply(t.active_row(i), std::span<Real>(&out, 1));
    logits[i] = out;
    refine.apply(t.active_row(i), std::span<Real>(&out, 1));
    scores[i] = sigmoid(out);
  }
}

void apply_oracle(const SpsTensor& t, const BinaryMask& reference,
                  std::vector<double>& logits, std::vector<double>& scores) {
  const Targets tg = make_targets(reference, t.height(), t.width());
  for (std::size_t i = 0; i < t.num_active(); ++i) {
    const CellCoord c = t.active_cell(i);
    logits[i] = tg.seg_at(c.y, c.x) ? kInf : -kInf;
    scores[i] = tg.refine_at(c.y, c.x) ? 1.0 : 0.0;
  }
}

// Heads, optional oracle override, mask assembly and next candidates.
void finish_stage(RoiState& st, const RoiInput& roi, const ops::Mlp& seg,
                  const ops::Mlp& refine, int stage, const RefineConfig& config) {
  const SpsTensor& t = *st.tensor;
  const std::uint64_t total = t.num_cells();
  st.ledgers.add("seg_head", stage, t.num_active(), total, seg.macs(1));
  st.ledgers.add("refine_head", stage, t.num_active(), total, refine.macs(1));
  std::vector<double> logits, scores;
  run_heads(t, seg, refine, logits, scores);
  if (config.mode == Mode::kOracle) {
    apply_oracle(t, *roi.reference, logits, scores);
  }
  const auto cells = t.active_cells();
  if (stage == 0) {
    MaskGrid m(t.height(), t.width());
    for (std::size_t i = 0; i < cells.size(); ++i) {
      m.at(cells[i].y, cells[i].x) = sigmoid(logits[i]);
    }
    st.mask = std::move(m);
  } else {
    st.mask = assemble_mask(st.mask, cells, logits);
  }
  st.candidates.clear();
  for (std::size_t i = 0; i < cells.size(); ++i) {
    st.candidates.push_back({cells[i], scores[i]});
  }
  st.result.stage_masks.push_back(st.mask);
  if (config.keep_features) st.result.stage_features.push_back(to_dense(t));
}

// Samples the neck at the centers of the active cells of `t`.
std::vector<Real> sample_neck(const SpsTensor& t, const RoiBox& box, int level,
                              const NeckSampler& neck) {
  const int c = neck.channels();
  std::vector<Real> ext(t.num_active() * static_cast<std::size_t>(c));
  for (std::size_t i = 0; i < t.num_active(); ++i) {
    const CellCoord cell = t.active_cell(i);
    const double px = box.x0 + (cell.x + 0.5) * box.width() / t.width();
    const double py = box.y0 + (cell.y + 0.5) * box.height() / t.height();
    neck.sample(level, px, py, std::span<Real>(ext).subspan(i * c, c));
  }
  return ext;
}

void run_stage0(RoiState& st, const RoiInput& roi, int image_id,
                std::size_t roi_index, const Model& model,
                const NeckSampler& neck, const RefineConfig& config) {
  const int f0 = model.shape.f0;
  const int g = kBaseGrid;
  const std::uint64_t total = static_cast<std::uint64_t>(g) * g;
  st.k0 = assign_level(roi.box);

  // RoIAlign with one sample per cell.
  DenseTensor feats(f0, g, g);
  std::vector<Real> v(f0);
  for (int y = 0; y < g; ++y) {
    for (int x = 0; x < g; ++x) {
      const double px = roi.box.x0 + (x + 0.5) * roi.box.width() / g;
      const double py = roi.box.y0 + (y + 0.5) * roi.box.height() / g;
      neck.sample(st.k0, px, py, v);
      for (int c = 0; c < f0; ++c) feats.at(c, y, x) = v[c];
    }
  }
  std::vector<CellCoord> all;
  for (int y = 0; y < g; ++y) {
    for (int x = 0; x < g; ++x) all.push_back({y, x, 0});
  }
  SpsTensor t = from_dense(feats, all);
  st.ledgers.cells(0, total, total);
  st.ledgers.add("roi_align", 0, total, total, cost::macs_bilinear(1, f0));

  std::vector<Real> query = roi.query.empty()
                                ? default_query(config, image_id, roi_index, f0)
                                : roi.query;
  SPSR_CHECK(query.size() == static_cast<std::size_t>(f0), DimensionError,
             "query feature must have F_0 = " + str(f0) + " entries");
  std::vector<Real> ext;
  ext.reserve(total * f0);
  for (std::uint64_t i = 0; i < total; ++i) {
    ext.insert(ext.end(), query.begin(), query.end());
  }
  t = ops::fuse_external(t, ext, f0, model.query_fuse);
  st.ledgers.add("query_fuse", 0, total, total, model.query_fuse.macs(1));

  for (int i = 0; i < kStage0Convs; ++i) {
    t = ops::relu(ops::conv2d_sparse(t, model.convs[i]));
    st.ledgers.add("conv" + str(i), 0, total, total,
                   cost::macs_conv(1, 3, f0, f0));
  }
  st.tensor = std::move(t);
  st.active = total;
  finish_stage(st, roi, model.seg0, model.refine0, 0, config);
}

void run_sparse_stage(RoiState& st, const RoiInput& roi, int stage,
                      std::span<const CellCoord> selected, const Model& model,
                      const NeckSampler& neck, const RefineConfig& config) {
  const StageWeights& w = model.stages[stage - 1];
  const int f0 = model.shape.f0;
  const int fp = f0 >> (stage - 1), fs = f0 >> stage;
  const int g = kBaseGrid << stage;
  const std::uint64_t total = static_cast<std::uint64_t>(g) * g;

  SpsTensor t = resplit(*st.tensor, selected);
  t = subdivide(t, {w.children[0].as_row_map(), w.children[1].as_row_map(),
                    w.children[2].as_row_map(), w.children[3].as_row_map()});
  const std::uint64_t rows = t.num_active();
  st.active = rows;
  st.ledgers.cells(stage, rows, total);
  st.ledgers.add("subdivide", stage, rows, total, w.children[0].macs(1));

  const int level = stage_level(st.k0, stage);
  const auto ext = sample_neck(t, roi.box, level, neck);
  st.ledgers.add("neck_sample", stage, rows, total, cost::macs_bilinear(1, f0));
  t = ops::fuse_external(t, ext, f0, w.neck_fuse);
  st.ledgers.add("neck_fuse", stage, rows, total, w.neck_fuse.macs(1));

  const std::uint64_t stored = t.num_active() + t.num_passive();
  t = ops::halve_features(t, w.halve);
  st.ledgers.add("halve", stage, stored, total, cost::macs_linear(1, fp, fs));

  t = ops::sfm(t, w.sfm_d1, w.sfm_d3, w.sfm_d5);
  st.ledgers.add("sfm", stage, rows, total, 3 * cost::macs_conv(1, 3, fs, fs));

  st.tensor = std::move(t);
  finish_stage(st, roi, w.seg, w.refine, stage, config);
}

}  // namespace

ImageResult run_refinement(const ImageInput& image, const Model& model,
                           const NeckSampler& neck,
                           const RefineConfig& config) {
  SPSR_CHECK(config.stages >= 1 && config.stages <= kMaxStages, ContractError,
             "stages must lie in 1..3");
  SPSR_CHECK(config.threads >= 1, ContractError, "threads must be positive");
  SPSR_CHECK(model.shape.stages >= config.stages, ContractError,
             "model has fewer stages than requested");
  SPSR_CHECK(neck.channels() == model.shape.f0, DimensionError,
             "neck features must have F_0 = " + str(model.shape.f0) +
                 " channels");
  const int final_grid = kBaseGrid << config.stages;
  for (const auto& roi : image.rois) {
    roi.box.validate();
    SPSR_CHECK(roi.score >= 0.0 && roi.score <= 1.0, ContractError,
               "RoI score outside [0, 1]");
    if (config.mode == Mode::kOracle) {
      SPSR_CHECK(roi.reference != nullptr, ContractError,
                 "oracle mode needs a reference mask for every RoI");
      SPSR_CHECK(roi.reference->width() >= final_grid &&
                     roi.reference->height() >= final_grid,
                 DimensionError,
                 "reference masks must be at least " + str(final_grid) +
                     " pixels on each side");
    }
  }

  const std::size_t n = image.rois.size();
  std::vector<RoiState> states(n);
  ImageResult result;
  result.image_id = image.image_id;

  const auto trace = [&](int stage) {
    const auto sc = stage_config(stage, model.shape.f0, config.top_n);
    StageTrace tr{stage, sc.height, sc.width, sc.features, 0,
                  static_cast<std::uint64_t>(sc.height) * sc.width * n};
    for (const auto& st : states) tr.active_cells += st.active;
    result.trace.push_back(tr);
  };

  parallel_for(n, config.threads, [&](std::size_t r) {
    run_stage0(states[r], image.rois[r], image.image_id, r, model, neck,
               config);
  });
  trace(0);

  for (int s = 1; s <= config.stages; ++s) {
    std::vector<std::vector<CellCoord>> selected(n);
    if (config.force_dense_active) {
      for (std::size_t r = 0; r < n; ++r) {
        for (const auto& c : states[r].candidates) selected[r].push_back(c.cell);
      }
    } else {
      std::vector<std::vector<CellScore>> per_roi(n);
      for (std::size_t r = 0; r < n; ++r) per_roi[r] = states[r].candidates;
      const double floor = config.mode == Mode::kOracle ? 0.5 : -kInf;
      selected = select_active(per_roi, config.top_n, floor);
    }
    parallel_for(n, config.threads, [&](std::size_t r) {
      run_sparse_stage(states[r], image.rois[r], s, selected[r], model, neck,
                       config);
    });
    trace(s);
  }

  for (std::size_t r = 0; r < n; ++r) {
    auto& st = states[r];
    st.result.mask_score = mask_score(st.mask.prob);
    st.result.seg_score = image.rois[r].score * st.result.mask_score;
    result.ledger.merge(st.ledgers.sparse);
    result.dense_ledger.merge(st.ledgers.dense);
    result.rois.push_back(std::move(st.result));
  }
  return result;
}

}  // namespace spsr::pipeline
