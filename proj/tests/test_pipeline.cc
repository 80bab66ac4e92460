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

#include <cmath>
#include <limits>
#include <random>
#include <set>
#include <vector>

#include <gtest/gtest.h>

#include "oracles.h"
#include "spsr/error.h"
#include "spsr/metrics.h"
#include "spsr/pipeline.h"
#include "spsr/synthetic.h"
#include "spsr/util.h"

namespace spsr::pipeline {
namespace {

using testing::Rng;

// ----- levels and configuration --------------------------------------------

TEST(Levels, AssignLevel) {
  EXPECT_EQ(assign_level({0, 0, 56, 56}), 2);
  EXPECT_EQ(assign_level({0, 0, 224, 224}), 4);
  EXPECT_EQ(assign_level({0, 0, 3584, 3584}), 5);
  EXPECT_EQ(assign_level({0, 0, 10, 10}), 2);
  EXPECT_EQ(assign_level({0, 0, 448, 448}), 5);
  EXPECT_THROW(assign_level({0, 0, 0, 10}), ContractError);
}

TEST(Levels, StageLevel) {
  EXPECT_EQ(stage_level(4, 1), 3);
  EXPECT_EQ(stage_level(2, 3), 2);
  EXPECT_EQ(stage_level(5, 3), 2);
  EXPECT_THROW(stage_level(5, 4), ContractError);
}

TEST(StageConfig, Defaults) {
  const int grids[] = {14, 28, 56, 112};
  const int feats[] = {256, 128, 64, 32};
  for (int s = 0; s <= 3; ++s) {
    const auto c = stage_config(s);
    EXPECT_EQ(c.height, grids[s]);
    EXPECT_EQ(c.width, grids[s]);
    EXPECT_EQ(c.features, feats[s]);
    EXPECT_EQ(c.top_n_active, 10000u);
  }
  EXPECT_THROW(stage_config(3, 12), ContractError);
}

// ----- selection ------------------------------------------------------------

std::vector<CellScore> row(std::vector<double> scores) {
  std::vector<CellScore> out;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out.push_back({{0, static_cast<int>(i), 0}, scores[i]});
  }
  return out;
}

TEST(SelectActive, Saturation) {
  const std::vector<std::vector<CellScore>> in{row({0.1, 0.2, 0.3, 0.4, 0.5})};
  EXPECT_EQ(select_active(in, 10)[0].size(), 5u);
}

TEST(SelectActive, TopScores) {
  const std::vector<std::vector<CellScore>> in{row({0.9, 0.1, 0.5})};
  const auto s = select_active(in, 2)[0];
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0].x, 0);
  EXPECT_EQ(s[1].x, 2);
}

TEST(SelectActive, TiesGoToLowestRoiThenCell) {
  const std::vector<std::vector<CellScore>> in{row({0.5, 0.5}), row({0.5, 0.5})};
  auto s = select_active(in, 1);
  ASSERT_EQ(s[0].size(), 1u);
  EXPECT_EQ(s[0][0].x, 0);
  EXPECT_TRUE(s[1].empty());
  s = select_active(in, 3);
  EXPECT_EQ(s[0].size(), 2u);
  ASSERT_EQ(s[1].size(), 1u);
  EXPECT_EQ(s[1][0].x, 0);
}

TEST(SelectActive, BudgetIsGlobalAcrossRois) {
  const std::vector<std::vector<CellScore>> in{row({0.1, 0.2}), row({0.9, 0.8})};
  const auto s = select_active(in, 2);
  EXPECT_TRUE(s[0].empty());
  EXPECT_EQ(s[1].size(), 2u);
}

TEST(SelectActive, MinScoreAndNan) {
  const std::vector<std::vector<CellScore>> in{row({0.0, 1.0, 0.4})};
  EXPECT_EQ(select_active(in, 10, 0.5)[0].size(), 1u);
  EXPECT_TRUE(select_active(in, 0)[0].empty());
  const std::vector<std::vector<CellScore>> bad{row({std::nan("")})};
  EXPECT_THROW(select_active(bad, 1), ContractError);
}

TEST(SelectActive, MatchesSortOracle) {
  Rng rng(1);
  for (int c = 0; c < 200; ++c) {
    const int rois = testing::uniform_int(rng, 1, 4);
    std::vector<std::vector<CellScore>> in(rois);
    struct Flat { double s; int r; CellCoord cell; };
    std::vector<Flat> flat;
    for (int r = 0; r < rois; ++r) {
      const int n = testing::uniform_int(rng, 0, 12);
      for (int i = 0; i < n; ++i) {
        const CellCoord cell{i / 4, i % 4, 0};
        const double s = testing::uniform_int(rng, 0, 5) / 5.0;
        in[r].push_back({cell, s});
        flat.push_back({s, r, cell});
      }
    }
    std::stable_sort(flat.begin(), flat.end(), [](const Flat& a, const Flat& b) {
      if (a.s != b.s) return a.s > b.s;
      if (a.r != b.r) return a.r < b.r;
      return a.cell < b.cell;
    });
    const std::size_t top = testing::uniform_int(rng, 0, 20);
    std::vector<std::set<std::pair<int, int>>> want(rois);
    for (std::size_t i = 0; i < std::min(top, flat.size()); ++i) {
      want[flat[i].r].insert({flat[i].cell.y, flat[i].cell.x});
    }
    const auto got = select_active(in, top);
    for (int r = 0; r < rois; ++r) {
      std::set<std::pair<int, int>> g;
      for (const auto& cell : got[r]) g.insert({cell.y, cell.x});
      ASSERT_EQ(g, want[r]);
      ASSERT_TRUE(std::is_sorted(got[r].begin(), got[r].end()));
    }
  }
}

// ----- targets ----------------------------------------------------------------

TEST(Targets, AllForeground) {
  const BinaryMask m(56, 56, std::vector<std::uint8_t>(56 * 56, 1));
  const auto t = make_targets(m, 14, 14);
  for (int i = 0; i < 196; ++i) {
    EXPECT_EQ(t.seg[i], 1);
    EXPECT_EQ(t.refine[i], 0);
  }
}

TEST(Targets, AlignedHalfPlaneHasNoMixedCells) {
  BinaryMask m(56, 56);
  for (int y = 0; y < 56; ++y)
    for (int x = 0; x < 28; ++x) m.set(y, x, true);
  const auto t = make_targets(m, 14, 14);
  for (int y = 0; y < 14; ++y) {
    for (int x = 0; x < 14; ++x) {
      EXPECT_EQ(t.refine_at(y, x), false);
      EXPECT_EQ(t.seg_at(y, x), x < 7);
    }
  }
}

TEST(Targets, DiagonalEdgeMatchesFootprintScan) {
  for (int n : {56, 60, 97}) {
    BinaryMask m(n, n);
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) m.set(y, x, x + y < n);
    for (int g : {7, 14, 28}) {
      const auto t = make_targets(m, g, g);
      for (int y = 0; y < g; ++y) {
        for (int x = 0; x < g; ++x) {
          const int r0 = y * n / g, r1 = (y + 1) * n / g;
          const int c0 = x * n / g, c1 = (x + 1) * n / g;
          bool fg = false, bg = false;
          for (int yy = r0; yy < r1; ++yy) {
            for (int xx = c0; xx < c1; ++xx) (m.at(yy, xx) ? fg : bg) = true;
          }
          ASSERT_EQ(t.refine_at(y, x), fg && bg) << n << " " << g << " " << y << " " << x;
          const int cy = (2 * y + 1) * n / (2 * g), cx = (2 * x + 1) * n / (2 * g);
          ASSERT_EQ(t.seg_at(y, x), m.at(cy, cx));
        }
      }
    }
  }
}

TEST(Targets, EmptyMaskAndTooSmall) {
  const auto t = make_targets(BinaryMask(28, 28), 14, 14);
  for (auto v : t.seg) EXPECT_EQ(v, 0);
  EXPECT_THROW(make_targets(BinaryMask(10, 10), 14, 14), DimensionError);
}

// ----- assembly, pasting, scores -------------------------------------------

TEST(Assemble, Examples) {
  MaskGrid prev(2, 2);
  prev.prob = {0.1, 0.9, 0.7, 0.2};
  const auto up = assemble_mask(prev, {}, {});
  EXPECT_EQ(up, upsample_nearest(prev, 2));
  EXPECT_EQ(up.at(3, 3), 0.2);

  std::vector<CellCoord> all;
  std::vector<double> logits;
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      all.push_back({y, x, 0});
      logits.push_back(y - x);
    }
  const auto full = assemble_mask(prev, all, logits);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) EXPECT_EQ(full.at(y, x), sigmoid(y - x));

  const std::vector<CellCoord> one{{1, 2, 0}};
  const auto m = assemble_mask(prev, one, std::vector<double>{0.0});
  EXPECT_EQ(m.at(1, 2), 0.5);
  EXPECT_EQ(m.at(1, 3), 0.9);
  EXPECT_EQ(m.at(0, 0), 0.1);

  const std::vector<CellCoord> out{{4, 0, 0}};
  EXPECT_THROW(assemble_mask(prev, out, std::vector<double>{0.0}), BoundsError);
}

TEST(Paste, Examples) {
  const MaskGrid ones(112, 112, 1.0);
  const auto a = paste_mask(ones, {10, 20, 40, 30}, 64, 48);
  EXPECT_EQ(a.area(), 300u);
  for (int y = 0; y < 48; ++y)
    for (int x = 0; x < 64; ++x)
      ASSERT_EQ(a.at(y, x), x >= 10 && x < 40 && y >= 20 && y < 30);

  EXPECT_EQ(paste_mask(MaskGrid(112, 112, 0.0), {10, 20, 40, 30}, 64, 48).area(), 0u);

  MaskGrid half(112, 112, 0.0);
  for (int y = 0; y < 112; ++y)
    for (int x = 0; x < 56; ++x) half.at(y, x) = 1.0;
  const auto h = paste_mask(half, {8, 4, 40, 20}, 64, 32);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 64; ++x)
      ASSERT_EQ(h.at(y, x), x >= 8 && x < 24 && y >= 4 && y < 20) << y << "," << x;

  EXPECT_EQ(paste_mask(ones, {100, 100, 120, 120}, 64, 48).area(), 0u);
}

TEST(Scores, SegScore) {
  const std::vector<double> ones(10, 1.0);
  EXPECT_DOUBLE_EQ(seg_score({1.0, ones}), 1.0);
  const std::vector<double> probs{0.6, 1.0, 0.2, 0.0};
  EXPECT_DOUBLE_EQ(seg_score({0.8, probs}), 0.64);
  const std::vector<double> none{0.1, 0.4};
  EXPECT_EQ(seg_score({0.9, none}), 0.0);
  EXPECT_THROW(seg_score({1.5, none}), ContractError);
}

// ----- panoptic post-processing --------------------------------------------

BinaryMask rect(int w, int h, int x0, int y0, int x1, int y1) {
  BinaryMask m(w, h);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) m.set(y, x, true);
  return m;
}

TEST(Panoptic, SingleMaskSurvives) {
  const std::vector<PanopticDetection> d{{rect(40, 40, 0, 0, 20, 20), 3, true, 0.9, 0.9}};
  const auto out = panoptic_postprocess(d);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].mask, d[0].mask);
  EXPECT_EQ(out[0].class_id, 3);
}

TEST(Panoptic, DuplicateRemovedByMaskNms) {
  const auto m = rect(40, 40, 0, 0, 20, 20);
  const std::vector<PanopticDetection> d{{m, 1, true, 0.8, 1.0}, {m, 2, true, 0.9, 1.0}};
  const auto out = panoptic_postprocess(d);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].class_id, 2);
}

TEST(Panoptic, SmallAndLowScoreDropped) {
  const std::vector<PanopticDetection> d{{rect(40, 40, 0, 0, 10, 10), 1, true, 0.9, 1.0},
                                         {rect(40, 40, 20, 20, 40, 40), 1, true, 0.2, 1.0},
                                         {rect(40, 40, 0, 20, 10, 40), 1, true, 0.9, 0.3}};
  EXPECT_TRUE(panoptic_postprocess(d).empty());
}

TEST(Panoptic, StuffMergedAndOutputDisjoint) {
  Rng rng(2);
  for (int c = 0; c < 50; ++c) {
    std::vector<PanopticDetection> d;
    const int n = testing::uniform_int(rng, 1, 8);
    for (int i = 0; i < n; ++i) {
      const int x0 = testing::uniform_int(rng, 0, 40), y0 = testing::uniform_int(rng, 0, 40);
      d.push_back({rect(64, 64, x0, y0, testing::uniform_int(rng, x0 + 1, 64),
                        testing::uniform_int(rng, y0 + 1, 64)),
                   testing::uniform_int(rng, 0, 3), testing::uniform_int(rng, 0, 1) == 1,
                   testing::uniform(rng, 0, 1), testing::uniform(rng, 0, 1)});
    }
    const auto out = panoptic_postprocess(d);
    EXPECT_NO_THROW(metrics::check_disjoint(out));
    std::set<int> stuff;
    for (const auto& s : out) {
      EXPECT_GE(s.mask.area(), 150u);
      if (!s.is_thing) EXPECT_TRUE(stuff.insert(s.class_id).second);
    }
  }
}

// ----- end to end -----------------------------------------------------------

WeightBundle random_bundle(const ModelShape& shape, std::uint64_t seed, double std) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, std);
  WeightBundle b;
  for (const auto& [name, dims] : weight_layout(shape)) {
    WeightArray a;
    a.dims = dims;
    a.data.resize(a.size());
    for (auto& v : a.data) v = static_cast<float>(dist(rng));
    b.set(name, a);
  }
  return b;
}

DenseTensor children_dense(const DenseTensor& prev, const std::array<ops::Mlp, 4>& kids) {
  DenseTensor out(prev.channels(), 2 * prev.height(), 2 * prev.width());
  for (int y = 0; y < out.height(); ++y) {
    for (int x = 0; x < out.width(); ++x) {
      const auto v = testing::mlp_ref(kids[2 * (y % 2) + (x % 2)],
                                      testing::column(prev, y / 2, x / 2));
      for (int c = 0; c < out.channels(); ++c) out.at(c, y, x) = v[c];
    }
  }
  return out;
}

DenseTensor neck_dense(const NeckSampler& neck, int level, const RoiBox& box, int g) {
  DenseTensor out(neck.channels(), g, g);
  std::vector<Real> v(neck.channels());
  for (int y = 0; y < g; ++y) {
    for (int x = 0; x < g; ++x) {
      neck.sample(level, box.x0 + (x + 0.5) * box.width() / g,
                  box.y0 + (y + 0.5) * box.height() / g, v);
      for (int c = 0; c < neck.channels(); ++c) out.at(c, y, x) = v[c];
    }
  }
  return out;
}

MaskGrid heads_dense(const DenseTensor& t, const ops::Mlp& seg) {
  MaskGrid m(t.height(), t.width());
  for (int y = 0; y < t.height(); ++y)
    for (int x = 0; x < t.width(); ++x)
      m.at(y, x) = sigmoid(testing::mlp_ref(seg, testing::column(t, y, x))[0]);
  return m;
}

void expect_close(const DenseTensor& a, const DenseTensor& b, int stage) {
  ASSERT_EQ(a.channels(), b.channels()) << "stage " << stage;
  ASSERT_EQ(a.height(), b.height()) << "stage " << stage;
  for (std::size_t i = 0; i < a.data().size(); ++i) {
    ASSERT_TRUE(testing::close_rel(a.data()[i], b.data()[i]))
        << "stage " << stage << " index " << i << ": " << a.data()[i] << " vs " << b.data()[i];
  }
}

TEST(Refinement, FullActiveEqualsDensePipeline) {
  const ModelShape shape{16, 3};
  const Model model = Model::from_bundle(random_bundle(shape, 3, 0.3), shape, 0);
  const auto neck = PyramidSampler::synthetic(16, 300, 260, 5);
  ImageInput img{7, 300, 260, {}};
  Rng rng(9);
  for (const RoiBox box : {RoiBox{10, 20, 250, 200}, RoiBox{100.5, 30.25, 160, 90}}) {
    RoiInput r;
    r.box = box;
    for (int i = 0; i < 16; ++i) r.query.push_back(testing::gaussian(rng));
    img.rois.push_back(r);
  }
  RefineConfig cfg;
  cfg.mode = Mode::kWeights;
  cfg.force_dense_active = true;
  cfg.keep_features = true;
  const auto res = run_refinement(img, model, neck, cfg);

  for (std::size_t r = 0; r < img.rois.size(); ++r) {
    const auto& roi = img.rois[r];
    const int k0 = assign_level(roi.box);
    DenseTensor q(16, 14, 14);
    for (int c = 0; c < 16; ++c)
      for (int y = 0; y < 14; ++y)
        for (int x = 0; x < 14; ++x) q.at(c, y, x) = roi.query[c];
    DenseTensor t = testing::dense_fuse(neck_dense(neck, k0, roi.box, 14), q, model.query_fuse);
    for (const auto& k : model.convs) t = testing::dense_relu(testing::dense_conv(t, k));
    expect_close(res.rois[r].stage_features[0], t, 0);
    MaskGrid mask = heads_dense(t, model.seg0);

    for (int s = 1; s <= 3; ++s) {
      const auto& w = model.stages[s - 1];
      const int g = 14 << s;
      t = children_dense(t, w.children);
      t = testing::dense_fuse(t, neck_dense(neck, stage_level(k0, s), roi.box, g), w.neck_fuse);
      t = testing::dense_pointwise(t, ops::Mlp(w.halve));
      t = testing::dense_sfm(t, w.sfm_d1, w.sfm_d3, w.sfm_d5);
      expect_close(res.rois[r].stage_features[s], t, s);
      mask = heads_dense(t, w.seg);
      const auto& got = res.rois[r].stage_masks[s];
      ASSERT_EQ(got.height, g);
      for (std::size_t i = 0; i < mask.prob.size(); ++i) {
        ASSERT_TRUE(testing::close_rel(got.prob[i], mask.prob[i])) << "stage " << s;
      }
    }
  }
  const auto cmp = cost::compare(res.dense_ledger, res.ledger);
  EXPECT_EQ(cmp.reduction_fraction, 0.0);
}

struct OracleCase {
  BinaryMask reference;
  ImageInput image;
};

OracleCase single_roi(BinaryMask ref, RoiBox box, int w, int h) {
  OracleCase c{std::move(ref), {0, w, h, {}}};
  RoiInput r;
  r.box = box;
  c.image.rois.push_back(r);
  return c;
}

ImageResult run_oracle(const OracleCase& c, RefineConfig cfg = {}, int f0 = 16) {
  ImageInput img = c.image;
  for (auto& r : img.rois) r.reference = &c.reference;
  const ModelShape shape{f0, cfg.stages};
  const Model model = Model::from_bundle({}, shape, 1);
  const auto neck = PyramidSampler::synthetic(f0, img.width, img.height, 2);
  return run_refinement(img, model, neck, cfg);
}

TEST(Refinement, CellConstantMaskIsExactAtStageZero) {
  Rng rng(4);
  BinaryMask ref(112, 112);
  std::vector<bool> cell(196);
  for (auto&& v : cell) v = testing::uniform_int(rng, 0, 1) == 1;
  for (int y = 0; y < 112; ++y)
    for (int x = 0; x < 112; ++x) ref.set(y, x, cell[(y / 8) * 14 + x / 8]);
  const auto res = run_oracle(single_roi(ref, {0, 0, 112, 112}, 112, 112));
  for (int i = 0; i < 196; ++i) EXPECT_EQ(res.rois[0].stage_masks[0].prob[i] >= 0.5, cell[i]);
  for (int s = 1; s <= 3; ++s) EXPECT_EQ(res.trace[s].active_cells, 0u);
  EXPECT_EQ(threshold(res.rois[0].final_mask()), ref);
}

TEST(Refinement, DiskBoundaryImproves) {
  const auto sample = harness::gen_synthetic({harness::ShapeKind::kDisk, 448, 448, 11});
  const auto res = run_oracle(single_roi(sample.mask, {0, 0, 448, 448}, 448, 448));
  const RoiBox box{0, 0, 448, 448};
  const auto fine = paste_mask(res.rois[0].final_mask(), box, 448, 448);
  const auto coarse = paste_mask(upsample_nearest(res.rois[0].stage_masks[0], 8), box, 448, 448);
  EXPECT_GT(metrics::boundary_iou(fine, sample.mask), metrics::boundary_iou(coarse, sample.mask));
}

TEST(Refinement, StructuralShapes) {
  const auto sample = harness::gen_synthetic({harness::ShapeKind::kBlob, 448, 448, 3});
  RefineConfig cfg;
  const auto res = run_oracle(single_roi(sample.mask, {0, 0, 448, 448}, 448, 448), cfg, 256);
  ASSERT_EQ(res.trace.size(), 4u);
  const int grids[] = {14, 28, 56, 112};
  const int feats[] = {256, 128, 64, 32};
  for (int s = 0; s <= 3; ++s) {
    EXPECT_EQ(res.trace[s].height, grids[s]);
    EXPECT_EQ(res.trace[s].features, feats[s]);
  }
  EXPECT_EQ(res.rois[0].final_mask().height, 112);
  EXPECT_EQ(res.rois[0].final_mask().width, 112);

  cfg.stages = 2;
  EXPECT_EQ(run_oracle(single_roi(sample.mask, {0, 0, 448, 448}, 448, 448), cfg)
                .rois[0].final_mask().height, 56);
}

TEST(Refinement, ZeroBudgetIsPureUpsampling) {
  const auto sample = harness::gen_synthetic({harness::ShapeKind::kEllipse, 448, 448, 5});
  RefineConfig cfg;
  cfg.top_n = 0;
  const auto res = run_oracle(single_roi(sample.mask, {0, 0, 448, 448}, 448, 448), cfg);
  EXPECT_EQ(res.rois[0].final_mask(), upsample_nearest(res.rois[0].stage_masks[0], 8));
}

TEST(Refinement, SparseCheaperThanDenseAndForcedDenseEqual) {
  const auto sample = harness::gen_synthetic({harness::ShapeKind::kBlob, 448, 448, 8});
  const auto c = single_roi(sample.mask, {0, 0, 448, 448}, 448, 448);
  const auto res = run_oracle(c);
  for (int s = 1; s <= 3; ++s) {
    ASSERT_LT(res.trace[s].active_cells, res.trace[s].total_cells);
    const auto sp = res.ledger.per_stage().at(s), de = res.dense_ledger.per_stage().at(s);
    EXPECT_LT(sp.macs, de.macs);
  }
  EXPECT_GT(cost::compare(res.dense_ledger, res.ledger).reduction_fraction, 0.0);

  RefineConfig forced;
  forced.force_dense_active = true;
  const auto dense = run_oracle(c, forced);
  EXPECT_EQ(cost::compare(dense.dense_ledger, dense.ledger).reduction_fraction, 0.0);
  EXPECT_EQ(dense.ledger.total_macs(), res.dense_ledger.total_macs());
}

TEST(Refinement, DeterministicAcrossRunsAndThreads) {
  std::vector<BinaryMask> refs;
  for (int i = 0; i < 5; ++i) {
    refs.push_back(harness::gen_synthetic({harness::ShapeKind::kBlob, 448, 448,
                                           static_cast<std::uint64_t>(20 + i)}).mask);
  }
  ImageInput img{3, 448, 448, {}};
  for (int i = 0; i < 5; ++i) {
    RoiInput r;
    r.box = {0.0 + i, 0.0, 448.0 - i, 448.0};
    r.reference = &refs[i];
    img.rois.push_back(r);
  }
  const ModelShape shape{16, 3};
  const Model model = Model::from_bundle({}, shape, 1);
  const auto neck = PyramidSampler::synthetic(16, 448, 448, 2);
  RefineConfig cfg;
  cfg.top_n = 3000;
  const auto a = run_refinement(img, model, neck, cfg);
  cfg.threads = 4;
  const auto b = run_refinement(img, model, neck, cfg);
  for (int i = 0; i < 5; ++i) {
    EXPECT_EQ(a.rois[i].stage_masks, b.rois[i].stage_masks);
    EXPECT_EQ(a.rois[i].mask_score, b.rois[i].mask_score);
  }
  EXPECT_EQ(a.ledger.entries(), b.ledger.entries());
  EXPECT_LE(a.trace[1].active_cells, 3000u);
}

TEST(Refinement, InputErrors) {
  const auto sample = harness::gen_synthetic({harness::ShapeKind::kDisk, 448, 448, 1});
  auto c = single_roi(sample.mask, {0, 0, 448, 448}, 448, 448);
  const ModelShape shape{16, 3};
  const Model model = Model::from_bundle({}, shape, 1);
  const auto neck = PyramidSampler::synthetic(16, 448, 448, 2);
  EXPECT_THROW(run_refinement(c.image, model, neck, {}), ContractError);  // no reference

  c.image.rois[0].reference = &c.reference;
  RefineConfig cfg;
  cfg.stages = 4;
  EXPECT_THROW(run_refinement(c.image, model, neck, cfg), ContractError);

  const BinaryMask tiny(50, 50);
  c.image.rois[0].reference = &tiny;
  EXPECT_THROW(run_refinement(c.image, model, neck, {}), DimensionError);

  const auto wrong_neck = PyramidSampler::synthetic(8, 448, 448, 2);
  c.image.rois[0].reference = &c.reference;
  EXPECT_THROW(run_refinement(c.image, model, wrong_neck, {}), DimensionError);
}

TEST(Model, BundleRoundTripAndSeededFill) {
  const ModelShape shape{32, 2};
  const Model a = Model::from_bundle({}, shape, 42);
  const auto bundle = a.to_bundle();
  EXPECT_EQ(bundle.arrays().size(), weight_layout(shape).size());
  EXPECT_EQ(Model::from_bundle(bundle, shape, 7).to_bundle(), bundle);
  EXPECT_EQ(Model::from_bundle({}, shape, 42).to_bundle(), bundle);
  EXPECT_NE(Model::from_bundle({}, shape, 43).to_bundle(), bundle);

  // Draws have the configured spread.
  const auto* w = bundle.find("stage1.halve.weight");
  ASSERT_NE(w, nullptr);
  double ss = 0.0;
  for (float v : w->data) ss += double(v) * v;
  EXPECT_NEAR(std::sqrt(ss / w->data.size()), kWeightInitStd, 0.003);

  WeightBundle bad;
  bad.set("stage0.seg.l1.bias", {{2}, {0.f, 0.f}});
  EXPECT_THROW(Model::from_bundle(bad, shape, 0), FormatError);
}

TEST(Neck, SamplerFromBundle) {
  WeightBundle b;
  b.set("neck.p3", {{1, 2, 2}, {1.f, 2.f, 3.f, 4.f}});
  const auto s = PyramidSampler::from_bundle(b);
  Real v = 0;
  // Pixel (12, 4) is the center of cell (0, 1) at stride 8.
  s.sample(3, 12.0, 4.0, std::span<Real>(&v, 1));
  EXPECT_EQ(v, 2.0);
  EXPECT_THROW(s.sample(4, 0, 0, std::span<Real>(&v, 1)), ContractError);
  EXPECT_THROW(PyramidSampler::from_bundle({}), FormatError);
}

}  // namespace
}  // namespace spsr::pipeline
