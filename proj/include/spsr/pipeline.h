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

// Multi-stage mask refinement: a dense 14x14 stage followed by up to three
// sparse stages, each doubling the grid and refining only selected cells.

#ifndef SPSR_PIPELINE_H_
#define SPSR_PIPELINE_H_

#include <array>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "spsr/cost.h"
#include "spsr/mask.h"
#include "spsr/metrics.h"
#include "spsr/ops.h"
#include "spsr/tensor.h"
#include "spsr/weights.h"

namespace spsr::pipeline {

inline constexpr int kBaseGrid = 14;
inline constexpr int kDefaultF0 = 256;
inline constexpr std::size_t kDefaultTopN = 10000;
inline constexpr int kMaxStages = 3;
inline constexpr int kStage0Convs = 4;
inline constexpr int kMinLevel = 2;
inline constexpr int kMaxLevel = 7;
inline constexpr double kWeightInitStd = 0.01;

struct StageConfig {
  int stage = 0;
  int height = kBaseGrid;
  int width = kBaseGrid;
  int features = kDefaultF0;
  std::size_t top_n_active = kDefaultTopN;
};

// Grid 14 * 2^s, features F_0 / 2^s. Throws ContractError when F_0 is not
// divisible by 2^s.
StageConfig stage_config(int stage, int f0 = kDefaultF0,
                         std::size_t top_n = kDefaultTopN);

struct RoiBox {
  double x0 = 0.0;
  double y0 = 0.0;
  double x1 = 0.0;
  double y1 = 0.0;

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  // Throws ContractError unless finite with x1 > x0 and y1 > y0.
  void validate() const;
};

// k_0 = 2 + min(floor(log2(sqrt(w h) / 56)), 3), at least 2.
int assign_level(const RoiBox& box);
// k_s = max(k_0 - s, 2).
int stage_level(int k0, int stage);

struct CellScore {
  CellCoord cell;
  double score = 0.0;
};

// Picks the `top_n` highest-scoring cells across all RoIs of one image.
// Ties go to the lower RoI index, then the lower row-major cell. Cells
// scoring below `min_score` are never picked. Returns each RoI's selection in
// row-major order.
std::vector<std::vector<CellCoord>> select_active(
    std::span<const std::vector<CellScore>> per_roi, std::size_t top_n,
    double min_score = -std::numeric_limits<double>::infinity());

struct Targets {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> seg;     // ground truth at the cell center
  std::vector<std::uint8_t> refine;  // 1 iff the cell is mixed

  bool seg_at(int y, int x) const { return seg[y * width + x] != 0; }
  bool refine_at(int y, int x) const { return refine[y * width + x] != 0; }
};

// Cell (y, x) covers mask rows [floor(y M_h / H), floor((y + 1) M_h / H)) and
// the analogous columns. Requires a mask at least as large as the grid.
Targets make_targets(const BinaryMask& gt, int grid_h, int grid_w);

// Row-major grid of mask probabilities.
struct MaskGrid {
  int height = 0;
  int width = 0;
  std::vector<double> prob;

  MaskGrid() = default;
  MaskGrid(int h, int w, double fill = 0.0)
      : height(h), width(w), prob(static_cast<std::size_t>(h) * w, fill) {}

  double at(int y, int x) const { return prob[y * width + x]; }
  double& at(int y, int x) { return prob[y * width + x]; }
  bool operator==(const MaskGrid&) const = default;
};

double sigmoid(double logit);
MaskGrid upsample_nearest(const MaskGrid& grid, int factor);
// Nearest 2x upsample of `prev`, then sigmoid(logits[i]) written at cells[i].
MaskGrid assemble_mask(const MaskGrid& prev, std::span<const CellCoord> cells,
                       std::span<const double> logits);
// Pixels with probability >= 0.5.
BinaryMask threshold(const MaskGrid& grid);

// Bilinearly resamples `roi_mask` over `box` and thresholds at 0.5. A pixel
// belongs to the box when its center does.
BinaryMask paste_mask(const MaskGrid& roi_mask, const RoiBox& box,
                      int image_width, int image_height);

struct ScoreInputs {
  double s_cls = 0.0;
  std::span<const double> mask_probs;
};

// Mean of the probabilities >= 0.5 (0 when there are none).
double mask_score(std::span<const double> mask_probs);
// s_cls * mask_score.
double seg_score(const ScoreInputs& si);

struct PanopticDetection {
  BinaryMask mask;
  int class_id = 0;
  bool is_thing = true;
  double s_cls = 0.0;
  double s_mask = 0.0;
};

struct PanopticParams {
  double min_cls_score = 0.3;
  double mask_nms_iou = 0.75;
  double pixel_score_floor = 0.35;
  double min_overlap_iou = 0.6;
  std::uint64_t min_pixels = 150;
};

// Returns pixel-disjoint segments with score s_cls * s_mask, in descending
// score order; merged stuff segments keep the highest score.
std::vector<metrics::PanopticSegment> panoptic_postprocess(
    std::span<const PanopticDetection> dets, const PanopticParams& params = {});

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

struct StageWeights {
  std::array<ops::Mlp, 4> children;
  ops::Mlp neck_fuse;
  ops::LinearTransform halve;
  ops::ConvKernel sfm_d1;
  ops::ConvKernel sfm_d3;
  ops::ConvKernel sfm_d5;
  ops::Mlp seg;
  ops::Mlp refine;
};

// Neck and query features have F_0 channels.
struct ModelShape {
  int f0 = kDefaultF0;
  int stages = kMaxStages;

  void validate() const;
};

struct Model {
  ModelShape shape;
  ops::Mlp query_fuse;
  std::array<ops::ConvKernel, kStage0Convs> convs;
  ops::Mlp seg0;
  ops::Mlp refine0;
  std::vector<StageWeights> stages;  // stage s at index s - 1

  // Arrays absent from `bundle` are drawn from N(0, 0.01^2) seeded by
  // (seed, name). Present arrays must have the expected dims.
  static Model from_bundle(const WeightBundle& bundle, const ModelShape& shape,
                           std::uint64_t seed);
  // Every array of the model under its bundle name.
  WeightBundle to_bundle() const;
};

// Expected array names and dims for a shape.
std::map<std::string, std::vector<std::uint32_t>> weight_layout(
    const ModelShape& shape);

// ---------------------------------------------------------------------------
// External features
// ---------------------------------------------------------------------------

class NeckSampler {
 public:
  virtual ~NeckSampler() = default;
  virtual int channels() const = 0;
  // Feature of pyramid level `level` at image point (px, py).
  virtual void sample(int level, double px, double py,
                      std::span<Real> out) const = 0;
};

// Level k is a [C, H_k, W_k] map with stride 2^k; samples are bilinear at
// (py / 2^k - 0.5, px / 2^k - 0.5) with zero padding.
class PyramidSampler : public NeckSampler {
 public:
  explicit PyramidSampler(std::map<int, DenseTensor> levels);
  // Levels 2..7 covering the image, entries from N(0, 1).
  static PyramidSampler synthetic(int channels, int image_width,
                                  int image_height, std::uint64_t seed);
  // Levels from arrays "neck.p{k}" of shape [C, H, W].
  static PyramidSampler from_bundle(const WeightBundle& bundle);

  int channels() const override { return channels_; }
  void sample(int level, double px, double py,
              std::span<Real> out) const override;

 private:
  int channels_ = 0;
  std::map<int, DenseTensor> levels_;
};

// ---------------------------------------------------------------------------
// Refinement
// ---------------------------------------------------------------------------

enum class Mode { kWeights, kOracle };

struct RefineConfig {
  Mode mode = Mode::kOracle;
  int stages = kMaxStages;
  std::size_t top_n = kDefaultTopN;
  // Makes every cell active at every stage (the dense-equivalent run).
  bool force_dense_active = false;
  int threads = 1;
  std::uint64_t seed = 0;
  // Keep per-stage features in RoiResult::stage_features.
  bool keep_features = false;
};

struct RoiInput {
  RoiBox box;
  int class_id = 0;
  double score = 1.0;
  // Query feature (F_0 entries); drawn from N(0, 1) when empty.
  std::vector<Real> query;
  // Oracle mode: reference mask in the RoI frame, at least 112 x 112.
  const BinaryMask* reference = nullptr;
};

struct ImageInput {
  int image_id = 0;
  int width = 0;
  int height = 0;
  std::vector<RoiInput> rois;
};

struct StageTrace {
  int stage = 0;
  int height = 0;
  int width = 0;
  int features = 0;
  std::uint64_t active_cells = 0;  // summed over RoIs
  std::uint64_t total_cells = 0;
};

struct RoiResult {
  std::vector<MaskGrid> stage_masks;  // one per stage, 14x14 first
  std::vector<DenseTensor> stage_features;  // when keep_features is set
  double mask_score = 0.0;
  double seg_score = 0.0;

  const MaskGrid& final_mask() const { return stage_masks.back(); }
};

struct ImageResult {
  int image_id = 0;
  std::vector<RoiResult> rois;
  std::vector<StageTrace> trace;
  cost::CostLedger ledger;        // operations actually executed
  cost::CostLedger dense_ledger;  // the same operations on every cell
};

// Throws ContractError on missing references, bad boxes or config.
ImageResult run_refinement(const ImageInput& image, const Model& model,
                           const NeckSampler& neck, const RefineConfig& config);

}  // namespace spsr::pipeline

#endif  // SPSR_PIPELINE_H_
