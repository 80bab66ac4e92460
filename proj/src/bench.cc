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

#include "spsr/bench.h"

#include <chrono>

#include "spsr/error.h"
#include "spsr/metrics.h"
#include "spsr/util.h"

namespace spsr::harness {

namespace {

struct SampleResult {
  pipeline::ImageResult sparse;
  cost::CostLedger dense;
  double biou_refined = 0.0;
  double biou_coarse = 0.0;
};

}  // namespace

BenchReport run_bench(const BenchConfig& config) {
  SPSR_CHECK(config.count >= 1, ContractError, "bench needs at least one sample");
  SPSR_CHECK(config.threads >= 1, ContractError, "threads must be positive");
  const auto start = std::chrono::steady_clock::now();
  const pipeline::ModelShape shape{config.f0, config.stages};
  const pipeline::Model model =
      pipeline::Model::from_bundle({}, shape, derive_seed(config.seed, "model"));
  const auto specs = synthetic_corpus(config.shape, config.count, config.seed,
                                      config.canvas, config.canvas);

  std::vector<SampleResult> results(specs.size());
  parallel_for(specs.size(), config.threads, [&](std::size_t i) {
    const SyntheticSample sample = gen_synthetic(specs[i]);
    const auto neck = pipeline::PyramidSampler::synthetic(
        config.f0, config.canvas, config.canvas, derive_seed(specs[i].seed, "neck"));
    pipeline::ImageInput image;
    image.image_id = static_cast<int>(i);
    image.width = config.canvas;
    image.height = config.canvas;
    pipeline::RoiInput roi;
    roi.box = {0.0, 0.0, static_cast<double>(config.canvas),
               static_cast<double>(config.canvas)};
    roi.reference = &sample.mask;
    image.rois.push_back(roi);

    pipeline::RefineConfig rc;
    rc.mode = pipeline::Mode::kOracle;
    rc.stages = config.stages;
    rc.top_n = config.top_n;
    rc.seed = config.seed;
    rc.force_dense_active = config.force_dense_active;
    auto& out = results[i];
    out.sparse = pipeline::run_refinement(image, model, neck, rc);
    rc.force_dense_active = true;
    out.dense = pipeline::run_refinement(image, model, neck, rc).ledger;

    const auto& roi_out = out.sparse.rois.front();
    const auto refined = pipeline::paste_mask(roi_out.final_mask(), roi.box,
                                              config.canvas, config.canvas);
    const int factor = roi_out.final_mask().height / pipeline::kBaseGrid;
    const auto coarse = pipeline::paste_mask(
        pipeline::upsample_nearest(roi_out.stage_masks.front(), factor),
        roi.box, config.canvas, config.canvas);
    out.biou_refined = metrics::boundary_iou(refined, sample.mask);
    out.biou_coarse = metrics::boundary_iou(coarse, sample.mask);
  });

  BenchReport report;
  report.config = config;
  cost::CostLedger dense, sparse;
  std::vector<double> fraction(config.stages + 1, 0.0);
  for (const auto& r : results) {
    dense.merge(r.dense);
    sparse.merge(r.sparse.ledger);
    for (const auto& t : r.sparse.trace) {
      fraction[t.stage] += static_cast<double>(t.active_cells) /
                           static_cast<double>(t.total_cells);
    }
    report.boundary_iou_refined.push_back(r.biou_refined);
    report.boundary_iou_coarse.push_back(r.biou_coarse);
  }
  const auto cmp = cost::compare(dense, sparse);
  report.reduction_fraction = cmp.reduction_fraction;
  report.dense_macs = cmp.dense_macs;
  report.sparse_macs = cmp.sparse_macs;
  for (const auto& s : cmp.stages) {
    const auto sc = pipeline::stage_config(s.stage, config.f0, config.top_n);
    report.stages.push_back({s.stage, sc.height, sc.features,
                             fraction[s.stage] / static_cast<double>(results.size()),
                             s.dense_macs, s.sparse_macs});
  }
  report.wall_seconds = std::chrono::duration<double>(
                            std::chrono::steady_clock::now() - start)
                            .count();
  return report;
}

nlohmann::json bench_to_json(const BenchReport& report) {
  using nlohmann::json;
  const auto& c = report.config;
  json stages = json::array();
  for (const auto& s : report.stages) {
    stages.push_back({{"stage", s.stage},
                      {"grid", s.grid},
                      {"features", s.features},
                      {"mean_active_fraction", s.mean_active_fraction},
                      {"dense_macs", s.dense_macs},
                      {"sparse_macs", s.sparse_macs}});
  }
  std::size_t improved = 0;
  double sum_refined = 0.0, sum_coarse = 0.0;
  for (std::size_t i = 0; i < report.boundary_iou_refined.size(); ++i) {
    sum_refined += report.boundary_iou_refined[i];
    sum_coarse += report.boundary_iou_coarse[i];
    if (report.boundary_iou_refined[i] > report.boundary_iou_coarse[i]) ++improved;
  }
  const double n = static_cast<double>(report.boundary_iou_refined.size());
  return {{"config",
           {{"shape", shape_name(c.shape)},
            {"count", c.count},
            {"seed", c.seed},
            {"f0", c.f0},
            {"top_n", c.top_n},
            {"stages", c.stages},
            {"force_dense_active", c.force_dense_active},
            {"canvas", c.canvas}}},
          {"reduction_fraction", report.reduction_fraction},
          {"dense_macs", report.dense_macs},
          {"sparse_macs", report.sparse_macs},
          {"stages", stages},
          {"boundary_iou",
           {{"mean_refined", sum_refined / n},
            {"mean_coarse", sum_coarse / n},
            {"improved", improved},
            {"samples", report.boundary_iou_refined.size()}}}};
}

}  // namespace spsr::harness
