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

#include "spsr/cli.h"

#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "spsr/bench.h"
#include "spsr/error.h"
#include "spsr/io.h"
#include "spsr/metrics.h"
#include "spsr/pipeline.h"
#include "spsr/synthetic.h"
#include "spsr/util.h"
#include "spsr/weights.h"

namespace spsr::cli {

namespace {

namespace fs = std::filesystem;
using io::json;

constexpr const char* kFooter = R"(File formats (all JSON unless noted):
  RoIs         {"image_size": [w, h], "rois": [{"image_id", "box": [x0, y0, x1, y1],
               "class", "score", "query"?}]} or the bare "rois" array
  masks        {"format": "sps-rle/1", "masks": [{"roi", "size": [w, h], "counts"}]}
               column-major run lengths starting with background
  detections   [{"image_id", "class", "score", "box"?, "rle"?}]
  ground truth [{"image_id", "class", "box"?, "rle"?, "iscrowd": false}]
  panoptic     [{"image_id", "segments": [{"class", "is_thing", "rle"}]}]
  ledger       [{"stage", "dense_macs", "sparse_macs", "active_cells", "total_cells"}]
  weights      binary: u16 name length, name, u8 rank, u32 dims, f32 data (LE)
  SPS tensor   binary: "SPS1", u32 F H W N_A N_P, f32 active, f32 passive, u32 map
Exit codes: 0 success, 2 malformed input, 3 contract violation.)";

struct RefineArgs {
  std::string mode = "oracle";
  std::string rois;
  std::string ref_masks;
  std::string weights;
  std::string out;
  int stages = pipeline::kMaxStages;
  std::size_t top_n = pipeline::kDefaultTopN;
  int f0 = pipeline::kDefaultF0;
  std::uint64_t seed = 0;
  int threads = 1;
  bool force_dense = false;
};

struct EvalArgs {
  std::string task = "seg";
  std::string preds;
  std::string gts;
  std::string out;
  double boundary_d = 0.02;
};

struct BenchArgs {
  std::string shape = "blob";
  int count = 50;
  std::uint64_t seed = 0;
  int f0 = 64;
  std::size_t top_n = pipeline::kDefaultTopN;
  int stages = pipeline::kMaxStages;
  int threads = 1;
  bool force_dense = false;
  std::string out;
};

struct ConvertArgs {
  std::string in;
  std::string out;
  std::string to;
};

struct SynthArgs {
  std::string shape = "disk";
  int count = 10;
  std::uint64_t seed = 0;
  int width = 448;
  int height = 448;
  std::string out;
};

void emit(const json& report, const std::string& path, std::ostream& out) {
  if (path.empty()) {
    out << io::dump(report);
  } else {
    io::write_atomic(path, io::dump(report));
  }
}

int cmd_refine(const RefineArgs& a, std::ostream& err) {
  SPSR_CHECK(a.mode == "oracle" || a.mode == "weights", FormatError,
             "--mode must be oracle or weights");
  const bool oracle = a.mode == "oracle";
  const io::RoiFile rois = io::parse_rois(io::read_json(a.rois));

  std::vector<BinaryMask> refs;
  if (oracle) {
    SPSR_CHECK(!a.ref_masks.empty(), FormatError,
               "oracle mode needs --ref-masks");
    refs = io::parse_reference_masks(io::read_json(a.ref_masks),
                                     rois.num_records);
  }
  WeightBundle bundle;
  if (!oracle) {
    SPSR_CHECK(!a.weights.empty(), FormatError, "weights mode needs --weights");
    bundle = WeightBundle::load(a.weights);
  } else if (!a.weights.empty()) {
    bundle = WeightBundle::load(a.weights);
  }

  const pipeline::ModelShape shape{a.f0, a.stages};
  shape.validate();
  const auto model = pipeline::Model::from_bundle(bundle, shape, a.seed);
  std::optional<pipeline::PyramidSampler> shared_neck;
  bool bundle_has_neck = false;
  for (const auto& [name, arr] : bundle.arrays()) {
    if (name.rfind("neck.p", 0) == 0) bundle_has_neck = true;
  }
  if (bundle_has_neck) shared_neck = pipeline::PyramidSampler::from_bundle(bundle);

  pipeline::RefineConfig rc;
  rc.mode = oracle ? pipeline::Mode::kOracle : pipeline::Mode::kWeights;
  rc.stages = a.stages;
  rc.top_n = a.top_n;
  rc.seed = a.seed;
  rc.force_dense_active = a.force_dense;

  const std::size_t n_images = rois.images.size();
  std::vector<pipeline::ImageResult> results(n_images);
  std::vector<pipeline::ImageInput> inputs = rois.images;
  for (std::size_t i = 0; i < n_images; ++i) {
    for (std::size_t r = 0; r < inputs[i].rois.size(); ++r) {
      if (oracle) inputs[i].rois[r].reference = &refs[rois.order[i][r]];
    }
  }
  parallel_for(n_images, a.threads, [&](std::size_t i) {
    if (shared_neck) {
      results[i] = pipeline::run_refinement(inputs[i], model, *shared_neck, rc);
    } else {
      const auto neck = pipeline::PyramidSampler::synthetic(
          a.f0, inputs[i].width, inputs[i].height,
          derive_seed(derive_seed(a.seed, "neck"),
                      static_cast<std::uint64_t>(inputs[i].image_id)));
      results[i] = pipeline::run_refinement(inputs[i], model, neck, rc);
    }
  });

  std::vector<json> records(rois.num_records);
  cost::CostLedger dense, sparse;
  std::vector<pipeline::StageTrace> trace;
  for (std::size_t i = 0; i < n_images; ++i) {
    const auto& img = inputs[i];
    const auto& res = results[i];
    dense.merge(res.dense_ledger);
    sparse.merge(res.ledger);
    for (const auto& t : res.trace) {
      if (trace.size() <= static_cast<std::size_t>(t.stage)) trace.push_back(t);
      else {
        trace[t.stage].active_cells += t.active_cells;
        trace[t.stage].total_cells += t.total_cells;
      }
    }
    for (std::size_t r = 0; r < img.rois.size(); ++r) {
      const auto& roi = img.rois[r];
      const auto& out = res.rois[r];
      const auto& grid = out.final_mask();
      const auto pasted =
          pipeline::paste_mask(grid, roi.box, img.width, img.height);
      records[rois.order[i][r]] = {
          {"roi", rois.order[i][r]},
          {"image_id", img.image_id},
          {"class", roi.class_id},
          {"score", out.seg_score},
          {"mask_score", out.mask_score},
          {"grid", {grid.width, grid.height}},
          {"roi_rle", io::rle_to_json(rle_encode(pipeline::threshold(grid)))},
          {"rle", io::rle_to_json(rle_encode(pasted))}};
    }
  }
  const json masks = {{"format", io::kMaskFormat}, {"masks", records}};
  const json ledger = io::ledger_to_json(dense, sparse);
  const json trace_json = io::trace_to_json(trace);

  const fs::path dir(a.out);
  io::write_atomic(dir / "masks.json", io::dump(masks));
  io::write_atomic(dir / "ledger.json", io::dump(ledger));
  io::write_atomic(dir / "trace.json", io::dump(trace_json));
  err << "refined " << rois.num_records << " RoIs in " << n_images
      << " image(s)\n";
  return kExitOk;
}

json suite_json(const std::string& task, const metrics::ApSuite& s) {
  return {{"task", task},     {"AP", s.ap},        {"AP50", s.ap50},
          {"AP75", s.ap75},   {"APs", s.ap_small}, {"APm", s.ap_medium},
          {"APl", s.ap_large}};
}

json pq_json(const metrics::PqReport& r) {
  json per_class = json::object();
  for (const auto& [cls, st] : r.per_class) {
    per_class[std::to_string(cls)] = {{"is_thing", st.is_thing},
                                      {"tp", st.tp},
                                      {"fp", st.fp},
                                      {"fn", st.fn},
                                      {"PQ", st.pq},
                                      {"SQ", st.sq},
                                      {"RQ", st.rq}};
  }
  const auto summary = [](const metrics::PqSummary& s) {
    return json{{"PQ", s.pq}, {"SQ", s.sq}, {"RQ", s.rq}, {"num_classes", s.num_classes}};
  };
  return {{"task", "panoptic"},
          {"PQ", r.all.pq},
          {"SQ", r.all.sq},
          {"RQ", r.all.rq},
          {"PQ_th", r.things.pq},
          {"PQ_st", r.stuff.pq},
          {"all", summary(r.all)},
          {"things", summary(r.things)},
          {"stuff", summary(r.stuff)},
          {"per_class", per_class}};
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  if (a.task == "panoptic") {
    const auto preds = io::parse_panoptic(io::read_json(a.preds));
    const auto gts = io::parse_panoptic(io::read_json(a.gts));
    std::map<int, bool> thing;
    for (const auto* side : {&preds, &gts}) {
      for (const auto& img : *side) {
        for (const auto& s : img.segments) {
          const auto [it, fresh] = thing.emplace(s.class_id, s.is_thing);
          SPSR_CHECK(fresh || it->second == s.is_thing, FormatError,
                     "class " + std::to_string(s.class_id) +
                         " is marked both thing and stuff");
        }
      }
    }
    std::set<int> things;
    for (const auto& [cls, t] : thing) {
      if (t) things.insert(cls);
    }
    emit(pq_json(metrics::pq(preds, gts, things)), a.out, out);
    return kExitOk;
  }
  metrics::GeometryKind kind;
  if (a.task == "det") {
    kind = metrics::GeometryKind::kBox;
  } else if (a.task == "seg") {
    kind = metrics::GeometryKind::kMask;
  } else if (a.task == "boundary") {
    kind = metrics::GeometryKind::kBoundary;
  } else {
    throw FormatError("--task must be det, seg, boundary or panoptic");
  }
  const auto preds = io::parse_eval_entries(io::read_json(a.preds), false);
  const auto gts = io::parse_eval_entries(io::read_json(a.gts), true);
  try {
    const metrics::ApEvaluator ev(preds, gts, kind, a.boundary_d);
    emit(suite_json(a.task, ev.suite()), a.out, out);
  } catch (const DimensionError& e) {
    throw FormatError(std::string("masks of one image differ in size: ") +
                      e.what());
  }
  return kExitOk;
}

int cmd_bench(const BenchArgs& a, std::ostream& out, std::ostream& err) {
  harness::BenchConfig c;
  c.shape = harness::parse_shape(a.shape);
  c.count = a.count;
  c.seed = a.seed;
  c.f0 = a.f0;
  c.top_n = a.top_n;
  c.stages = a.stages;
  c.threads = a.threads;
  c.force_dense_active = a.force_dense;
  pipeline::ModelShape{c.f0, c.stages}.validate();
  const auto report = harness::run_bench(c);
  emit(harness::bench_to_json(report), a.out, out);
  err << "bench: " << c.count << " samples, reduction "
      << report.reduction_fraction << ", wall " << report.wall_seconds
      << " s\n";
  return kExitOk;
}

int cmd_convert(const ConvertArgs& a) {
  const std::string bytes = io::read_file(a.in);
  const bool is_binary = bytes.rfind("SPS1", 0) == 0;
  std::string to = a.to;
  if (to.empty()) to = is_binary ? "json" : "binary";
  SPSR_CHECK(to == "json" || to == "binary", FormatError,
             "--to must be json or binary");
  SpsTensor t = is_binary ? io::sps_from_binary(bytes) : [&] {
    try {
      return io::sps_from_json(json::parse(bytes));
    } catch (const json::exception& e) {
      throw FormatError(a.in + ": invalid JSON: " + e.what());
    }
  }();
  io::write_atomic(a.out, to == "json" ? io::dump(io::sps_to_json(t))
                                       : io::sps_to_binary(t));
  return kExitOk;
}

int cmd_synth(const SynthArgs& a) {
  const auto kind = harness::parse_shape(a.shape);
  const auto specs =
      harness::synthetic_corpus(kind, a.count, a.seed, a.width, a.height);
  json rois = json::array();
  std::vector<BinaryMask> refs;
  std::vector<metrics::EvalEntry> gts;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    auto sample = harness::gen_synthetic(specs[i]);
    rois.push_back({{"image_id", i},
                    {"box", {0, 0, a.width, a.height}},
                    {"class", 1},
                    {"score", 1.0}});
    gts.push_back({static_cast<int>(i), 1, 1.0, sample.box, sample.mask});
    refs.push_back(std::move(sample.mask));
  }
  const fs::path dir(a.out);
  const json roi_file = {{"image_size", {a.width, a.height}}, {"rois", rois}};
  io::write_atomic(dir / "rois.json", io::dump(roi_file));
  io::write_atomic(dir / "refs.json", io::dump(io::reference_masks_to_json(refs)));
  io::write_atomic(dir / "gts.json", io::dump(io::eval_entries_to_json(gts, true)));
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out,
            std::ostream& err) {
  CLI::App app{"Sparse mask refinement, detection geometry and evaluation"};
  app.name("spsr");
  app.footer(kFooter);
  app.require_subcommand(1);

  RefineArgs ra;
  auto* refine = app.add_subcommand(
      "refine", "Refine RoI masks (oracle or weights mode) and log MACs");
  refine->add_option("--mode", ra.mode, "oracle or weights")
      ->envname("SPSR_MODE")
      ->capture_default_str();
  refine->add_option("--rois", ra.rois, "RoI JSON file")->required();
  refine->add_option("--ref-masks", ra.ref_masks,
                     "Reference masks in the RoI frame (oracle mode)");
  refine->add_option("--weights", ra.weights, "Binary weight bundle")
      ->envname("SPSR_WEIGHTS");
  refine->add_option("--out", ra.out, "Output directory")->required();
  refine->add_option("--stages", ra.stages, "Refinement stages (1..3)")
      ->envname("SPSR_STAGES")
      ->capture_default_str();
  refine->add_option("--top-n", ra.top_n, "Active cells per image and stage")
      ->envname("SPSR_TOP_N")
      ->capture_default_str();
  refine->add_option("--f0", ra.f0, "Stage-0 feature size")
      ->envname("SPSR_F0")
      ->capture_default_str();
  refine->add_option("--seed", ra.seed, "Seed for missing weights and features")
      ->envname("SPSR_SEED")
      ->capture_default_str();
  refine->add_option("--threads", ra.threads, "Worker threads")
      ->envname("SPSR_THREADS")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  refine->add_flag("--force-dense-active", ra.force_dense,
                   "Make every cell active");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Compute AP, boundary AP or PQ");
  eval->add_option("--task", ea.task, "det, seg, boundary or panoptic")
      ->capture_default_str();
  eval->add_option("--preds", ea.preds, "Predictions JSON")->required();
  eval->add_option("--gts", ea.gts, "Ground truth JSON")->required();
  eval->add_option("--out", ea.out, "Report path (default: stdout)");
  eval->add_option("--boundary-d", ea.boundary_d,
                   "Boundary band as a fraction of the image diagonal")
      ->capture_default_str();

  BenchArgs ba;
  auto* bench = app.add_subcommand(
      "bench", "Oracle-mode sparse versus dense run on synthetic masks");
  bench->add_option("--shape", ba.shape, "disk, ellipse or blob")
      ->capture_default_str();
  bench->add_option("--count", ba.count, "Corpus size")->capture_default_str();
  bench->add_option("--seed", ba.seed, "Corpus seed")
      ->envname("SPSR_SEED")
      ->capture_default_str();
  bench->add_option("--f0", ba.f0, "Stage-0 feature size")
      ->envname("SPSR_F0")
      ->capture_default_str();
  bench->add_option("--top-n", ba.top_n, "Active cells per image and stage")
      ->envname("SPSR_TOP_N")
      ->capture_default_str();
  bench->add_option("--stages", ba.stages, "Refinement stages (1..3)")
      ->envname("SPSR_STAGES")
      ->capture_default_str();
  bench->add_option("--threads", ba.threads, "Worker threads")
      ->envname("SPSR_THREADS")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  bench->add_flag("--force-dense-active", ba.force_dense,
                  "Make every cell active");
  bench->add_option("--out", ba.out, "Report path (default: stdout)");

  ConvertArgs ca;
  auto* convert =
      app.add_subcommand("convert", "Convert SPS tensors between binary and JSON");
  convert->add_option("--in", ca.in, "Input file")->required();
  convert->add_option("--out", ca.out, "Output file")->required();
  convert->add_option("--to", ca.to, "json or binary (default: the other one)");

  SynthArgs sa;
  auto* synth = app.add_subcommand(
      "synth", "Write a synthetic corpus: rois.json, refs.json, gts.json");
  synth->add_option("--shape", sa.shape, "disk, ellipse or blob")
      ->capture_default_str();
  synth->add_option("--count", sa.count, "Corpus size")->capture_default_str();
  synth->add_option("--seed", sa.seed, "Corpus seed")
      ->envname("SPSR_SEED")
      ->capture_default_str();
  synth->add_option("--width", sa.width, "Canvas width")->capture_default_str();
  synth->add_option("--height", sa.height, "Canvas height")->capture_default_str();
  synth->add_option("--out", sa.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitBadInput;
  }

  try {
    if (*refine) return cmd_refine(ra, err);
    if (*eval) return cmd_eval(ea, out);
    if (*bench) return cmd_bench(ba, out, err);
    if (*convert) return cmd_convert(ca);
    if (*synth) return cmd_synth(sa);
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    return kExitBadInput;
  } catch (const ContractError& e) {
    err << "contract violation: " << e.what() << "\n";
    return kExitContract;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace spsr::cli
