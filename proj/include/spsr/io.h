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

// File formats: JSON schemas for RoIs, masks, detections and panoptic
// segments; the SPS binary dump; atomic file writes.

#ifndef SPSR_IO_H_
#define SPSR_IO_H_

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "spsr/cost.h"
#include "spsr/mask.h"
#include "spsr/metrics.h"
#include "spsr/pipeline.h"
#include "spsr/tensor.h"

namespace spsr::io {

using nlohmann::json;

inline constexpr const char* kMaskFormat = "sps-rle/1";
inline constexpr const char* kSpsJsonFormat = "sps/1";

// Reading and parsing failures throw FormatError.
json read_json(const std::filesystem::path& path);
std::string read_file(const std::filesystem::path& path);

// Writes to a sibling temporary file, then renames over `path`.
void write_atomic(const std::filesystem::path& path, const std::string& bytes);
// Pretty-printed with sorted keys and a trailing newline.
std::string dump(const json& j);

// {"size": [w, h], "counts": [...]}
json rle_to_json(const Rle& rle);
Rle rle_from_json(const json& j);
BinaryMask mask_from_json(const json& j);

// RoI files: either {"image_size": [w, h], "rois": [...]} or a bare array of
// records {"image_id"?, "box": [x0, y0, x1, y1], "class", "score",
// "query"?}. Without image_size the canvas is the smallest one holding every
// box of the image. Images are returned by ascending id with RoIs in file
// order; `order` maps (image, roi) back to the record index.
struct RoiFile {
  std::vector<pipeline::ImageInput> images;
  std::vector<std::vector<std::size_t>> order;
  std::size_t num_records = 0;
};
RoiFile parse_rois(const json& j);

// {"format": "sps-rle/1", "masks": [{"roi"?, "size", "counts"}]}, one mask
// per RoI record in record order.
std::vector<BinaryMask> parse_reference_masks(const json& j,
                                              std::size_t num_records);
json reference_masks_to_json(const std::vector<BinaryMask>& masks);

// [{"image_id", "class", "score"?, "box"?, "rle"?, "iscrowd"?}]
std::vector<metrics::EvalEntry> parse_eval_entries(const json& j,
                                                   bool ground_truth);
json eval_entries_to_json(const std::vector<metrics::EvalEntry>& entries,
                          bool ground_truth);

// [{"image_id", "segments": [{"class", "is_thing", "rle", "score"?}]}]
std::vector<metrics::PanopticImage> parse_panoptic(const json& j);
json panoptic_to_json(const std::vector<metrics::PanopticImage>& images);

// [{"stage", "dense_macs", "sparse_macs", "active_cells", "total_cells"}]
json ledger_to_json(const cost::CostLedger& dense,
                    const cost::CostLedger& sparse);
json trace_to_json(const std::vector<pipeline::StageTrace>& trace);

json sps_to_json(const SpsTensor& t);
SpsTensor sps_from_json(const json& j);
// "SPS1", u32 F, H, W, N_A, N_P, f32 active rows, f32 passive rows, u32
// index map; little-endian. Values are stored as f32.
std::string sps_to_binary(const SpsTensor& t);
SpsTensor sps_from_binary(const std::string& bytes);

}  // namespace spsr::io

#endif  // SPSR_IO_H_
