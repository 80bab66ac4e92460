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

#include "spsr/io.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <system_error>

#include "spsr/error.h"

namespace spsr::io {

namespace {

static_assert(std::endian::native == std::endian::little,
              "binary I/O assumes a little-endian host");

// json accessors that turn schema errors into FormatError.
const json& field(const json& obj, const char* key, const std::string& where) {
  SPSR_CHECK(obj.is_object(), FormatError, where + ": expected an object");
  const auto it = obj.find(key);
  SPSR_CHECK(it != obj.end(), FormatError,
             where + ": missing field '" + key + "'");
  return *it;
}

template <typename T>
T as(const json& j, const std::string& where) {
  try {
    return j.get<T>();
  } catch (const json::exception& e) {
    throw FormatError(where + ": " + e.what());
  }
}

double number(const json& j, const std::string& where) {
  SPSR_CHECK(j.is_number(), FormatError, where + ": expected a number");
  const double v = j.get<double>();
  SPSR_CHECK(std::isfinite(v), FormatError, where + ": non-finite number");
  return v;
}

int integer(const json& j, const std::string& where) {
  SPSR_CHECK(j.is_number_integer(), FormatError,
             where + ": expected an integer");
  return j.get<int>();
}

std::vector<double> numbers(const json& j, const std::string& where) {
  SPSR_CHECK(j.is_array(), FormatError, where + ": expected an array");
  std::vector<double> out;
  for (const auto& v : j) out.push_back(number(v, where));
  return out;
}

geometry::Box box_from_json(const json& j, const std::string& where) {
  const auto v = numbers(j, where);
  SPSR_CHECK(v.size() == 4, FormatError, where + ": box needs 4 numbers");
  return {v[0], v[1], v[2], v[3]};
}

json box_to_json(const geometry::Box& b) {
  return json::array({b.x0, b.y0, b.x1, b.y1});
}

std::string at_index(const std::string& what, std::size_t i) {
  return what + "[" + std::to_string(i) + "]";
}

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(const std::string& in, std::size_t& pos) {
  SPSR_CHECK(pos + sizeof(T) <= in.size(), FormatError,
             "SPS binary: truncated input");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

std::vector<Real> rows_from_json(const json& j, int f,
                                 const std::string& where) {
  SPSR_CHECK(j.is_array(), FormatError, where + ": expected an array of rows");
  std::vector<Real> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto row = numbers(j[i], at_index(where, i));
    SPSR_CHECK(row.size() == static_cast<std::size_t>(f), FormatError,
               at_index(where, i) + ": row length != F");
    out.insert(out.end(), row.begin(), row.end());
  }
  return out;
}

json rows_to_json(std::span<const Real> data, int f) {
  json rows = json::array();
  for (std::size_t i = 0; f > 0 && i < data.size(); i += f) {
    rows.push_back(std::vector<double>(data.begin() + i, data.begin() + i + f));
  }
  return rows;
}

}  // namespace

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  SPSR_CHECK(in.is_open(), FormatError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": invalid JSON: " + e.what());
  }
}

void write_atomic(const std::filesystem::path& path, const std::string& bytes) {
  const auto dir = path.has_parent_path() ? path.parent_path()
                                          : std::filesystem::path(".");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  SPSR_CHECK(!ec, FormatError, "cannot create directory " + dir.string());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    SPSR_CHECK(out.is_open(), FormatError, "cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      out.close();
      std::filesystem::remove(tmp, ec);
      throw FormatError("failed writing " + tmp.string());
    }
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw FormatError("cannot rename onto " + path.string());
  }
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

json rle_to_json(const Rle& rle) {
  return {{"size", {rle.width, rle.height}}, {"counts", rle.counts}};
}

Rle rle_from_json(const json& j) {
  const auto size = numbers(field(j, "size", "rle"), "rle.size");
  SPSR_CHECK(size.size() == 2 && size[0] >= 0 && size[1] >= 0 &&
                 size[0] == std::floor(size[0]) &&
                 size[1] == std::floor(size[1]),
             FormatError, "rle.size must be [width, height]");
  Rle rle;
  rle.width = static_cast<int>(size[0]);
  rle.height = static_cast<int>(size[1]);
  const json& counts = field(j, "counts", "rle");
  SPSR_CHECK(counts.is_array(), FormatError, "rle.counts must be an array");
  for (const auto& c : counts) {
    SPSR_CHECK(c.is_number_unsigned() ||
                   (c.is_number_integer() && c.get<std::int64_t>() >= 0),
               FormatError, "rle.counts must be non-negative integers");
    rle.counts.push_back(c.get<std::uint32_t>());
  }
  return rle;
}

BinaryMask mask_from_json(const json& j) { return rle_decode(rle_from_json(j)); }

RoiFile parse_rois(const json& j) {
  const json* records = &j;
  bool has_size = false;
  int img_w = 0, img_h = 0;
  if (j.is_object()) {
    records = &field(j, "rois", "rois file");
    if (j.contains("image_size")) {
      const auto s = numbers(j["image_size"], "image_size");
      SPSR_CHECK(s.size() == 2 && s[0] >= 1 && s[1] >= 1, FormatError,
                 "image_size must be [width, height] with positive entries");
      img_w = static_cast<int>(s[0]);
      img_h = static_cast<int>(s[1]);
      has_size = true;
    }
  }
  SPSR_CHECK(records->is_array(), FormatError, "rois must be an array");

  std::map<int, std::size_t> slot;
  RoiFile out;
  out.num_records = records->size();
  for (std::size_t i = 0; i < records->size(); ++i) {
    const json& r = (*records)[i];
    const std::string where = at_index("rois", i);
    const int image_id =
        r.contains("image_id") ? integer(r["image_id"], where + ".image_id") : 0;
    pipeline::RoiInput roi;
    const auto b = box_from_json(field(r, "box", where), where + ".box");
    roi.box = {b.x0, b.y0, b.x1, b.y1};
    SPSR_CHECK(roi.box.x1 > roi.box.x0 && roi.box.y1 > roi.box.y0,
               FormatError, where + ": degenerate box");
    roi.class_id = integer(field(r, "class", where), where + ".class");
    roi.score = number(field(r, "score", where), where + ".score");
    SPSR_CHECK(roi.score >= 0.0 && roi.score <= 1.0, FormatError,
               where + ": score outside [0, 1]");
    if (r.contains("query")) roi.query = numbers(r["query"], where + ".query");

    auto [it, fresh] = slot.try_emplace(image_id, out.images.size());
    if (fresh) {
      pipeline::ImageInput img;
      img.image_id = image_id;
      img.width = img_w;
      img.height = img_h;
      out.images.push_back(img);
      out.order.emplace_back();
    }
    auto& img = out.images[it->second];
    if (!has_size) {
      img.width = std::max(img.width, static_cast<int>(std::ceil(roi.box.x1)));
      img.height = std::max(img.height, static_cast<int>(std::ceil(roi.box.y1)));
    }
    img.rois.push_back(std::move(roi));
    out.order[it->second].push_back(i);
  }
  // Ascending image id.
  std::vector<std::size_t> perm(out.images.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  std::sort(perm.begin(), perm.end(), [&](std::size_t a, std::size_t b) {
    return out.images[a].image_id < out.images[b].image_id;
  });
  RoiFile sorted;
  sorted.num_records = out.num_records;
  for (auto p : perm) {
    sorted.images.push_back(std::move(out.images[p]));
    sorted.order.push_back(std::move(out.order[p]));
  }
  for (auto& img : sorted.images) {
    SPSR_CHECK(img.width >= 1 && img.height >= 1, FormatError,
               "image " + std::to_string(img.image_id) +
                   " has an empty canvas");
  }
  return sorted;
}

std::vector<BinaryMask> parse_reference_masks(const json& j,
                                              std::size_t num_records) {
  SPSR_CHECK(j.is_object(), FormatError, "reference masks: expected object");
  const auto& fmt = field(j, "format", "reference masks");
  SPSR_CHECK(fmt.is_string() && fmt.get<std::string>() == kMaskFormat,
             FormatError, std::string("reference masks: format must be ") +
                              kMaskFormat);
  const json& list = field(j, "masks", "reference masks");
  SPSR_CHECK(list.is_array() && list.size() == num_records, FormatError,
             "reference masks: need exactly one mask per RoI record");
  std::vector<BinaryMask> out;
  for (std::size_t i = 0; i < list.size(); ++i) {
    if (list[i].contains("roi")) {
      SPSR_CHECK(integer(list[i]["roi"], at_index("masks", i)) ==
                     static_cast<int>(i),
                 FormatError, at_index("masks", i) + ": roi index out of order");
    }
    out.push_back(mask_from_json(list[i]));
  }
  return out;
}

json reference_masks_to_json(const std::vector<BinaryMask>& masks) {
  json list = json::array();
  for (std::size_t i = 0; i < masks.size(); ++i) {
    json m = rle_to_json(rle_encode(masks[i]));
    m["roi"] = i;
    list.push_back(m);
  }
  return {{"format", kMaskFormat}, {"masks", list}};
}

std::vector<metrics::EvalEntry> parse_eval_entries(const json& j,
                                                   bool ground_truth) {
  const std::string what = ground_truth ? "ground truth" : "predictions";
  SPSR_CHECK(j.is_array(), FormatError, what + ": expected an array");
  std::vector<metrics::EvalEntry> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const json& r = j[i];
    const std::string where = at_index(what, i);
    metrics::EvalEntry e;
    e.image_id = integer(field(r, "image_id", where), where + ".image_id");
    e.class_id = integer(field(r, "class", where), where + ".class");
    if (ground_truth) {
      if (r.contains("iscrowd")) {
        SPSR_CHECK(r["iscrowd"].is_boolean() && !r["iscrowd"].get<bool>(),
                   FormatError, where + ": crowd regions are not supported");
      }
    } else {
      e.score = number(field(r, "score", where), where + ".score");
      SPSR_CHECK(e.score >= 0.0 && e.score <= 1.0, FormatError,
                 where + ": score outside [0, 1]");
    }
    if (r.contains("box")) e.box = box_from_json(r["box"], where + ".box");
    if (r.contains("rle")) e.mask = mask_from_json(r["rle"]);
    SPSR_CHECK(e.box || e.mask, FormatError,
               where + ": needs a box or an rle mask");
    out.push_back(std::move(e));
  }
  return out;
}

json eval_entries_to_json(const std::vector<metrics::EvalEntry>& entries,
                          bool ground_truth) {
  json out = json::array();
  for (const auto& e : entries) {
    json r = {{"image_id", e.image_id}, {"class", e.class_id}};
    if (!ground_truth) r["score"] = e.score;
    if (e.box) r["box"] = box_to_json(*e.box);
    if (e.mask) r["rle"] = rle_to_json(rle_encode(*e.mask));
    out.push_back(r);
  }
  return out;
}

std::vector<metrics::PanopticImage> parse_panoptic(const json& j) {
  SPSR_CHECK(j.is_array(), FormatError, "panoptic: expected an array");
  std::vector<metrics::PanopticImage> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string where = at_index("panoptic", i);
    metrics::PanopticImage img;
    img.image_id = integer(field(j[i], "image_id", where), where + ".image_id");
    const json& segs = field(j[i], "segments", where);
    SPSR_CHECK(segs.is_array(), FormatError, where + ".segments: expected array");
    for (std::size_t k = 0; k < segs.size(); ++k) {
      const std::string sw = where + at_index(".segments", k);
      metrics::PanopticSegment s;
      s.class_id = integer(field(segs[k], "class", sw), sw + ".class");
      const json& thing = field(segs[k], "is_thing", sw);
      SPSR_CHECK(thing.is_boolean(), FormatError, sw + ".is_thing: expected bool");
      s.is_thing = thing.get<bool>();
      s.mask = mask_from_json(field(segs[k], "rle", sw));
      if (segs[k].contains("score")) s.score = number(segs[k]["score"], sw);
      img.segments.push_back(std::move(s));
    }
    out.push_back(std::move(img));
  }
  return out;
}

json panoptic_to_json(const std::vector<metrics::PanopticImage>& images) {
  json out = json::array();
  for (const auto& img : images) {
    json segs = json::array();
    for (const auto& s : img.segments) {
      segs.push_back({{"class", s.class_id},
                      {"is_thing", s.is_thing},
                      {"rle", rle_to_json(rle_encode(s.mask))},
                      {"score", s.score}});
    }
    out.push_back({{"image_id", img.image_id}, {"segments", segs}});
  }
  return out;
}

json ledger_to_json(const cost::CostLedger& dense,
                    const cost::CostLedger& sparse) {
  const auto cmp = cost::compare(dense, sparse);
  const auto cells = sparse.per_stage();
  json out = json::array();
  for (const auto& s : cmp.stages) {
    const auto it = cells.find(s.stage);
    out.push_back({{"stage", s.stage},
                   {"dense_macs", s.dense_macs},
                   {"sparse_macs", s.sparse_macs},
                   {"active_cells", it->second.active_cells},
                   {"total_cells", it->second.total_cells}});
  }
  return out;
}

json trace_to_json(const std::vector<pipeline::StageTrace>& trace) {
  json out = json::array();
  for (const auto& t : trace) {
    out.push_back({{"stage", t.stage},
                   {"height", t.height},
                   {"width", t.width},
                   {"features", t.features},
                   {"active_cells", t.active_cells},
                   {"total_cells", t.total_cells}});
  }
  return out;
}

json sps_to_json(const SpsTensor& t) {
  return {{"format", kSpsJsonFormat},
          {"F", t.channels()},
          {"H", t.height()},
          {"W", t.width()},
          {"active", rows_to_json(t.active_data(), t.channels())},
          {"passive", rows_to_json(t.passive_data(), t.channels())},
          {"index_map", std::vector<FeatureIndex>(t.index_map().begin(),
                                                  t.index_map().end())}};
}

SpsTensor sps_from_json(const json& j) {
  const auto& fmt = field(j, "format", "sps");
  SPSR_CHECK(fmt.is_string() && fmt.get<std::string>() == kSpsJsonFormat,
             FormatError, std::string("sps: format must be ") + kSpsJsonFormat);
  const int f = integer(field(j, "F", "sps"), "sps.F");
  const int h = integer(field(j, "H", "sps"), "sps.H");
  const int w = integer(field(j, "W", "sps"), "sps.W");
  SPSR_CHECK(f >= 1 && h >= 1 && w >= 1, FormatError,
             "sps: F, H and W must be positive");
  auto active = rows_from_json(field(j, "active", "sps"), f, "sps.active");
  auto passive = rows_from_json(field(j, "passive", "sps"), f, "sps.passive");
  const json& map = field(j, "index_map", "sps");
  SPSR_CHECK(map.is_array(), FormatError, "sps.index_map: expected an array");
  std::vector<FeatureIndex> index;
  for (const auto& v : map) {
    SPSR_CHECK(v.is_number_unsigned() ||
                   (v.is_number_integer() && v.get<std::int64_t>() >= 0),
               FormatError, "sps.index_map: expected non-negative integers");
    index.push_back(v.get<FeatureIndex>());
  }
  try {
    return SpsTensor(f, h, w, std::move(active), std::move(passive),
                     std::move(index));
  } catch (const ContractError& e) {
    throw FormatError(std::string("sps: ") + e.what());
  }
}

std::string sps_to_binary(const SpsTensor& t) {
  std::string out = "SPS1";
  put<std::uint32_t>(out, t.channels());
  put<std::uint32_t>(out, t.height());
  put<std::uint32_t>(out, t.width());
  put<std::uint32_t>(out, static_cast<std::uint32_t>(t.num_active()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(t.num_passive()));
  for (Real v : t.active_data()) put<float>(out, static_cast<float>(v));
  for (Real v : t.passive_data()) put<float>(out, static_cast<float>(v));
  for (FeatureIndex v : t.index_map()) put<std::uint32_t>(out, v);
  return out;
}

SpsTensor sps_from_binary(const std::string& bytes) {
  SPSR_CHECK(bytes.size() >= 4 && bytes.compare(0, 4, "SPS1") == 0,
             FormatError, "SPS binary: bad magic");
  std::size_t pos = 4;
  const auto f = take<std::uint32_t>(bytes, pos);
  const auto h = take<std::uint32_t>(bytes, pos);
  const auto w = take<std::uint32_t>(bytes, pos);
  const auto na = take<std::uint32_t>(bytes, pos);
  const auto np = take<std::uint32_t>(bytes, pos);
  SPSR_CHECK(f >= 1 && h >= 1 && w >= 1 && f <= (1u << 20) &&
                 static_cast<std::uint64_t>(h) * w <= (1ull << 28),
             FormatError, "SPS binary: implausible header");
  const std::uint64_t values =
      (static_cast<std::uint64_t>(na) + np) * f;
  const std::uint64_t expected =
      pos + values * 4 + static_cast<std::uint64_t>(h) * w * 4;
  SPSR_CHECK(bytes.size() == expected, FormatError,
             "SPS binary: size " + std::to_string(bytes.size()) +
                 " does not match header (expected " +
                 std::to_string(expected) + ")");
  std::vector<Real> active(static_cast<std::size_t>(na) * f);
  std::vector<Real> passive(static_cast<std::size_t>(np) * f);
  for (auto& v : active) v = take<float>(bytes, pos);
  for (auto& v : passive) v = take<float>(bytes, pos);
  std::vector<FeatureIndex> index(static_cast<std::size_t>(h) * w);
  for (auto& v : index) v = take<std::uint32_t>(bytes, pos);
  try {
    return SpsTensor(static_cast<int>(f), static_cast<int>(h),
                     static_cast<int>(w), std::move(active),
                     std::move(passive), std::move(index));
  } catch (const ContractError& e) {
    throw FormatError(std::string("SPS binary: ") + e.what());
  }
}

}  // namespace spsr::io
