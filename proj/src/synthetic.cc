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

#include "spsr/synthetic.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "spsr/error.h"
#include "spsr/util.h"

namespace spsr::harness {

ShapeKind parse_shape(const std::string& name) {
  if (name == "disk") return ShapeKind::kDisk;
  if (name == "ellipse") return ShapeKind::kEllipse;
  if (name == "blob") return ShapeKind::kBlob;
  throw ContractError("unknown shape '" + name + "' (disk, ellipse, blob)");
}

std::string shape_name(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::kDisk:
      return "disk";
    case ShapeKind::kEllipse:
      return "ellipse";
    case ShapeKind::kBlob:
      return "blob";
  }
  return "unknown";
}

std::uint64_t largest_component(const BinaryMask& mask,
                                BinaryMask* component) {
  const int w = mask.width(), h = mask.height();
  std::vector<int> label(static_cast<std::size_t>(w) * h, -1);
  std::vector<int> stack;
  int best = -1;
  std::uint64_t best_size = 0;
  int next = 0;
  for (int start = 0; start < w * h; ++start) {
    if (!mask.pixels()[start] || label[start] >= 0) continue;
    std::uint64_t size = 0;
    label[start] = next;
    stack.push_back(start);
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      ++size;
      const int y = p / w, x = p % w;
      const int nb[4][2] = {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}};
      for (const auto& n : nb) {
        if (n[0] < 0 || n[0] >= h || n[1] < 0 || n[1] >= w) continue;
        const int q = n[0] * w + n[1];
        if (mask.pixels()[q] && label[q] < 0) {
          label[q] = next;
          stack.push_back(q);
        }
      }
    }
    if (size > best_size) {
      best_size = size;
      best = next;
    }
    ++next;
  }
  if (component != nullptr) {
    std::vector<std::uint8_t> px(label.size());
    for (std::size_t i = 0; i < px.size(); ++i) px[i] = label[i] == best ? 1 : 0;
    *component = BinaryMask(w, h, std::move(px));
  }
  return best_size;
}

namespace {

geometry::Box tight_box(const BinaryMask& m) {
  int x0 = m.width(), y0 = m.height(), x1 = -1, y1 = -1;
  for (int y = 0; y < m.height(); ++y) {
    for (int x = 0; x < m.width(); ++x) {
      if (!m.at(y, x)) continue;
      x0 = std::min(x0, x);
      y0 = std::min(y0, y);
      x1 = std::max(x1, x);
      y1 = std::max(y1, y);
    }
  }
  SPSR_CHECK(x1 >= 0, ContractError, "synthetic shape covers no pixel");
  return {static_cast<double>(x0), static_cast<double>(y0),
          static_cast<double>(x1 + 1), static_cast<double>(y1 + 1)};
}

template <typename Inside>
BinaryMask rasterize(int w, int h, Inside inside) {
  BinaryMask m(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) m.set(y, x, inside(x + 0.5, y + 0.5));
  }
  return m;
}

}  // namespace

SyntheticSample gen_synthetic(const SyntheticShapeSpec& spec) {
  SPSR_CHECK(spec.width > 0 && spec.height > 0, ContractError,
             "synthetic canvas must be non-empty");
  SPSR_CHECK(!spec.radius || *spec.radius > 0.0, ContractError,
             "synthetic radius must be positive");
  std::mt19937_64 rng(derive_seed(spec.seed, shape_name(spec.kind)));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double half = 0.5 * std::min(spec.width, spec.height);
  const double base =
      spec.radius ? *spec.radius : half * (0.3 + 0.4 * unit(rng));

  double extent = base;  // max distance of the shape from its center
  double a = base, b = base, theta = 0.0;
  std::vector<double> amp, phase;
  switch (spec.kind) {
    case ShapeKind::kDisk:
      break;
    case ShapeKind::kEllipse:
      b = base * (0.45 + 0.45 * unit(rng));
      theta = std::numbers::pi * unit(rng);
      break;
    case ShapeKind::kBlob: {
      SPSR_CHECK(spec.harmonics >= 1, ContractError,
                 "blob needs at least one harmonic");
      SPSR_CHECK(spec.amplitude >= 0.0 && spec.amplitude < 1.0,
                 ContractError, "blob amplitude must lie in [0, 1)");
      double total = 0.0;
      for (int k = 0; k < spec.harmonics; ++k) {
        amp.push_back(unit(rng) + 0.1);
        phase.push_back(2.0 * std::numbers::pi * unit(rng));
        total += amp.back();
      }
      for (auto& v : amp) v *= spec.amplitude / total;
      extent = base * (1.0 + spec.amplitude);
      break;
    }
  }
  SPSR_CHECK(extent >= 2.0, ContractError, "synthetic shape is too small");
  const double slack_x = spec.width / 2.0 - extent - 1.0;
  const double slack_y = spec.height / 2.0 - extent - 1.0;
  SPSR_CHECK(slack_x >= 0.0 && slack_y >= 0.0, ContractError,
             "synthetic shape does not fit in the canvas");
  const double cx = spec.width / 2.0 + slack_x * (2.0 * unit(rng) - 1.0);
  const double cy = spec.height / 2.0 + slack_y * (2.0 * unit(rng) - 1.0);

  BinaryMask mask;
  switch (spec.kind) {
    case ShapeKind::kDisk:
      mask = rasterize(spec.width, spec.height, [&](double x, double y) {
        return std::hypot(x - cx, y - cy) <= base;
      });
      break;
    case ShapeKind::kEllipse: {
      const double c = std::cos(theta), s = std::sin(theta);
      mask = rasterize(spec.width, spec.height, [&](double x, double y) {
        const double u = ((x - cx) * c + (y - cy) * s) / a;
        const double v = (-(x - cx) * s + (y - cy) * c) / b;
        return u * u + v * v <= 1.0;
      });
      break;
    }
    case ShapeKind::kBlob: {
      mask = rasterize(spec.width, spec.height, [&](double x, double y) {
        const double phi = std::atan2(y - cy, x - cx);
        double r = 1.0;
        for (std::size_t k = 0; k < amp.size(); ++k) {
          r += amp[k] * std::cos(static_cast<double>(k + 2) * phi + phase[k]);
        }
        return std::hypot(x - cx, y - cy) <= base * r;
      });
      BinaryMask main;
      largest_component(mask, &main);
      mask = std::move(main);
      break;
    }
  }
  SyntheticSample out;
  out.box = tight_box(mask);
  out.mask = std::move(mask);
  return out;
}

std::vector<SyntheticShapeSpec> synthetic_corpus(ShapeKind kind, int count,
                                                 std::uint64_t seed, int width,
                                                 int height) {
  SPSR_CHECK(count >= 0, ContractError, "corpus size must be non-negative");
  std::vector<SyntheticShapeSpec> out;
  for (int i = 0; i < count; ++i) {
    SyntheticShapeSpec s;
    s.kind = kind;
    s.width = width;
    s.height = height;
    s.seed = derive_seed(seed, static_cast<std::uint64_t>(i));
    out.push_back(s);
  }
  return out;
}

}  // namespace spsr::harness
