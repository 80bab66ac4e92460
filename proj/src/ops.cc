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

#include "spsr/ops.h"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "spsr/cost.h"
#include "spsr/error.h"

namespace spsr::ops {
namespace {

void check_finite(std::span<const Real> v, const char* what) {
  for (Real x : v) {
    SPSR_CHECK(std::isfinite(x), ContractError,
               std::string(what) + ": non-finite entry");
  }
}

// Kernel weights re-laid out as [o][tap][c] so that a gathered [tap][c]
// neighborhood is contracted with one contiguous dot product per output.
std::vector<Real> tap_major_weights(const ConvKernel& k) {
  const int taps = k.kernel_size * k.kernel_size;
  std::vector<Real> out(static_cast<std::size_t>(k.out_features) * taps *
                        k.in_features);
  for (int o = 0; o < k.out_features; ++o) {
    for (int ky = 0; ky < k.kernel_size; ++ky) {
      for (int kx = 0; kx < k.kernel_size; ++kx) {
        const int t = ky * k.kernel_size + kx;
        for (int c = 0; c < k.in_features; ++c) {
          out[(static_cast<std::size_t>(o) * taps + t) * k.in_features + c] =
              k.weight(o, c, ky, kx);
        }
      }
    }
  }
  return out;
}

// out[o] = bias[o] + sum_t sum_c w[o][t][c] * g[t][c]; the tap/channel
// order of the sum is fixed.
void contract(const ConvKernel& k, std::span<const Real> tap_weights,
              std::span<const Real> gathered, std::span<Real> out) {
  const std::size_t n = gathered.size();
  for (int o = 0; o < k.out_features; ++o) {
    const Real* w = tap_weights.data() + static_cast<std::size_t>(o) * n;
    Real acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += w[i] * gathered[i];
    out[o] = acc + k.bias[o];
  }
}

void check_conv_operand(const SpsTensor& s, const ConvKernel& k,
                        const char* op) {
  k.validate();
  SPSR_CHECK(k.in_features == s.channels() && k.out_features == s.channels(),
             DimensionError,
             std::string(op) + ": kernel must map F -> F (F = " +
                 std::to_string(s.channels()) + ")");
}

std::vector<Real> conv_rows(const SpsTensor& s, const ConvKernel& k) {
  const auto offsets = kernel_offsets(k.kernel_size, k.dilation);
  const auto weights = tap_major_weights(k);
  std::vector<Real> rows(s.num_active() * k.out_features);
  for (std::size_t i = 0; i < s.num_active(); ++i) {
    const auto g = gather_neighborhood(s, s.active_cell(i), offsets);
    contract(k, weights, g,
             std::span<Real>(rows).subspan(i * k.out_features,
                                           k.out_features));
  }
  return rows;
}

template <typename Field>
void sample_bilinear_impl(const Field& field, int channels, int height,
                          int width, Real y, Real x, std::span<Real> out) {
  SPSR_CHECK(out.size() == static_cast<std::size_t>(channels), DimensionError,
             "sample_bilinear: output size != F");
  std::fill(out.begin(), out.end(), 0.0);
  const Real y0f = std::floor(y), x0f = std::floor(x);
  const Real fy = y - y0f, fx = x - x0f;
  const int y0 = static_cast<int>(y0f), x0 = static_cast<int>(x0f);
  const Real wy[2] = {1.0 - fy, fy};
  const Real wx[2] = {1.0 - fx, fx};
  for (int dy = 0; dy < 2; ++dy) {
    for (int dx = 0; dx < 2; ++dx) {
      const Real w = wy[dy] * wx[dx];
      if (w == 0.0) continue;
      const int yy = y0 + dy, xx = x0 + dx;
      if (yy < 0 || yy >= height || xx < 0 || xx >= width) continue;
      field(yy, xx, w, out);
    }
  }
}

}  // namespace

LinearTransform LinearTransform::zeros(int in_features, int out_features,
                                       Activation act) {
  LinearTransform t;
  t.in_features = in_features;
  t.out_features = out_features;
  t.weights.assign(static_cast<std::size_t>(in_features) * out_features, 0.0);
  t.bias.assign(out_features, 0.0);
  t.activation = act;
  return t;
}

LinearTransform LinearTransform::identity(int features) {
  auto t = zeros(features, features);
  for (int i = 0; i < features; ++i) {
    t.weights[static_cast<std::size_t>(i) * features + i] = 1.0;
  }
  return t;
}

void LinearTransform::validate() const {
  SPSR_CHECK(in_features > 0 && out_features > 0, DimensionError,
             "LinearTransform: dimensions must be positive");
  SPSR_CHECK(weights.size() ==
                     static_cast<std::size_t>(in_features) * out_features &&
                 bias.size() == static_cast<std::size_t>(out_features),
             DimensionError, "LinearTransform: weight/bias size mismatch");
  check_finite(weights, "LinearTransform");
  check_finite(bias, "LinearTransform");
}

void LinearTransform::apply(std::span<const Real> in,
                            std::span<Real> out) const {
  SPSR_CHECK(in.size() == static_cast<std::size_t>(in_features) &&
                 out.size() == static_cast<std::size_t>(out_features),
             DimensionError, "LinearTransform::apply: size mismatch");
  for (int o = 0; o < out_features; ++o) {
    const Real* w = weights.data() + static_cast<std::size_t>(o) * in_features;
    Real acc = 0.0;
    for (int c = 0; c < in_features; ++c) acc += w[c] * in[c];
    acc += bias[o];
    out[o] = (activation == Activation::kRelu && acc < 0.0) ? 0.0 : acc;
  }
}

Mlp::Mlp(LinearTransform single) : Mlp(std::vector{std::move(single)}) {}

Mlp::Mlp(std::vector<LinearTransform> layers) : layers_(std::move(layers)) {
  SPSR_CHECK(!layers_.empty(), DimensionError, "Mlp: no layers");
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i].validate();
    if (i > 0) {
      SPSR_CHECK(layers_[i].in_features == layers_[i - 1].out_features,
                 DimensionError, "Mlp: consecutive layers do not chain");
    }
  }
}

Mlp Mlp::two_layer(LinearTransform hidden, LinearTransform output) {
  hidden.activation = Activation::kRelu;
  output.activation = Activation::kNone;
  return Mlp(std::vector{std::move(hidden), std::move(output)});
}

void Mlp::apply(std::span<const Real> in, std::span<Real> out) const {
  if (layers_.size() == 1) {
    layers_[0].apply(in, out);
    return;
  }
  std::vector<Real> cur(in.begin(), in.end()), next;
  for (std::size_t i = 0; i + 1 < layers_.size(); ++i) {
    next.assign(layers_[i].out_features, 0.0);
    layers_[i].apply(cur, next);
    cur.swap(next);
  }
  layers_.back().apply(cur, out);
}

RowMap Mlp::as_row_map() const {
  return RowMap{in_features(), out_features(),
                [self = *this](std::span<const Real> in, std::span<Real> out) {
                  self.apply(in, out);
                }};
}

std::uint64_t Mlp::macs(std::uint64_t rows) const {
  std::uint64_t total = 0;
  for (const auto& l : layers_) {
    total += cost::macs_linear(rows, l.in_features, l.out_features);
  }
  return total;
}

ConvKernel ConvKernel::zeros(int features, int kernel_size, int dilation) {
  ConvKernel k;
  k.in_features = features;
  k.out_features = features;
  k.kernel_size = kernel_size;
  k.dilation = dilation;
  k.weights.assign(static_cast<std::size_t>(features) * features *
                       kernel_size * kernel_size,
                   0.0);
  k.bias.assign(features, 0.0);
  return k;
}

ConvKernel ConvKernel::delta(int features, int kernel_size, int dilation) {
  auto k = zeros(features, kernel_size, dilation);
  const int c = kernel_size / 2;
  for (int o = 0; o < features; ++o) {
    k.weights[((static_cast<std::size_t>(o) * features + o) * kernel_size +
               c) *
                  kernel_size +
              c] = 1.0;
  }
  return k;
}

void ConvKernel::validate() const {
  SPSR_CHECK(in_features > 0 && out_features > 0, DimensionError,
             "ConvKernel: dimensions must be positive");
  SPSR_CHECK(kernel_size > 0 && kernel_size % 2 == 1, ContractError,
             "ConvKernel: kernel size must be odd");
  SPSR_CHECK(dilation > 0, ContractError, "ConvKernel: dilation must be > 0");
  SPSR_CHECK(weights.size() == static_cast<std::size_t>(in_features) *
                                   out_features * kernel_size * kernel_size &&
                 bias.size() == static_cast<std::size_t>(out_features),
             DimensionError, "ConvKernel: weight/bias size mismatch");
  check_finite(weights, "ConvKernel");
  check_finite(bias, "ConvKernel");
}

SpsTensor pointwise(const SpsTensor& s, const Mlp& t) {
  SPSR_CHECK(t.in_features() == s.channels(), DimensionError,
             "pointwise: transform input size != F");
  const int out_f = t.out_features();
  std::vector<Real> rows(s.num_active() * out_f);
  for (std::size_t i = 0; i < s.num_active(); ++i) {
    t.apply(s.active_row(i), std::span<Real>(rows).subspan(i * out_f, out_f));
  }
  return s.with_active(std::move(rows), out_f);
}

SpsTensor halve_features(const SpsTensor& s, const LinearTransform& t) {
  const int f = s.channels();
  SPSR_CHECK(f % 2 == 0, DimensionError,
             "halve_features: odd feature size " + std::to_string(f));
  t.validate();
  SPSR_CHECK(t.in_features == f && t.out_features == f / 2, DimensionError,
             "halve_features: transform must map F -> F/2");
  const int half = f / 2;
  auto project = [&](std::span<const Real> src, std::size_t n) {
    std::vector<Real> dst(n * half);
    for (std::size_t i = 0; i < n; ++i) {
      t.apply(src.subspan(i * f, f),
              std::span<Real>(dst).subspan(i * half, half));
    }
    return dst;
  };
  return SpsTensor(half, s.height(), s.width(),
                   project(s.active_data(), s.num_active()),
                   project(s.passive_data(), s.num_passive()),
                   std::vector<FeatureIndex>(s.index_map().begin(),
                                             s.index_map().end()));
}

SpsTensor relu(const SpsTensor& s) {
  std::vector<Real> rows(s.active_data().begin(), s.active_data().end());
  for (Real& v : rows) v = v < 0.0 ? 0.0 : v;
  return s.with_active(std::move(rows));
}

SpsTensor conv2d_sparse(const SpsTensor& s, const ConvKernel& k) {
  check_conv_operand(s, k, "conv2d_sparse");
  return s.with_active(conv_rows(s, k));
}

SpsTensor deform_conv_sparse(const SpsTensor& s, const ConvKernel& k,
                             const OffsetField& offsets) {
  check_conv_operand(s, k, "deform_conv_sparse");
  SPSR_CHECK(offsets.size() == s.num_active(), DimensionError,
             "deform_conv_sparse: need one offset list per active cell");
  const int taps = k.kernel_size * k.kernel_size;
  const Real diag = std::hypot(static_cast<Real>(s.height()),
                               static_cast<Real>(s.width()));
  const auto base = kernel_offsets(k.kernel_size, k.dilation);
  const auto weights = tap_major_weights(k);
  const int f = s.channels();
  std::vector<Real> rows(s.num_active() * f);
  std::vector<Real> g(static_cast<std::size_t>(taps) * f);
  for (std::size_t i = 0; i < s.num_active(); ++i) {
    const auto& cell_offsets = offsets[i];
    SPSR_CHECK(cell_offsets.size() == static_cast<std::size_t>(taps),
               DimensionError,
               "deform_conv_sparse: offset list " + std::to_string(i) +
                   " does not have K*K entries");
    const CellCoord c = s.active_cell(i);
    for (int t = 0; t < taps; ++t) {
      const auto& o = cell_offsets[t];
      SPSR_CHECK(std::isfinite(o.dy) && std::isfinite(o.dx) &&
                     std::hypot(o.dy, o.dx) <= diag,
                 ContractError,
                 "deform_conv_sparse: offset not finite or beyond the grid "
                 "diagonal");
      sample_bilinear(s, c.y + base[t].dy + o.dy, c.x + base[t].dx + o.dx,
                      std::span<Real>(g).subspan(
                          static_cast<std::size_t>(t) * f, f));
    }
    contract(k, weights, g, std::span<Real>(rows).subspan(i * f, f));
  }
  return s.with_active(std::move(rows));
}

SpsTensor sfm(const SpsTensor& s, const ConvKernel& k1, const ConvKernel& k3,
              const ConvKernel& k5) {
  SPSR_CHECK(k1.kernel_size == 3 && k3.kernel_size == 3 &&
                 k5.kernel_size == 3 && k1.dilation == 1 &&
                 k3.dilation == 3 && k5.dilation == 5,
             ContractError,
             "sfm: expects 3x3 kernels with dilations 1, 3 and 5");
  check_conv_operand(s, k1, "sfm");
  check_conv_operand(s, k3, "sfm");
  check_conv_operand(s, k5, "sfm");
  auto rows = conv_rows(s, k1);
  const auto b3 = conv_rows(s, k3);
  const auto b5 = conv_rows(s, k5);
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = rows[i] + b3[i] + b5[i];
  return s.with_active(std::move(rows));
}

SpsTensor fuse_external(const SpsTensor& s, std::span<const Real> ext,
                        int ext_features, const Mlp& t) {
  const int f = s.channels();
  SPSR_CHECK(ext_features >= 0 &&
                 ext.size() == s.num_active() *
                                   static_cast<std::size_t>(ext_features),
             DimensionError,
             "fuse_external: external rows do not match active rows");
  SPSR_CHECK(t.in_features() == f + ext_features && t.out_features() == f,
             DimensionError,
             "fuse_external: transform must map F + F_e -> F");
  check_finite(ext, "fuse_external");
  std::vector<Real> rows(s.active_data().begin(), s.active_data().end());
  std::vector<Real> cat(static_cast<std::size_t>(f) + ext_features);
  std::vector<Real> delta(f);
  for (std::size_t i = 0; i < s.num_active(); ++i) {
    const auto row = s.active_row(i);
    std::copy(row.begin(), row.end(), cat.begin());
    const auto e = ext.subspan(i * ext_features, ext_features);
    std::copy(e.begin(), e.end(), cat.begin() + f);
    t.apply(cat, delta);
    for (int c = 0; c < f; ++c) rows[i * f + c] += delta[c];
  }
  return s.with_active(std::move(rows));
}

void sample_bilinear(const SpsTensor& s, Real y, Real x, std::span<Real> out) {
  sample_bilinear_impl(
      [&](int yy, int xx, Real w, std::span<Real> dst) {
        const auto row = s.feature_row(s.index_at(yy, xx));
        for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += w * row[c];
      },
      s.channels(), s.height(), s.width(), y, x, out);
}

void sample_bilinear(const DenseTensor& d, Real y, Real x,
                     std::span<Real> out) {
  sample_bilinear_impl(
      [&](int yy, int xx, Real w, std::span<Real> dst) {
        for (std::size_t c = 0; c < dst.size(); ++c) {
          dst[c] += w * d.at(static_cast<int>(c), yy, xx);
        }
      },
      d.channels(), d.height(), d.width(), y, x, out);
}

std::uint64_t conv_macs(const SpsTensor& s, const ConvKernel& k) {
  return cost::macs_conv(s.num_active(), k.kernel_size, k.in_features,
                         k.out_features, k.dilation);
}

std::uint64_t deform_conv_macs(const SpsTensor& s, const ConvKernel& k) {
  const auto taps =
      s.num_active() * static_cast<std::uint64_t>(k.kernel_size) *
      k.kernel_size;
  return conv_macs(s, k) + cost::macs_bilinear(taps, k.in_features);
}

std::uint64_t sfm_macs(const SpsTensor& s, const ConvKernel& k1,
                       const ConvKernel& k3, const ConvKernel& k5) {
  return conv_macs(s, k1) + conv_macs(s, k3) + conv_macs(s, k5);
}

}  // namespace spsr::ops
