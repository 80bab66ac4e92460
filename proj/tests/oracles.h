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

// Dense brute-force reference implementations and random instance builders
// shared by the unit tests and the acceptance suite.

#ifndef SPSR_TESTS_ORACLES_H_
#define SPSR_TESTS_ORACLES_H_

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "spsr/ops.h"
#include "spsr/tensor.h"

namespace spsr::testing {

using Rng = std::mt19937_64;

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline int uniform_int(Rng& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

inline double gaussian(Rng& rng) {
  return std::normal_distribution<double>(0.0, 1.0)(rng);
}

inline bool close_rel(double a, double b, double rel = 1e-6) {
  return std::abs(a - b) <= rel * std::max(std::abs(a), std::abs(b)) + 1e-12;
}

inline DenseTensor random_dense(Rng& rng, int f, int h, int w) {
  std::vector<Real> data(static_cast<std::size_t>(f) * h * w);
  for (auto& v : data) v = gaussian(rng);
  return DenseTensor(f, h, w, std::move(data));
}

inline std::vector<CellCoord> random_cells(Rng& rng, int h, int w, double p) {
  std::vector<CellCoord> cells;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (uniform(rng, 0.0, 1.0) < p) cells.push_back({y, x, 0});
    }
  }
  return cells;
}

inline ops::LinearTransform random_linear(Rng& rng, int in, int out,
                                          ops::Activation act =
                                              ops::Activation::kNone) {
  ops::LinearTransform t = ops::LinearTransform::zeros(in, out, act);
  for (auto& v : t.weights) v = gaussian(rng);
  for (auto& v : t.bias) v = gaussian(rng);
  return t;
}

inline ops::Mlp random_mlp(Rng& rng, int in, int hidden, int out) {
  return ops::Mlp::two_layer(random_linear(rng, in, hidden, ops::Activation::kRelu),
                             random_linear(rng, hidden, out));
}

inline ops::ConvKernel random_kernel(Rng& rng, int f, int k, int dilation,
                                     bool with_bias = true) {
  ops::ConvKernel kern = ops::ConvKernel::zeros(f, k, dilation);
  for (auto& v : kern.weights) v = gaussian(rng);
  if (with_bias) {
    for (auto& v : kern.bias) v = gaussian(rng);
  }
  return kern;
}

// A random SPS tensor of at most 16x16 cells and 8 features. Half of the
// instances come from a subdivided coarser grid, so passive indices repeat.
inline SpsTensor random_sps(Rng& rng, int max_side = 16, int max_f = 8,
                            int min_f = 1) {
  const int f = uniform_int(rng, min_f, max_f);
  if (uniform_int(rng, 0, 1) == 0 || max_side < 2) {
    const int h = uniform_int(rng, 1, max_side), w = uniform_int(rng, 1, max_side);
    const auto d = random_dense(rng, f, h, w);
    return from_dense(d, random_cells(rng, h, w, uniform(rng, 0.0, 1.0)));
  }
  const int h = uniform_int(rng, 1, max_side / 2);
  const int w = uniform_int(rng, 1, max_side / 2);
  const auto coarse = from_dense(random_dense(rng, f, h, w),
                                 random_cells(rng, h, w, uniform(rng, 0.0, 1.0)));
  std::array<RowMap, 4> maps;
  for (auto& m : maps) m = ops::Mlp(random_linear(rng, f, f)).as_row_map();
  const SpsTensor fine = subdivide(coarse, maps);
  return resplit(fine, random_cells(rng, 2 * h, 2 * w, uniform(rng, 0.0, 0.6)));
}

// ----- dense references -----------------------------------------------------

inline double dense_or_zero(const DenseTensor& d, int c, int y, int x) {
  if (y < 0 || y >= d.height() || x < 0 || x >= d.width()) return 0.0;
  return d.at(c, y, x);
}

inline std::vector<double> linear_ref(const ops::LinearTransform& t,
                                      const std::vector<double>& in) {
  std::vector<double> out(t.out_features);
  for (int o = 0; o < t.out_features; ++o) {
    double acc = t.bias[o];
    for (int i = 0; i < t.in_features; ++i) {
      acc += t.weights[static_cast<std::size_t>(o) * t.in_features + i] * in[i];
    }
    if (t.activation == ops::Activation::kRelu) acc = std::max(acc, 0.0);
    out[o] = acc;
  }
  return out;
}

inline std::vector<double> mlp_ref(const ops::Mlp& m, std::vector<double> v) {
  for (const auto& layer : m.layers()) v = linear_ref(layer, v);
  return v;
}

inline std::vector<double> column(const DenseTensor& d, int y, int x) {
  std::vector<double> v(d.channels());
  for (int c = 0; c < d.channels(); ++c) v[c] = d.at(c, y, x);
  return v;
}

// 1x1 convolution with an MLP at every cell.
inline DenseTensor dense_pointwise(const DenseTensor& d, const ops::Mlp& m) {
  DenseTensor out(m.out_features(), d.height(), d.width());
  for (int y = 0; y < d.height(); ++y) {
    for (int x = 0; x < d.width(); ++x) {
      const auto v = mlp_ref(m, column(d, y, x));
      for (int c = 0; c < m.out_features(); ++c) out.at(c, y, x) = v[c];
    }
  }
  return out;
}

inline DenseTensor dense_conv(const DenseTensor& d, const ops::ConvKernel& k) {
  const int half = k.kernel_size / 2;
  DenseTensor out(k.out_features, d.height(), d.width());
  for (int o = 0; o < k.out_features; ++o) {
    for (int y = 0; y < d.height(); ++y) {
      for (int x = 0; x < d.width(); ++x) {
        double acc = k.bias[o];
        for (int c = 0; c < k.in_features; ++c) {
          for (int ky = 0; ky < k.kernel_size; ++ky) {
            for (int kx = 0; kx < k.kernel_size; ++kx) {
              acc += k.weight(o, c, ky, kx) *
                     dense_or_zero(d, c, y + (ky - half) * k.dilation,
                                   x + (kx - half) * k.dilation);
            }
          }
        }
        out.at(o, y, x) = acc;
      }
    }
  }
  return out;
}

inline double bilinear_ref(const DenseTensor& d, int c, double y, double x) {
  const int y0 = static_cast<int>(std::floor(y));
  const int x0 = static_cast<int>(std::floor(x));
  const double fy = y - y0, fx = x - x0;
  return (1 - fy) * (1 - fx) * dense_or_zero(d, c, y0, x0) +
         (1 - fy) * fx * dense_or_zero(d, c, y0, x0 + 1) +
         fy * (1 - fx) * dense_or_zero(d, c, y0 + 1, x0) +
         fy * fx * dense_or_zero(d, c, y0 + 1, x0 + 1);
}

// offsets[y * W + x] holds the K*K tap offsets of cell (y, x).
inline DenseTensor dense_deform_conv(
    const DenseTensor& d, const ops::ConvKernel& k,
    const std::vector<std::vector<ops::RealOffset>>& offsets) {
  const int half = k.kernel_size / 2;
  DenseTensor out(k.out_features, d.height(), d.width());
  for (int y = 0; y < d.height(); ++y) {
    for (int x = 0; x < d.width(); ++x) {
      const auto& off = offsets[static_cast<std::size_t>(y) * d.width() + x];
      if (off.empty()) continue;
      for (int o = 0; o < k.out_features; ++o) {
        double acc = k.bias[o];
        for (int c = 0; c < k.in_features; ++c) {
          for (int ky = 0; ky < k.kernel_size; ++ky) {
            for (int kx = 0; kx < k.kernel_size; ++kx) {
              const auto& t = off[ky * k.kernel_size + kx];
              acc += k.weight(o, c, ky, kx) *
                     bilinear_ref(d, c, y + (ky - half) * k.dilation + t.dy,
                                  x + (kx - half) * k.dilation + t.dx);
            }
          }
        }
        out.at(o, y, x) = acc;
      }
    }
  }
  return out;
}

inline DenseTensor dense_add(const DenseTensor& a, const DenseTensor& b) {
  std::vector<Real> v(a.data().begin(), a.data().end());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] += b.data()[i];
  return DenseTensor(a.channels(), a.height(), a.width(), std::move(v));
}

inline DenseTensor dense_sfm(const DenseTensor& d, const ops::ConvKernel& k1,
                             const ops::ConvKernel& k3,
                             const ops::ConvKernel& k5) {
  return dense_add(dense_add(dense_conv(d, k1), dense_conv(d, k3)),
                   dense_conv(d, k5));
}

// ext is a dense [F_e, H, W] map.
inline DenseTensor dense_fuse(const DenseTensor& d, const DenseTensor& ext,
                              const ops::Mlp& m) {
  DenseTensor out = d;
  for (int y = 0; y < d.height(); ++y) {
    for (int x = 0; x < d.width(); ++x) {
      auto v = column(d, y, x);
      const auto e = column(ext, y, x);
      v.insert(v.end(), e.begin(), e.end());
      const auto delta = mlp_ref(m, v);
      for (int c = 0; c < d.channels(); ++c) out.at(c, y, x) += delta[c];
    }
  }
  return out;
}

inline DenseTensor dense_relu(const DenseTensor& d) {
  std::vector<Real> v(d.data().begin(), d.data().end());
  for (auto& x : v) x = std::max(x, 0.0);
  return DenseTensor(d.channels(), d.height(), d.width(), std::move(v));
}

inline DenseTensor nearest_upsample(const DenseTensor& d) {
  DenseTensor out(d.channels(), 2 * d.height(), 2 * d.width());
  for (int c = 0; c < d.channels(); ++c) {
    for (int y = 0; y < out.height(); ++y) {
      for (int x = 0; x < out.width(); ++x) out.at(c, y, x) = d.at(c, y / 2, x / 2);
    }
  }
  return out;
}

}  // namespace spsr::testing

#endif  // SPSR_TESTS_ORACLES_H_
