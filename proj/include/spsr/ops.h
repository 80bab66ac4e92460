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

// Operators over SpsTensor. Every operator computes new values for active
// cells only; passive rows and the index map are carried over untouched
// unless stated otherwise. Neighbors outside the grid read as zeros.

#ifndef SPSR_OPS_H_
#define SPSR_OPS_H_

#include <cstdint>
#include <span>
#include <vector>

#include "spsr/tensor.h"

namespace spsr::ops {

enum class Activation { kNone, kRelu };

// y = act(W x + b), W stored row-major as out_features x in_features.
struct LinearTransform {
  int in_features = 0;
  int out_features = 0;
  std::vector<Real> weights;
  std::vector<Real> bias;
  Activation activation = Activation::kNone;

  static LinearTransform zeros(int in_features, int out_features,
                               Activation act = Activation::kNone);
  static LinearTransform identity(int features);

  void validate() const;
  void apply(std::span<const Real> in, std::span<Real> out) const;
};

// A stack of linear layers applied in order. The usual shape here is the
// two-layer MLP: hidden layer with ReLU, linear output layer.
class Mlp {
 public:
  Mlp() = default;
  Mlp(LinearTransform single);  // NOLINT: a layer is a one-layer MLP
  explicit Mlp(std::vector<LinearTransform> layers);
  static Mlp two_layer(LinearTransform hidden, LinearTransform output);

  int in_features() const { return layers_.front().in_features; }
  int out_features() const { return layers_.back().out_features; }
  const std::vector<LinearTransform>& layers() const { return layers_; }

  void apply(std::span<const Real> in, std::span<Real> out) const;
  RowMap as_row_map() const;
  std::uint64_t macs(std::uint64_t rows) const;

 private:
  std::vector<LinearTransform> layers_;
};

// weights[o][c][ky][kx], flattened row-major.
struct ConvKernel {
  int in_features = 0;
  int out_features = 0;
  int kernel_size = 3;
  int dilation = 1;
  std::vector<Real> weights;
  std::vector<Real> bias;

  static ConvKernel zeros(int features, int kernel_size, int dilation);
  // Identity at the center tap, zero elsewhere.
  static ConvKernel delta(int features, int kernel_size, int dilation);

  void validate() const;
  Real weight(int o, int c, int ky, int kx) const {
    return weights[((static_cast<std::size_t>(o) * in_features + c) *
                        kernel_size +
                    ky) *
                       kernel_size +
                   kx];
  }
};

struct RealOffset {
  Real dy = 0.0;
  Real dx = 0.0;
};

// One list of K*K sampling offsets per active cell, in active-row order.
// Offsets are added to the kernel's regular (dilated) tap positions.
using OffsetField = std::vector<std::vector<RealOffset>>;

SpsTensor pointwise(const SpsTensor& s, const Mlp& t);

// Shared F -> F/2 projection of both active and passive rows.
SpsTensor halve_features(const SpsTensor& s, const LinearTransform& t);

SpsTensor relu(const SpsTensor& s);

SpsTensor conv2d_sparse(const SpsTensor& s, const ConvKernel& k);

SpsTensor deform_conv_sparse(const SpsTensor& s, const ConvKernel& k,
                             const OffsetField& offsets);

// Sum of three 3x3 branches at dilations 1, 3 and 5, each with its own bias.
SpsTensor sfm(const SpsTensor& s, const ConvKernel& k1, const ConvKernel& k3,
              const ConvKernel& k5);

// active_row += t(concat(active_row, ext_row)). `ext` holds N_A rows of
// `ext_features` values.
SpsTensor fuse_external(const SpsTensor& s, std::span<const Real> ext,
                        int ext_features, const Mlp& t);

// Bilinear sample of the field at real-valued (y, x) in cell units. Corners
// outside the grid read as zeros; exactly integer coordinates hit a single
// cell with weight 1.
void sample_bilinear(const SpsTensor& s, Real y, Real x, std::span<Real> out);
void sample_bilinear(const DenseTensor& d, Real y, Real x,
                     std::span<Real> out);

std::uint64_t conv_macs(const SpsTensor& s, const ConvKernel& k);
std::uint64_t deform_conv_macs(const SpsTensor& s, const ConvKernel& k);
std::uint64_t sfm_macs(const SpsTensor& s, const ConvKernel& k1,
                       const ConvKernel& k3, const ConvKernel& k5);

}  // namespace spsr::ops

#endif  // SPSR_OPS_H_
