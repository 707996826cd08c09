// Copyright 2026 The dialect-lid Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <array>
#include <optional>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "lid/common.hpp"

namespace lid::ad {

enum class PrimitiveKind {
  kAdd,
  kMul,
  kMatMul,
  kConv2d,
  kMaxPool2d,
  kRelu,
  kSigmoid,
  kTanh,
  kLogSoftmax,
  kMean,
  kSum,
  kConcat,
  kSlice,
  kAffineChannel,
  kDropout,
  kReshape,
  kTranspose,
  kChannelStandardize,
  kLinearized,
};

std::string_view primitive_name(PrimitiveKind kind);

namespace prim {

/// a + alpha * b. b has a's shape, or is 1-D matching a's last dim (row broadcast).
struct Add {
  Scalar alpha = 1;
};
/// Elementwise product of equal shapes.
struct Mul {};
/// [m x k] * [k x n].
struct MatMul {};
/// x [N,C,H,W], w [O,C,kh,kw], optional bias [O]; zero padding.
struct Conv2d {
  std::array<Index, 2> stride{1, 1};
  std::array<Index, 2> pad{0, 0};
};
/// Padding cells never win; ties go to the lowest flat input index.
struct MaxPool2d {
  std::array<Index, 2> kernel{2, 2};
  std::array<Index, 2> stride{2, 2};
  std::array<Index, 2> pad{0, 0};
};
struct Relu {};
struct Sigmoid {};
struct Tanh {};
struct LogSoftmax {
  int axis = -1;
};
/// Reduces one axis, or everything to a rank-0 value when axis is empty.
struct Mean {
  std::optional<int> axis;
};
struct Sum {
  std::optional<int> axis;
};
struct Concat {
  int axis = 0;
};
/// One half-open [begin, end) range per dimension.
struct Slice {
  std::vector<std::pair<Index, Index>> ranges;
};
/// x [N,C,...] * scale[c] + shift[c]; scale and shift are inputs 1 and 2.
struct AffineChannel {};
/// Inverted dropout: x * mask / (1 - rate). The mask is supplied by the caller.
struct Dropout {
  Vector mask;
  Scalar rate = 0;
};
struct Reshape {
  std::vector<Index> shape;
};
/// 2-D transpose.
struct Transpose {};
/// Per-channel zero mean / unit variance over all axes but 1 (batch statistics).
struct ChannelStandardize {
  Scalar epsilon = 1e-5;
};
/// Scalar output with a precomputed gradient with respect to its single input.
/// Lets externally computed losses (CTC) join the graph.
struct Linearized {
  Scalar value = 0;
  Vector gradient;
};

}  // namespace prim

using Primitive =
    std::variant<prim::Add, prim::Mul, prim::MatMul, prim::Conv2d, prim::MaxPool2d, prim::Relu,
                 prim::Sigmoid, prim::Tanh, prim::LogSoftmax, prim::Mean, prim::Sum, prim::Concat,
                 prim::Slice, prim::AffineChannel, prim::Dropout, prim::Reshape, prim::Transpose,
                 prim::ChannelStandardize, prim::Linearized>;

PrimitiveKind kind_of(const Primitive& p);

}  // namespace lid::ad
