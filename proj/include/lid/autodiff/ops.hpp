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

#include <functional>
#include <span>

#include "lid/autodiff/primitives.hpp"
#include "lid/autodiff/tape.hpp"
#include "lid/autodiff/tensor.hpp"

namespace lid::ad {

/// Evaluates a primitive and records it on the tape when any input requires grad.
/// Throws InvalidShape for illegal shape combinations and InvalidAxis for
/// out-of-range axes. Inputs are never modified.
Tensor apply(Tape& tape, const Primitive& primitive, std::span<const Tensor> inputs);

Tensor add(Tape& tape, const Tensor& a, const Tensor& b, Scalar alpha = 1);
inline Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) { return add(tape, a, b, -1); }
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor conv2d(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias,
              std::array<Index, 2> stride, std::array<Index, 2> pad);
Tensor maxpool2d(Tape& tape, const Tensor& x, std::array<Index, 2> kernel,
                 std::array<Index, 2> stride, std::array<Index, 2> pad);
Tensor relu(Tape& tape, const Tensor& x);
Tensor sigmoid(Tape& tape, const Tensor& x);
Tensor tanh(Tape& tape, const Tensor& x);
Tensor log_softmax(Tape& tape, const Tensor& x, int axis = -1);
Tensor mean(Tape& tape, const Tensor& x, std::optional<int> axis = std::nullopt);
Tensor sum(Tape& tape, const Tensor& x, std::optional<int> axis = std::nullopt);
Tensor concat(Tape& tape, std::span<const Tensor> parts, int axis);
Tensor slice(Tape& tape, const Tensor& x, std::vector<std::pair<Index, Index>> ranges);
/// Rows [begin, end) of a 2-D tensor.
Tensor slice_rows(Tape& tape, const Tensor& x, Index begin, Index end);
/// Columns [begin, end) of a 2-D tensor.
Tensor slice_cols(Tape& tape, const Tensor& x, Index begin, Index end);
Tensor affine_channel(Tape& tape, const Tensor& x, const Tensor& scale, const Tensor& shift);
Tensor dropout(Tape& tape, const Tensor& x, Vector mask, Scalar rate);
Tensor reshape(Tape& tape, const Tensor& x, Shape shape);
Tensor transpose(Tape& tape, const Tensor& x);
Tensor channel_standardize(Tape& tape, const Tensor& x, Scalar epsilon = 1e-5);
Tensor linearized(Tape& tape, const Tensor& x, Scalar value, Vector gradient);

/// Per-channel mean and biased variance over all axes but 1 (no recording).
std::pair<Vector, Vector> channel_moments(const Tensor& x);

/// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
/// f must be deterministic and return a single value.
Scalar finite_diff_check(const std::function<Tensor(Tape&, const Tensor&)>& f, const Tensor& x,
                         Scalar eps);

struct GradCheckOptions {
  Scalar eps = 1e-6;
  /// Coordinates sampled per leaf; <= 0 checks every coordinate.
  Index coords_per_leaf = 0;
  std::uint64_t seed = 0;
};

/// Multi-leaf variant: perturbs the leaves in place (restoring them) and
/// compares against one recorded backward pass.
Scalar finite_diff_check(const std::function<Tensor(Tape&)>& f, std::span<const Tensor> leaves,
                         const GradCheckOptions& options);

}  // namespace lid::ad
