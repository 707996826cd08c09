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

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "lid/common.hpp"

namespace lid::ad {

using Shape = std::vector<Index>;

Index numel(const Shape& shape);
std::string to_string(const Shape& shape);

class Tape;

/// Dense row-major array that can take part in a recorded compute graph.
///
/// A Tensor is a cheap handle; copies share storage. Leaves are created with
/// tensor_new() and may be read by any number of tapes. Tensors produced by a
/// recording Tape belong to that tape and carry its slot.
class Tensor {
 public:
  Tensor() = default;

  bool defined() const noexcept { return static_cast<bool>(impl_); }
  const Shape& shape() const { return impl_->shape; }
  Index rank() const { return static_cast<Index>(impl_->shape.size()); }
  Index dim(int axis) const;
  Index numel() const { return impl_->values.size(); }

  const Vector& values() const { return impl_->values; }
  /// Writable storage of a leaf. Only optimizers and loaders touch this,
  /// never while a tape that reads the leaf is alive.
  Vector& mutable_values();

  bool requires_grad() const { return impl_->requires_grad; }
  bool is_leaf() const { return impl_->tape == nullptr; }
  std::uint64_t id() const { return impl_->id; }

  /// 2-D view; requires rank 2.
  Eigen::Map<const RowMatrix> matrix() const;
  Scalar item() const;

  /// Leaf copy with fresh storage.
  Tensor clone(bool requires_grad) const;

 private:
  friend class Tape;
  friend Tensor tensor_new(Shape shape, Vector data, bool requires_grad);

  struct Impl {
    Shape shape;
    Vector values;
    bool requires_grad = false;
    std::uint64_t id = 0;
    const Tape* tape = nullptr;
    int slot = -1;
  };
  std::shared_ptr<Impl> impl_;
};

/// Leaf tensor. Throws InvalidShape when product(shape) != data.size().
Tensor tensor_new(Shape shape, Vector data, bool requires_grad = false);
Tensor tensor_new(Shape shape, std::initializer_list<Scalar> data, bool requires_grad = false);
Tensor tensor_new(Shape shape, const std::vector<Scalar>& data, bool requires_grad = false);
Tensor zeros(Shape shape, bool requires_grad = false);
Tensor full(Shape shape, Scalar value);
Tensor from_matrix(const Eigen::Ref<const RowMatrix>& m, bool requires_grad = false);

}  // namespace lid::ad
