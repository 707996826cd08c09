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

#include "lid/autodiff/tensor.hpp"

#include <atomic>
#include <sstream>

namespace lid::ad {
namespace {

std::uint64_t next_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

}  // namespace

Index numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Index Tensor::dim(int axis) const {
  const int r = static_cast<int>(rank());
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw Error(ErrorCode::kInvalidAxis, "axis out of range");
  return impl_->shape[static_cast<std::size_t>(axis)];
}

Vector& Tensor::mutable_values() {
  if (!is_leaf()) throw std::logic_error("mutable_values on a recorded tensor");
  return impl_->values;
}

Eigen::Map<const RowMatrix> Tensor::matrix() const {
  if (rank() != 2) throw Error(ErrorCode::kInvalidShape, "matrix() needs rank 2, got " + to_string(shape()));
  return {impl_->values.data(), impl_->shape[0], impl_->shape[1]};
}

Scalar Tensor::item() const {
  if (numel() != 1) throw Error(ErrorCode::kNotScalar, "item() on " + to_string(shape()));
  return impl_->values[0];
}

Tensor Tensor::clone(bool requires_grad) const {
  return tensor_new(shape(), values(), requires_grad);
}

Tensor tensor_new(Shape shape, Vector data, bool requires_grad) {
  for (Index d : shape)
    if (d <= 0) throw Error(ErrorCode::kInvalidShape, "non-positive dimension in " + to_string(shape));
  if (numel(shape) != data.size())
    throw Error(ErrorCode::kInvalidShape, "shape " + to_string(shape) + " holds " +
                                              std::to_string(numel(shape)) + " values, got " +
                                              std::to_string(data.size()));
  Tensor t;
  t.impl_ = std::make_shared<Tensor::Impl>();
  t.impl_->shape = std::move(shape);
  t.impl_->values = std::move(data);
  t.impl_->requires_grad = requires_grad;
  t.impl_->id = next_id();
  return t;
}

Tensor tensor_new(Shape shape, std::initializer_list<Scalar> data, bool requires_grad) {
  Vector v(static_cast<Index>(data.size()));
  Index i = 0;
  for (Scalar x : data) v[i++] = x;
  return tensor_new(std::move(shape), std::move(v), requires_grad);
}

Tensor tensor_new(Shape shape, const std::vector<Scalar>& data, bool requires_grad) {
  Vector v = Eigen::Map<const Vector>(data.data(), static_cast<Index>(data.size()));
  return tensor_new(std::move(shape), std::move(v), requires_grad);
}

Tensor zeros(Shape shape, bool requires_grad) {
  const Index n = numel(shape);
  return tensor_new(std::move(shape), Vector::Zero(n), requires_grad);
}

Tensor full(Shape shape, Scalar value) {
  const Index n = numel(shape);
  return tensor_new(std::move(shape), Vector::Constant(n, value), false);
}

Tensor from_matrix(const Eigen::Ref<const RowMatrix>& m, bool requires_grad) {
  Vector v(m.size());
  Eigen::Map<RowMatrix>(v.data(), m.rows(), m.cols()) = m;
  return tensor_new({m.rows(), m.cols()}, std::move(v), requires_grad);
}

}  // namespace lid::ad
