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

#include "lid/autodiff/tape.hpp"

namespace lid::ad {

const Vector* GradientMap::find(const Tensor& leaf) const {
  auto it = entries_.find(leaf.id());
  return it == entries_.end() ? nullptr : &it->second;
}

Vector GradientMap::get(const Tensor& leaf) const {
  if (const Vector* g = find(leaf)) return *g;
  return Vector::Zero(leaf.numel());
}

void GradientMap::accumulate(const GradientMap& other, Scalar scale) {
  for (const auto& [id, g] : other.entries_) {
    auto it = entries_.find(id);
    if (it == entries_.end())
      entries_.emplace(id, scale * g);
    else
      it->second += scale * g;
  }
}

void GradientMap::scale(Scalar factor) {
  for (auto& [id, g] : entries_) g *= factor;
}

int Tape::slot_of(const Tensor& t) {
  if (!t.requires_grad()) return -1;
  if (!t.is_leaf()) {
    if (t.impl_->tape != this) throw std::logic_error("tensor recorded on a different tape");
    return t.impl_->slot;
  }
  auto [it, inserted] = leaf_slots_.try_emplace(t.id(), static_cast<int>(slot_sizes_.size()));
  if (inserted) {
    slot_sizes_.push_back(t.numel());
    slot_leaf_.push_back(t.id());
  }
  return it->second;
}

Tensor Tape::record(PrimitiveKind kind, std::span<const Tensor> inputs, Shape shape, Vector values,
                    VjpFn vjp) {
  bool needs_grad = false;
  for (const auto& in : inputs) needs_grad = needs_grad || in.requires_grad();
  Tensor out = tensor_new(std::move(shape), std::move(values), false);
  if (!recording() || !needs_grad) return out;

  Node node{kind, {}, static_cast<int>(slot_sizes_.size()), std::move(vjp)};
  node.inputs.reserve(inputs.size());
  for (const auto& in : inputs) node.inputs.push_back(slot_of(in));
  node.output = static_cast<int>(slot_sizes_.size());
  slot_sizes_.push_back(out.numel());
  slot_leaf_.push_back(0);

  out.impl_->requires_grad = true;
  out.impl_->tape = this;
  out.impl_->slot = node.output;
  nodes_.push_back(std::move(node));
  return out;
}

GradientMap Tape::backward(const Tensor& loss) const {
  if (loss.numel() != 1 || loss.rank() > 1)
    throw Error(ErrorCode::kNotScalar, "loss has shape " + to_string(loss.shape()));
  GradientMap result;
  if (!loss.requires_grad()) return result;
  if (loss.is_leaf()) {
    result.set(loss.id(), Vector::Ones(1));
    return result;
  }
  if (loss.impl_->tape != this) throw std::logic_error("loss was recorded on a different tape");

  std::vector<Vector> grads(slot_sizes_.size());
  grads[static_cast<std::size_t>(loss.impl_->slot)] = Vector::Ones(1);
  std::vector<Vector*> in_grads;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    auto& out_grad = grads[static_cast<std::size_t>(it->output)];
    if (out_grad.size() == 0) continue;
    in_grads.assign(it->inputs.size(), nullptr);
    for (std::size_t i = 0; i < it->inputs.size(); ++i) {
      const int s = it->inputs[i];
      if (s < 0) continue;
      auto& g = grads[static_cast<std::size_t>(s)];
      if (g.size() == 0) g = Vector::Zero(slot_sizes_[static_cast<std::size_t>(s)]);
      in_grads[i] = &g;
    }
    it->vjp(out_grad, in_grads);
    if (slot_leaf_[static_cast<std::size_t>(it->output)] == 0) out_grad.resize(0);
  }
  for (std::size_t s = 0; s < slot_leaf_.size(); ++s)
    if (slot_leaf_[s] != 0 && grads[s].size() != 0) result.set(slot_leaf_[s], std::move(grads[s]));
  return result;
}

}  // namespace lid::ad
