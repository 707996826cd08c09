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
#include <functional>
#include <map>
#include <span>
#include <unordered_map>
#include <vector>

#include "lid/autodiff/primitives.hpp"
#include "lid/autodiff/tensor.hpp"

namespace lid::ad {

/// Accumulates into in_grads[i] (nullptr when input i needs no gradient).
using VjpFn = std::function<void(const Vector& out_grad, std::span<Vector* const> in_grads)>;

/// Gradients keyed by leaf id, iterated in id order.
class GradientMap {
 public:
  const Vector* find(const Tensor& leaf) const;
  /// Zero vector of the leaf's size when the leaf did not take part.
  Vector get(const Tensor& leaf) const;
  bool contains(const Tensor& leaf) const { return find(leaf) != nullptr; }
  std::size_t size() const { return entries_.size(); }

  void accumulate(const GradientMap& other, Scalar scale = 1);
  void scale(Scalar factor);
  void set(std::uint64_t id, Vector grad) { entries_[id] = std::move(grad); }

  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

 private:
  std::map<std::uint64_t, Vector> entries_;
};

/// Records primitive applications in topological order and replays them
/// backwards. An inference tape records nothing.
class Tape {
 public:
  enum class Mode { kRecord, kInference };

  explicit Tape(Mode mode = Mode::kRecord) : mode_(mode) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return mode_ == Mode::kRecord; }
  std::size_t size() const { return nodes_.size(); }
  PrimitiveKind kind(std::size_t node) const { return nodes_.at(node).kind; }
  /// Slots read by node i; every slot was produced or registered before i.
  const std::vector<int>& node_inputs(std::size_t node) const { return nodes_.at(node).inputs; }
  int node_output(std::size_t node) const { return nodes_.at(node).output; }

  /// Loss must hold a single value. Leaves that never reached the loss are absent
  /// from the map (GradientMap::get yields zeros for them).
  GradientMap backward(const Tensor& loss) const;

  /// Appends a node when recording and some input requires grad; otherwise
  /// returns a constant.
  Tensor record(PrimitiveKind kind, std::span<const Tensor> inputs, Shape shape, Vector values,
                VjpFn vjp);

 private:
  struct Node {
    PrimitiveKind kind;
    std::vector<int> inputs;  // -1 for constants
    int output;
    VjpFn vjp;
  };

  int slot_of(const Tensor& t);

  Mode mode_;
  std::vector<Node> nodes_;
  std::vector<Index> slot_sizes_;
  std::vector<std::uint64_t> slot_leaf_;  // leaf id, 0 for produced tensors
  std::unordered_map<std::uint64_t, int> leaf_slots_;
};

}  // namespace lid::ad
