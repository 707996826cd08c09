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
#include <random>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "lid/autodiff/ops.hpp"

namespace lid::nn {

using Rng = std::mt19937_64;

/// Named tensors in insertion order. Trainable entries require grad; buffers
/// (batch-norm running statistics) do not.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    ad::Tensor tensor;
    bool trainable = true;
  };

  /// Throws std::invalid_argument on a duplicate name.
  const ad::Tensor& add(const std::string& name, ad::Tensor tensor, bool trainable = true);
  const ad::Tensor& at(const std::string& name) const;
  ad::Tensor& at(const std::string& name);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  /// Trainable entries whose name starts with prefix.
  std::vector<ad::Tensor> trainable(const std::string& prefix = "") const;
  /// Scalar count of trainable entries whose name starts with prefix.
  Index parameter_count(const std::string& prefix = "") const;

  /// Fresh storage with identical names, shapes and values.
  ParamStore clone() const;
  /// Appends every entry of other (names must not collide).
  void merge(const ParamStore& other);

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Per-forward batch-norm moments, recorded in train mode and folded into the
/// running statistics by the trainer after each step.
using BatchNormMoments = std::vector<std::pair<std::string, std::pair<Vector, Vector>>>;

struct ForwardContext {
  ad::Tape& tape;
  bool train = false;
  /// Source of dropout masks; required when train is set and a dropout rate is positive.
  Rng* rng = nullptr;
  BatchNormMoments* moments = nullptr;
};

inline constexpr Scalar kBatchNormEpsilon = 1e-5;
inline constexpr Scalar kBatchNormMomentum = 0.1;

/// running <- (1 - momentum) * running + momentum * mean(batch moments), per layer.
void update_batch_norm(ParamStore& store, std::span<const BatchNormMoments> batch,
                       Scalar momentum = kBatchNormMomentum);

// ---------------------------------------------------------------------------
// Initialisation

/// U(-sqrt(6/fan_in), sqrt(6/fan_in)).
ad::Tensor he_uniform(ad::Shape shape, Index fan_in, Rng& rng);

void add_linear(ParamStore& store, const std::string& prefix, Index in, Index out, Rng& rng);
ad::Tensor linear(ad::Tape& tape, const ad::Tensor& x, const ParamStore& store, const std::string& prefix);

// ---------------------------------------------------------------------------
// ResNet14 trunk

struct ResNetConfig {
  std::array<int, 4> channels{64, 128, 256, 512};
  std::array<int, 4> blocks{2, 2, 1, 1};
  bool batch_norm = true;

  static ResNetConfig full() { return {}; }
  static ResNetConfig micro() { return {{8, 16, 32, 64}, {2, 2, 1, 1}, true}; }
  int output_width() const { return channels[3]; }
  bool operator==(const ResNetConfig&) const = default;
};

/// Output length of the trunk for T input frames: ceil(T / 4).
Index trunk_frames(Index input_frames);

void add_resnet14(ParamStore& store, const std::string& prefix, const ResNetConfig& config, Rng& rng);

/// (layer name, [time, channels, freq]) after conv1, maxpool and each residual stage.
using ShapeTrace = std::vector<std::pair<std::string, std::array<Index, 3>>>;

/// features [T x 40] or [1 x 1 x T x 40] -> frame features [ceil(T/4) x c4]. Throws InputTooShort for T < 8.
ad::Tensor resnet14_forward(const ad::Tensor& features, const ParamStore& store, const std::string& prefix,
                            const ResNetConfig& config, ForwardContext& ctx, ShapeTrace* trace = nullptr);

// ---------------------------------------------------------------------------
// Recurrent stacks

enum class RnnKind { kLstm, kGru };

struct RnnConfig {
  RnnKind kind = RnnKind::kLstm;
  Index input_size = 0;
  Index hidden = 256;
  int layers = 2;

  Index output_width() const { return 2 * hidden; }
};

void add_birnn(ParamStore& store, const std::string& prefix, const RnnConfig& config, Rng& rng);

/// inputs [T x d] -> [T x 2*hidden]: per layer, a forward and a backward pass
/// concatenated per frame. Dropout (inverted, mask from ctx.rng) sits between
/// stacked layers in train mode only. Throws InvalidShape on width mismatch.
ad::Tensor birnn_forward(const ad::Tensor& inputs, const ParamStore& store, const std::string& prefix,
                         const RnnConfig& config, ForwardContext& ctx, Scalar dropout_rate);

inline ad::Tensor blstm_forward(const ad::Tensor& inputs, const ParamStore& store, const std::string& prefix,
                                Index hidden, int layers, ForwardContext& ctx, Scalar dropout_rate) {
  return birnn_forward(inputs, store, prefix, {RnnKind::kLstm, inputs.dim(1), hidden, layers}, ctx, dropout_rate);
}

/// Bernoulli(1 - rate) keep-mask, or all ones outside train mode.
ad::Tensor apply_dropout(const ad::Tensor& x, Scalar rate, ForwardContext& ctx);

/// [T' x N] -> [N], coordinate-wise mean over frames.
ad::Tensor time_avg_pool(ad::Tape& tape, const ad::Tensor& frames);

}  // namespace lid::nn
