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

#include <map>
#include <string>
#include <vector>

#include "lid/frontend/frontend.hpp"
#include "lid/nn/layers.hpp"

namespace lid::models {

enum class Scale { kFull, kMicro };

/// What the utterance-level average runs over: per-frame logits (default) or
/// the recurrent hidden states.
enum class Pool { kLogits, kHidden };

struct HeadConfig {
  nn::RnnKind kind = nn::RnnKind::kLstm;
  int layers = 2;
  Index hidden = 256;
  Pool pool = Pool::kLogits;
  Scalar dropout = 0.5;

  bool operator==(const HeadConfig&) const = default;
};

struct ModelConfig {
  Scale scale = Scale::kFull;
  /// Phoneme units, blank excluded.
  int vocab_size = 12;
  int n_dialects = 4;
  nn::ResNetConfig trunk = nn::ResNetConfig::full();
  Index am_hidden = 256;
  int am_layers = 2;
  HeadConfig head;
  HeadConfig baseline;

  static ModelConfig full(int vocab_size, int n_dialects);
  /// Channels [8,16,32,64], recurrent width 32.
  static ModelConfig micro(int vocab_size, int n_dialects);

  /// Canonical "key=value" lines, sorted by key.
  std::string to_text() const;
  /// Inverse of to_text. Unknown keys or bad values throw ConfigFault.
  static ModelConfig from_text(const std::string& text);
  /// Applies "key=value" overrides using the same keys as to_text.
  void set(const std::string& key, const std::string& value);

  bool operator==(const ModelConfig&) const = default;
};

// ---------------------------------------------------------------------------

/// Phoneme inventory. Unit i (0-based line) has class id i + 1; 0 is blank.
struct Vocab {
  std::vector<std::string> units;

  int size() const { return static_cast<int>(units.size()); }
  std::uint64_t hash() const;
};

/// One unit per line; blank lines and lines starting with '#' are skipped.
Vocab read_vocab(const std::string& path);
/// Units "p1".."pV".
Vocab synthetic_vocab(int size);

// ---------------------------------------------------------------------------

/// Trunk + BLSTM + per-frame projection to V+1 classes, names under "am.".
struct AmModel {
  ModelConfig config;
  nn::ParamStore params;
};

AmModel make_am(const ModelConfig& config, std::uint64_t seed);

struct AmOutput {
  /// [T' x (V+1)] per-frame log-probabilities.
  ad::Tensor lattice;
  /// [T' x c4] trunk output, tapped before the recurrent layers.
  ad::Tensor intermediate;
};

AmOutput am_forward(const ad::Tensor& features, const AmModel& am, nn::ForwardContext& ctx);
/// Trunk only; the features the LID head consumes.
ad::Tensor am_intermediate(const ad::Tensor& features, const AmModel& am, nn::ForwardContext& ctx);

/// Recurrent classifier over frame sequences. The LID head reads trunk
/// features ("lid."), the baseline reads log-mel features ("base.").
struct SequenceClassifier {
  HeadConfig config;
  Index input_width = 0;
  int n_classes = 0;
  std::string prefix;
  nn::ParamStore params;

  nn::RnnConfig rnn() const { return {config.kind, input_width, config.hidden, config.layers}; }
};

using LidHead = SequenceClassifier;
using BaselineModel = SequenceClassifier;

LidHead make_lid_head(const ModelConfig& config, std::uint64_t seed);
BaselineModel make_baseline(const ModelConfig& config, int n_mels, std::uint64_t seed);

/// inputs [T' x width] -> [n_classes] log-probabilities. Throws InvalidShape on width mismatch.
ad::Tensor classify(const ad::Tensor& inputs, const SequenceClassifier& model, nn::ForwardContext& ctx);
inline ad::Tensor lid_forward(const ad::Tensor& intermediate, const LidHead& head, nn::ForwardContext& ctx) {
  return classify(intermediate, head, ctx);
}

/// Fresh trunk + per-frame projection to V+1, trained on aligned frames ("cnn.").
struct FrameCnn {
  ModelConfig config;
  nn::ParamStore params;
};

FrameCnn make_frame_cnn(const ModelConfig& config, std::uint64_t seed);

struct FrameCnnOutput {
  ad::Tensor log_probs;     // [T' x (V+1)]
  ad::Tensor intermediate;  // [T' x c4]
};

FrameCnnOutput frame_cnn_forward(const ad::Tensor& features, const FrameCnn& cnn, nn::ForwardContext& ctx);

/// Scalar trainable parameters under prefix ("am.trunk" for the trunk figure).
Index param_count(const nn::ParamStore& params, const std::string& prefix = "");

}  // namespace lid::models
