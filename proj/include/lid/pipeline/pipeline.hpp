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
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "lid/corpus/corpus.hpp"
#include "lid/ctc/ctc.hpp"
#include "lid/models/models.hpp"

namespace lid::pipeline {

// ---------------------------------------------------------------------------
// Data

struct Utterance {
  std::string utt_id;
  /// [T x 40] normalised log-mel features (constant tensor).
  ad::Tensor features;
  int dialect = 0;
  LabelSeq labels;
  double duration = 0;
};

using Dataset = std::vector<Utterance>;

/// Featurises every record (in parallel). With a cache directory, features
/// are read from <cache>/<utt_id>.lmfb when present and written otherwise.
Dataset load_dataset(const corpus::Manifest& manifest, const frontend::FrontendConfig& frontend = {},
                     const std::string& cache_dir = "");

// ---------------------------------------------------------------------------
// Optimiser

using NamedGradients = std::map<std::string, Vector>;

/// Gradients of the store's trainable entries, keyed by name. Entries absent
/// from the map took no part in the loss.
NamedGradients named_gradients(const nn::ParamStore& params, const ad::GradientMap& grads);

struct AdamState {
  std::map<std::string, Vector> m;
  std::map<std::string, Vector> v;
  long step = 0;
};

inline constexpr Scalar kAdamBeta1 = 0.9;
inline constexpr Scalar kAdamBeta2 = 0.999;
inline constexpr Scalar kAdamEpsilon = 1e-8;

/// Adam with bias correction and decoupled weight decay
/// (param <- param * (1 - lr * wd) before the moment update). Trainable
/// entries missing from grads are treated as zero-gradient. A non-finite
/// gradient throws NumericalFault before any parameter changes.
void adam_step(nn::ParamStore& params, const NamedGradients& grads, AdamState& state, Scalar lr,
               Scalar weight_decay);

// ---------------------------------------------------------------------------
// Checkpoints

struct EpochRecord {
  int epoch = 0;
  Scalar train_loss = 0;
  Scalar val_loss = 0;
  /// Stage-specific: phone error rate (AM), accuracy (LID, frame CNN).
  Scalar val_metric = 0;
};

struct Checkpoint {
  std::string stage;
  models::ModelConfig config;
  int epoch = 0;
  std::vector<EpochRecord> history;
  std::uint64_t vocab_hash = 0;
  nn::ParamStore params;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// "LIDC", u32 version, u32 blob length, canonical text blob, u32 tensor count,
/// then per tensor: u32 name length, name, u32 rank, u32 dims, float64 values.
std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

/// Throws IncompatibleCheckpoint when the vocab hash or stage differs.
void require_compatible(const Checkpoint& ckpt, std::uint64_t vocab_hash, const std::string& stage);

models::AmModel am_from_checkpoint(const Checkpoint& ckpt);
models::FrameCnn cnn_from_checkpoint(const Checkpoint& ckpt);
models::SequenceClassifier classifier_from_checkpoint(const Checkpoint& ckpt);

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  std::string stage;
  Scalar learning_rate = 1e-3;
  Scalar weight_decay = 1e-4;
  int batch_size = 8;
  int max_epochs = 30;
  /// Epochs without a relative validation-loss improvement above
  /// min_improvement before stopping.
  int patience = 3;
  Scalar min_improvement = 1e-3;
  /// Distance from the best validation metric that counts as converged.
  Scalar converge_tolerance = 0.05;
  /// Fraction of the training set held out for validation.
  Scalar validation_fraction = 0.1;
  std::uint64_t seed = 1;

  static TrainConfig am_stage(const std::string& stage = "am");
  static TrainConfig lid_stage(const std::string& stage = "lid");
  /// Applies "key=value" overrides with the field names above.
  void set(const std::string& key, const std::string& value);
};

/// One JSON object per line; a default-constructed log discards records.
class TrainLog {
 public:
  TrainLog() = default;
  explicit TrainLog(const std::string& path);
  void epoch(const std::string& stage, const EpochRecord& record, const std::string& metric_name, int skipped);
  void note(const std::string& stage, const std::string& message);

 private:
  std::shared_ptr<std::ostream> out_;
};

struct StageResult {
  Checkpoint checkpoint;
  /// First epoch whose validation metric is within converge_tolerance of the best.
  int epochs_to_converge = 0;
  /// Training utterances dropped as infeasible.
  int skipped = 0;
};

/// Stage 1: the whole AM (trunk, BLSTM, projection) minimises mean CTC loss.
StageResult train_am_ctc(const Dataset& train, const models::ModelConfig& config, std::uint64_t vocab_hash,
                         const TrainConfig& tc, TrainLog& log);

/// Trunk outputs of a frozen network, computed once in eval mode.
std::vector<ad::Tensor> am_features(const Dataset& data, const models::AmModel& am);
std::vector<ad::Tensor> cnn_features(const Dataset& data, const models::FrameCnn& cnn);

/// First epoch whose validation metric lies within tolerance of the stage's
/// best (lowest phone error rate for "am", highest accuracy otherwise).
int epochs_to_converge(const std::vector<EpochRecord>& history, const std::string& stage, Scalar tolerance);

/// Sequence classifier on fixed per-utterance inputs; cross-entropy against dialect labels.
StageResult train_classifier(const std::vector<ad::Tensor>& inputs, const Dataset& data,
                             models::SequenceClassifier model, const models::ModelConfig& config,
                             std::uint64_t vocab_hash, const TrainConfig& tc, TrainLog& log);

/// Two-stage stage 2: the AM checkpoint stays untouched; only the head learns.
StageResult train_lid_on_intermediate(const Dataset& train, const Checkpoint& am_checkpoint, std::uint64_t vocab_hash,
                                      const TrainConfig& tc, TrainLog& log);

struct AlignmentTable {
  std::vector<ctc::AlignmentRecord> records;
  int skipped = 0;
};

/// Forced alignment of every feasible utterance at trunk resolution.
AlignmentTable align_corpus(const Dataset& data, const models::AmModel& am);

/// Three-stage stage 2: fresh trunk + per-frame projection, frame-wise
/// cross-entropy against aligned classes. Throws DataFault on length mismatch
/// or a missing alignment.
StageResult train_frame_ce_cnn(const Dataset& train, const AlignmentTable& alignments,
                               const models::ModelConfig& config, std::uint64_t vocab_hash, const TrainConfig& tc,
                               TrainLog& log);

/// Mean over frames of -log p(class), the frame-wise cross-entropy.
ad::Tensor frame_cross_entropy(ad::Tape& tape, const ad::Tensor& log_probs, std::span<const int> classes);
/// -log p(label) for one utterance-level distribution.
ad::Tensor class_nll(ad::Tape& tape, const ad::Tensor& log_probs, int label);

/// Levenshtein distance between label sequences.
Index edit_distance(std::span<const int> a, std::span<const int> b);

// ---------------------------------------------------------------------------
// Systems

struct ConvergenceEntry {
  std::string stage;
  int epochs = 0;
};
using ConvergenceLog = std::vector<ConvergenceEntry>;

struct RunConfig {
  models::ModelConfig model = models::ModelConfig::micro(12, 4);
  TrainConfig am = TrainConfig::am_stage();
  TrainConfig lid = TrainConfig::lid_stage();
  /// Three-stage stage 2 (frame-wise CNN).
  TrainConfig cnn = TrainConfig::am_stage("cnn");
  TrainConfig baseline = TrainConfig::am_stage("baseline");
  std::uint64_t vocab_hash = 0;
  /// Where checkpoints, the training log and convergence.json go; empty keeps everything in memory.
  std::string out_dir;
};

struct SystemRun {
  std::string system;
  std::vector<Checkpoint> checkpoints;
  ConvergenceLog convergence;
  /// Serialized upstream network before and after the final LID stage.
  std::string frozen_before;
  std::string frozen_after;
};

SystemRun run_baseline(const Dataset& train, const RunConfig& rc);
SystemRun run_two_stage(const Dataset& train, const RunConfig& rc);
/// With am_checkpoint, stage 1 is taken from it instead of being retrained.
SystemRun run_three_stage(const Dataset& train, const RunConfig& rc, const Checkpoint* am_checkpoint = nullptr);

/// Writes <dir>/system.txt naming the system kind and its checkpoint files.
void write_system_manifest(const std::string& dir, const SystemRun& run);

/// Reads a RunConfig from a flat config file: [model], [am], [lid], [cnn] and
/// [baseline] sections. A top-level seed applies to every stage.
RunConfig load_run_config(const std::string& path, RunConfig base = {});

}  // namespace lid::pipeline
