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
#include <string>
#include <vector>

#include "lid/pipeline/pipeline.hpp"

namespace lid::eval {

inline constexpr double kShortThreshold = 3.0;

struct Metrics {
  std::string system;
  int n_classes = 0;
  /// confusion[truth][prediction].
  std::vector<std::vector<Index>> confusion;
  Index n_all = 0, n_short = 0, n_long = 0;
  Index correct_all = 0, correct_short = 0, correct_long = 0;
  /// Percentages; a sub-task with no utterances reports 0.
  double acc_all = 0, acc_short = 0, acc_long = 0;

  /// Percentage of class c's utterances predicted as c (0 when absent).
  double class_accuracy(int c) const;
  Index class_count(int c) const;
};

/// Utterance-level log-probabilities over dialects.
using Predictor = std::function<Vector(const pipeline::Utterance&)>;

/// Runs predict on every utterance (in parallel) and scores argmax
/// predictions. Throws EmptyTestSet on an empty set.
Metrics evaluate(const Predictor& predict, const pipeline::Dataset& test, int n_classes,
                 const std::string& system = "");

/// Metrics from precomputed predictions, one per test utterance.
Metrics score(const std::vector<int>& predictions, const pipeline::Dataset& test, int n_classes,
              const std::string& system = "");

/// A trained system as written by the train command.
struct System {
  std::string kind;
  std::vector<pipeline::Checkpoint> checkpoints;

  int n_classes() const;
  std::uint64_t vocab_hash() const;
  /// Eval-mode inference path: features -> upstream network -> classifier.
  Predictor predictor() const;
};

/// Reads <dir>/system.txt and the checkpoints it names. Throws
/// IncompatibleCheckpoint when stages or vocabularies disagree.
System load_system(const std::string& dir);

/// Writes confusion.csv (counts, then row percentages to 1 decimal) and
/// confusion.pgm (darker = larger row share, per-class accuracy in the header
/// comments). Throws IoFault.
void render_confusion(const Metrics& metrics, const std::string& out_dir);

/// metrics.json, confusion.csv and confusion.pgm under out_dir.
void write_report(const Metrics& metrics, const std::string& out_dir);
Metrics read_report(const std::string& dir);

struct Comparison {
  std::string text;
  std::string csv;
};

/// One row per system with All, <=3s, >3s columns; the best value of each
/// column is flagged with '*' (every tied row is flagged).
Comparison compare_systems(const std::vector<Metrics>& metrics);

}  // namespace lid::eval
