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

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "lid/autodiff/ops.hpp"
#include "lid/common.hpp"

namespace lid::ctc {

/// Class 0 of every lattice is the blank; phoneme ids run 1..V.
inline constexpr int kBlank = 0;

/// Minimum frame count for a label: one frame per label plus one blank
/// between each pair of equal neighbours.
Index min_frames(std::span<const int> labels);
bool is_feasible(Index frames, std::span<const int> labels);

/// Merge repeats, then drop blanks.
LabelSeq collapse(std::span<const int> path);

struct LossAndGrad {
  Scalar loss = 0;
  /// d loss / d log-probability, same shape as the lattice.
  RowMatrix grad;
};

/// -ln P(z | lattice) by the log-space alpha/beta recursion over the
/// blank-interleaved label, with its exact gradient. The lattice holds
/// per-frame log-probabilities [T' x (V+1)].
/// Throws InfeasibleLabel when T' < min_frames(z).
LossAndGrad ctc_loss_grad(const Eigen::Ref<const RowMatrix>& lattice, std::span<const int> labels);

/// Exhaustive path-sum oracle. Throws OracleTooLarge when (V+1)^T' > 1e7.
/// Returns +infinity when no path collapses to z.
Scalar ctc_brute_force(const Eigen::Ref<const RowMatrix>& lattice, std::span<const int> labels);

/// Best-path decoding: per-frame argmax (lowest class on ties), then collapse.
LabelSeq ctc_greedy_decode(const Eigen::Ref<const RowMatrix>& lattice);

struct Alignment {
  /// Class id per lattice frame; collapses to the reference label.
  std::vector<int> classes;
  /// Extended-trellis state per frame (even = blank, 2i+1 = label i).
  std::vector<int> states;
  Scalar log_prob = 0;
};

/// Maximum-probability path in Phi(z) (Viterbi with backpointers). On ties the
/// path stays in its current state. Throws InfeasibleLabel.
Alignment ctc_forced_align(const Eigen::Ref<const RowMatrix>& lattice, std::span<const int> labels);

/// CTC loss as a tape node over log-probabilities [T' x (V+1)].
ad::Tensor ctc_loss(ad::Tape& tape, const ad::Tensor& log_probs, std::span<const int> labels);

struct AlignmentRecord {
  std::string utt_id;
  std::vector<int> classes;
};

/// `utt_id<TAB>space-separated class ids`, one line per utterance.
void write_alignments(std::ostream& os, std::span<const AlignmentRecord> records);
std::vector<AlignmentRecord> read_alignments(std::istream& is);

}  // namespace lid::ctc
