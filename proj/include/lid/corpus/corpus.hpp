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
#include <utility>
#include <vector>

#include "lid/common.hpp"
#include "lid/frontend/frontend.hpp"

namespace lid::corpus {

/// Synthetic dialect corpus. Phoneme p is a three-harmonic tone near
/// base_f0 * step^(p-1). A dialect changes how phonemes are realised and
/// sequenced:
///   - a small per-phoneme pitch offset,
///   - a per-phoneme pitch contour (rise, fall, rise-fall, fall-rise),
///   - a preferred successor for each phoneme.
/// Offsets, contours and successors are rotations of shared sets, so each
/// dialect uses every phoneme, contour and offset equally often.
struct SynthSpec {
  int n_dialects = 4;
  int vocab_size = 12;
  int train_per_dialect = 50;
  int test_per_dialect = 20;
  double min_duration = 1.0;
  double max_duration = 6.0;
  int sample_rate = 16000;
  std::uint64_t seed = 1;
  double snr_db = 20.0;
  double min_segment_ms = 80.0;
  double max_segment_ms = 200.0;
  double base_f0 = 120.0;
  double f0_step = 1.3;
  /// Peak relative excursion of a contour.
  double contour_depth = 0.02;
  /// Largest per-phoneme dialect pitch offset (relative).
  double pitch_offset = 0.005;
  /// Per-utterance speaker pitch jitter (relative, uniform).
  double speaker_jitter = 0.12;
  /// Probability that the next phoneme is the dialect's preferred successor.
  double successor_bias = 0.6;

  /// Applies "key=value" settings (same names as the fields). Unknown keys
  /// and out-of-range values throw ConfigFault.
  void set(const std::string& key, const std::string& value);
  void validate() const;
  std::string to_text() const;
};

SynthSpec parse_synth_spec(const std::map<std::string, std::string>& items);
SynthSpec load_synth_spec(const std::string& path);

struct UtteranceRecord {
  std::string utt_id;
  /// Relative to the manifest's directory unless absolute.
  std::string audio_path;
  double duration = 0;
  int dialect = 0;
  LabelSeq labels;

  bool operator==(const UtteranceRecord&) const = default;
};

struct Manifest {
  std::string split;
  std::vector<UtteranceRecord> records;
  /// Directory audio paths resolve against (not serialised).
  std::string base_dir;
  /// Audio files that did not exist at load time.
  std::vector<std::string> missing_audio;

  std::string audio_file(const UtteranceRecord& record) const;
  int n_dialects() const;
};

/// TSV: "# split=<tag>" then utt_id, path, duration, dialect, space-separated phoneme ids.
void write_manifest(const std::string& path, const Manifest& manifest);
/// Throws ParseFault (with line number) on malformed lines, DuplicateId on repeated ids.
Manifest load_manifest(const std::string& path);

/// Durations <= threshold go to the first set.
std::pair<Manifest, Manifest> split_by_duration(const Manifest& manifest, double threshold = 3.0);

struct SynthUtterance {
  frontend::Waveform wave;
  LabelSeq labels;
  /// Segment boundaries in samples, one more than labels.
  std::vector<Index> boundaries;
};

/// One utterance from its own RNG stream (seed, split, index).
SynthUtterance synth_utterance(const SynthSpec& spec, int dialect, double duration, std::uint64_t stream);

/// Writes out_dir/wav/*.wav, out_dir/train.tsv, out_dir/test.tsv and
/// out_dir/spec.toml. Throws IoFault when out_dir cannot be written.
std::pair<Manifest, Manifest> synth_corpus(const SynthSpec& spec, const std::string& out_dir);

}  // namespace lid::corpus
