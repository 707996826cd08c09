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

#include <span>
#include <string>
#include <vector>

#include "lid/common.hpp"

namespace lid::frontend {

/// Mono samples in [-1, 1] at 8 or 16 kHz.
struct Waveform {
  std::vector<Scalar> samples;
  int sample_rate = 16000;

  double duration_seconds() const { return static_cast<double>(samples.size()) / sample_rate; }
};

struct FrontendConfig {
  double frame_ms = 25.0;
  double hop_ms = 10.0;
  int n_mels = 40;
  /// 0 picks the smallest power of two holding one frame.
  int n_fft = 0;
  double fmin = 0.0;
  /// 0 means Nyquist.
  double fmax = 0.0;
  Scalar floor_eps = 1e-10;

  int frame_samples(int sample_rate) const;
  int hop_samples(int sample_rate) const;
  int fft_size(int sample_rate) const;
};

/// T x n_mels, one row per frame.
using FeatureMatrix = RowMatrix;

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Triangular filters [n_mels x (n_fft/2 + 1)], centres uniform on the mel
/// scale, peak 1. Throws FilterbankDegenerate if some filter covers no bin.
RowMatrix mel_matrix(const FrontendConfig& config, int sample_rate);

Vector hamming_window(int length);

/// |DFT|^2 of the zero-padded frame, bins 0..n_fft/2.
Vector power_spectrum(std::span<const Scalar> frame, int n_fft);

/// floor((len - frame) / hop) + 1; throws TooShort below one frame.
Index frame_count(Index num_samples, const FrontendConfig& config, int sample_rate);

/// ln(max(mel energy, floor_eps)) per frame, before utterance normalisation.
FeatureMatrix log_mel_energies(const Waveform& wave, const FrontendConfig& config);

/// Subtracts each column's mean over frames.
void mean_normalize(FeatureMatrix& features);

/// log_mel_energies followed by mean_normalize.
FeatureMatrix log_mel_features(const Waveform& wave, const FrontendConfig& config);

/// 16-bit PCM mono RIFF/WAVE.
Waveform read_wav(const std::string& path);
void write_wav(const std::string& path, const Waveform& wave);

/// Feature cache: "LMFB", u32 T, u32 n_mels, T*n_mels float32, little-endian.
void write_feature_cache(const std::string& path, const FeatureMatrix& features);
FeatureMatrix read_feature_cache(const std::string& path);

}  // namespace lid::frontend
