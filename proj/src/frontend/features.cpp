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

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

#include <unsupported/Eigen/FFT>

#include "lid/frontend/frontend.hpp"

namespace lid::frontend {
namespace {

void check_sample_rate(int sample_rate) {
  if (sample_rate != 8000 && sample_rate != 16000)
    throw Error(ErrorCode::kDataFault, "unsupported sample rate " + std::to_string(sample_rate));
}

class Spectrum {
 public:
  explicit Spectrum(int n_fft) : n_fft_(n_fft), padded_(static_cast<std::size_t>(n_fft)) {
    fft_.SetFlag(Eigen::FFT<Scalar>::HalfSpectrum);
  }

  Vector power(std::span<const Scalar> frame) {
    std::fill(padded_.begin(), padded_.end(), Scalar(0));
    std::copy(frame.begin(), frame.end(), padded_.begin());
    fft_.fwd(bins_, padded_);
    Vector p(n_fft_ / 2 + 1);
    for (Index k = 0; k < p.size(); ++k) p[k] = std::norm(bins_[static_cast<std::size_t>(k)]);
    return p;
  }

 private:
  int n_fft_;
  Eigen::FFT<Scalar> fft_;
  std::vector<Scalar> padded_;
  std::vector<std::complex<Scalar>> bins_;
};

}  // namespace

int FrontendConfig::frame_samples(int sample_rate) const {
  return static_cast<int>(std::lround(sample_rate * frame_ms / 1000.0));
}

int FrontendConfig::hop_samples(int sample_rate) const {
  return static_cast<int>(std::lround(sample_rate * hop_ms / 1000.0));
}

int FrontendConfig::fft_size(int sample_rate) const {
  if (n_fft > 0) {
    if ((n_fft & (n_fft - 1)) != 0) throw Error(ErrorCode::kConfigFault, "n_fft must be a power of two");
    return n_fft;
  }
  const int frame = frame_samples(sample_rate);
  int n = 1;
  while (n < frame) n <<= 1;
  return n;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

RowMatrix mel_matrix(const FrontendConfig& config, int sample_rate) {
  const int n_fft = config.fft_size(sample_rate);
  const int bins = n_fft / 2 + 1;
  const double fmax = config.fmax > 0 ? config.fmax : sample_rate / 2.0;
  if (config.n_mels < 1 || config.fmin < 0 || fmax <= config.fmin || fmax > sample_rate / 2.0)
    throw Error(ErrorCode::kConfigFault, "invalid mel range");
  const double lo = hz_to_mel(config.fmin), hi = hz_to_mel(fmax);
  std::vector<double> edges(static_cast<std::size_t>(config.n_mels) + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(config.n_mels + 1));

  RowMatrix m = RowMatrix::Zero(config.n_mels, bins);
  for (int r = 0; r < config.n_mels; ++r) {
    const double left = edges[static_cast<std::size_t>(r)];
    const double centre = edges[static_cast<std::size_t>(r) + 1];
    const double right = edges[static_cast<std::size_t>(r) + 2];
    for (int k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / n_fft;
      const double w = std::min((f - left) / (centre - left), (right - f) / (right - centre));
      if (w > 0) m(r, k) = static_cast<Scalar>(w);
    }
    if (m.row(r).maxCoeff() <= 0)
      throw Error(ErrorCode::kFilterbankDegenerate,
                  "filter " + std::to_string(r) + " of " + std::to_string(config.n_mels) + " covers no FFT bin at n_fft " +
                      std::to_string(n_fft));
  }
  return m;
}

Vector hamming_window(int length) {
  Vector w(length);
  if (length == 1) {
    w[0] = 1;
    return w;
  }
  for (int n = 0; n < length; ++n)
    w[n] = static_cast<Scalar>(0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * n / (length - 1)));
  return w;
}

Vector power_spectrum(std::span<const Scalar> frame, int n_fft) {
  if (n_fft <= 0 || static_cast<int>(frame.size()) > n_fft)
    throw Error(ErrorCode::kInvalidShape, "frame longer than n_fft");
  return Spectrum(n_fft).power(frame);
}

Index frame_count(Index num_samples, const FrontendConfig& config, int sample_rate) {
  const Index frame = config.frame_samples(sample_rate);
  const Index hop = config.hop_samples(sample_rate);
  if (frame <= 0 || hop <= 0) throw Error(ErrorCode::kConfigFault, "frame and hop must be positive");
  if (num_samples < frame)
    throw Error(ErrorCode::kTooShort, std::to_string(num_samples) + " samples, one frame needs " + std::to_string(frame));
  return (num_samples - frame) / hop + 1;
}

FeatureMatrix log_mel_energies(const Waveform& wave, const FrontendConfig& config) {
  check_sample_rate(wave.sample_rate);
  const int sr = wave.sample_rate;
  const Index frames = frame_count(static_cast<Index>(wave.samples.size()), config, sr);
  const int frame_len = config.frame_samples(sr);
  const int hop = config.hop_samples(sr);
  const int n_fft = config.fft_size(sr);
  if (n_fft < frame_len) throw Error(ErrorCode::kConfigFault, "n_fft shorter than one frame");
  const RowMatrix mel = mel_matrix(config, sr);
  const Vector window = hamming_window(frame_len);

  Spectrum spectrum(n_fft);
  FeatureMatrix out(frames, config.n_mels);
  Vector buf(frame_len);
  for (Index t = 0; t < frames; ++t) {
    buf = Eigen::Map<const Vector>(wave.samples.data() + t * hop, frame_len).cwiseProduct(window);
    const Vector energy = mel * spectrum.power({buf.data(), static_cast<std::size_t>(frame_len)});
    out.row(t) = energy.cwiseMax(config.floor_eps).array().log().matrix().transpose();
  }
  return out;
}

void mean_normalize(FeatureMatrix& features) {
  if (features.rows() == 0) return;
  const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> mu = features.colwise().mean();
  features.rowwise() -= mu;
}

FeatureMatrix log_mel_features(const Waveform& wave, const FrontendConfig& config) {
  FeatureMatrix f = log_mel_energies(wave, config);
  mean_normalize(f);
  return f;
}

}  // namespace lid::frontend
