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

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "lid/frontend/frontend.hpp"

namespace lid::frontend {
namespace {

Waveform noise(Index samples, int rate, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<Scalar> u(-0.5, 0.5);
  Waveform w;
  w.sample_rate = rate;
  w.samples.resize(static_cast<std::size_t>(samples));
  for (auto& s : w.samples) s = u(rng);
  return w;
}

std::filesystem::path temp_dir() {
  auto dir = std::filesystem::temp_directory_path() / ("lid_frontend_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  return dir;
}

TEST(MelMatrix, ShapeAndCoverage) {
  FrontendConfig config;
  config.n_fft = 512;
  const RowMatrix m = mel_matrix(config, 16000);
  ASSERT_EQ(m.rows(), 40);
  ASSERT_EQ(m.cols(), 257);
  EXPECT_GE(m.minCoeff(), 0);
  for (Index r = 0; r < m.rows(); ++r) EXPECT_GT(m.row(r).maxCoeff(), 0) << "row " << r;
}

TEST(MelMatrix, PeaksStrictlyIncrease) {
  const RowMatrix m = mel_matrix(FrontendConfig{}, 16000);
  Index prev = -1;
  for (Index r = 0; r < m.rows(); ++r) {
    Index at = 0;
    m.row(r).maxCoeff(&at);
    EXPECT_GT(at, prev) << "row " << r;
    prev = at;
  }
}

TEST(MelMatrix, NeighboursMeetAtCentres) {
  // Filter r falls to zero exactly where filter r+1 peaks, so their sum never exceeds 1.
  const RowMatrix m = mel_matrix(FrontendConfig{}, 16000);
  for (Index r = 0; r + 1 < m.rows(); ++r)
    EXPECT_LE((m.row(r) + m.row(r + 1)).maxCoeff(), 1.0 + 1e-12);
}

TEST(MelMatrix, Degenerate) {
  FrontendConfig config;
  config.n_mels = 400;
  config.n_fft = 64;
  try {
    mel_matrix(config, 16000);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kFilterbankDegenerate);
  }
}

TEST(PowerSpectrum, ZeroFrame) {
  const std::vector<Scalar> frame(400, 0);
  EXPECT_TRUE(power_spectrum(frame, 512).isZero());
}

TEST(PowerSpectrum, CosineAtBin) {
  const int n_fft = 512;
  for (int k : {3, 17, 100, 255}) {
    std::vector<Scalar> frame(n_fft);
    for (int n = 0; n < n_fft; ++n) frame[static_cast<std::size_t>(n)] = std::cos(2 * std::numbers::pi * k * n / n_fft);
    const Vector p = power_spectrum(frame, n_fft);
    Index at = 0;
    p.maxCoeff(&at);
    EXPECT_EQ(at, k);
    EXPECT_LT((p.sum() - p[k]) / p[k], 1e-12);
  }
}

TEST(PowerSpectrum, Parseval) {
  const Waveform w = noise(400, 16000, 3);
  const int n_fft = 512;
  const Vector p = power_spectrum(w.samples, n_fft);
  Scalar lhs = p[0] + p[n_fft / 2];
  for (int k = 1; k < n_fft / 2; ++k) lhs += 2 * p[k];
  Scalar energy = 0;
  for (Scalar s : w.samples) energy += s * s;
  EXPECT_NEAR(lhs / (n_fft * energy), 1.0, 1e-8);
}

TEST(LogMel, FrameCountOneSecond) {
  const FeatureMatrix f = log_mel_features(noise(16000, 16000, 1), FrontendConfig{});
  EXPECT_EQ(f.rows(), 98);
  EXPECT_EQ(f.cols(), 40);
}

TEST(LogMel, FrameCountFormula) {
  for (Index len : {400, 401, 559, 560, 12345}) {
    const FeatureMatrix f = log_mel_features(noise(len, 16000, 2), FrontendConfig{});
    EXPECT_EQ(f.rows(), (len - 400) / 160 + 1);
    EXPECT_EQ(f.cols(), 40);
  }
  const FeatureMatrix narrow = log_mel_features(noise(8000, 8000, 2), FrontendConfig{});
  EXPECT_EQ(narrow.rows(), (8000 - 200) / 80 + 1);
  EXPECT_EQ(narrow.cols(), 40);
}

TEST(LogMel, ConstantSignalNormalizesToZero) {
  Waveform w;
  w.samples.assign(8000, 0.25);
  const FeatureMatrix f = log_mel_features(w, FrontendConfig{});
  EXPECT_LT(f.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(LogMel, TooShort) {
  try {
    log_mel_features(noise(300, 16000, 1), FrontendConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kTooShort);
  }
}

TEST(LogMel, ColumnsAreZeroMean) {
  const FeatureMatrix f = log_mel_features(noise(24000, 16000, 5), FrontendConfig{});
  EXPECT_LT(f.colwise().mean().cwiseAbs().maxCoeff(), 1e-6);
}

TEST(LogMel, GainInvariance) {
  const Waveform w = noise(20000, 16000, 7);
  for (Scalar gain : {0.1, 0.37, 1.9}) {
    Waveform scaled = w;
    for (auto& s : scaled.samples) s *= gain;
    const FeatureMatrix raw = log_mel_energies(w, FrontendConfig{});
    const FeatureMatrix raw_scaled = log_mel_energies(scaled, FrontendConfig{});
    EXPECT_LT((raw_scaled.array() - raw.array() - 2 * std::log(gain)).abs().maxCoeff(), 1e-6);
    EXPECT_LT((log_mel_features(scaled, FrontendConfig{}) - log_mel_features(w, FrontendConfig{})).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(LogMel, Deterministic) {
  const Waveform w = noise(9000, 16000, 8);
  EXPECT_EQ(log_mel_features(w, FrontendConfig{}), log_mel_features(w, FrontendConfig{}));
}

TEST(LogMel, RejectsOtherRates) {
  EXPECT_THROW(log_mel_features(noise(44100, 44100, 1), FrontendConfig{}), Error);
}

TEST(Wav, RoundTripWithinQuantization) {
  const auto dir = temp_dir();
  const Waveform w = noise(1234, 8000, 9);
  const std::string path = (dir / "a.wav").string();
  write_wav(path, w);
  const Waveform back = read_wav(path);
  EXPECT_EQ(back.sample_rate, 8000);
  ASSERT_EQ(back.samples.size(), w.samples.size());
  for (std::size_t i = 0; i < w.samples.size(); ++i) EXPECT_NEAR(back.samples[i], w.samples[i], 1.0 / 16000);
  EXPECT_EQ(std::filesystem::file_size(path), 44u + 2 * 1234u);
  std::filesystem::remove_all(dir);
}

TEST(Wav, RejectsGarbage) {
  const auto dir = temp_dir();
  const std::string path = (dir / "bad.wav").string();
  std::ofstream(path) << "definitely not audio";
  EXPECT_THROW(read_wav(path), Error);
  EXPECT_THROW(read_wav((dir / "missing.wav").string()), Error);
  std::filesystem::remove_all(dir);
}

TEST(FeatureCache, LayoutAndRoundTrip) {
  const auto dir = temp_dir();
  const FeatureMatrix f = log_mel_features(noise(4000, 16000, 10), FrontendConfig{});
  const std::string path = (dir / "u.lmfb").string();
  write_feature_cache(path, f);
  EXPECT_EQ(std::filesystem::file_size(path), 12u + 4u * static_cast<std::uintmax_t>(f.size()));
  std::ifstream is(path, std::ios::binary);
  char magic[4];
  is.read(magic, 4);
  EXPECT_EQ(std::string(magic, 4), "LMFB");
  const FeatureMatrix back = read_feature_cache(path);
  ASSERT_EQ(back.rows(), f.rows());
  ASSERT_EQ(back.cols(), 40);
  EXPECT_LT((back - f).cwiseAbs().maxCoeff(), 1e-5);
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace lid::frontend
