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
#include <fstream>
#include <sstream>

#include "lid/frontend/frontend.hpp"
#include "lid/util/binary_io.hpp"

namespace lid::frontend {

Waveform read_wav(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::kIoFault, "cannot open " + path);
  try {
    if (io::read_tag(is) != "RIFF") throw Error(ErrorCode::kDataFault, path + ": not a RIFF file");
    io::read_le<std::uint32_t>(is);
    if (io::read_tag(is) != "WAVE") throw Error(ErrorCode::kDataFault, path + ": not a WAVE file");
    bool have_format = false;
    Waveform wave;
    while (true) {
      const std::string id = io::read_tag(is);
      const auto size = io::read_le<std::uint32_t>(is);
      if (id == "fmt ") {
        const auto format = io::read_le<std::uint16_t>(is);
        const auto channels = io::read_le<std::uint16_t>(is);
        wave.sample_rate = static_cast<int>(io::read_le<std::uint32_t>(is));
        io::read_le<std::uint32_t>(is);  // byte rate
        io::read_le<std::uint16_t>(is);  // block align
        const auto bits = io::read_le<std::uint16_t>(is);
        if (format != 1 || channels != 1 || bits != 16)
          throw Error(ErrorCode::kDataFault, path + ": only 16-bit PCM mono is supported");
        is.ignore(size - 16 + (size & 1));
        have_format = true;
      } else if (id == "data") {
        if (!have_format) throw Error(ErrorCode::kDataFault, path + ": data chunk before fmt");
        wave.samples.resize(size / 2);
        for (auto& s : wave.samples) s = static_cast<Scalar>(io::read_le<std::int16_t>(is)) / Scalar(32768);
        return wave;
      } else {
        is.ignore(size + (size & 1));
      }
    }
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kDataFault) throw;
    throw Error(ErrorCode::kDataFault, path + ": " + e.what());
  }
}

void write_wav(const std::string& path, const Waveform& wave) {
  std::ostringstream os;
  const auto data_bytes = static_cast<std::uint32_t>(wave.samples.size() * 2);
  io::write_tag(os, "RIFF");
  io::write_le<std::uint32_t>(os, 36 + data_bytes);
  io::write_tag(os, "WAVE");
  io::write_tag(os, "fmt ");
  io::write_le<std::uint32_t>(os, 16);
  io::write_le<std::uint16_t>(os, 1);
  io::write_le<std::uint16_t>(os, 1);
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(wave.sample_rate));
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(wave.sample_rate * 2));
  io::write_le<std::uint16_t>(os, 2);
  io::write_le<std::uint16_t>(os, 16);
  io::write_tag(os, "data");
  io::write_le<std::uint32_t>(os, data_bytes);
  for (Scalar s : wave.samples) {
    const double clipped = std::clamp(static_cast<double>(s), -1.0, 1.0);
    io::write_le<std::int16_t>(os, static_cast<std::int16_t>(std::lround(clipped * 32767.0)));
  }
  io::write_file_atomic(path, os.str());
}

void write_feature_cache(const std::string& path, const FeatureMatrix& features) {
  std::ostringstream os;
  io::write_tag(os, "LMFB");
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(features.rows()));
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(features.cols()));
  for (Index i = 0; i < features.size(); ++i) io::write_le<float>(os, static_cast<float>(features.data()[i]));
  io::write_file_atomic(path, os.str());
}

FeatureMatrix read_feature_cache(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::kIoFault, "cannot open " + path);
  if (io::read_tag(is) != "LMFB") throw Error(ErrorCode::kDataFault, path + ": bad feature cache magic");
  const auto rows = io::read_le<std::uint32_t>(is);
  const auto cols = io::read_le<std::uint32_t>(is);
  FeatureMatrix f(rows, cols);
  for (Index i = 0; i < f.size(); ++i) f.data()[i] = static_cast<Scalar>(io::read_le<float>(is));
  return f;
}

}  // namespace lid::frontend
