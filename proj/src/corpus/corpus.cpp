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

#include "lid/corpus/corpus.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "lid/util/binary_io.hpp"
#include "lid/util/config_file.hpp"
#include "lid/util/parallel.hpp"

namespace lid::corpus {
namespace fs = std::filesystem;

namespace {

[[noreturn]] void bad_spec(const std::string& key, const std::string& value) {
  throw Error(ErrorCode::kConfigFault, "synth spec: bad value for " + key + ": '" + value + "'");
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size()) bad_spec(key, value);
  return out;
}

std::string shortest(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t stream, std::uint32_t salt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32), salt};
  return std::mt19937_64(seq);
}

enum class Contour { kRise, kFall, kRiseFall, kFallRise };

double contour_factor(Contour c, double depth, double u) {
  switch (c) {
    case Contour::kRise: return 1 + depth * (2 * u - 1);
    case Contour::kFall: return 1 - depth * (2 * u - 1);
    case Contour::kRiseFall: return 1 + depth * (1 - 2 * std::abs(2 * u - 1));
    case Contour::kFallRise: return 1 - depth * (1 - 2 * std::abs(2 * u - 1));
  }
  return 1;
}

struct Realisation {
  double f0;
  Contour contour;
  std::array<double, 3> harmonics;
};

Realisation realise(const SynthSpec& spec, int dialect, int phoneme) {
  const int p = phoneme - 1;
  Realisation r;
  const int offset_slot = (p + 3 * dialect) % 4;
  const double offset = spec.pitch_offset * (2.0 * offset_slot / 3.0 - 1.0);
  r.f0 = spec.base_f0 * std::pow(spec.f0_step, p) * (1 + offset);
  r.contour = static_cast<Contour>((p + dialect) % 4);
  r.harmonics = {1.0, 0.3 + 0.6 * ((p * 7) % 5) / 4.0, 0.2 + 0.5 * ((p * 3) % 4) / 3.0};
  return r;
}

int successor(const SynthSpec& spec, int dialect, int phoneme) {
  const int shift = 1 + dialect % (spec.vocab_size - 1);
  return (phoneme - 1 + shift) % spec.vocab_size + 1;
}

}  // namespace

// ---------------------------------------------------------------------------

void SynthSpec::set(const std::string& key, const std::string& value) {
  if (key == "n_dialects") n_dialects = parse_number<int>(key, value);
  else if (key == "vocab_size") vocab_size = parse_number<int>(key, value);
  else if (key == "train_per_dialect") train_per_dialect = parse_number<int>(key, value);
  else if (key == "test_per_dialect") test_per_dialect = parse_number<int>(key, value);
  else if (key == "min_duration") min_duration = parse_number<double>(key, value);
  else if (key == "max_duration") max_duration = parse_number<double>(key, value);
  else if (key == "sample_rate") sample_rate = parse_number<int>(key, value);
  else if (key == "seed") seed = parse_number<std::uint64_t>(key, value);
  else if (key == "snr_db") snr_db = parse_number<double>(key, value);
  else if (key == "min_segment_ms") min_segment_ms = parse_number<double>(key, value);
  else if (key == "max_segment_ms") max_segment_ms = parse_number<double>(key, value);
  else if (key == "base_f0") base_f0 = parse_number<double>(key, value);
  else if (key == "f0_step") f0_step = parse_number<double>(key, value);
  else if (key == "contour_depth") contour_depth = parse_number<double>(key, value);
  else if (key == "pitch_offset") pitch_offset = parse_number<double>(key, value);
  else if (key == "speaker_jitter") speaker_jitter = parse_number<double>(key, value);
  else if (key == "successor_bias") successor_bias = parse_number<double>(key, value);
  else throw Error(ErrorCode::kConfigFault, "synth spec: unknown key " + key);
}

void SynthSpec::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw Error(ErrorCode::kConfigFault, "synth spec: " + what);
  };
  require(n_dialects >= 2, "n_dialects must be at least 2");
  require(vocab_size >= 3, "vocab_size must be at least 3");
  require(train_per_dialect >= 0 && test_per_dialect >= 0, "negative utterance count");
  require(sample_rate == 8000 || sample_rate == 16000, "sample_rate must be 8000 or 16000");
  require(min_segment_ms > 0 && max_segment_ms >= 2 * min_segment_ms, "segment range must satisfy max >= 2 * min");
  require(min_duration * 1000 >= min_segment_ms && max_duration >= min_duration, "bad duration range");
  require(base_f0 > 0 && f0_step > 1, "bad pitch grid");
  const double top = base_f0 * std::pow(f0_step, vocab_size - 1) * (1 + pitch_offset) * (1 + contour_depth) *
                     (1 + speaker_jitter) * 3;
  require(top < sample_rate / 2.0, "highest harmonic exceeds Nyquist");
  require(contour_depth >= 0 && contour_depth < 0.5, "contour_depth out of range");
  require(pitch_offset >= 0 && pitch_offset < 0.5, "pitch_offset out of range");
  require(speaker_jitter >= 0 && speaker_jitter < 0.5, "speaker_jitter out of range");
  require(successor_bias >= 0 && successor_bias <= 1, "successor_bias out of range");
}

std::string SynthSpec::to_text() const {
  std::ostringstream os;
  os << "n_dialects = " << n_dialects << "\n"
     << "vocab_size = " << vocab_size << "\n"
     << "train_per_dialect = " << train_per_dialect << "\n"
     << "test_per_dialect = " << test_per_dialect << "\n"
     << "min_duration = " << shortest(min_duration) << "\n"
     << "max_duration = " << shortest(max_duration) << "\n"
     << "sample_rate = " << sample_rate << "\n"
     << "seed = " << seed << "\n"
     << "snr_db = " << shortest(snr_db) << "\n"
     << "min_segment_ms = " << shortest(min_segment_ms) << "\n"
     << "max_segment_ms = " << shortest(max_segment_ms) << "\n"
     << "base_f0 = " << shortest(base_f0) << "\n"
     << "f0_step = " << shortest(f0_step) << "\n"
     << "contour_depth = " << shortest(contour_depth) << "\n"
     << "pitch_offset = " << shortest(pitch_offset) << "\n"
     << "speaker_jitter = " << shortest(speaker_jitter) << "\n"
     << "successor_bias = " << shortest(successor_bias) << "\n";
  return os.str();
}

SynthSpec parse_synth_spec(const std::map<std::string, std::string>& items) {
  SynthSpec spec;
  for (const auto& [k, v] : items) spec.set(k.starts_with("corpus.") ? k.substr(7) : k, v);
  spec.validate();
  return spec;
}

SynthSpec load_synth_spec(const std::string& path) { return parse_synth_spec(config::load(path)); }

// ---------------------------------------------------------------------------

std::string Manifest::audio_file(const UtteranceRecord& record) const {
  const fs::path p(record.audio_path);
  if (p.is_absolute() || base_dir.empty()) return p.string();
  return (fs::path(base_dir) / p).string();
}

int Manifest::n_dialects() const {
  int n = 0;
  for (const auto& r : records) n = std::max(n, r.dialect + 1);
  return n;
}

void write_manifest(const std::string& path, const Manifest& manifest) {
  std::ostringstream os;
  os << "# split=" << manifest.split << "\n";
  for (const auto& r : manifest.records) {
    os << r.utt_id << '\t' << r.audio_path << '\t' << shortest(r.duration) << '\t' << r.dialect << '\t';
    for (std::size_t i = 0; i < r.labels.size(); ++i) os << (i ? " " : "") << r.labels[i];
    os << '\n';
  }
  io::write_file_atomic(path, os.str());
}

Manifest load_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::kIoFault, "cannot open manifest " + path);
  Manifest m;
  m.base_dir = fs::path(path).parent_path().string();
  std::set<std::string> seen;
  std::string line;
  int line_no = 0;
  auto fail = [&](const std::string& what) {
    throw Error(ErrorCode::kParseFault, path + ":" + std::to_string(line_no) + ": " + what);
  };
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.front() == '#') {
      if (line.starts_with("# split=")) m.split = line.substr(8);
      continue;
    }
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const auto tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 5) fail("expected 5 tab-separated fields, got " + std::to_string(fields.size()));
    UtteranceRecord r;
    r.utt_id = fields[0];
    r.audio_path = fields[1];
    if (r.utt_id.empty() || r.audio_path.empty()) fail("empty id or path");
    {
      const auto& f = fields[2];
      const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), r.duration);
      if (ec != std::errc() || ptr != f.data() + f.size() || !(r.duration > 0)) fail("bad duration '" + f + "'");
    }
    {
      const auto& f = fields[3];
      const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), r.dialect);
      if (ec != std::errc() || ptr != f.data() + f.size() || r.dialect < 0) fail("bad dialect id '" + f + "'");
    }
    std::istringstream labels(fields[4]);
    std::string tok;
    while (labels >> tok) {
      int id = 0;
      const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), id);
      if (ec != std::errc() || ptr != tok.data() + tok.size() || id < 1) fail("bad phoneme id '" + tok + "'");
      r.labels.push_back(id);
    }
    if (!seen.insert(r.utt_id).second)
      throw Error(ErrorCode::kDuplicateId, path + ":" + std::to_string(line_no) + ": duplicate utt_id " + r.utt_id);
    if (!fs::exists(m.audio_file(r))) m.missing_audio.push_back(r.utt_id);
    m.records.push_back(std::move(r));
  }
  return m;
}

std::pair<Manifest, Manifest> split_by_duration(const Manifest& manifest, double threshold) {
  std::pair<Manifest, Manifest> out;
  for (Manifest* m : {&out.first, &out.second}) {
    m->split = manifest.split;
    m->base_dir = manifest.base_dir;
  }
  for (const auto& r : manifest.records) (r.duration <= threshold ? out.first : out.second).records.push_back(r);
  return out;
}

// ---------------------------------------------------------------------------

SynthUtterance synth_utterance(const SynthSpec& spec, int dialect, double duration, std::uint64_t stream) {
  spec.validate();
  auto rng = stream_rng(spec.seed, stream, 1);
  std::uniform_real_distribution<double> unit(0, 1);
  const double sr = spec.sample_rate;
  const Index total = std::lround(duration * sr);
  const Index min_seg = std::lround(spec.min_segment_ms * sr / 1000);
  const Index max_seg = std::lround(spec.max_segment_ms * sr / 1000);
  if (total < min_seg) throw Error(ErrorCode::kConfigFault, "duration shorter than one segment");

  // Segment lengths: draw while more than one maximal segment remains, then the
  // remainder (always within [min, max]) closes the utterance.
  SynthUtterance out;
  out.boundaries.push_back(0);
  Index remaining = total;
  while (remaining > max_seg) {
    const Index hi = std::min(max_seg, remaining - min_seg);
    const Index len = min_seg + static_cast<Index>(unit(rng) * static_cast<double>(hi - min_seg + 1));
    out.boundaries.push_back(out.boundaries.back() + std::min(len, hi));
    remaining = total - out.boundaries.back();
  }
  out.boundaries.push_back(total);

  // Phoneme sequence: uniform start, then the dialect successor with
  // probability successor_bias, otherwise any other phoneme.
  const int V = spec.vocab_size;
  const std::size_t n_seg = out.boundaries.size() - 1;
  std::uniform_int_distribution<int> any(1, V), other(1, V - 1);
  for (std::size_t s = 0; s < n_seg; ++s) {
    if (s == 0) {
      out.labels.push_back(any(rng));
      continue;
    }
    const int prev = out.labels.back();
    if (unit(rng) < spec.successor_bias) {
      out.labels.push_back(successor(spec, dialect, prev));
    } else {
      const int k = other(rng);
      out.labels.push_back(k >= prev ? k + 1 : k);
    }
  }

  const double speaker = 1 + spec.speaker_jitter * (2 * unit(rng) - 1);
  const double gain = 0.3 + 0.4 * unit(rng);
  const Index fade = std::lround(0.010 * sr);
  std::vector<double> tone(static_cast<std::size_t>(total), 0.0);
  std::array<double, 3> phase{unit(rng), unit(rng), unit(rng)};
  for (auto& ph : phase) ph *= 2 * std::numbers::pi;
  for (std::size_t s = 0; s < n_seg; ++s) {
    const Realisation r = realise(spec, dialect, out.labels[s]);
    const Index begin = out.boundaries[s], end = out.boundaries[s + 1];
    const double len = static_cast<double>(end - begin);
    const double norm = r.harmonics[0] + r.harmonics[1] + r.harmonics[2];
    for (Index n = begin; n < end; ++n) {
      const double u = (static_cast<double>(n - begin) + 0.5) / len;
      const double f = r.f0 * speaker * contour_factor(r.contour, spec.contour_depth, u);
      double env = 1;
      const Index from_edge = std::min(n - begin, end - 1 - n);
      if (from_edge < fade) env = 0.5 - 0.5 * std::cos(std::numbers::pi * (static_cast<double>(from_edge) + 0.5) / fade);
      double v = 0;
      for (int h = 0; h < 3; ++h) {
        phase[static_cast<std::size_t>(h)] += 2 * std::numbers::pi * f * (h + 1) / sr;
        v += r.harmonics[static_cast<std::size_t>(h)] * std::sin(phase[static_cast<std::size_t>(h)]);
      }
      tone[static_cast<std::size_t>(n)] = gain * env * v / norm;
    }
    for (auto& ph : phase) ph = std::fmod(ph, 2 * std::numbers::pi);
  }

  double power = 0;
  for (double v : tone) power += v * v;
  power /= static_cast<double>(total);
  std::normal_distribution<double> noise(0, std::sqrt(power / std::pow(10.0, spec.snr_db / 10)));
  out.wave.sample_rate = spec.sample_rate;
  out.wave.samples.resize(tone.size());
  for (std::size_t i = 0; i < tone.size(); ++i) out.wave.samples[i] = static_cast<Scalar>(tone[i] + noise(rng));
  return out;
}

std::pair<Manifest, Manifest> synth_corpus(const SynthSpec& spec, const std::string& out_dir) {
  spec.validate();
  try {
    fs::create_directories(fs::path(out_dir) / "wav");
  } catch (const fs::filesystem_error& e) {
    throw Error(ErrorCode::kIoFault, "cannot create " + out_dir + ": " + e.what());
  }

  struct Job {
    std::string split;
    int dialect;
    int index;
    int count;
  };
  std::vector<Job> jobs;
  for (const auto& [split, count] : {std::pair{std::string("train"), spec.train_per_dialect},
                                     std::pair{std::string("test"), spec.test_per_dialect}})
    for (int d = 0; d < spec.n_dialects; ++d)
      for (int i = 0; i < count; ++i) jobs.push_back({split, d, i, count});

  std::vector<UtteranceRecord> records(jobs.size());
  parallel_for(jobs.size(), [&](std::size_t j) {
    const Job& job = jobs[j];
    char id[64];
    std::snprintf(id, sizeof id, "%s_d%d_%04d", job.split.c_str(), job.dialect, job.index);
    const std::uint64_t stream = fnv1a(id);
    // Stratified durations so both sides of the 3 s boundary are populated.
    auto rng = stream_rng(spec.seed, stream, 2);
    const double u = std::uniform_real_distribution<double>(0, 1)(rng);
    const double duration =
        spec.min_duration + (spec.max_duration - spec.min_duration) * (job.index + u) / job.count;
    SynthUtterance utt = synth_utterance(spec, job.dialect, duration, stream);
    UtteranceRecord& r = records[j];
    r.utt_id = id;
    r.audio_path = "wav/" + r.utt_id + ".wav";
    r.duration = static_cast<double>(utt.wave.samples.size()) / spec.sample_rate;
    r.dialect = job.dialect;
    r.labels = std::move(utt.labels);
    frontend::write_wav((fs::path(out_dir) / r.audio_path).string(), utt.wave);
  });

  std::pair<Manifest, Manifest> out;
  out.first.split = "train";
  out.second.split = "test";
  for (Manifest* m : {&out.first, &out.second}) m->base_dir = out_dir;
  for (std::size_t j = 0; j < jobs.size(); ++j)
    (jobs[j].split == "train" ? out.first : out.second).records.push_back(std::move(records[j]));
  write_manifest((fs::path(out_dir) / "train.tsv").string(), out.first);
  write_manifest((fs::path(out_dir) / "test.tsv").string(), out.second);
  io::write_file_atomic((fs::path(out_dir) / "spec.toml").string(), spec.to_text());
  return out;
}

}  // namespace lid::corpus
