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

#include <sstream>

#include "lid/pipeline/pipeline.hpp"
#include "lid/util/binary_io.hpp"

namespace lid::pipeline {
namespace {

bool is_buffer(const std::string& name) { return name.ends_with(".running_mean") || name.ends_with(".running_var"); }

std::string format_real(Scalar v) {
  std::ostringstream os;
  os.precision(17);
  os << static_cast<double>(v);
  return os.str();
}

std::string history_text(const std::vector<EpochRecord>& history) {
  std::string out;
  for (const auto& r : history) {
    if (!out.empty()) out += ';';
    out += std::to_string(r.epoch) + ":" + format_real(r.train_loss) + ":" + format_real(r.val_loss) + ":" +
           format_real(r.val_metric);
  }
  return out;
}

std::vector<EpochRecord> parse_history(const std::string& text) {
  std::vector<EpochRecord> out;
  std::istringstream is(text);
  std::string item;
  while (std::getline(is, item, ';')) {
    EpochRecord r;
    char c1 = 0, c2 = 0, c3 = 0;
    double tl = 0, vl = 0, vm = 0;
    std::istringstream fields(item);
    if (!(fields >> r.epoch >> c1 >> tl >> c2 >> vl >> c3 >> vm) || c1 != ':' || c2 != ':' || c3 != ':')
      throw Error(ErrorCode::kDataFault, "checkpoint: bad history entry '" + item + "'");
    r.train_loss = static_cast<Scalar>(tl);
    r.val_loss = static_cast<Scalar>(vl);
    r.val_metric = static_cast<Scalar>(vm);
    out.push_back(r);
  }
  return out;
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::map<std::string, std::string> meta;
  meta["meta.epoch"] = std::to_string(ckpt.epoch);
  meta["meta.history"] = history_text(ckpt.history);
  meta["meta.stage"] = ckpt.stage;
  meta["meta.vocab_hash"] = std::to_string(ckpt.vocab_hash);
  std::string blob;
  for (const auto& [k, v] : meta) blob += k + "=" + v + "\n";
  std::istringstream config(ckpt.config.to_text());
  std::string line;
  while (std::getline(config, line)) blob += "model." + line + "\n";

  std::ostringstream os;
  io::write_tag(os, "LIDC");
  io::write_le<std::uint32_t>(os, kCheckpointVersion);
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(blob.size()));
  os.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.params.size()));
  for (const auto& e : ckpt.params.entries()) {
    io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(e.tensor.rank()));
    for (Index d : e.tensor.shape()) io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
    for (Index i = 0; i < e.tensor.numel(); ++i) io::write_le<double>(os, static_cast<double>(e.tensor.values()[i]));
  }
  return os.str();
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  std::istringstream is(bytes);
  if (io::read_tag(is) != "LIDC") throw Error(ErrorCode::kIncompatibleCheckpoint, "not a checkpoint");
  const auto version = io::read_le<std::uint32_t>(is);
  if (version != kCheckpointVersion)
    throw Error(ErrorCode::kIncompatibleCheckpoint, "checkpoint version " + std::to_string(version));
  const auto blob_len = io::read_le<std::uint32_t>(is);
  std::string blob(blob_len, '\0');
  if (!is.read(blob.data(), blob_len)) throw Error(ErrorCode::kDataFault, "checkpoint: truncated header");

  Checkpoint ckpt;
  std::string model_text, line;
  std::istringstream lines(blob);
  while (std::getline(lines, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::kDataFault, "checkpoint: bad header line '" + line + "'");
    const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    if (key.starts_with("model.")) model_text += key.substr(6) + "=" + value + "\n";
    else if (key == "meta.epoch") ckpt.epoch = std::stoi(value);
    else if (key == "meta.history") ckpt.history = parse_history(value);
    else if (key == "meta.stage") ckpt.stage = value;
    else if (key == "meta.vocab_hash") ckpt.vocab_hash = std::stoull(value);
    else throw Error(ErrorCode::kDataFault, "checkpoint: unknown header key " + key);
  }
  ckpt.config = models::ModelConfig::from_text(model_text);

  const auto count = io::read_le<std::uint32_t>(is);
  for (std::uint32_t t = 0; t < count; ++t) {
    const auto name_len = io::read_le<std::uint32_t>(is);
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw Error(ErrorCode::kDataFault, "checkpoint: truncated tensor name");
    const auto rank = io::read_le<std::uint32_t>(is);
    ad::Shape shape(rank);
    for (auto& d : shape) d = io::read_le<std::uint32_t>(is);
    Vector values(ad::numel(shape));
    for (Index i = 0; i < values.size(); ++i) values[i] = static_cast<Scalar>(io::read_le<double>(is));
    const bool trainable = !is_buffer(name);
    ckpt.params.add(name, ad::tensor_new(std::move(shape), std::move(values), trainable), trainable);
  }
  if (is.peek() != std::char_traits<char>::eof()) throw Error(ErrorCode::kDataFault, "checkpoint: trailing bytes");
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  io::write_file_atomic(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::string& path) { return deserialize_checkpoint(io::read_file(path)); }

void require_compatible(const Checkpoint& ckpt, std::uint64_t vocab_hash, const std::string& stage) {
  if (ckpt.vocab_hash != vocab_hash)
    throw Error(ErrorCode::kIncompatibleCheckpoint, "checkpoint vocab hash " + std::to_string(ckpt.vocab_hash) +
                                                        " does not match " + std::to_string(vocab_hash));
  if (ckpt.stage != stage)
    throw Error(ErrorCode::kIncompatibleCheckpoint, "expected a '" + stage + "' checkpoint, got '" + ckpt.stage + "'");
}

namespace {

// Confirms the stored tensors are exactly those a fresh model would have.
void check_layout(const nn::ParamStore& stored, const nn::ParamStore& fresh) {
  if (stored.size() != fresh.size())
    throw Error(ErrorCode::kIncompatibleCheckpoint, "checkpoint holds " + std::to_string(stored.size()) +
                                                        " tensors, model expects " + std::to_string(fresh.size()));
  for (const auto& e : fresh.entries()) {
    if (!stored.contains(e.name)) throw Error(ErrorCode::kIncompatibleCheckpoint, "checkpoint lacks " + e.name);
    if (stored.at(e.name).shape() != e.tensor.shape())
      throw Error(ErrorCode::kIncompatibleCheckpoint, "shape mismatch for " + e.name);
  }
}

}  // namespace

models::AmModel am_from_checkpoint(const Checkpoint& ckpt) {
  check_layout(ckpt.params, models::make_am(ckpt.config, 0).params);
  return {ckpt.config, ckpt.params};
}

models::FrameCnn cnn_from_checkpoint(const Checkpoint& ckpt) {
  check_layout(ckpt.params, models::make_frame_cnn(ckpt.config, 0).params);
  return {ckpt.config, ckpt.params};
}

models::SequenceClassifier classifier_from_checkpoint(const Checkpoint& ckpt) {
  models::SequenceClassifier m = ckpt.stage == "baseline" ? models::make_baseline(ckpt.config, 40, 0)
                                                          : models::make_lid_head(ckpt.config, 0);
  check_layout(ckpt.params, m.params);
  m.params = ckpt.params;
  return m;
}

}  // namespace lid::pipeline
