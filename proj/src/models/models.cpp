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

#include "lid/models/models.hpp"

#include <fstream>
#include <functional>
#include <sstream>

namespace lid::models {
namespace {

std::string kind_name(nn::RnnKind kind) { return kind == nn::RnnKind::kLstm ? "blstm" : "bgru"; }
std::string pool_name(Pool pool) { return pool == Pool::kLogits ? "logits" : "hidden"; }

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
  throw Error(ErrorCode::kConfigFault, "bad value for " + key + ": '" + value + "'");
}

long parse_int(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const long v = std::stol(value, &used);
    if (used != value.size()) bad_value(key, value);
    return v;
  } catch (const std::logic_error&) {
    bad_value(key, value);
  }
}

Scalar parse_real(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) bad_value(key, value);
    return static_cast<Scalar>(v);
  } catch (const std::logic_error&) {
    bad_value(key, value);
  }
}

std::string format_real(Scalar v) {
  std::ostringstream os;
  os.precision(17);
  os << static_cast<double>(v);
  return os.str();
}

std::string join(const std::array<int, 4>& a) {
  return std::to_string(a[0]) + "," + std::to_string(a[1]) + "," + std::to_string(a[2]) + "," + std::to_string(a[3]);
}

std::array<int, 4> parse_quad(const std::string& key, const std::string& value) {
  std::array<int, 4> out{};
  std::istringstream is(value);
  std::string part;
  std::size_t i = 0;
  while (std::getline(is, part, ',')) {
    if (i == 4) bad_value(key, value);
    out[i++] = static_cast<int>(parse_int(key, part));
  }
  if (i != 4) bad_value(key, value);
  return out;
}

void head_items(std::map<std::string, std::string>& out, const std::string& p, const HeadConfig& h) {
  out[p + ".dropout"] = format_real(h.dropout);
  out[p + ".hidden"] = std::to_string(h.hidden);
  out[p + ".layers"] = std::to_string(h.layers);
  out[p + ".pool"] = pool_name(h.pool);
  out[p + ".rnn"] = kind_name(h.kind);
}

bool set_head(HeadConfig& h, const std::string& field, const std::string& key, const std::string& value) {
  if (field == "dropout") {
    h.dropout = parse_real(key, value);
    if (!(h.dropout >= 0 && h.dropout < 1)) bad_value(key, value);
  } else if (field == "hidden") {
    h.hidden = parse_int(key, value);
    if (h.hidden < 1) bad_value(key, value);
  } else if (field == "layers") {
    h.layers = static_cast<int>(parse_int(key, value));
    if (h.layers < 1) bad_value(key, value);
  } else if (field == "pool") {
    if (value == "logits") h.pool = Pool::kLogits;
    else if (value == "hidden") h.pool = Pool::kHidden;
    else bad_value(key, value);
  } else if (field == "rnn") {
    if (value == "blstm") h.kind = nn::RnnKind::kLstm;
    else if (value == "bgru") h.kind = nn::RnnKind::kGru;
    else bad_value(key, value);
  } else {
    return false;
  }
  return true;
}

}  // namespace

ModelConfig ModelConfig::full(int vocab_size, int n_dialects) {
  ModelConfig c;
  c.vocab_size = vocab_size;
  c.n_dialects = n_dialects;
  return c;
}

ModelConfig ModelConfig::micro(int vocab_size, int n_dialects) {
  ModelConfig c = full(vocab_size, n_dialects);
  c.scale = Scale::kMicro;
  c.trunk = nn::ResNetConfig::micro();
  c.am_hidden = 32;
  c.head.hidden = 32;
  c.baseline.hidden = 32;
  return c;
}

std::string ModelConfig::to_text() const {
  std::map<std::string, std::string> items;
  items["am.hidden"] = std::to_string(am_hidden);
  items["am.layers"] = std::to_string(am_layers);
  items["n_dialects"] = std::to_string(n_dialects);
  items["scale"] = scale == Scale::kFull ? "full" : "micro";
  items["trunk.batch_norm"] = trunk.batch_norm ? "1" : "0";
  items["trunk.blocks"] = join(trunk.blocks);
  items["trunk.channels"] = join(trunk.channels);
  items["vocab_size"] = std::to_string(vocab_size);
  head_items(items, "head", head);
  head_items(items, "baseline", baseline);
  std::string out;
  for (const auto& [k, v] : items) out += k + "=" + v + "\n";
  return out;
}

void ModelConfig::set(const std::string& key, const std::string& value) {
  if (key == "scale") {
    // Switching scale resets the scale-dependent sizes; later keys may refine them.
    if (value == "full") *this = full(vocab_size, n_dialects);
    else if (value == "micro") *this = micro(vocab_size, n_dialects);
    else bad_value(key, value);
  } else if (key == "vocab_size") {
    vocab_size = static_cast<int>(parse_int(key, value));
    if (vocab_size < 1) bad_value(key, value);
  } else if (key == "n_dialects") {
    n_dialects = static_cast<int>(parse_int(key, value));
    if (n_dialects < 2) bad_value(key, value);
  } else if (key == "am.hidden") {
    am_hidden = parse_int(key, value);
    if (am_hidden < 1) bad_value(key, value);
  } else if (key == "am.layers") {
    am_layers = static_cast<int>(parse_int(key, value));
    if (am_layers < 1) bad_value(key, value);
  } else if (key == "trunk.batch_norm") {
    if (value != "0" && value != "1" && value != "true" && value != "false") bad_value(key, value);
    trunk.batch_norm = value == "1" || value == "true";
  } else if (key == "trunk.blocks") {
    trunk.blocks = parse_quad(key, value);
  } else if (key == "trunk.channels") {
    trunk.channels = parse_quad(key, value);
  } else if (key.starts_with("head.") && set_head(head, key.substr(5), key, value)) {
  } else if (key.starts_with("baseline.") && set_head(baseline, key.substr(9), key, value)) {
  } else {
    throw Error(ErrorCode::kConfigFault, "unknown model key " + key);
  }
}

ModelConfig ModelConfig::from_text(const std::string& text) {
  ModelConfig c;
  std::istringstream is(text);
  std::string line;
  std::vector<std::pair<std::string, std::string>> items;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::kConfigFault, "bad config line '" + line + "'");
    items.emplace_back(line.substr(0, eq), line.substr(eq + 1));
  }
  // scale first, so that it does not reset explicit sizes.
  for (const auto& [k, v] : items)
    if (k == "scale") c.set(k, v);
  for (const auto& [k, v] : items)
    if (k != "scale") c.set(k, v);
  return c;
}

// ---------------------------------------------------------------------------

std::uint64_t Vocab::hash() const {
  std::string joined;
  for (const auto& u : units) joined += u + "\n";
  return fnv1a(joined);
}

Vocab read_vocab(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::kIoFault, "cannot open vocab " + path);
  Vocab v;
  std::string line;
  while (std::getline(is, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t')) line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    v.units.push_back(line);
  }
  if (v.units.empty()) throw Error(ErrorCode::kDataFault, "empty vocab " + path);
  return v;
}

Vocab synthetic_vocab(int size) {
  Vocab v;
  for (int i = 1; i <= size; ++i) v.units.push_back("p" + std::to_string(i));
  return v;
}

// ---------------------------------------------------------------------------

AmModel make_am(const ModelConfig& config, std::uint64_t seed) {
  AmModel am{config, {}};
  nn::Rng rng(seed);
  nn::add_resnet14(am.params, "am.trunk", config.trunk, rng);
  nn::add_birnn(am.params, "am.rnn", {nn::RnnKind::kLstm, config.trunk.output_width(), config.am_hidden, config.am_layers},
                rng);
  nn::add_linear(am.params, "am.out", 2 * config.am_hidden, config.vocab_size + 1, rng);
  return am;
}

ad::Tensor am_intermediate(const ad::Tensor& features, const AmModel& am, nn::ForwardContext& ctx) {
  return nn::resnet14_forward(features, am.params, "am.trunk", am.config.trunk, ctx);
}

AmOutput am_forward(const ad::Tensor& features, const AmModel& am, nn::ForwardContext& ctx) {
  const ModelConfig& c = am.config;
  AmOutput out;
  out.intermediate = am_intermediate(features, am, ctx);
  const ad::Tensor h = nn::birnn_forward(out.intermediate, am.params, "am.rnn",
                                         {nn::RnnKind::kLstm, c.trunk.output_width(), c.am_hidden, c.am_layers}, ctx, 0);
  out.lattice = ad::log_softmax(ctx.tape, nn::linear(ctx.tape, h, am.params, "am.out"), 1);
  return out;
}

namespace {

SequenceClassifier make_classifier(const HeadConfig& head, Index width, int classes, const std::string& prefix,
                                   std::uint64_t seed) {
  SequenceClassifier m{head, width, classes, prefix, {}};
  nn::Rng rng(seed);
  nn::add_birnn(m.params, prefix + ".rnn", m.rnn(), rng);
  nn::add_linear(m.params, prefix + ".out", 2 * head.hidden, classes, rng);
  return m;
}

}  // namespace

LidHead make_lid_head(const ModelConfig& config, std::uint64_t seed) {
  return make_classifier(config.head, config.trunk.output_width(), config.n_dialects, "lid", seed);
}

BaselineModel make_baseline(const ModelConfig& config, int n_mels, std::uint64_t seed) {
  return make_classifier(config.baseline, n_mels, config.n_dialects, "base", seed);
}

ad::Tensor classify(const ad::Tensor& inputs, const SequenceClassifier& model, nn::ForwardContext& ctx) {
  ad::Tape& tape = ctx.tape;
  ad::Tensor h = nn::birnn_forward(inputs, model.params, model.prefix + ".rnn", model.rnn(), ctx, model.config.dropout);
  ad::Tensor logits;
  if (model.config.pool == Pool::kLogits) {
    h = nn::apply_dropout(h, model.config.dropout, ctx);
    logits = nn::time_avg_pool(tape, nn::linear(tape, h, model.params, model.prefix + ".out"));
  } else {
    const ad::Tensor pooled = ad::reshape(tape, nn::time_avg_pool(tape, h), {1, h.dim(1)});
    logits = nn::linear(tape, nn::apply_dropout(pooled, model.config.dropout, ctx), model.params, model.prefix + ".out");
    logits = ad::reshape(tape, logits, {model.n_classes});
  }
  return ad::log_softmax(tape, logits, 0);
}

FrameCnn make_frame_cnn(const ModelConfig& config, std::uint64_t seed) {
  FrameCnn cnn{config, {}};
  nn::Rng rng(seed);
  nn::add_resnet14(cnn.params, "cnn.trunk", config.trunk, rng);
  nn::add_linear(cnn.params, "cnn.out", config.trunk.output_width(), config.vocab_size + 1, rng);
  return cnn;
}

FrameCnnOutput frame_cnn_forward(const ad::Tensor& features, const FrameCnn& cnn, nn::ForwardContext& ctx) {
  FrameCnnOutput out;
  out.intermediate = nn::resnet14_forward(features, cnn.params, "cnn.trunk", cnn.config.trunk, ctx);
  out.log_probs = ad::log_softmax(ctx.tape, nn::linear(ctx.tape, out.intermediate, cnn.params, "cnn.out"), 1);
  return out;
}

Index param_count(const nn::ParamStore& params, const std::string& prefix) { return params.parameter_count(prefix); }

}  // namespace lid::models
