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

#include "lid/eval/eval.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <sstream>

#include <json.hpp>

#include "lid/util/binary_io.hpp"
#include "lid/util/parallel.hpp"

namespace lid::eval {
namespace fs = std::filesystem;

namespace {

double percent(Index num, Index den) { return den == 0 ? 0.0 : 100.0 * static_cast<double>(num) / den; }

std::string fixed1(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

std::string fixed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace

Index Metrics::class_count(int c) const {
  Index n = 0;
  for (Index v : confusion.at(static_cast<std::size_t>(c))) n += v;
  return n;
}

double Metrics::class_accuracy(int c) const {
  return percent(confusion.at(static_cast<std::size_t>(c)).at(static_cast<std::size_t>(c)), class_count(c));
}

Metrics score(const std::vector<int>& predictions, const pipeline::Dataset& test, int n_classes,
              const std::string& system) {
  if (test.empty()) throw Error(ErrorCode::kEmptyTestSet, "no test utterances");
  if (predictions.size() != test.size()) throw std::invalid_argument("one prediction per test utterance required");
  Metrics m;
  m.system = system;
  m.n_classes = n_classes;
  m.confusion.assign(static_cast<std::size_t>(n_classes), std::vector<Index>(static_cast<std::size_t>(n_classes), 0));
  for (std::size_t i = 0; i < test.size(); ++i) {
    const int truth = test[i].dialect, pred = predictions[i];
    if (truth < 0 || truth >= n_classes || pred < 0 || pred >= n_classes)
      throw Error(ErrorCode::kDataFault, test[i].utt_id + ": class outside 0.." + std::to_string(n_classes - 1));
    ++m.confusion[static_cast<std::size_t>(truth)][static_cast<std::size_t>(pred)];
    const bool hit = truth == pred;
    ++m.n_all;
    m.correct_all += hit;
    if (test[i].duration <= kShortThreshold) {
      ++m.n_short;
      m.correct_short += hit;
    } else {
      ++m.n_long;
      m.correct_long += hit;
    }
  }
  m.acc_all = percent(m.correct_all, m.n_all);
  m.acc_short = percent(m.correct_short, m.n_short);
  m.acc_long = percent(m.correct_long, m.n_long);
  return m;
}

Metrics evaluate(const Predictor& predict, const pipeline::Dataset& test, int n_classes, const std::string& system) {
  if (test.empty()) throw Error(ErrorCode::kEmptyTestSet, "no test utterances");
  std::vector<int> predictions(test.size());
  parallel_for(test.size(), [&](std::size_t i) {
    const Vector lp = predict(test[i]);
    if (lp.size() != n_classes) throw Error(ErrorCode::kInvalidShape, "predictor returned the wrong class count");
    Index best = 0;
    lp.maxCoeff(&best);
    predictions[i] = static_cast<int>(best);
  });
  return score(predictions, test, n_classes, system);
}

// ---------------------------------------------------------------------------
// Systems

int System::n_classes() const { return checkpoints.back().config.n_dialects; }

std::uint64_t System::vocab_hash() const { return checkpoints.back().vocab_hash; }

Predictor System::predictor() const {
  const auto head = std::make_shared<models::SequenceClassifier>(pipeline::classifier_from_checkpoint(checkpoints.back()));
  if (kind == "baseline") {
    return [head](const pipeline::Utterance& u) {
      ad::Tape tape(ad::Tape::Mode::kInference);
      nn::ForwardContext ctx{tape};
      return Vector(models::classify(u.features, *head, ctx).values());
    };
  }
  if (kind == "two-stage") {
    const auto am = std::make_shared<models::AmModel>(pipeline::am_from_checkpoint(checkpoints.front()));
    return [am, head](const pipeline::Utterance& u) {
      ad::Tape tape(ad::Tape::Mode::kInference);
      nn::ForwardContext ctx{tape};
      return Vector(models::classify(models::am_intermediate(u.features, *am, ctx), *head, ctx).values());
    };
  }
  const auto cnn = std::make_shared<models::FrameCnn>(pipeline::cnn_from_checkpoint(checkpoints.at(1)));
  return [cnn, head](const pipeline::Utterance& u) {
    ad::Tape tape(ad::Tape::Mode::kInference);
    nn::ForwardContext ctx{tape};
    return Vector(models::classify(models::frame_cnn_forward(u.features, *cnn, ctx).intermediate, *head, ctx).values());
  };
}

System load_system(const std::string& dir) {
  std::map<std::string, std::string> entries;
  std::istringstream is(io::read_file((fs::path(dir) / "system.txt").string()));
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::kDataFault, dir + "/system.txt: bad line '" + line + "'");
    entries[line.substr(0, eq)] = line.substr(eq + 1);
  }
  System sys;
  sys.kind = entries["system"];
  std::vector<std::string> stages;
  if (sys.kind == "baseline") stages = {"baseline"};
  else if (sys.kind == "two-stage") stages = {"am", "lid"};
  else if (sys.kind == "three-stage") stages = {"am", "cnn", "lid"};
  else throw Error(ErrorCode::kDataFault, dir + "/system.txt: unknown system '" + sys.kind + "'");
  for (const auto& stage : stages) {
    const auto it = entries.find(stage);
    if (it == entries.end()) throw Error(ErrorCode::kDataFault, dir + "/system.txt: no " + stage + " checkpoint");
    sys.checkpoints.push_back(pipeline::load_checkpoint((fs::path(dir) / it->second).string()));
    pipeline::require_compatible(sys.checkpoints.back(), sys.checkpoints.front().vocab_hash, stage);
  }
  return sys;
}

// ---------------------------------------------------------------------------
// Reports

void render_confusion(const Metrics& m, const std::string& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  const auto n = static_cast<std::size_t>(m.n_classes);

  std::string csv = "truth";
  for (std::size_t c = 0; c < n; ++c) csv += ",pred_" + std::to_string(c);
  csv += "\n";
  for (std::size_t r = 0; r < n; ++r) {
    csv += std::to_string(r);
    for (Index v : m.confusion[r]) csv += "," + std::to_string(v);
    csv += "\n";
  }
  csv += "\ntruth";
  for (std::size_t c = 0; c < n; ++c) csv += ",pred_" + std::to_string(c) + "_pct";
  csv += ",accuracy_pct\n";
  for (std::size_t r = 0; r < n; ++r) {
    const Index total = m.class_count(static_cast<int>(r));
    csv += std::to_string(r);
    for (Index v : m.confusion[r]) csv += "," + fixed1(percent(v, total));
    csv += "," + fixed1(m.class_accuracy(static_cast<int>(r))) + "\n";
  }

  constexpr std::size_t kCell = 16;
  const std::size_t side = n * kCell;
  std::string pgm = "P5\n";
  for (std::size_t r = 0; r < n; ++r)
    pgm += "# class " + std::to_string(r) + " accuracy " + fixed1(m.class_accuracy(static_cast<int>(r))) + "%\n";
  pgm += std::to_string(side) + " " + std::to_string(side) + "\n255\n";
  for (std::size_t y = 0; y < side; ++y) {
    const std::size_t r = y / kCell;
    const Index total = m.class_count(static_cast<int>(r));
    for (std::size_t x = 0; x < side; ++x) {
      const double share = percent(m.confusion[r][x / kCell], total) / 100.0;
      pgm += static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * (1.0 - share))));
    }
  }
  try {
    io::write_file_atomic((fs::path(out_dir) / "confusion.csv").string(), csv);
    io::write_file_atomic((fs::path(out_dir) / "confusion.pgm").string(), pgm);
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw Error(ErrorCode::kIoFault, e.what());
  }
}

void write_report(const Metrics& m, const std::string& out_dir) {
  render_confusion(m, out_dir);
  nlohmann::json j = {{"system", m.system},       {"n_classes", m.n_classes},  {"confusion", m.confusion},
                      {"n_all", m.n_all},         {"n_short", m.n_short},      {"n_long", m.n_long},
                      {"correct_all", m.correct_all}, {"correct_short", m.correct_short},
                      {"correct_long", m.correct_long}, {"acc_all", m.acc_all}, {"acc_short", m.acc_short},
                      {"acc_long", m.acc_long}};
  io::write_file_atomic((fs::path(out_dir) / "metrics.json").string(), j.dump(2) + "\n");
}

Metrics read_report(const std::string& dir) {
  const std::string path = (fs::path(dir) / "metrics.json").string();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParseFault, path + ": " + e.what());
  }
  Metrics m;
  try {
    m.system = j.at("system").get<std::string>();
    m.n_classes = j.at("n_classes").get<int>();
    m.confusion = j.at("confusion").get<std::vector<std::vector<Index>>>();
    m.n_all = j.at("n_all").get<Index>();
    m.n_short = j.at("n_short").get<Index>();
    m.n_long = j.at("n_long").get<Index>();
    m.correct_all = j.at("correct_all").get<Index>();
    m.correct_short = j.at("correct_short").get<Index>();
    m.correct_long = j.at("correct_long").get<Index>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParseFault, path + ": " + e.what());
  }
  m.acc_all = percent(m.correct_all, m.n_all);
  m.acc_short = percent(m.correct_short, m.n_short);
  m.acc_long = percent(m.correct_long, m.n_long);
  return m;
}

Comparison compare_systems(const std::vector<Metrics>& metrics) {
  if (metrics.size() < 2) throw std::invalid_argument("compare_systems needs at least two systems");
  auto column = [&](int k, const Metrics& m) { return k == 0 ? m.acc_all : k == 1 ? m.acc_short : m.acc_long; };
  double best[3];
  for (int k = 0; k < 3; ++k) {
    best[k] = column(k, metrics.front());
    for (const auto& m : metrics) best[k] = std::max(best[k], column(k, m));
  }
  std::size_t name_width = 6;
  for (const auto& m : metrics) name_width = std::max(name_width, m.system.size());

  Comparison out;
  out.csv = "system,all,all_best,short,short_best,long,long_best\n";
  auto pad = [](std::string s, std::size_t w) { return s.size() < w ? s + std::string(w - s.size(), ' ') : s; };
  auto lpad = [](std::string s, std::size_t w) { return s.size() < w ? std::string(w - s.size(), ' ') + s : s; };
  out.text = pad("System", name_width) + "  " + lpad("All", 8) + "  " + lpad("<=3s", 8) + "  " + lpad(">3s", 8) + "\n";
  for (const auto& m : metrics) {
    out.text += pad(m.system, name_width);
    out.csv += m.system;
    for (int k = 0; k < 3; ++k) {
      const double v = column(k, m);
      const bool flagged = v == best[k];
      out.text += "  " + lpad(fixed2(v) + (flagged ? "*" : " "), 8);
      out.csv += "," + fixed2(v) + "," + (flagged ? "1" : "0");
    }
    out.text += "\n";
    out.csv += "\n";
  }
  out.text += "* best in column\n";
  return out;
}

}  // namespace lid::eval
