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

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "lid/pipeline/pipeline.hpp"
#include "lid/util/binary_io.hpp"
#include "lid/util/config_file.hpp"

namespace lid::pipeline {
namespace fs = std::filesystem;

namespace {

TrainLog open_log(const RunConfig& rc) {
  if (rc.out_dir.empty()) return {};
  fs::create_directories(rc.out_dir);
  return TrainLog((fs::path(rc.out_dir) / "train_log.jsonl").string());
}

void finish(const RunConfig& rc, SystemRun& run) {
  if (rc.out_dir.empty()) return;
  for (const auto& c : run.checkpoints) save_checkpoint((fs::path(rc.out_dir) / (c.stage + ".ckpt")).string(), c);
  nlohmann::json conv = nlohmann::json::array();
  for (const auto& e : run.convergence) conv.push_back({{"stage", e.stage}, {"epochs", e.epochs}});
  io::write_file_atomic((fs::path(rc.out_dir) / "convergence.json").string(),
                        nlohmann::json{{"system", run.system}, {"stages", conv}}.dump(2) + "\n");
  write_system_manifest(rc.out_dir, run);
}

}  // namespace

SystemRun run_baseline(const Dataset& train, const RunConfig& rc) {
  TrainLog log = open_log(rc);
  std::vector<ad::Tensor> inputs;
  inputs.reserve(train.size());
  for (const auto& u : train) inputs.push_back(u.features);
  const Index n_mels = train.empty() ? 40 : train.front().features.dim(1);
  auto stage = train_classifier(inputs, train, models::make_baseline(rc.model, static_cast<int>(n_mels), rc.baseline.seed),
                                rc.model, rc.vocab_hash, rc.baseline, log);
  SystemRun run{"baseline", {std::move(stage.checkpoint)}, {{rc.baseline.stage, stage.epochs_to_converge}}, "", ""};
  finish(rc, run);
  return run;
}

SystemRun run_two_stage(const Dataset& train, const RunConfig& rc) {
  TrainLog log = open_log(rc);
  auto am = train_am_ctc(train, rc.model, rc.vocab_hash, rc.am, log);
  SystemRun run;
  run.system = "two-stage";
  run.frozen_before = serialize_checkpoint(am.checkpoint);
  auto lid = train_lid_on_intermediate(train, am.checkpoint, rc.vocab_hash, rc.lid, log);
  run.frozen_after = serialize_checkpoint(am.checkpoint);
  run.convergence = {{rc.am.stage, am.epochs_to_converge}, {rc.lid.stage, lid.epochs_to_converge}};
  run.checkpoints = {std::move(am.checkpoint), std::move(lid.checkpoint)};
  finish(rc, run);
  return run;
}

SystemRun run_three_stage(const Dataset& train, const RunConfig& rc, const Checkpoint* am_checkpoint) {
  TrainLog log = open_log(rc);
  Checkpoint am;
  int am_epochs = 0;
  if (am_checkpoint) {
    require_compatible(*am_checkpoint, rc.vocab_hash, "am");
    am = *am_checkpoint;
    am_epochs = epochs_to_converge(am.history, "am", rc.am.converge_tolerance);
    log.note(rc.am.stage, "reusing a trained acoustic model");
  } else {
    auto stage = train_am_ctc(train, rc.model, rc.vocab_hash, rc.am, log);
    am = std::move(stage.checkpoint);
    am_epochs = stage.epochs_to_converge;
  }
  const AlignmentTable alignments = align_corpus(train, am_from_checkpoint(am));
  if (!rc.out_dir.empty()) {
    std::ofstream os(fs::path(rc.out_dir) / "alignments.tsv");
    ctc::write_alignments(os, alignments.records);
  }
  auto cnn = train_frame_ce_cnn(train, alignments, rc.model, rc.vocab_hash, rc.cnn, log);

  SystemRun run;
  run.system = "three-stage";
  run.frozen_before = serialize_checkpoint(cnn.checkpoint);
  const models::FrameCnn frozen = cnn_from_checkpoint(cnn.checkpoint);
  const auto inputs = cnn_features(train, frozen);
  auto lid = train_classifier(inputs, train, models::make_lid_head(rc.model, rc.lid.seed), rc.model, rc.vocab_hash,
                              rc.lid, log);
  run.frozen_after = serialize_checkpoint(cnn.checkpoint);
  run.convergence = {{rc.am.stage, am_epochs}, {rc.cnn.stage, cnn.epochs_to_converge},
                     {rc.lid.stage, lid.epochs_to_converge}};
  run.checkpoints = {std::move(am), std::move(cnn.checkpoint), std::move(lid.checkpoint)};
  finish(rc, run);
  return run;
}

void write_system_manifest(const std::string& dir, const SystemRun& run) {
  std::string text = "system=" + run.system + "\n";
  for (const auto& c : run.checkpoints) text += c.stage + "=" + c.stage + ".ckpt\n";
  fs::create_directories(dir);
  io::write_file_atomic((fs::path(dir) / "system.txt").string(), text);
}

RunConfig load_run_config(const std::string& path, RunConfig base) {
  const auto items = config::load(path);
  if (const auto it = items.find("seed"); it != items.end()) {
    for (TrainConfig* tc : {&base.am, &base.lid, &base.cnn, &base.baseline}) tc->set("seed", it->second);
  }
  for (const auto& [key, value] : items) {
    if (key == "seed") continue;
    const auto dot = key.find('.');
    const std::string section = dot == std::string::npos ? "" : key.substr(0, dot);
    const std::string name = dot == std::string::npos ? key : key.substr(dot + 1);
    if (section == "model") base.model.set(name, value);
    else if (section == "am") base.am.set(name, value);
    else if (section == "lid") base.lid.set(name, value);
    else if (section == "cnn") base.cnn.set(name, value);
    else if (section == "baseline") base.baseline.set(name, value);
    else throw Error(ErrorCode::kConfigFault, path + ": unknown key " + key);
  }
  return base;
}

}  // namespace lid::pipeline
