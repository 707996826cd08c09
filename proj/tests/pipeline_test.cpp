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
#include <random>

#include <gtest/gtest.h>

#include "lid/pipeline/pipeline.hpp"
#include "lid/util/binary_io.hpp"

namespace lid::pipeline {
namespace {

namespace fs = std::filesystem;

std::string scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("lid_pipeline_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

nn::ParamStore scalar_store(Scalar value) {
  nn::ParamStore store;
  store.add("w", ad::tensor_new({1}, {value}, true));
  return store;
}

// A tiny synthetic corpus shared by the system-level tests.
struct TinyCorpus {
  Dataset train;
  Dataset test;
  std::uint64_t vocab_hash = 0;
  models::ModelConfig model;
};

const TinyCorpus& tiny_corpus() {
  static const TinyCorpus corpus = [] {
    corpus::SynthSpec spec;
    spec.n_dialects = 2;
    spec.vocab_size = 4;
    spec.train_per_dialect = 4;
    spec.test_per_dialect = 2;
    spec.min_duration = 1.0;
    spec.max_duration = 1.6;
    spec.seed = 5;
    auto [train, test] = corpus::synth_corpus(spec, scratch("tiny_corpus"));
    TinyCorpus c;
    c.train = load_dataset(train);
    c.test = load_dataset(test);
    c.vocab_hash = models::synthetic_vocab(spec.vocab_size).hash();
    c.model = models::ModelConfig::micro(spec.vocab_size, spec.n_dialects);
    return c;
  }();
  return corpus;
}

RunConfig tiny_run(int epochs) {
  RunConfig rc;
  rc.model = tiny_corpus().model;
  rc.vocab_hash = tiny_corpus().vocab_hash;
  for (TrainConfig* tc : {&rc.am, &rc.lid, &rc.cnn, &rc.baseline}) {
    tc->max_epochs = epochs;
    tc->batch_size = 4;
    tc->validation_fraction = 0.25;
  }
  return rc;
}

TEST(Adam, FirstStepMovesByLearningRate) {
  nn::ParamStore store = scalar_store(1.0);
  AdamState state;
  adam_step(store, {{"w", Vector::Constant(1, 0.5)}}, state, 0.1, 0);
  // Bias correction makes the first step lr * sign(g), up to epsilon.
  EXPECT_NEAR(store.at("w").values()[0], 0.9, 1e-7);
  EXPECT_EQ(state.step, 1);
}

TEST(Adam, MatchesScalarReference) {
  nn::ParamStore store = scalar_store(0.3);
  AdamState state;
  const std::vector<Scalar> grads = {0.2, -0.7, 1.5, 0.01, -0.3};
  Scalar w = 0.3, m = 0, v = 0;
  const Scalar lr = 0.05, wd = 0.01;
  for (std::size_t t = 1; t <= grads.size(); ++t) {
    const Scalar g = grads[t - 1];
    adam_step(store, {{"w", Vector::Constant(1, g)}}, state, lr, wd);
    w *= 1 - lr * wd;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const Scalar mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
    w -= lr * mh / (std::sqrt(vh) + 1e-8);
    EXPECT_NEAR(store.at("w").values()[0], w, 1e-14);
  }
}

TEST(Adam, DecoupledWeightDecayWithZeroGradient) {
  nn::ParamStore store = scalar_store(1.0);
  AdamState state;
  adam_step(store, {{"w", Vector::Zero(1)}}, state, 0.1, 0.1);
  EXPECT_DOUBLE_EQ(store.at("w").values()[0], 0.99);
}

TEST(Adam, MissingGradientCountsAsZero) {
  nn::ParamStore a = scalar_store(1.0), b = scalar_store(1.0);
  AdamState sa, sb;
  adam_step(a, {{"w", Vector::Constant(1, 1.0)}}, sa, 0.1, 0);
  adam_step(b, {{"w", Vector::Constant(1, 1.0)}}, sb, 0.1, 0);
  adam_step(a, {}, sa, 0.1, 0);
  adam_step(b, {{"w", Vector::Zero(1)}}, sb, 0.1, 0);
  EXPECT_EQ(a.at("w").values()[0], b.at("w").values()[0]);
}

TEST(Adam, NonFiniteGradientLeavesParametersUntouched) {
  nn::ParamStore store = scalar_store(1.0);
  store.add("u", ad::tensor_new({2}, {1.0, 2.0}, true));
  AdamState state;
  Vector bad(2);
  bad << 0.1, std::numeric_limits<Scalar>::quiet_NaN();
  try {
    adam_step(store, {{"w", Vector::Constant(1, 0.5)}, {"u", bad}}, state, 0.1, 0.1);
    FAIL() << "expected NumericalFault";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNumericalFault);
  }
  EXPECT_EQ(store.at("w").values()[0], 1.0);
  EXPECT_EQ(store.at("u").values()[1], 2.0);
  EXPECT_EQ(state.step, 0);
}

TEST(Losses, ClassNllPicksLabel) {
  ad::Tape tape;
  const ad::Tensor lp = ad::tensor_new({3}, {std::log(0.2), std::log(0.5), std::log(0.3)});
  EXPECT_NEAR(class_nll(tape, lp, 1).item(), -std::log(0.5), 1e-15);
  EXPECT_THROW(class_nll(tape, lp, 3), Error);
}

TEST(Losses, ClassNllGradient) {
  const ad::Tensor logits = ad::tensor_new({4}, {0.3, -1.2, 0.8, 0.1}, true);
  const Scalar err = ad::finite_diff_check(
      [&](ad::Tape& t) { return class_nll(t, ad::log_softmax(t, logits), 2); }, std::span(&logits, 1), {});
  EXPECT_LT(err, 1e-6);
}

TEST(Losses, FrameCrossEntropyProperties) {
  ad::Tape tape;
  const Scalar u = std::log(0.25);
  const ad::Tensor uniform = ad::full({5, 4}, u);
  const std::vector<int> classes = {0, 1, 2, 3, 0};
  EXPECT_NEAR(frame_cross_entropy(tape, uniform, classes).item(), std::log(4.0), 1e-14);

  RowMatrix sharp = RowMatrix::Constant(5, 4, -50);
  for (Index t = 0; t < 5; ++t) sharp(t, classes[static_cast<std::size_t>(t)]) = 0;
  EXPECT_NEAR(frame_cross_entropy(tape, ad::from_matrix(sharp), classes).item(), 0, 1e-14);

  const std::vector<int> short_classes = {0, 1, 2, 3};
  EXPECT_THROW(frame_cross_entropy(tape, uniform, short_classes), Error);
}

TEST(Losses, FrameCrossEntropyGradient) {
  nn::Rng rng(3);
  std::normal_distribution<Scalar> n(0, 1);
  Vector v(6 * 3);
  for (Index i = 0; i < v.size(); ++i) v[i] = n(rng);
  const ad::Tensor logits = ad::tensor_new({6, 3}, std::move(v), true);
  const std::vector<int> classes = {0, 0, 1, 2, 2, 1};
  const Scalar err = ad::finite_diff_check(
      [&](ad::Tape& t) { return frame_cross_entropy(t, ad::log_softmax(t, logits), classes); }, std::span(&logits, 1),
      {});
  EXPECT_LT(err, 1e-6);
}

TEST(EditDistance, Examples) {
  const std::vector<int> kitten = {1, 2, 3, 3, 4, 5}, sitting = {6, 2, 3, 3, 2, 5, 7}, none;
  EXPECT_EQ(edit_distance(kitten, sitting), 3);
  EXPECT_EQ(edit_distance(sitting, kitten), 3);
  EXPECT_EQ(edit_distance(kitten, kitten), 0);
  EXPECT_EQ(edit_distance(none, kitten), 6);
}

TEST(Checkpoint, RoundTripIsBitIdentical) {
  const models::ModelConfig config = models::ModelConfig::micro(12, 4);
  Checkpoint ckpt;
  ckpt.stage = "am";
  ckpt.config = config;
  ckpt.epoch = 7;
  ckpt.history = {{1, 2.5, 2.25, 0.5}, {2, 1.0 / 3, 0.1, 0.125}};
  ckpt.vocab_hash = 0xdeadbeefcafeULL;
  ckpt.params = models::make_am(config, 9).params;

  const std::string bytes = serialize_checkpoint(ckpt);
  const Checkpoint back = deserialize_checkpoint(bytes);
  EXPECT_EQ(serialize_checkpoint(back), bytes);
  EXPECT_EQ(back.config, config);
  EXPECT_EQ(back.epoch, 7);
  EXPECT_EQ(back.history[1].train_loss, 1.0 / 3);
  EXPECT_EQ(back.vocab_hash, ckpt.vocab_hash);

  const models::AmModel a = am_from_checkpoint(ckpt), b = am_from_checkpoint(back);
  nn::Rng rng(2);
  std::normal_distribution<Scalar> n(0, 1);
  Vector x(60 * 40);
  for (Index i = 0; i < x.size(); ++i) x[i] = n(rng);
  const ad::Tensor feats = ad::tensor_new({60, 40}, std::move(x));
  ad::Tape t1(ad::Tape::Mode::kInference), t2(ad::Tape::Mode::kInference);
  nn::ForwardContext c1{t1}, c2{t2};
  EXPECT_EQ(models::am_forward(feats, a, c1).lattice.values(), models::am_forward(feats, b, c2).lattice.values());

  const std::string path = scratch("ckpt") + "/am.ckpt";
  save_checkpoint(path, ckpt);
  EXPECT_EQ(serialize_checkpoint(load_checkpoint(path)), bytes);
}

TEST(Checkpoint, CorruptionAndIncompatibility) {
  Checkpoint ckpt;
  ckpt.stage = "lid";
  ckpt.config = models::ModelConfig::micro(12, 4);
  ckpt.vocab_hash = 42;
  ckpt.params = models::make_lid_head(ckpt.config, 1).params;
  const std::string bytes = serialize_checkpoint(ckpt);

  EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, bytes.size() - 3)), Error);
  std::string wrong_magic = bytes;
  wrong_magic[0] = 'X';
  try {
    deserialize_checkpoint(wrong_magic);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kIncompatibleCheckpoint);
  }

  auto code_of = [](auto&& f) {
    try {
      f();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::kDataFault;
  };
  EXPECT_EQ(code_of([&] { require_compatible(ckpt, 43, "lid"); }), ErrorCode::kIncompatibleCheckpoint);
  EXPECT_EQ(code_of([&] { require_compatible(ckpt, 42, "am"); }), ErrorCode::kIncompatibleCheckpoint);
  EXPECT_NO_THROW(require_compatible(ckpt, 42, "lid"));
  EXPECT_EQ(code_of([&] { am_from_checkpoint(ckpt); }), ErrorCode::kIncompatibleCheckpoint);
  EXPECT_NO_THROW(classifier_from_checkpoint(ckpt));
}

TEST(TrainConfig, SetAndReject) {
  TrainConfig tc = TrainConfig::lid_stage();
  EXPECT_EQ(tc.learning_rate, 3e-4);
  tc.set("max_epochs", "12");
  tc.set("learning_rate", "0.002");
  EXPECT_EQ(tc.max_epochs, 12);
  EXPECT_EQ(tc.learning_rate, 0.002);
  EXPECT_THROW(tc.set("momentum", "0.9"), Error);
  EXPECT_THROW(tc.set("batch_size", "0"), Error);
  EXPECT_THROW(tc.set("validation_fraction", "1.5"), Error);
}

TEST(RunConfig, LoadsSections) {
  const std::string path = scratch("runcfg") + "/run.toml";
  std::ofstream(path) << "seed = 9\n[model]\nam.hidden = 16\n[am]\nmax_epochs = 4\n[lid]\nlearning_rate = 0.01\n";
  const RunConfig rc = load_run_config(path);
  EXPECT_EQ(rc.model.am_hidden, 16);
  EXPECT_EQ(rc.am.max_epochs, 4);
  EXPECT_EQ(rc.lid.learning_rate, 0.01);
  EXPECT_EQ(rc.baseline.seed, 9u);
  std::ofstream(path) << "[optimizer]\nbeta = 1\n";
  EXPECT_THROW(load_run_config(path), Error);
}

TEST(Convergence, FirstEpochWithinToleranceOfBest) {
  const std::vector<EpochRecord> acc = {{1, 0, 0, 0.5}, {2, 0, 0, 0.93}, {3, 0, 0, 0.97}, {4, 0, 0, 0.96}};
  EXPECT_EQ(epochs_to_converge(acc, "lid", 0.05), 2);
  EXPECT_EQ(epochs_to_converge(acc, "lid", 0.0), 3);
  const std::vector<EpochRecord> per = {{1, 0, 0, 1.0}, {2, 0, 0, 0.3}, {3, 0, 0, 0.04}, {4, 0, 0, 0.02}};
  EXPECT_EQ(epochs_to_converge(per, "am", 0.05), 3);
  EXPECT_EQ(epochs_to_converge({}, "am", 0.05), 0);
}

TEST(TrainClassifier, FitsSeparableInputsDeterministically) {
  // Dialect d is encoded as a constant offset on feature d.
  Dataset data;
  std::vector<ad::Tensor> inputs;
  nn::Rng rng(4);
  std::normal_distribution<Scalar> n(0, 0.3);
  for (int i = 0; i < 12; ++i) {
    const int d = i % 3;
    RowMatrix x(10, 6);
    for (Index r = 0; r < x.rows(); ++r)
      for (Index c = 0; c < x.cols(); ++c) x(r, c) = n(rng) + (c == d ? 2.0 : 0.0);
    data.push_back({"u" + std::to_string(i), ad::from_matrix(x), d, {1}, 1.0});
    inputs.push_back(data.back().features);
  }
  models::ModelConfig config = models::ModelConfig::micro(4, 3);
  config.head.dropout = 0;
  models::SequenceClassifier head = models::make_baseline(config, 6, 2);
  TrainConfig tc = TrainConfig::lid_stage("baseline");
  tc.learning_rate = 0.02;
  tc.batch_size = 4;
  tc.max_epochs = 20;
  tc.patience = 20;
  tc.validation_fraction = 0;
  TrainLog log;
  const StageResult a = train_classifier(inputs, data, head, config, 1, tc, log);
  EXPECT_EQ(a.checkpoint.history.back().val_metric, 1.0);
  EXPECT_LT(a.checkpoint.history.back().val_loss, a.checkpoint.history.front().val_loss);
  const StageResult b = train_classifier(inputs, data, models::make_baseline(config, 6, 2), config, 1, tc, log);
  EXPECT_EQ(serialize_checkpoint(a.checkpoint), serialize_checkpoint(b.checkpoint));
}

TEST(TrainClassifier, RejectsOutOfRangeDialect) {
  Dataset data = {{"u", ad::zeros({4, 6}), 5, {1}, 1.0}};
  const models::ModelConfig config = models::ModelConfig::micro(4, 3);
  TrainLog log;
  EXPECT_THROW(train_classifier({data[0].features}, data, models::make_baseline(config, 6, 1), config, 1,
                                TrainConfig::lid_stage(), log),
               Error);
}

TEST(Alignment, CollapsesToReferenceAndIsDeterministic) {
  const auto& c = tiny_corpus();
  const models::AmModel am = models::make_am(c.model, 3);
  Dataset data = c.train;
  // Too many labels for the frames available: skipped, not aligned.
  data.push_back(data.front());
  data.back().utt_id = "infeasible";
  data.back().labels.assign(500, 1);
  for (std::size_t i = 0; i < data.back().labels.size(); i += 2) data.back().labels[i] = 2;

  const AlignmentTable a = align_corpus(data, am), b = align_corpus(data, am);
  EXPECT_EQ(a.skipped, 1);
  ASSERT_EQ(a.records.size(), c.train.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    EXPECT_EQ(a.records[i].utt_id, c.train[i].utt_id);
    EXPECT_EQ(a.records[i].classes, b.records[i].classes);
    EXPECT_EQ(ctc::collapse(a.records[i].classes), c.train[i].labels);
    EXPECT_EQ(static_cast<Index>(a.records[i].classes.size()), nn::trunk_frames(c.train[i].features.dim(0)));
  }
}

TEST(FrameCnnStage, RejectsBadAlignments) {
  const auto& c = tiny_corpus();
  TrainConfig tc = TrainConfig::am_stage("cnn");
  tc.max_epochs = 1;
  TrainLog log;
  AlignmentTable table = align_corpus(c.train, models::make_am(c.model, 3));
  AlignmentTable missing = table;
  missing.records.pop_back();
  EXPECT_THROW(train_frame_ce_cnn(c.train, missing, c.model, c.vocab_hash, tc, log), Error);
  AlignmentTable wrong_length = table;
  wrong_length.records.front().classes.push_back(0);
  try {
    train_frame_ce_cnn(c.train, wrong_length, c.model, c.vocab_hash, tc, log);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDataFault);
  }
}

TEST(Systems, StageCountsAndFreezeContract) {
  const auto& c = tiny_corpus();
  RunConfig rc = tiny_run(2);
  rc.out_dir = scratch("systems_two");
  const SystemRun base = run_baseline(c.train, tiny_run(2));
  const SystemRun two = run_two_stage(c.train, rc);
  const SystemRun three = run_three_stage(c.train, tiny_run(2), &two.checkpoints[0]);
  EXPECT_EQ(base.convergence.size(), 1u);
  EXPECT_EQ(two.convergence.size(), 2u);
  EXPECT_EQ(three.convergence.size(), 3u);
  EXPECT_EQ(two.checkpoints.size(), 2u);
  EXPECT_EQ(three.checkpoints.size(), 3u);

  EXPECT_FALSE(two.frozen_before.empty());
  EXPECT_EQ(two.frozen_before, two.frozen_after);
  EXPECT_EQ(three.frozen_before, three.frozen_after);
  EXPECT_EQ(io::read_file(rc.out_dir + "/am.ckpt"), two.frozen_before);
  EXPECT_EQ(serialize_checkpoint(three.checkpoints[0]), serialize_checkpoint(two.checkpoints[0]));

  for (const char* f : {"system.txt", "am.ckpt", "lid.ckpt", "convergence.json", "train_log.jsonl"})
    EXPECT_TRUE(fs::exists(fs::path(rc.out_dir) / f)) << f;
  std::ifstream manifest(fs::path(rc.out_dir) / "system.txt");
  std::string first;
  std::getline(manifest, first);
  EXPECT_EQ(first, "system=two-stage");
}

TEST(Systems, RejectsForeignAcousticModel) {
  const auto& c = tiny_corpus();
  const SystemRun two = run_two_stage(c.train, tiny_run(1));
  RunConfig other = tiny_run(1);
  other.vocab_hash ^= 1;
  EXPECT_THROW(run_three_stage(c.train, other, &two.checkpoints[0]), Error);
}

}  // namespace
}  // namespace lid::pipeline
