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
#include <random>

#include <gtest/gtest.h>

#include "lid/nn/layers.hpp"

namespace lid::nn {
namespace {

ad::Tensor random_features(Index frames, Index width, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<Scalar> n(0, 1);
  Vector v(frames * width);
  for (Index i = 0; i < v.size(); ++i) v[i] = n(rng);
  return ad::tensor_new({frames, width}, std::move(v));
}

ParamStore trunk_store(const ResNetConfig& config, std::uint64_t seed) {
  ParamStore store;
  Rng rng(seed);
  add_resnet14(store, "am", config, rng);
  return store;
}

ShapeTrace trace_for(const ResNetConfig& config, Index frames, ad::Tensor* out = nullptr) {
  const ParamStore store = trunk_store(config, 1);
  ad::Tape tape(ad::Tape::Mode::kInference);
  ForwardContext ctx{tape};
  ShapeTrace trace;
  const ad::Tensor y = resnet14_forward(random_features(frames, 40, 2), store, "am", config, ctx, &trace);
  if (out) *out = y;
  return trace;
}

ShapeTrace expected_trace(const ResNetConfig& config, Index frames) {
  const Index t2 = (frames + 1) / 2, t4 = (t2 + 1) / 2;
  const auto& c = config.channels;
  return {{"conv1", {t2, c[0], 20}}, {"maxpool", {t4, c[0], 10}}, {"res1", {t4, c[0], 5}},
          {"res2", {t4, c[1], 3}},   {"res3", {t4, c[2], 2}},     {"res4", {t4, c[3], 1}}};
}

TEST(ResNet14, FullConfigTable) {
  for (Index frames : {100, 160, 400}) {
    ad::Tensor y;
    EXPECT_EQ(trace_for(ResNetConfig::full(), frames, &y), expected_trace(ResNetConfig::full(), frames));
    EXPECT_EQ(y.shape(), (ad::Shape{frames / 4, 512}));
  }
}

TEST(ResNet14, AfterMaxpoolAt400) {
  const ShapeTrace trace = trace_for(ResNetConfig::full(), 400);
  EXPECT_EQ(trace[1].second, (std::array<Index, 3>{100, 64, 10}));
}

TEST(ResNet14, MicroConfig) {
  for (Index frames : {100, 160, 400, 9, 13}) {
    ad::Tensor y;
    EXPECT_EQ(trace_for(ResNetConfig::micro(), frames, &y), expected_trace(ResNetConfig::micro(), frames));
    EXPECT_EQ(y.shape(), (ad::Shape{trunk_frames(frames), 64}));
  }
}

TEST(ResNet14, AcceptsNchwInput) {
  const ResNetConfig config = ResNetConfig::micro();
  const ParamStore store = trunk_store(config, 3);
  ad::Tape tape(ad::Tape::Mode::kInference);
  ForwardContext ctx{tape};
  const ad::Tensor x = random_features(20, 40, 4);
  const ad::Tensor a = resnet14_forward(x, store, "am", config, ctx);
  const ad::Tensor b = resnet14_forward(ad::tensor_new({1, 1, 20, 40}, x.values()), store, "am", config, ctx);
  EXPECT_EQ(a.values(), b.values());
}

TEST(ResNet14, TooShort) {
  const ResNetConfig config = ResNetConfig::micro();
  const ParamStore store = trunk_store(config, 3);
  ad::Tape tape(ad::Tape::Mode::kInference);
  ForwardContext ctx{tape};
  try {
    resnet14_forward(random_features(7, 40, 1), store, "am", config, ctx);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInputTooShort);
  }
  EXPECT_NO_THROW(resnet14_forward(random_features(8, 40, 1), store, "am", config, ctx));
}

TEST(ResNet14, EvalIsDeterministicAndPerUtterance) {
  const ResNetConfig config = ResNetConfig::micro();
  const ParamStore store = trunk_store(config, 5);
  const ad::Tensor x = random_features(30, 40, 6);
  ad::Tape t1(ad::Tape::Mode::kInference), t2(ad::Tape::Mode::kInference);
  ForwardContext c1{t1}, c2{t2};
  const Vector first = resnet14_forward(x, store, "am", config, c1).values();
  // Other utterances through the same store do not change the result.
  resnet14_forward(random_features(50, 40, 7), store, "am", config, c2);
  EXPECT_EQ(resnet14_forward(x, store, "am", config, c2).values(), first);
}

TEST(ResNet14, NoBatchNormUsesBiases) {
  ResNetConfig config = ResNetConfig::micro();
  config.batch_norm = false;
  const ParamStore store = trunk_store(config, 1);
  EXPECT_TRUE(store.contains("am.conv1.b"));
  EXPECT_FALSE(store.contains("am.conv1.bn.gamma"));
  for (const auto& e : store.entries()) EXPECT_TRUE(e.trainable) << e.name;
  ad::Tape tape(ad::Tape::Mode::kInference);
  ForwardContext ctx{tape};
  EXPECT_EQ(resnet14_forward(random_features(16, 40, 1), store, "am", config, ctx).shape(), (ad::Shape{4, 64}));
}

TEST(ResNet14, TrainModeRecordsMomentsAndUpdatesRunningStats) {
  const ResNetConfig config = ResNetConfig::micro();
  ParamStore store = trunk_store(config, 1);
  ad::Tape tape;
  BatchNormMoments moments;
  ForwardContext ctx{tape, true, nullptr, &moments};
  resnet14_forward(random_features(16, 40, 1), store, "am", config, ctx);
  std::size_t bn_layers = 0;
  for (const auto& e : store.entries()) bn_layers += e.name.ends_with(".running_mean");
  ASSERT_EQ(moments.size(), bn_layers);

  const Vector before = store.at(moments[0].first + ".running_mean").values();
  const BatchNormMoments batch[] = {moments, moments};
  update_batch_norm(store, batch);
  const Vector after = store.at(moments[0].first + ".running_mean").values();
  EXPECT_LT((after - (0.9 * before + 0.1 * moments[0].second.first)).cwiseAbs().maxCoeff(), 1e-12);
}

// Table-1 trunk without normalisation has about 5.27M weights.
TEST(ResNet14, FullParameterCount) {
  ResNetConfig config = ResNetConfig::full();
  config.batch_norm = false;
  const Index n = trunk_store(config, 1).parameter_count();
  EXPECT_LT(std::abs(static_cast<double>(n) - 5.36e6) / 5.36e6, 0.03) << n;
}

// ---------------------------------------------------------------------------

ParamStore rnn_store(const RnnConfig& config, std::uint64_t seed) {
  ParamStore store;
  Rng rng(seed);
  add_birnn(store, "rnn", config, rng);
  return store;
}

TEST(Birnn, ZeroInputsZeroParams) {
  for (RnnKind kind : {RnnKind::kLstm, RnnKind::kGru}) {
    const RnnConfig config{kind, 5, 4, 2};
    ParamStore store = rnn_store(config, 1);
    for (const auto& e : store.entries()) store.at(e.name).mutable_values().setZero();
    ad::Tape tape(ad::Tape::Mode::kInference);
    ForwardContext ctx{tape};
    const ad::Tensor y = birnn_forward(ad::zeros({6, 5}), store, "rnn", config, ctx, 0.5);
    EXPECT_EQ(y.shape(), (ad::Shape{6, 8}));
    EXPECT_TRUE(y.values().isZero());
  }
}

TEST(Birnn, SingleFrameMirroredDirections) {
  for (RnnKind kind : {RnnKind::kLstm, RnnKind::kGru}) {
    const RnnConfig config{kind, 3, 4, 1};
    ParamStore store = rnn_store(config, 2);
    for (const auto& e : store.entries()) {
      if (e.name.find(".bw.") == std::string::npos) continue;
      std::string fw = e.name;
      fw.replace(fw.find(".bw."), 4, ".fw.");
      store.at(e.name).mutable_values() = store.at(fw).values();
    }
    ad::Tape tape(ad::Tape::Mode::kInference);
    ForwardContext ctx{tape};
    const ad::Tensor y = birnn_forward(random_features(1, 3, 3), store, "rnn", config, ctx, 0);
    const auto m = y.matrix();
    EXPECT_EQ(m.leftCols(4), m.rightCols(4));
    EXPECT_FALSE(m.isZero());
  }
}

TEST(Birnn, OutputWidth) {
  const RnnConfig config{RnnKind::kLstm, 512, 256, 2};
  const ParamStore store = rnn_store(config, 1);
  ad::Tape tape(ad::Tape::Mode::kInference);
  ForwardContext ctx{tape};
  EXPECT_EQ(blstm_forward(random_features(3, 512, 1), store, "rnn", 256, 2, ctx, 0).shape(), (ad::Shape{3, 512}));
}

TEST(Birnn, WidthMismatch) {
  const RnnConfig config{RnnKind::kLstm, 5, 4, 1};
  const ParamStore store = rnn_store(config, 1);
  ad::Tape tape;
  ForwardContext ctx{tape};
  try {
    birnn_forward(random_features(3, 6, 1), store, "rnn", config, ctx, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidShape);
  }
}

// Independent reference LSTM written directly in Eigen.
RowMatrix reference_lstm(const RowMatrix& x, const ParamStore& store, const std::string& name, Index H, bool backward) {
  const auto w_ih = store.at(name + ".w_ih").matrix();
  const auto w_hh = store.at(name + ".w_hh").matrix();
  const Vector& b = store.at(name + ".b").values();
  auto sig = [](Scalar v) { return 1 / (1 + std::exp(-v)); };
  RowMatrix out(x.rows(), H);
  Vector h = Vector::Zero(H), c = Vector::Zero(H);
  for (Index step = 0; step < x.rows(); ++step) {
    const Index t = backward ? x.rows() - 1 - step : step;
    const Vector g = (x.row(t) * w_ih + h.transpose() * w_hh).transpose() + b;
    for (Index j = 0; j < H; ++j) {
      c[j] = sig(g[H + j]) * c[j] + sig(g[j]) * std::tanh(g[2 * H + j]);
      h[j] = sig(g[3 * H + j]) * std::tanh(c[j]);
    }
    out.row(t) = h.transpose();
  }
  return out;
}

TEST(Birnn, LstmMatchesReference) {
  const RnnConfig config{RnnKind::kLstm, 3, 5, 1};
  const ParamStore store = rnn_store(config, 9);
  const ad::Tensor x = random_features(7, 3, 10);
  ad::Tape tape(ad::Tape::Mode::kInference);
  ForwardContext ctx{tape};
  const ad::Tensor out = birnn_forward(x, store, "rnn", config, ctx, 0);
  const auto y = out.matrix();
  RowMatrix expected(7, 10);
  expected << reference_lstm(x.matrix(), store, "rnn.l0.fw", 5, false), reference_lstm(x.matrix(), store, "rnn.l0.bw", 5, true);
  EXPECT_LT((y - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Birnn, DropoutOnlyInTrainMode) {
  const RnnConfig config{RnnKind::kLstm, 3, 4, 2};
  const ParamStore store = rnn_store(config, 1);
  const ad::Tensor x = random_features(5, 3, 2);
  ad::Tape t1(ad::Tape::Mode::kInference), t2(ad::Tape::Mode::kInference), t3;
  Rng rng(4);
  ForwardContext eval{t1}, eval_rate{t2}, train{t3, true, &rng};
  const Vector base = birnn_forward(x, store, "rnn", config, eval, 0).values();
  EXPECT_EQ(birnn_forward(x, store, "rnn", config, eval_rate, 0.5).values(), base);
  EXPECT_NE(birnn_forward(x, store, "rnn", config, train, 0.5).values(), base);
}

// ---------------------------------------------------------------------------

TEST(TimePool, Examples) {
  ad::Tape tape;
  EXPECT_EQ(time_avg_pool(tape, ad::tensor_new({2, 2}, {1, 3, 3, 1})).values(), (Vector(2) << 2, 2).finished());
  const ad::Tensor one = ad::tensor_new({1, 3}, {4, -1, 2});
  EXPECT_EQ(time_avg_pool(tape, one).values(), one.values());
  EXPECT_THROW(time_avg_pool(tape, ad::tensor_new({3}, {1, 2, 3})), Error);
}

TEST(TimePool, PermutationInvariant) {
  const ad::Tensor x = random_features(9, 4, 3);
  RowMatrix shuffled = x.matrix();
  std::vector<Index> order(9);
  for (Index i = 0; i < 9; ++i) order[static_cast<std::size_t>(i)] = i;
  std::shuffle(order.begin(), order.end(), Rng(5));
  for (Index i = 0; i < 9; ++i) shuffled.row(i) = x.matrix().row(order[static_cast<std::size_t>(i)]);
  ad::Tape tape;
  EXPECT_LT((time_avg_pool(tape, x).values() - time_avg_pool(tape, ad::from_matrix(shuffled)).values()).cwiseAbs().maxCoeff(),
            1e-14);
}

// ---------------------------------------------------------------------------

TEST(Init, DeterministicPerSeed) {
  const ParamStore a = trunk_store(ResNetConfig::micro(), 11);
  const ParamStore b = trunk_store(ResNetConfig::micro(), 11);
  const ParamStore c = trunk_store(ResNetConfig::micro(), 12);
  ASSERT_EQ(a.size(), b.size());
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.entries()[i].name, b.entries()[i].name);
    EXPECT_EQ(a.entries()[i].tensor.values(), b.entries()[i].tensor.values());
    differs |= a.entries()[i].tensor.values() != c.entries()[i].tensor.values();
  }
  EXPECT_TRUE(differs);
}

TEST(Init, WithinHeBounds) {
  ResNetConfig config = ResNetConfig::micro();
  config.batch_norm = false;
  ParamStore store = trunk_store(config, 3);
  Rng rng(4);
  add_linear(store, "out", 20, 6, rng);
  for (const auto& e : store.entries()) {
    const Vector& v = e.tensor.values();
    EXPECT_TRUE(v.allFinite()) << e.name;
    if (e.name.ends_with(".b")) {
      EXPECT_TRUE(v.isZero()) << e.name;
      continue;
    }
    const auto& s = e.tensor.shape();
    const Index fan_in = s.size() == 4 ? s[1] * s[2] * s[3] : s[0];
    EXPECT_LE(v.cwiseAbs().maxCoeff(), std::sqrt(6.0 / static_cast<double>(fan_in))) << e.name;
  }
}

TEST(Init, LstmBiases) {
  const ParamStore store = rnn_store({RnnKind::kLstm, 3, 4, 2}, 1);
  const Vector& b = store.at("rnn.l1.bw.b").values();
  EXPECT_TRUE(b.segment(0, 4).isZero());
  EXPECT_TRUE(b.segment(4, 4).isOnes());
  EXPECT_TRUE(b.segment(8, 8).isZero());
}

TEST(ParamStoreTest, UniqueOrderedNames) {
  ParamStore store;
  store.add("b", ad::zeros({2}, true));
  store.add("a", ad::zeros({3}, true));
  store.add("buf", ad::zeros({3}), false);
  EXPECT_THROW(store.add("a", ad::zeros({1}, true)), std::invalid_argument);
  EXPECT_EQ(store.entries()[0].name, "b");
  EXPECT_EQ(store.entries()[1].name, "a");
  EXPECT_EQ(store.parameter_count(), 5);
  const ParamStore copy = store.clone();
  EXPECT_NE(copy.at("a").id(), store.at("a").id());
  EXPECT_FALSE(copy.at("buf").requires_grad());
}

// ---------------------------------------------------------------------------

TEST(EndToEnd, MicroTrunkAndBlstmGradient) {
  const ResNetConfig trunk = ResNetConfig::micro();
  const RnnConfig rnn{RnnKind::kLstm, 64, 6, 2};
  ParamStore store = trunk_store(trunk, 21);
  Rng rng(22);
  add_birnn(store, "rnn", rnn, rng);
  add_linear(store, "out", 12, 3, rng);
  const ad::Tensor x = random_features(16, 40, 23);
  auto loss = [&](ad::Tape& tape) {
    ForwardContext ctx{tape, true};
    const ad::Tensor h = birnn_forward(resnet14_forward(x, store, "am", trunk, ctx), store, "rnn", rnn, ctx, 0);
    const ad::Tensor logits = time_avg_pool(tape, linear(tape, h, store, "out"));
    return ad::slice(tape, ad::log_softmax(tape, logits, 0), {{1, 2}});
  };
  const std::vector<ad::Tensor> leaves = store.trainable();
  const Scalar err = ad::finite_diff_check(loss, leaves, {1e-6, 6, 24});
  EXPECT_LT(err, 1e-4);
}

}  // namespace
}  // namespace lid::nn
