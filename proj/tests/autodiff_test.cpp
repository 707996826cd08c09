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
#include <random>

#include <gtest/gtest.h>

#include "lid/autodiff/ops.hpp"

namespace lid::ad {
namespace {

Vector random_vector(Index n, std::mt19937_64& rng, Scalar lo = -1, Scalar hi = 1) {
  std::uniform_real_distribution<Scalar> u(lo, hi);
  Vector v(n);
  for (Index i = 0; i < n; ++i) v[i] = u(rng);
  return v;
}

// Values at least `margin` away from zero so relu/maxpool kinks are never straddled.
Vector away_from_zero(Index n, std::mt19937_64& rng, Scalar margin) {
  Vector v = random_vector(n, rng);
  for (Index i = 0; i < n; ++i) v[i] = v[i] < 0 ? v[i] - margin : v[i] + margin;
  return v;
}

// Contracting with fixed random weights makes every output coordinate matter.
Tensor weighted_sum(Tape& tape, const Tensor& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const Tensor w = tensor_new(y.shape(), random_vector(y.numel(), rng), false);
  return sum(tape, mul(tape, y, w));
}

TEST(TensorNew, IdentityMatrix) {
  const Tensor t = tensor_new({2, 2}, {1, 0, 0, 1});
  EXPECT_EQ(t.shape(), (Shape{2, 2}));
  EXPECT_TRUE(t.matrix().isIdentity());
  EXPECT_FALSE(t.requires_grad());
}

TEST(TensorNew, ZeroVectorHasZeroGradient) {
  const Tensor t = tensor_new({3}, {0, 0, 0}, true);
  EXPECT_TRUE(t.values().isZero());
  GradientMap none;
  EXPECT_TRUE(none.get(t).isZero());
  EXPECT_EQ(none.get(t).size(), 3);
}

TEST(TensorNew, ShapeMismatchThrows) {
  try {
    tensor_new({2}, {1, 2, 3});
    FAIL() << "expected InvalidShape";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidShape);
  }
}

TEST(Apply, MatmulShapeRule) {
  Tape tape;
  const Tensor a = zeros({2, 3});
  const Tensor b = zeros({3, 2});
  EXPECT_EQ(matmul(tape, a, b).shape(), (Shape{2, 2}));
  EXPECT_THROW(matmul(tape, a, a), Error);
}

TEST(Apply, Relu) {
  Tape tape;
  const Tensor y = relu(tape, tensor_new({3}, {-1, 0, 2}));
  EXPECT_EQ(y.values(), (Vector(3) << 0, 0, 2).finished());
}

TEST(Apply, LogSoftmaxSymmetric) {
  Tape tape;
  const Tensor y = log_softmax(tape, tensor_new({2}, {0, 0}), 0);
  EXPECT_NEAR(y.values()[0], -std::log(2.0), 1e-12);
  EXPECT_NEAR(y.values()[1], -std::log(2.0), 1e-12);
}

TEST(Apply, UnknownAxis) {
  Tape tape;
  try {
    mean(tape, zeros({2, 2}), 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidAxis);
  }
}

TEST(Apply, ConstantInputsRecordNothing) {
  Tape tape;
  relu(tape, tensor_new({2}, {1, -1}));
  EXPECT_EQ(tape.size(), 0u);
  Tape inference(Tape::Mode::kInference);
  relu(inference, tensor_new({2}, {1, -1}, true));
  EXPECT_EQ(inference.size(), 0u);
}

TEST(Apply, MaxPoolTiesPickLowestIndex) {
  Tape tape;
  const Tensor x = tensor_new({1, 1, 2, 2}, {5, 5, 5, 5}, true);
  const Tensor y = maxpool2d(tape, x, {2, 2}, {2, 2}, {0, 0});
  const GradientMap g = tape.backward(sum(tape, y));
  EXPECT_EQ(g.get(x), (Vector(4) << 1, 0, 0, 0).finished());
}

TEST(Apply, ConvMatchesDirectSum) {
  std::mt19937_64 rng(3);
  const Tensor x = tensor_new({1, 2, 5, 4}, random_vector(40, rng));
  const Tensor w = tensor_new({3, 2, 3, 3}, random_vector(54, rng));
  const Tensor b = tensor_new({3}, random_vector(3, rng));
  Tape tape;
  const Tensor y = conv2d(tape, x, w, b, {2, 1}, {1, 1});
  ASSERT_EQ(y.shape(), (Shape{1, 3, 3, 4}));
  auto at = [&](Index c, Index h, Index ww) -> Scalar {
    if (h < 0 || h >= 5 || ww < 0 || ww >= 4) return 0;
    return x.values()[(c * 5 + h) * 4 + ww];
  };
  for (Index o = 0; o < 3; ++o)
    for (Index oh = 0; oh < 3; ++oh)
      for (Index ow = 0; ow < 4; ++ow) {
        Scalar acc = b.values()[o];
        for (Index c = 0; c < 2; ++c)
          for (Index i = 0; i < 3; ++i)
            for (Index j = 0; j < 3; ++j)
              acc += w.values()[((o * 2 + c) * 3 + i) * 3 + j] * at(c, oh * 2 - 1 + i, ow - 1 + j);
        EXPECT_NEAR(y.values()[(o * 3 + oh) * 4 + ow], acc, 1e-12);
      }
}

TEST(Apply, DropoutIsInverted) {
  Tape tape;
  const Tensor y = dropout(tape, tensor_new({4}, {1, 2, 3, 4}), (Vector(4) << 1, 0, 1, 0).finished(), 0.5);
  EXPECT_EQ(y.values(), (Vector(4) << 2, 0, 6, 0).finished());
}

TEST(Backward, SumOfSquares) {
  Tape tape;
  const Tensor x = tensor_new({2}, {1, 2}, true);
  const GradientMap g = tape.backward(sum(tape, mul(tape, x, x)));
  EXPECT_EQ(g.get(x), (Vector(2) << 2, 4).finished());
}

TEST(Backward, Mean) {
  Tape tape;
  const Tensor x = tensor_new({4}, {1, 2, 3, 4}, true);
  const GradientMap g = tape.backward(mean(tape, x));
  EXPECT_TRUE(g.get(x).isApprox(Vector::Constant(4, 0.25)));
}

TEST(Backward, NonScalarLoss) {
  Tape tape;
  const Tensor x = tensor_new({2}, {1, 2}, true);
  try {
    tape.backward(relu(tape, x));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNotScalar);
  }
}

TEST(Backward, NonParticipatingLeafGetsZeros) {
  Tape tape;
  const Tensor x = tensor_new({2}, {1, 2}, true);
  const Tensor unused = tensor_new({3}, {1, 2, 3}, true);
  const GradientMap g = tape.backward(sum(tape, x));
  EXPECT_FALSE(g.contains(unused));
  EXPECT_TRUE(g.get(unused).isZero());
}

TEST(Backward, InputsPrecedeNodes) {
  std::mt19937_64 rng(1);
  Tape tape;
  const Tensor x = tensor_new({3, 4}, random_vector(12, rng), true);
  const Tensor w = tensor_new({4, 2}, random_vector(8, rng), true);
  const Tensor h = tanh(tape, matmul(tape, x, w));
  sum(tape, log_softmax(tape, h, 1));
  for (std::size_t i = 0; i < tape.size(); ++i)
    for (int s : tape.node_inputs(i)) EXPECT_LT(s, tape.node_output(i));
}

TEST(Backward, AccumulationIsLinear) {
  std::mt19937_64 rng(11);
  const Tensor x = tensor_new({5}, random_vector(5, rng), true);
  auto loss_a = [&](Tape& t) { return sum(t, tanh(t, x)); };
  auto loss_b = [&](Tape& t) { return sum(t, mul(t, x, sigmoid(t, x))); };
  Tape ta, tb, tab;
  const Vector ga = ta.backward(loss_a(ta)).get(x);
  const Vector gb = tb.backward(loss_b(tb)).get(x);
  const Vector gab = tab.backward(add(tab, loss_a(tab), loss_b(tab))).get(x);
  EXPECT_TRUE(gab.isApprox(ga + gb, 1e-14));
}

TEST(Backward, ApplyNeverMutatesInputs) {
  std::mt19937_64 rng(5);
  const Tensor x = tensor_new({1, 2, 6, 6}, random_vector(72, rng), true);
  const Vector before = x.values();
  Tape tape;
  const Tensor y = channel_standardize(tape, maxpool2d(tape, relu(tape, x), {3, 3}, {2, 2}, {1, 1}));
  tape.backward(sum(tape, y));
  EXPECT_EQ(x.values(), before);
}

TEST(Backward, ReplayIsBitIdentical) {
  std::mt19937_64 rng(9);
  const Tensor x = tensor_new({1, 1, 8, 6}, random_vector(48, rng));
  const Tensor w = tensor_new({2, 1, 3, 3}, random_vector(18, rng), true);
  auto run = [&] {
    Tape tape;
    const Tensor y = conv2d(tape, x, w, Tensor{}, {1, 1}, {1, 1});
    const Tensor loss = sum(tape, log_softmax(tape, reshape(tape, y, {2, 48}), 1));
    return std::make_pair(loss.values(), tape.backward(loss).get(w));
  };
  const auto first = run();
  const auto second = run();
  EXPECT_EQ(first.first, second.first);
  EXPECT_EQ(first.second, second.second);
}

TEST(FiniteDiff, SumRelu) {
  std::mt19937_64 rng(21);
  const Tensor x = tensor_new({6}, away_from_zero(6, rng, 0.01));
  const Scalar err = finite_diff_check([](Tape& t, const Tensor& v) { return sum(t, relu(t, v)); }, x, 1e-6);
  EXPECT_LT(err, 1e-6);
}

TEST(FiniteDiff, SumLogSoftmax) {
  std::mt19937_64 rng(22);
  const Tensor x = tensor_new({5}, random_vector(5, rng));
  const Scalar err =
      finite_diff_check([](Tape& t, const Tensor& v) { return sum(t, log_softmax(t, v, 0)); }, x, 1e-6);
  EXPECT_LT(err, 1e-6);
}

TEST(FiniteDiff, LinearMapIsExact) {
  const Tensor x = tensor_new({1, 3}, {0.5, -0.25, 2});
  const Tensor a = tensor_new({3, 1}, {1, 2, -3});
  const Scalar err = finite_diff_check([&](Tape& t, const Tensor& v) { return sum(t, matmul(t, v, a)); }, x, 1e-3);
  EXPECT_LT(err, 1e-10);
}

// Every primitive kind, randomized inputs, 64-bit central differences.
class PrimitiveGradient : public ::testing::TestWithParam<int> {};

TEST_P(PrimitiveGradient, MatchesFiniteDifferences) {
  const int trial = GetParam();
  std::mt19937_64 rng(1000 + static_cast<std::uint64_t>(trial));
  const Scalar eps = 1e-6;
  const Scalar margin = 1e-3;
  auto check = [&](const char* name, const std::function<Tensor(Tape&)>& f, std::vector<Tensor> leaves) {
    GradCheckOptions opt;
    opt.eps = eps;
    const Scalar err = finite_diff_check(f, leaves, opt);
    EXPECT_LT(err, 1e-5) << name << " trial " << trial;
  };
  auto leaf = [&](Shape s) { return tensor_new(s, random_vector(numel(s), rng), true); };

  {
    const Tensor a = leaf({3, 4}), b = leaf({3, 4}), r = leaf({4});
    check("add", [&](Tape& t) { return weighted_sum(t, add(t, a, b, -0.7), 1); }, {a, b});
    check("add_row", [&](Tape& t) { return weighted_sum(t, add(t, a, r), 2); }, {a, r});
    check("mul", [&](Tape& t) { return weighted_sum(t, mul(t, a, b), 3); }, {a, b});
  }
  {
    const Tensor a = leaf({3, 5}), b = leaf({5, 2});
    check("matmul", [&](Tape& t) { return weighted_sum(t, matmul(t, a, b), 4); }, {a, b});
    check("transpose", [&](Tape& t) { return weighted_sum(t, transpose(t, a), 5); }, {a});
  }
  {
    const Tensor x = leaf({2, 2, 6, 5}), w = leaf({3, 2, 3, 3}), b = leaf({3});
    check("conv2d", [&](Tape& t) { return weighted_sum(t, conv2d(t, x, w, b, {2, 1}, {1, 1}), 6); }, {x, w, b});
  }
  {
    // Distinct, well separated values keep every window's maximum stable under eps.
    Vector v(1 * 2 * 6 * 5);
    for (Index i = 0; i < v.size(); ++i) v[i] = static_cast<Scalar>(i) * 0.01;
    std::shuffle(v.data(), v.data() + v.size(), rng);
    const Tensor x = tensor_new({1, 2, 6, 5}, v, true);
    check("maxpool2d", [&](Tape& t) { return weighted_sum(t, maxpool2d(t, x, {3, 3}, {2, 2}, {1, 1}), 7); }, {x});
  }
  {
    const Tensor x = tensor_new({4, 3}, away_from_zero(12, rng, margin), true);
    check("relu", [&](Tape& t) { return weighted_sum(t, relu(t, x), 8); }, {x});
    check("sigmoid", [&](Tape& t) { return weighted_sum(t, sigmoid(t, x), 9); }, {x});
    check("tanh", [&](Tape& t) { return weighted_sum(t, tanh(t, x), 10); }, {x});
    check("log_softmax0", [&](Tape& t) { return weighted_sum(t, log_softmax(t, x, 0), 11); }, {x});
    check("log_softmax1", [&](Tape& t) { return weighted_sum(t, log_softmax(t, x, 1), 12); }, {x});
    check("mean", [&](Tape& t) { return weighted_sum(t, mean(t, x, 0), 13); }, {x});
    check("sum", [&](Tape& t) { return weighted_sum(t, sum(t, x, 1), 14); }, {x});
    check("mean_all", [&](Tape& t) { return mean(t, mul(t, x, x)); }, {x});
    check("slice", [&](Tape& t) { return weighted_sum(t, slice(t, x, {{1, 3}, {0, 2}}), 15); }, {x});
    check("reshape", [&](Tape& t) { return weighted_sum(t, reshape(t, x, {2, 6}), 16); }, {x});
    Vector mask(12);
    for (Index i = 0; i < 12; ++i) mask[i] = (i % 3 == 0) ? 0 : 1;
    check("dropout", [&](Tape& t) { return weighted_sum(t, dropout(t, x, mask, 0.5), 17); }, {x});
    check("linearized", [&](Tape& t) {
      const Tensor y = tanh(t, x);
      return linearized(t, y, y.values().squaredNorm(), 2 * y.values());
    }, {x});
  }
  {
    const Tensor a = leaf({2, 3}), b = leaf({2, 2});
    check("concat", [&](Tape& t) {
      const Tensor parts[] = {a, b, a};
      return weighted_sum(t, concat(t, parts, 1), 18);
    }, {a, b});
  }
  {
    const Tensor x = leaf({2, 3, 4, 2}), s = leaf({3}), h = leaf({3});
    check("affine_channel", [&](Tape& t) { return weighted_sum(t, affine_channel(t, x, s, h), 19); }, {x, s, h});
    check("channel_standardize", [&](Tape& t) { return weighted_sum(t, channel_standardize(t, x), 20); }, {x});
  }
}

INSTANTIATE_TEST_SUITE_P(Randomized, PrimitiveGradient, ::testing::Range(0, 5));

}  // namespace
}  // namespace lid::ad
