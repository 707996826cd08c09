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

#include "lid/nn/layers.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

namespace lid::nn {

const ad::Tensor& ParamStore::add(const std::string& name, ad::Tensor tensor, bool trainable) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter " + name);
  if (tensor.requires_grad() != trainable) tensor = tensor.clone(trainable);
  index_.emplace(name, entries_.size());
  entries_.push_back({name, std::move(tensor), trainable});
  return entries_.back().tensor;
}

const ad::Tensor& ParamStore::at(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter " + name);
  return entries_[it->second].tensor;
}

ad::Tensor& ParamStore::at(const std::string& name) {
  const auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter " + name);
  return entries_[it->second].tensor;
}

std::vector<ad::Tensor> ParamStore::trainable(const std::string& prefix) const {
  std::vector<ad::Tensor> out;
  for (const auto& e : entries_)
    if (e.trainable && e.name.starts_with(prefix)) out.push_back(e.tensor);
  return out;
}

Index ParamStore::parameter_count(const std::string& prefix) const {
  Index n = 0;
  for (const auto& t : trainable(prefix)) n += t.numel();
  return n;
}

ParamStore ParamStore::clone() const {
  ParamStore out;
  for (const auto& e : entries_) out.add(e.name, e.tensor.clone(e.trainable), e.trainable);
  return out;
}

void ParamStore::merge(const ParamStore& other) {
  for (const auto& e : other.entries_) add(e.name, e.tensor, e.trainable);
}

void update_batch_norm(ParamStore& store, std::span<const BatchNormMoments> batch, Scalar momentum) {
  // Layers in first-seen order, moments averaged over the batch in index order.
  std::vector<std::string> order;
  std::map<std::string, std::pair<Vector, Vector>> sums;
  std::map<std::string, int> counts;
  for (const auto& moments : batch)
    for (const auto& [name, mv] : moments) {
      auto it = sums.find(name);
      if (it == sums.end()) {
        order.push_back(name);
        sums.emplace(name, mv);
      } else {
        it->second.first += mv.first;
        it->second.second += mv.second;
      }
      ++counts[name];
    }
  for (const auto& name : order) {
    const auto& [mean_sum, var_sum] = sums.at(name);
    const Scalar n = counts.at(name);
    Vector& rm = store.at(name + ".running_mean").mutable_values();
    Vector& rv = store.at(name + ".running_var").mutable_values();
    rm = (1 - momentum) * rm + momentum * (mean_sum / n);
    rv = (1 - momentum) * rv + momentum * (var_sum / n);
  }
}

ad::Tensor he_uniform(ad::Shape shape, Index fan_in, Rng& rng) {
  const Scalar bound = std::sqrt(Scalar(6) / static_cast<Scalar>(fan_in));
  std::uniform_real_distribution<Scalar> u(-bound, bound);
  Vector v(ad::numel(shape));
  for (Index i = 0; i < v.size(); ++i) v[i] = u(rng);
  return ad::tensor_new(std::move(shape), std::move(v), true);
}

void add_linear(ParamStore& store, const std::string& prefix, Index in, Index out, Rng& rng) {
  store.add(prefix + ".w", he_uniform({in, out}, in, rng));
  store.add(prefix + ".b", ad::zeros({out}, true));
}

ad::Tensor linear(ad::Tape& tape, const ad::Tensor& x, const ParamStore& store, const std::string& prefix) {
  return ad::add(tape, ad::matmul(tape, x, store.at(prefix + ".w")), store.at(prefix + ".b"));
}

// ---------------------------------------------------------------------------

namespace {

void add_conv(ParamStore& store, const std::string& name, Index out_c, Index in_c, Index k, bool bias, Rng& rng) {
  store.add(name + ".w", he_uniform({out_c, in_c, k, k}, in_c * k * k, rng));
  if (bias) store.add(name + ".b", ad::zeros({out_c}, true));
}

void add_bn(ParamStore& store, const std::string& name, Index channels) {
  store.add(name + ".gamma", ad::full({channels}, 1).clone(true));
  store.add(name + ".beta", ad::zeros({channels}, true));
  store.add(name + ".running_mean", ad::zeros({channels}), false);
  store.add(name + ".running_var", ad::full({channels}, 1), false);
}

struct Trunk {
  const ParamStore& store;
  const ResNetConfig& config;
  ForwardContext& ctx;

  // conv followed by batch norm, or conv with bias when batch norm is off.
  ad::Tensor conv_bn(const ad::Tensor& x, const std::string& name, std::array<Index, 2> stride, Index pad) const {
    ad::Tape& tape = ctx.tape;
    if (!config.batch_norm)
      return ad::conv2d(tape, x, store.at(name + ".w"), store.at(name + ".b"), stride, {pad, pad});
    const ad::Tensor y = ad::conv2d(tape, x, store.at(name + ".w"), ad::Tensor{}, stride, {pad, pad});
    const std::string bn = name + ".bn";
    const ad::Tensor& gamma = store.at(bn + ".gamma");
    const ad::Tensor& beta = store.at(bn + ".beta");
    if (ctx.train) {
      if (ctx.moments) ctx.moments->emplace_back(bn, ad::channel_moments(y));
      return ad::affine_channel(tape, ad::channel_standardize(tape, y, kBatchNormEpsilon), gamma, beta);
    }
    const Vector& rm = store.at(bn + ".running_mean").values();
    const Vector& rv = store.at(bn + ".running_var").values();
    Vector scale = gamma.values().array() * (rv.array() + kBatchNormEpsilon).rsqrt();
    Vector shift = beta.values() - rm.cwiseProduct(scale);
    const Index c = scale.size();
    return ad::affine_channel(tape, y, ad::tensor_new({c}, std::move(scale)), ad::tensor_new({c}, std::move(shift)));
  }

  ad::Tensor block(const ad::Tensor& x, const std::string& name, Index in_c, Index out_c, Index freq_stride) const {
    ad::Tape& tape = ctx.tape;
    ad::Tensor h = ad::relu(tape, conv_bn(x, name + ".conv1", {1, freq_stride}, 1));
    h = conv_bn(h, name + ".conv2", {1, 1}, 1);
    const bool project = in_c != out_c || freq_stride != 1;
    const ad::Tensor shortcut = project ? conv_bn(x, name + ".proj", {1, freq_stride}, 0) : x;
    return ad::relu(tape, ad::add(tape, h, shortcut));
  }
};

void trace_shape(ShapeTrace* trace, const std::string& name, const ad::Tensor& x) {
  if (trace) trace->push_back({name, {x.dim(2), x.dim(1), x.dim(3)}});
}

}  // namespace

Index trunk_frames(Index input_frames) { return (input_frames + 3) / 4; }

void add_resnet14(ParamStore& store, const std::string& prefix, const ResNetConfig& config, Rng& rng) {
  const bool bias = !config.batch_norm;
  auto conv = [&](const std::string& name, Index out_c, Index in_c, Index k) {
    add_conv(store, name, out_c, in_c, k, bias, rng);
    if (config.batch_norm) add_bn(store, name + ".bn", out_c);
  };
  conv(prefix + ".conv1", config.channels[0], 1, 7);
  Index in_c = config.channels[0];
  for (int s = 0; s < 4; ++s) {
    const Index out_c = config.channels[static_cast<std::size_t>(s)];
    for (int b = 0; b < config.blocks[static_cast<std::size_t>(s)]; ++b) {
      const std::string name = prefix + ".res" + std::to_string(s + 1) + "." + std::to_string(b);
      conv(name + ".conv1", out_c, in_c, 3);
      conv(name + ".conv2", out_c, out_c, 3);
      if (b == 0) conv(name + ".proj", out_c, in_c, 1);
      in_c = out_c;
    }
  }
}

ad::Tensor resnet14_forward(const ad::Tensor& features, const ParamStore& store, const std::string& prefix,
                            const ResNetConfig& config, ForwardContext& ctx, ShapeTrace* trace) {
  const bool nchw = features.rank() == 4 && features.dim(0) == 1 && features.dim(1) == 1;
  if (features.rank() != 2 && !nchw)
    throw Error(ErrorCode::kInvalidShape, "trunk expects [T x mels] or [1 x 1 x T x mels], got " + ad::to_string(features.shape()));
  const Index frames = features.dim(nchw ? 2 : 0), mels = features.dim(nchw ? 3 : 1);
  if (frames < 8) throw Error(ErrorCode::kInputTooShort, "trunk needs at least 8 frames, got " + std::to_string(frames));
  ad::Tape& tape = ctx.tape;
  const Trunk trunk{store, config, ctx};

  ad::Tensor x = ad::reshape(tape, features, {1, 1, frames, mels});
  x = ad::relu(tape, trunk.conv_bn(x, prefix + ".conv1", {2, 2}, 3));
  trace_shape(trace, "conv1", x);
  x = ad::maxpool2d(tape, x, {3, 3}, {2, 2}, {1, 1});
  trace_shape(trace, "maxpool", x);
  Index in_c = config.channels[0];
  for (int s = 0; s < 4; ++s) {
    const Index out_c = config.channels[static_cast<std::size_t>(s)];
    for (int b = 0; b < config.blocks[static_cast<std::size_t>(s)]; ++b) {
      const std::string name = prefix + ".res" + std::to_string(s + 1) + "." + std::to_string(b);
      x = trunk.block(x, name, in_c, out_c, b == 0 ? 2 : 1);
      in_c = out_c;
    }
    trace_shape(trace, "res" + std::to_string(s + 1), x);
  }
  if (x.dim(3) != 1)
    throw Error(ErrorCode::kInvalidShape, "trunk leaves " + std::to_string(x.dim(3)) + " frequency bins; expected 1");
  x = ad::reshape(tape, x, {x.dim(1), x.dim(2)});
  return ad::transpose(tape, x);
}

// ---------------------------------------------------------------------------

namespace {

std::string direction_name(const std::string& prefix, int layer, bool backward) {
  return prefix + ".l" + std::to_string(layer) + (backward ? ".bw" : ".fw");
}

ad::Tensor lstm_direction(ad::Tape& tape, const ad::Tensor& x, const ParamStore& store, const std::string& name,
                          Index hidden, bool backward) {
  const Index frames = x.dim(0), H = hidden;
  const ad::Tensor xp = ad::add(tape, ad::matmul(tape, x, store.at(name + ".w_ih")), store.at(name + ".b"));
  const ad::Tensor& w_hh = store.at(name + ".w_hh");
  std::vector<ad::Tensor> outs(static_cast<std::size_t>(frames));
  ad::Tensor h, c;
  for (Index step = 0; step < frames; ++step) {
    const Index t = backward ? frames - 1 - step : step;
    ad::Tensor g = ad::slice_rows(tape, xp, t, t + 1);
    if (h.defined()) g = ad::add(tape, g, ad::matmul(tape, h, w_hh));
    const ad::Tensor s = ad::sigmoid(tape, g);
    const ad::Tensor i = ad::slice_cols(tape, s, 0, H);
    const ad::Tensor f = ad::slice_cols(tape, s, H, 2 * H);
    const ad::Tensor o = ad::slice_cols(tape, s, 3 * H, 4 * H);
    const ad::Tensor cand = ad::tanh(tape, ad::slice_cols(tape, g, 2 * H, 3 * H));
    c = c.defined() ? ad::add(tape, ad::mul(tape, f, c), ad::mul(tape, i, cand)) : ad::mul(tape, i, cand);
    h = ad::mul(tape, o, ad::tanh(tape, c));
    outs[static_cast<std::size_t>(t)] = h;
  }
  return ad::concat(tape, outs, 0);
}

ad::Tensor gru_direction(ad::Tape& tape, const ad::Tensor& x, const ParamStore& store, const std::string& name,
                         Index hidden, bool backward) {
  const Index frames = x.dim(0), H = hidden;
  const ad::Tensor xp = ad::add(tape, ad::matmul(tape, x, store.at(name + ".w_ih")), store.at(name + ".b_ih"));
  const ad::Tensor& w_hh = store.at(name + ".w_hh");
  const ad::Tensor& b_hh = store.at(name + ".b_hh");
  std::vector<ad::Tensor> outs(static_cast<std::size_t>(frames));
  ad::Tensor h = ad::zeros({1, H});
  for (Index step = 0; step < frames; ++step) {
    const Index t = backward ? frames - 1 - step : step;
    const ad::Tensor xt = ad::slice_rows(tape, xp, t, t + 1);
    const ad::Tensor hp = ad::add(tape, ad::matmul(tape, h, w_hh), b_hh);
    const ad::Tensor rz = ad::sigmoid(tape, ad::add(tape, ad::slice_cols(tape, xt, 0, 2 * H), ad::slice_cols(tape, hp, 0, 2 * H)));
    const ad::Tensor r = ad::slice_cols(tape, rz, 0, H);
    const ad::Tensor z = ad::slice_cols(tape, rz, H, 2 * H);
    const ad::Tensor n = ad::tanh(
        tape, ad::add(tape, ad::slice_cols(tape, xt, 2 * H, 3 * H), ad::mul(tape, r, ad::slice_cols(tape, hp, 2 * H, 3 * H))));
    // (1 - z) * n + z * h
    h = ad::add(tape, n, ad::mul(tape, z, ad::sub(tape, h, n)));
    outs[static_cast<std::size_t>(t)] = h;
  }
  return ad::concat(tape, outs, 0);
}

Vector uniform_vector(Index n, Scalar bound, Rng& rng) {
  std::uniform_real_distribution<Scalar> u(-bound, bound);
  Vector v(n);
  for (Index i = 0; i < n; ++i) v[i] = u(rng);
  return v;
}

}  // namespace

void add_birnn(ParamStore& store, const std::string& prefix, const RnnConfig& config, Rng& rng) {
  if (config.input_size < 1 || config.hidden < 1 || config.layers < 1)
    throw Error(ErrorCode::kConfigFault, "recurrent stack needs positive sizes");
  const Index H = config.hidden;
  const Scalar bound = Scalar(1) / std::sqrt(static_cast<Scalar>(H));
  const Index gates = config.kind == RnnKind::kLstm ? 4 : 3;
  for (int l = 0; l < config.layers; ++l) {
    const Index in = l == 0 ? config.input_size : 2 * H;
    for (bool backward : {false, true}) {
      const std::string name = direction_name(prefix, l, backward);
      store.add(name + ".w_ih", ad::tensor_new({in, gates * H}, uniform_vector(in * gates * H, bound, rng), true));
      store.add(name + ".w_hh", ad::tensor_new({H, gates * H}, uniform_vector(H * gates * H, bound, rng), true));
      if (config.kind == RnnKind::kLstm) {
        Vector b = Vector::Zero(4 * H);
        b.segment(H, H).setOnes();
        store.add(name + ".b", ad::tensor_new({4 * H}, std::move(b), true));
      } else {
        store.add(name + ".b_ih", ad::zeros({3 * H}, true));
        store.add(name + ".b_hh", ad::zeros({3 * H}, true));
      }
    }
  }
}

ad::Tensor apply_dropout(const ad::Tensor& x, Scalar rate, ForwardContext& ctx) {
  if (!ctx.train || rate <= 0) return x;
  if (!ctx.rng) throw std::logic_error("dropout in train mode needs an rng");
  std::bernoulli_distribution keep(1 - rate);
  Vector mask(x.numel());
  for (Index i = 0; i < mask.size(); ++i) mask[i] = keep(*ctx.rng) ? 1 : 0;
  return ad::dropout(ctx.tape, x, std::move(mask), rate);
}

ad::Tensor birnn_forward(const ad::Tensor& inputs, const ParamStore& store, const std::string& prefix,
                         const RnnConfig& config, ForwardContext& ctx, Scalar dropout_rate) {
  if (inputs.rank() != 2 || inputs.dim(1) != config.input_size)
    throw Error(ErrorCode::kInvalidShape, "recurrent stack expects [T x " + std::to_string(config.input_size) +
                                              "], got " + ad::to_string(inputs.shape()));
  ad::Tape& tape = ctx.tape;
  auto direction = config.kind == RnnKind::kLstm ? lstm_direction : gru_direction;
  ad::Tensor x = inputs;
  for (int l = 0; l < config.layers; ++l) {
    if (l > 0) x = apply_dropout(x, dropout_rate, ctx);
    const ad::Tensor parts[] = {direction(tape, x, store, direction_name(prefix, l, false), config.hidden, false),
                                direction(tape, x, store, direction_name(prefix, l, true), config.hidden, true)};
    x = ad::concat(tape, parts, 1);
  }
  return x;
}

ad::Tensor time_avg_pool(ad::Tape& tape, const ad::Tensor& frames) {
  if (frames.rank() != 2) throw Error(ErrorCode::kInvalidShape, "pooling expects [T x N], got " + ad::to_string(frames.shape()));
  return ad::mean(tape, frames, 0);
}

}  // namespace lid::nn
