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

#include "lid/autodiff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace lid::ad {
namespace {

using ConstRowMap = Eigen::Map<const RowMatrix>;
using RowMap = Eigen::Map<RowMatrix>;

[[noreturn]] void shape_error(std::string_view op, const std::string& detail) {
  throw Error(ErrorCode::kInvalidShape, std::string(op) + ": " + detail);
}

int normalize_axis(int axis, Index rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw Error(ErrorCode::kInvalidAxis, "axis " + std::to_string(axis) + " for rank " + std::to_string(r));
  return a;
}

struct AxisSplit {
  Index outer = 1;
  Index len = 1;
  Index inner = 1;
};

AxisSplit split_at(const Shape& shape, int axis) {
  AxisSplit s;
  for (int i = 0; i < axis; ++i) s.outer *= shape[static_cast<std::size_t>(i)];
  s.len = shape[static_cast<std::size_t>(axis)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

void expect_arity(std::string_view op, std::span<const Tensor> inputs, std::size_t lo, std::size_t hi) {
  if (inputs.size() < lo || inputs.size() > hi) shape_error(op, "wrong number of inputs");
  for (const auto& t : inputs)
    if (!t.defined()) shape_error(op, "undefined input");
}

// Calls fn(in_offset, out_offset, run) for each contiguous run along the last axis.
template <typename Fn>
void for_each_slice_run(const Shape& shape, const std::vector<std::pair<Index, Index>>& ranges, Fn&& fn) {
  const std::size_t rank = shape.size();
  std::vector<Index> in_stride(rank, 1);
  for (std::size_t i = rank - 1; i > 0; --i) in_stride[i - 1] = in_stride[i] * shape[i];
  std::vector<Index> out_dims(rank);
  for (std::size_t i = 0; i < rank; ++i) out_dims[i] = ranges[i].second - ranges[i].first;
  const Index run = out_dims[rank - 1];
  Index rows = 1;
  for (std::size_t i = 0; i + 1 < rank; ++i) rows *= out_dims[i];
  std::vector<Index> idx(rank, 0);
  for (Index r = 0; r < rows; ++r) {
    Index in_off = ranges[rank - 1].first;
    for (std::size_t i = 0; i + 1 < rank; ++i) in_off += (ranges[i].first + idx[i]) * in_stride[i];
    fn(in_off, r * run, run);
    for (std::size_t i = rank - 1; i-- > 0;) {
      if (++idx[i] < out_dims[i]) break;
      idx[i] = 0;
    }
  }
}

Tensor eval_add(Tape& tape, const prim::Add& p, std::span<const Tensor> in) {
  expect_arity("add", in, 2, 2);
  const Tensor& a = in[0];
  const Tensor& b = in[1];
  const Scalar alpha = p.alpha;
  if (a.shape() == b.shape()) {
    Vector out = a.values() + alpha * b.values();
    return tape.record(PrimitiveKind::kAdd, in, a.shape(), std::move(out),
                       [alpha](const Vector& g, std::span<Vector* const> gi) {
                         if (gi[0]) *gi[0] += g;
                         if (gi[1]) *gi[1] += alpha * g;
                       });
  }
  if (b.rank() == 1 && a.rank() >= 1 && a.shape().back() == b.numel()) {
    const Index cols = b.numel();
    const Index rows = a.numel() / cols;
    Vector out = a.values();
    RowMap(out.data(), rows, cols).rowwise() += alpha * b.values().transpose();
    return tape.record(PrimitiveKind::kAdd, in, a.shape(), std::move(out),
                       [alpha, rows, cols](const Vector& g, std::span<Vector* const> gi) {
                         if (gi[0]) *gi[0] += g;
                         if (gi[1]) *gi[1] += alpha * ConstRowMap(g.data(), rows, cols).colwise().sum().transpose();
                       });
  }
  shape_error("add", to_string(a.shape()) + " + " + to_string(b.shape()));
}

Tensor eval_mul(Tape& tape, std::span<const Tensor> in) {
  expect_arity("mul", in, 2, 2);
  const Tensor a = in[0];
  const Tensor b = in[1];
  if (a.shape() != b.shape()) shape_error("mul", to_string(a.shape()) + " * " + to_string(b.shape()));
  Vector out = a.values().cwiseProduct(b.values());
  return tape.record(PrimitiveKind::kMul, in, a.shape(), std::move(out),
                     [a, b](const Vector& g, std::span<Vector* const> gi) {
                       if (gi[0]) *gi[0] += g.cwiseProduct(b.values());
                       if (gi[1]) *gi[1] += g.cwiseProduct(a.values());
                     });
}

Tensor eval_matmul(Tape& tape, std::span<const Tensor> in) {
  expect_arity("matmul", in, 2, 2);
  const Tensor a = in[0];
  const Tensor b = in[1];
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0])
    shape_error("matmul", to_string(a.shape()) + " x " + to_string(b.shape()));
  const Index m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  Vector out(m * n);
  RowMap(out.data(), m, n).noalias() = a.matrix() * b.matrix();
  return tape.record(PrimitiveKind::kMatMul, in, {m, n}, std::move(out),
                     [a, b, m, k, n](const Vector& g, std::span<Vector* const> gi) {
                       ConstRowMap gm(g.data(), m, n);
                       if (gi[0]) RowMap(gi[0]->data(), m, k).noalias() += gm * b.matrix().transpose();
                       if (gi[1]) RowMap(gi[1]->data(), k, n).noalias() += a.matrix().transpose() * gm;
                     });
}

Tensor eval_conv2d(Tape& tape, const prim::Conv2d& p, std::span<const Tensor> in) {
  expect_arity("conv2d", in, 2, 3);
  const Tensor& x = in[0];
  const Tensor w = in[1];
  const bool has_bias = in.size() == 3;
  if (x.rank() != 4 || w.rank() != 4) shape_error("conv2d", "expects x [N,C,H,W] and w [O,C,kh,kw]");
  const Index N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  const Index O = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
  if (w.shape()[1] != C) shape_error("conv2d", "channel mismatch " + to_string(x.shape()) + " vs " + to_string(w.shape()));
  if (has_bias && (in[2].rank() != 1 || in[2].numel() != O)) shape_error("conv2d", "bias must be [O]");
  const auto [sh, sw] = p.stride;
  const auto [ph, pw] = p.pad;
  if (sh <= 0 || sw <= 0 || ph < 0 || pw < 0) shape_error("conv2d", "bad stride/padding");
  if (H + 2 * ph < kh || W + 2 * pw < kw) shape_error("conv2d", "kernel larger than padded input");
  const Index Ho = (H + 2 * ph - kh) / sh + 1;
  const Index Wo = (W + 2 * pw - kw) / sw + 1;
  const Index K = C * kh * kw;
  const Index P = Ho * Wo;

  auto cols = std::make_shared<std::vector<RowMatrix>>(static_cast<std::size_t>(N));
  Vector out(N * O * P);
  ConstRowMap wm(w.values().data(), O, K);
  for (Index n = 0; n < N; ++n) {
    RowMatrix& col = (*cols)[static_cast<std::size_t>(n)];
    col.setZero(K, P);
    const Scalar* xs = x.values().data() + n * C * H * W;
    for (Index c = 0; c < C; ++c)
      for (Index ki = 0; ki < kh; ++ki)
        for (Index kj = 0; kj < kw; ++kj) {
          Scalar* row = col.data() + ((c * kh + ki) * kw + kj) * P;
          for (Index oh = 0; oh < Ho; ++oh) {
            const Index ih = oh * sh - ph + ki;
            if (ih < 0 || ih >= H) continue;
            const Scalar* src = xs + (c * H + ih) * W;
            for (Index ow = 0; ow < Wo; ++ow) {
              const Index iw = ow * sw - pw + kj;
              if (iw >= 0 && iw < W) row[oh * Wo + ow] = src[iw];
            }
          }
        }
    RowMap om(out.data() + n * O * P, O, P);
    om.noalias() = wm * col;
    if (has_bias) om.colwise() += in[2].values();
  }

  return tape.record(
      PrimitiveKind::kConv2d, in, {N, O, Ho, Wo}, std::move(out),
      [w, cols, N, C, H, W, O, kh, kw, sh, sw, ph, pw, Ho, Wo, K, P](const Vector& g,
                                                                       std::span<Vector* const> gi) {
        ConstRowMap wm(w.values().data(), O, K);
        RowMatrix gcol;
        for (Index n = 0; n < N; ++n) {
          ConstRowMap gm(g.data() + n * O * P, O, P);
          const RowMatrix& col = (*cols)[static_cast<std::size_t>(n)];
          if (gi[1]) RowMap(gi[1]->data(), O, K).noalias() += gm * col.transpose();
          if (gi.size() > 2 && gi[2]) *gi[2] += gm.rowwise().sum();
          if (!gi[0]) continue;
          gcol.noalias() = wm.transpose() * gm;
          Scalar* gx = gi[0]->data() + n * C * H * W;
          for (Index c = 0; c < C; ++c)
            for (Index ki = 0; ki < kh; ++ki)
              for (Index kj = 0; kj < kw; ++kj) {
                const Scalar* row = gcol.data() + ((c * kh + ki) * kw + kj) * P;
                for (Index oh = 0; oh < Ho; ++oh) {
                  const Index ih = oh * sh - ph + ki;
                  if (ih < 0 || ih >= H) continue;
                  Scalar* dst = gx + (c * H + ih) * W;
                  for (Index ow = 0; ow < Wo; ++ow) {
                    const Index iw = ow * sw - pw + kj;
                    if (iw >= 0 && iw < W) dst[iw] += row[oh * Wo + ow];
                  }
                }
              }
        }
      });
}

Tensor eval_maxpool2d(Tape& tape, const prim::MaxPool2d& p, std::span<const Tensor> in) {
  expect_arity("maxpool2d", in, 1, 1);
  const Tensor& x = in[0];
  if (x.rank() != 4) shape_error("maxpool2d", "expects [N,C,H,W]");
  const Index N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  const auto [kh, kw] = p.kernel;
  const auto [sh, sw] = p.stride;
  const auto [ph, pw] = p.pad;
  if (kh <= 0 || kw <= 0 || sh <= 0 || sw <= 0 || ph < 0 || pw < 0 || ph >= kh || pw >= kw)
    shape_error("maxpool2d", "bad kernel/stride/padding");
  if (H + 2 * ph < kh || W + 2 * pw < kw) shape_error("maxpool2d", "kernel larger than padded input");
  const Index Ho = (H + 2 * ph - kh) / sh + 1;
  const Index Wo = (W + 2 * pw - kw) / sw + 1;
  Vector out(N * C * Ho * Wo);
  auto argmax = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(out.size()));
  const Scalar* xs = x.values().data();
  Index o = 0;
  for (Index nc = 0; nc < N * C; ++nc) {
    const Index base = nc * H * W;
    for (Index oh = 0; oh < Ho; ++oh)
      for (Index ow = 0; ow < Wo; ++ow, ++o) {
        Scalar best = -std::numeric_limits<Scalar>::infinity();
        Index best_idx = -1;
        for (Index ki = 0; ki < kh; ++ki) {
          const Index ih = oh * sh - ph + ki;
          if (ih < 0 || ih >= H) continue;
          for (Index kj = 0; kj < kw; ++kj) {
            const Index iw = ow * sw - pw + kj;
            if (iw < 0 || iw >= W) continue;
            const Index flat = base + ih * W + iw;
            if (best_idx < 0 || xs[flat] > best) {
              best = xs[flat];
              best_idx = flat;
            }
          }
        }
        out[o] = best;
        (*argmax)[static_cast<std::size_t>(o)] = best_idx;
      }
  }
  return tape.record(PrimitiveKind::kMaxPool2d, in, {N, C, Ho, Wo}, std::move(out),
                     [argmax](const Vector& g, std::span<Vector* const> gi) {
                       if (!gi[0]) return;
                       for (std::size_t i = 0; i < argmax->size(); ++i)
                         (*gi[0])[(*argmax)[i]] += g[static_cast<Index>(i)];
                     });
}

Tensor eval_relu(Tape& tape, std::span<const Tensor> in) {
  expect_arity("relu", in, 1, 1);
  const Tensor x = in[0];
  Vector out = x.values().cwiseMax(Scalar(0));
  return tape.record(PrimitiveKind::kRelu, in, x.shape(), std::move(out),
                     [x](const Vector& g, std::span<Vector* const> gi) {
                       if (gi[0]) *gi[0] += (x.values().array() > 0).select(g, Scalar(0));
                     });
}

Tensor eval_sigmoid(Tape& tape, std::span<const Tensor> in) {
  expect_arity("sigmoid", in, 1, 1);
  auto y = std::make_shared<Vector>(
      (Scalar(1) / (Scalar(1) + (-in[0].values().array()).exp())).matrix());
  return tape.record(PrimitiveKind::kSigmoid, in, in[0].shape(), *y,
                     [y](const Vector& g, std::span<Vector* const> gi) {
                       if (gi[0]) *gi[0] += (g.array() * y->array() * (Scalar(1) - y->array())).matrix();
                     });
}

Tensor eval_tanh(Tape& tape, std::span<const Tensor> in) {
  expect_arity("tanh", in, 1, 1);
  auto y = std::make_shared<Vector>(in[0].values().array().tanh().matrix());
  return tape.record(PrimitiveKind::kTanh, in, in[0].shape(), *y,
                     [y](const Vector& g, std::span<Vector* const> gi) {
                       if (gi[0]) *gi[0] += (g.array() * (Scalar(1) - y->array().square())).matrix();
                     });
}

Tensor eval_log_softmax(Tape& tape, const prim::LogSoftmax& p, std::span<const Tensor> in) {
  expect_arity("log_softmax", in, 1, 1);
  const Tensor& x = in[0];
  const int axis = normalize_axis(p.axis, x.rank());
  const AxisSplit s = split_at(x.shape(), axis);
  auto y = std::make_shared<Vector>(x.numel());
  const Scalar* xs = x.values().data();
  for (Index o = 0; o < s.outer; ++o)
    for (Index i = 0; i < s.inner; ++i) {
      const Index base = o * s.len * s.inner + i;
      Scalar mx = -std::numeric_limits<Scalar>::infinity();
      for (Index k = 0; k < s.len; ++k) mx = std::max(mx, xs[base + k * s.inner]);
      Scalar acc = 0;
      for (Index k = 0; k < s.len; ++k) acc += std::exp(xs[base + k * s.inner] - mx);
      const Scalar lse = mx + std::log(acc);
      for (Index k = 0; k < s.len; ++k) (*y)[base + k * s.inner] = xs[base + k * s.inner] - lse;
    }
  return tape.record(PrimitiveKind::kLogSoftmax, in, x.shape(), *y,
                     [y, s](const Vector& g, std::span<Vector* const> gi) {
                       if (!gi[0]) return;
                       for (Index o = 0; o < s.outer; ++o)
                         for (Index i = 0; i < s.inner; ++i) {
                           const Index base = o * s.len * s.inner + i;
                           Scalar gsum = 0;
                           for (Index k = 0; k < s.len; ++k) gsum += g[base + k * s.inner];
                           for (Index k = 0; k < s.len; ++k) {
                             const Index at = base + k * s.inner;
                             (*gi[0])[at] += g[at] - std::exp((*y)[at]) * gsum;
                           }
                         }
                     });
}

Tensor eval_reduce(Tape& tape, PrimitiveKind kind, std::optional<int> axis_opt,
                   std::span<const Tensor> in) {
  expect_arity(primitive_name(kind), in, 1, 1);
  const Tensor& x = in[0];
  const bool is_mean = kind == PrimitiveKind::kMean;
  if (!axis_opt) {
    const Scalar scale = is_mean ? Scalar(1) / static_cast<Scalar>(x.numel()) : Scalar(1);
    Vector out(1);
    out[0] = x.values().sum() * scale;
    const Index n = x.numel();
    return tape.record(kind, in, {}, std::move(out),
                       [scale, n](const Vector& g, std::span<Vector* const> gi) {
                         if (gi[0]) gi[0]->array() += g[0] * scale;
                       });
  }
  const int axis = normalize_axis(*axis_opt, x.rank());
  const AxisSplit s = split_at(x.shape(), axis);
  Shape shape = x.shape();
  shape.erase(shape.begin() + axis);
  const Scalar scale = is_mean ? Scalar(1) / static_cast<Scalar>(s.len) : Scalar(1);
  Vector out = Vector::Zero(s.outer * s.inner);
  const Scalar* xs = x.values().data();
  for (Index o = 0; o < s.outer; ++o)
    for (Index k = 0; k < s.len; ++k)
      for (Index i = 0; i < s.inner; ++i) out[o * s.inner + i] += xs[(o * s.len + k) * s.inner + i];
  out *= scale;
  return tape.record(kind, in, std::move(shape), std::move(out),
                     [s, scale](const Vector& g, std::span<Vector* const> gi) {
                       if (!gi[0]) return;
                       for (Index o = 0; o < s.outer; ++o)
                         for (Index k = 0; k < s.len; ++k)
                           for (Index i = 0; i < s.inner; ++i)
                             (*gi[0])[(o * s.len + k) * s.inner + i] += scale * g[o * s.inner + i];
                     });
}

Tensor eval_concat(Tape& tape, const prim::Concat& p, std::span<const Tensor> in) {
  if (in.empty()) shape_error("concat", "no inputs");
  expect_arity("concat", in, 1, in.size());
  const Shape& first = in[0].shape();
  const int axis = normalize_axis(p.axis, in[0].rank());
  Shape shape = first;
  shape[static_cast<std::size_t>(axis)] = 0;
  std::vector<Index> lens;
  lens.reserve(in.size());
  for (const auto& t : in) {
    if (t.rank() != static_cast<Index>(first.size())) shape_error("concat", "rank mismatch");
    for (std::size_t d = 0; d < first.size(); ++d)
      if (static_cast<int>(d) != axis && t.shape()[d] != first[d])
        shape_error("concat", to_string(t.shape()) + " vs " + to_string(first));
    lens.push_back(t.shape()[static_cast<std::size_t>(axis)]);
    shape[static_cast<std::size_t>(axis)] += lens.back();
  }
  const AxisSplit s = split_at(shape, axis);
  Vector out(numel(shape));
  Index offset = 0;
  for (std::size_t j = 0; j < in.size(); ++j) {
    const Index block = lens[j] * s.inner;
    for (Index o = 0; o < s.outer; ++o)
      out.segment(o * s.len * s.inner + offset, block) = in[j].values().segment(o * block, block);
    offset += block;
  }
  return tape.record(PrimitiveKind::kConcat, in, std::move(shape), std::move(out),
                     [lens, s](const Vector& g, std::span<Vector* const> gi) {
                       Index offset = 0;
                       for (std::size_t j = 0; j < lens.size(); ++j) {
                         const Index block = lens[j] * s.inner;
                         if (gi[j])
                           for (Index o = 0; o < s.outer; ++o)
                             gi[j]->segment(o * block, block) += g.segment(o * s.len * s.inner + offset, block);
                         offset += block;
                       }
                     });
}

Tensor eval_slice(Tape& tape, const prim::Slice& p, std::span<const Tensor> in) {
  expect_arity("slice", in, 1, 1);
  const Tensor& x = in[0];
  if (p.ranges.size() != x.shape().size() || x.rank() == 0) shape_error("slice", "one range per dimension required");
  Shape shape(p.ranges.size());
  for (std::size_t d = 0; d < p.ranges.size(); ++d) {
    const auto [b, e] = p.ranges[d];
    if (b < 0 || e > x.shape()[d] || b >= e)
      shape_error("slice", "range [" + std::to_string(b) + "," + std::to_string(e) + ") on " + to_string(x.shape()));
    shape[d] = e - b;
  }
  Vector out(numel(shape));
  const Scalar* xs = x.values().data();
  for_each_slice_run(x.shape(), p.ranges, [&](Index src, Index dst, Index run) {
    std::copy_n(xs + src, run, out.data() + dst);
  });
  return tape.record(PrimitiveKind::kSlice, in, std::move(shape), std::move(out),
                     [full = x.shape(), ranges = p.ranges](const Vector& g, std::span<Vector* const> gi) {
                       if (!gi[0]) return;
                       for_each_slice_run(full, ranges, [&](Index src, Index dst, Index run) {
                         gi[0]->segment(src, run) += g.segment(dst, run);
                       });
                     });
}

Tensor eval_affine_channel(Tape& tape, std::span<const Tensor> in) {
  expect_arity("affine_channel", in, 3, 3);
  const Tensor x = in[0];
  const Tensor scale = in[1];
  const Tensor shift = in[2];
  if (x.rank() < 2) shape_error("affine_channel", "expects [N,C,...]");
  const Index C = x.shape()[1];
  if (scale.numel() != C || shift.numel() != C || scale.rank() != 1 || shift.rank() != 1)
    shape_error("affine_channel", "scale/shift must be [C]");
  const AxisSplit s = split_at(x.shape(), 1);
  Vector out(x.numel());
  for (Index n = 0; n < s.outer; ++n)
    for (Index c = 0; c < C; ++c) {
      const Index base = (n * C + c) * s.inner;
      out.segment(base, s.inner) = (x.values().segment(base, s.inner).array() * scale.values()[c] + shift.values()[c]).matrix();
    }
  return tape.record(PrimitiveKind::kAffineChannel, in, x.shape(), std::move(out),
                     [x, scale, s, C](const Vector& g, std::span<Vector* const> gi) {
                       for (Index n = 0; n < s.outer; ++n)
                         for (Index c = 0; c < C; ++c) {
                           const Index base = (n * C + c) * s.inner;
                           const auto gs = g.segment(base, s.inner);
                           if (gi[0]) gi[0]->segment(base, s.inner) += scale.values()[c] * gs;
                           if (gi[1]) (*gi[1])[c] += gs.dot(x.values().segment(base, s.inner));
                           if (gi[2]) (*gi[2])[c] += gs.sum();
                         }
                     });
}

Tensor eval_dropout(Tape& tape, const prim::Dropout& p, std::span<const Tensor> in) {
  expect_arity("dropout", in, 1, 1);
  if (p.mask.size() != in[0].numel()) shape_error("dropout", "mask size differs from input");
  if (!(p.rate >= 0 && p.rate < 1)) shape_error("dropout", "rate must lie in [0, 1)");
  auto factor = std::make_shared<Vector>(p.mask / (Scalar(1) - p.rate));
  Vector out = in[0].values().cwiseProduct(*factor);
  return tape.record(PrimitiveKind::kDropout, in, in[0].shape(), std::move(out),
                     [factor](const Vector& g, std::span<Vector* const> gi) {
                       if (gi[0]) *gi[0] += g.cwiseProduct(*factor);
                     });
}

Tensor eval_reshape(Tape& tape, const prim::Reshape& p, std::span<const Tensor> in) {
  expect_arity("reshape", in, 1, 1);
  if (numel(p.shape) != in[0].numel())
    shape_error("reshape", to_string(in[0].shape()) + " -> " + to_string(p.shape));
  return tape.record(PrimitiveKind::kReshape, in, p.shape, in[0].values(),
                     [](const Vector& g, std::span<Vector* const> gi) {
                       if (gi[0]) *gi[0] += g;
                     });
}

Tensor eval_transpose(Tape& tape, std::span<const Tensor> in) {
  expect_arity("transpose", in, 1, 1);
  const Tensor& x = in[0];
  if (x.rank() != 2) shape_error("transpose", "expects rank 2");
  const Index r = x.shape()[0], c = x.shape()[1];
  Vector out(x.numel());
  RowMap(out.data(), c, r) = x.matrix().transpose();
  return tape.record(PrimitiveKind::kTranspose, in, {c, r}, std::move(out),
                     [r, c](const Vector& g, std::span<Vector* const> gi) {
                       if (gi[0]) RowMap(gi[0]->data(), r, c) += ConstRowMap(g.data(), c, r).transpose();
                     });
}

Tensor eval_channel_standardize(Tape& tape, const prim::ChannelStandardize& p, std::span<const Tensor> in) {
  expect_arity("channel_standardize", in, 1, 1);
  const Tensor& x = in[0];
  if (x.rank() < 2) shape_error("channel_standardize", "expects [N,C,...]");
  const Index C = x.shape()[1];
  const AxisSplit s = split_at(x.shape(), 1);
  const Scalar m = static_cast<Scalar>(s.outer * s.inner);
  const auto [mu, var] = channel_moments(x);
  Vector inv_std = (var.array() + p.epsilon).rsqrt().matrix();
  auto y = std::make_shared<Vector>(x.numel());
  for (Index n = 0; n < s.outer; ++n)
    for (Index c = 0; c < C; ++c) {
      const Index base = (n * C + c) * s.inner;
      y->segment(base, s.inner) = ((x.values().segment(base, s.inner).array() - mu[c]) * inv_std[c]).matrix();
    }
  return tape.record(PrimitiveKind::kChannelStandardize, in, x.shape(), *y,
                     [y, inv_std, s, C, m](const Vector& g, std::span<Vector* const> gi) {
                       if (!gi[0]) return;
                       Vector gsum = Vector::Zero(C), gysum = Vector::Zero(C);
                       for (Index n = 0; n < s.outer; ++n)
                         for (Index c = 0; c < C; ++c) {
                           const Index base = (n * C + c) * s.inner;
                           gsum[c] += g.segment(base, s.inner).sum();
                           gysum[c] += g.segment(base, s.inner).dot(y->segment(base, s.inner));
                         }
                       for (Index n = 0; n < s.outer; ++n)
                         for (Index c = 0; c < C; ++c) {
                           const Index base = (n * C + c) * s.inner;
                           gi[0]->segment(base, s.inner) +=
                               (inv_std[c] / m *
                                (m * g.segment(base, s.inner).array() - gsum[c] -
                                 y->segment(base, s.inner).array() * gysum[c]))
                                   .matrix();
                         }
                     });
}

Tensor eval_linearized(Tape& tape, const prim::Linearized& p, std::span<const Tensor> in) {
  expect_arity("linearized", in, 1, 1);
  if (p.gradient.size() != in[0].numel()) shape_error("linearized", "gradient size differs from input");
  auto grad = std::make_shared<Vector>(p.gradient);
  Vector out(1);
  out[0] = p.value;
  return tape.record(PrimitiveKind::kLinearized, in, {}, std::move(out),
                     [grad](const Vector& g, std::span<Vector* const> gi) {
                       if (gi[0]) *gi[0] += g[0] * *grad;
                     });
}

}  // namespace

std::string_view primitive_name(PrimitiveKind kind) {
  switch (kind) {
    case PrimitiveKind::kAdd: return "add";
    case PrimitiveKind::kMul: return "mul";
    case PrimitiveKind::kMatMul: return "matmul";
    case PrimitiveKind::kConv2d: return "conv2d";
    case PrimitiveKind::kMaxPool2d: return "maxpool2d";
    case PrimitiveKind::kRelu: return "relu";
    case PrimitiveKind::kSigmoid: return "sigmoid";
    case PrimitiveKind::kTanh: return "tanh";
    case PrimitiveKind::kLogSoftmax: return "log_softmax";
    case PrimitiveKind::kMean: return "mean";
    case PrimitiveKind::kSum: return "sum";
    case PrimitiveKind::kConcat: return "concat";
    case PrimitiveKind::kSlice: return "slice";
    case PrimitiveKind::kAffineChannel: return "affine_channel";
    case PrimitiveKind::kDropout: return "dropout";
    case PrimitiveKind::kReshape: return "reshape";
    case PrimitiveKind::kTranspose: return "transpose";
    case PrimitiveKind::kChannelStandardize: return "channel_standardize";
    case PrimitiveKind::kLinearized: return "linearized";
  }
  return "unknown";
}

PrimitiveKind kind_of(const Primitive& p) {
  return static_cast<PrimitiveKind>(p.index());
}

Tensor apply(Tape& tape, const Primitive& primitive, std::span<const Tensor> inputs) {
  return std::visit(
      [&](const auto& p) -> Tensor {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, prim::Add>) return eval_add(tape, p, inputs);
        else if constexpr (std::is_same_v<P, prim::Mul>) return eval_mul(tape, inputs);
        else if constexpr (std::is_same_v<P, prim::MatMul>) return eval_matmul(tape, inputs);
        else if constexpr (std::is_same_v<P, prim::Conv2d>) return eval_conv2d(tape, p, inputs);
        else if constexpr (std::is_same_v<P, prim::MaxPool2d>) return eval_maxpool2d(tape, p, inputs);
        else if constexpr (std::is_same_v<P, prim::Relu>) return eval_relu(tape, inputs);
        else if constexpr (std::is_same_v<P, prim::Sigmoid>) return eval_sigmoid(tape, inputs);
        else if constexpr (std::is_same_v<P, prim::Tanh>) return eval_tanh(tape, inputs);
        else if constexpr (std::is_same_v<P, prim::LogSoftmax>) return eval_log_softmax(tape, p, inputs);
        else if constexpr (std::is_same_v<P, prim::Mean>) return eval_reduce(tape, PrimitiveKind::kMean, p.axis, inputs);
        else if constexpr (std::is_same_v<P, prim::Sum>) return eval_reduce(tape, PrimitiveKind::kSum, p.axis, inputs);
        else if constexpr (std::is_same_v<P, prim::Concat>) return eval_concat(tape, p, inputs);
        else if constexpr (std::is_same_v<P, prim::Slice>) return eval_slice(tape, p, inputs);
        else if constexpr (std::is_same_v<P, prim::AffineChannel>) return eval_affine_channel(tape, inputs);
        else if constexpr (std::is_same_v<P, prim::Dropout>) return eval_dropout(tape, p, inputs);
        else if constexpr (std::is_same_v<P, prim::Reshape>) return eval_reshape(tape, p, inputs);
        else if constexpr (std::is_same_v<P, prim::Transpose>) return eval_transpose(tape, inputs);
        else if constexpr (std::is_same_v<P, prim::ChannelStandardize>) return eval_channel_standardize(tape, p, inputs);
        else return eval_linearized(tape, p, inputs);
      },
      primitive);
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b, Scalar alpha) {
  const Tensor in[] = {a, b};
  return apply(tape, prim::Add{alpha}, in);
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  const Tensor in[] = {a, b};
  return apply(tape, prim::Mul{}, in);
}

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  const Tensor in[] = {a, b};
  return apply(tape, prim::MatMul{}, in);
}

Tensor conv2d(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias,
              std::array<Index, 2> stride, std::array<Index, 2> pad) {
  if (bias.defined()) {
    const Tensor in[] = {x, weight, bias};
    return apply(tape, prim::Conv2d{stride, pad}, in);
  }
  const Tensor in[] = {x, weight};
  return apply(tape, prim::Conv2d{stride, pad}, in);
}

Tensor maxpool2d(Tape& tape, const Tensor& x, std::array<Index, 2> kernel, std::array<Index, 2> stride,
                 std::array<Index, 2> pad) {
  const Tensor in[] = {x};
  return apply(tape, prim::MaxPool2d{kernel, stride, pad}, in);
}

Tensor relu(Tape& tape, const Tensor& x) {
  const Tensor in[] = {x};
  return apply(tape, prim::Relu{}, in);
}

Tensor sigmoid(Tape& tape, const Tensor& x) {
  const Tensor in[] = {x};
  return apply(tape, prim::Sigmoid{}, in);
}

Tensor tanh(Tape& tape, const Tensor& x) {
  const Tensor in[] = {x};
  return apply(tape, prim::Tanh{}, in);
}

Tensor log_softmax(Tape& tape, const Tensor& x, int axis) {
  const Tensor in[] = {x};
  return apply(tape, prim::LogSoftmax{axis}, in);
}

Tensor mean(Tape& tape, const Tensor& x, std::optional<int> axis) {
  const Tensor in[] = {x};
  return apply(tape, prim::Mean{axis}, in);
}

Tensor sum(Tape& tape, const Tensor& x, std::optional<int> axis) {
  const Tensor in[] = {x};
  return apply(tape, prim::Sum{axis}, in);
}

Tensor concat(Tape& tape, std::span<const Tensor> parts, int axis) {
  return apply(tape, prim::Concat{axis}, parts);
}

Tensor slice(Tape& tape, const Tensor& x, std::vector<std::pair<Index, Index>> ranges) {
  const Tensor in[] = {x};
  return apply(tape, prim::Slice{std::move(ranges)}, in);
}

Tensor slice_rows(Tape& tape, const Tensor& x, Index begin, Index end) {
  if (x.rank() != 2) shape_error("slice_rows", "expects rank 2");
  return slice(tape, x, {{begin, end}, {0, x.shape()[1]}});
}

Tensor slice_cols(Tape& tape, const Tensor& x, Index begin, Index end) {
  if (x.rank() != 2) shape_error("slice_cols", "expects rank 2");
  return slice(tape, x, {{0, x.shape()[0]}, {begin, end}});
}

Tensor affine_channel(Tape& tape, const Tensor& x, const Tensor& scale, const Tensor& shift) {
  const Tensor in[] = {x, scale, shift};
  return apply(tape, prim::AffineChannel{}, in);
}

Tensor dropout(Tape& tape, const Tensor& x, Vector mask, Scalar rate) {
  const Tensor in[] = {x};
  return apply(tape, prim::Dropout{std::move(mask), rate}, in);
}

Tensor reshape(Tape& tape, const Tensor& x, Shape shape) {
  const Tensor in[] = {x};
  return apply(tape, prim::Reshape{std::move(shape)}, in);
}

Tensor transpose(Tape& tape, const Tensor& x) {
  const Tensor in[] = {x};
  return apply(tape, prim::Transpose{}, in);
}

Tensor channel_standardize(Tape& tape, const Tensor& x, Scalar epsilon) {
  const Tensor in[] = {x};
  return apply(tape, prim::ChannelStandardize{epsilon}, in);
}

Tensor linearized(Tape& tape, const Tensor& x, Scalar value, Vector gradient) {
  const Tensor in[] = {x};
  return apply(tape, prim::Linearized{value, std::move(gradient)}, in);
}

std::pair<Vector, Vector> channel_moments(const Tensor& x) {
  if (x.rank() < 2) shape_error("channel_moments", "expects [N,C,...]");
  const Index C = x.shape()[1];
  const AxisSplit s = split_at(x.shape(), 1);
  const Scalar m = static_cast<Scalar>(s.outer * s.inner);
  Vector mu = Vector::Zero(C), var = Vector::Zero(C);
  for (Index n = 0; n < s.outer; ++n)
    for (Index c = 0; c < C; ++c) mu[c] += x.values().segment((n * C + c) * s.inner, s.inner).sum();
  mu /= m;
  for (Index n = 0; n < s.outer; ++n)
    for (Index c = 0; c < C; ++c)
      var[c] += (x.values().segment((n * C + c) * s.inner, s.inner).array() - mu[c]).square().sum();
  var /= m;
  return {mu, var};
}

Scalar finite_diff_check(const std::function<Tensor(Tape&, const Tensor&)>& f, const Tensor& x, Scalar eps) {
  const Tensor leaf = x.clone(true);
  const Tensor leaves[] = {leaf};
  GradCheckOptions options;
  options.eps = eps;
  return finite_diff_check([&](Tape& tape) { return f(tape, leaf); }, leaves, options);
}

Scalar finite_diff_check(const std::function<Tensor(Tape&)>& f, std::span<const Tensor> leaves,
                         const GradCheckOptions& options) {
  if (!(options.eps > 0)) throw std::invalid_argument("finite_diff_check: eps must be positive");
  GradientMap analytic;
  {
    Tape tape;
    analytic = tape.backward(f(tape));
  }
  auto evaluate = [&] {
    Tape tape(Tape::Mode::kInference);
    return f(tape).item();
  };
  std::mt19937_64 rng(options.seed);
  Scalar worst = 0;
  for (Tensor leaf : leaves) {
    const Vector grad = analytic.get(leaf);
    std::vector<Index> coords(static_cast<std::size_t>(leaf.numel()));
    for (Index i = 0; i < leaf.numel(); ++i) coords[static_cast<std::size_t>(i)] = i;
    if (options.coords_per_leaf > 0 && options.coords_per_leaf < leaf.numel()) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(static_cast<std::size_t>(options.coords_per_leaf));
    }
    Vector& values = leaf.mutable_values();
    for (Index i : coords) {
      const Scalar saved = values[i];
      values[i] = saved + options.eps;
      const Scalar up = evaluate();
      values[i] = saved - options.eps;
      const Scalar down = evaluate();
      values[i] = saved;
      const Scalar numeric = (up - down) / (2 * options.eps);
      const Scalar err = std::abs(grad[i] - numeric) / std::max(Scalar(1), std::abs(grad[i]));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace lid::ad
