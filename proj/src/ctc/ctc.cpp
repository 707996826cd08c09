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

#include "lid/ctc/ctc.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

namespace lid::ctc {
namespace {

constexpr Scalar kNegInf = -std::numeric_limits<Scalar>::infinity();

Scalar log_add(Scalar a, Scalar b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const Scalar m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

void check_labels(const Eigen::Ref<const RowMatrix>& lattice, std::span<const int> labels) {
  if (lattice.rows() < 1 || lattice.cols() < 1)
    throw Error(ErrorCode::kInvalidShape, "empty lattice");
  for (int z : labels)
    if (z <= kBlank || z >= lattice.cols())
      throw Error(ErrorCode::kDataFault, "label id " + std::to_string(z) + " outside 1.." +
                                             std::to_string(lattice.cols() - 1));
  if (!is_feasible(lattice.rows(), labels))
    throw Error(ErrorCode::kInfeasibleLabel, std::to_string(labels.size()) + " labels need " +
                                                 std::to_string(min_frames(labels)) + " frames, lattice has " +
                                                 std::to_string(lattice.rows()));
}

// Blank-interleaved label: b z1 b z2 ... zL b.
std::vector<int> extend(std::span<const int> labels) {
  std::vector<int> ext(2 * labels.size() + 1, kBlank);
  for (std::size_t i = 0; i < labels.size(); ++i) ext[2 * i + 1] = labels[i];
  return ext;
}

bool can_skip(const std::vector<int>& ext, std::size_t s) {
  return s >= 2 && ext[s] != kBlank && ext[s] != ext[s - 2];
}

}  // namespace

Index min_frames(std::span<const int> labels) {
  Index n = static_cast<Index>(labels.size());
  for (std::size_t i = 1; i < labels.size(); ++i)
    if (labels[i] == labels[i - 1]) ++n;
  return n;
}

bool is_feasible(Index frames, std::span<const int> labels) {
  return frames >= std::max<Index>(1, min_frames(labels));
}

LabelSeq collapse(std::span<const int> path) {
  LabelSeq out;
  int prev = -1;
  for (int c : path) {
    if (c != prev && c != kBlank) out.push_back(c);
    prev = c;
  }
  return out;
}

LossAndGrad ctc_loss_grad(const Eigen::Ref<const RowMatrix>& lattice, std::span<const int> labels) {
  check_labels(lattice, labels);
  const Index T = lattice.rows();
  const std::vector<int> ext = extend(labels);
  const auto S = ext.size();

  RowMatrix alpha = RowMatrix::Constant(T, static_cast<Index>(S), kNegInf);
  RowMatrix beta = RowMatrix::Constant(T, static_cast<Index>(S), kNegInf);
  alpha(0, 0) = lattice(0, ext[0]);
  if (S > 1) alpha(0, 1) = lattice(0, ext[1]);
  for (Index t = 1; t < T; ++t)
    for (std::size_t s = 0; s < S; ++s) {
      const auto si = static_cast<Index>(s);
      Scalar acc = alpha(t - 1, si);
      if (s >= 1) acc = log_add(acc, alpha(t - 1, si - 1));
      if (can_skip(ext, s)) acc = log_add(acc, alpha(t - 1, si - 2));
      if (acc != kNegInf) alpha(t, si) = acc + lattice(t, ext[s]);
    }

  // beta excludes the emission at its own frame.
  beta(T - 1, static_cast<Index>(S - 1)) = 0;
  if (S > 1) beta(T - 1, static_cast<Index>(S - 2)) = 0;
  for (Index t = T - 2; t >= 0; --t)
    for (std::size_t s = 0; s < S; ++s) {
      const auto si = static_cast<Index>(s);
      Scalar acc = beta(t + 1, si) + lattice(t + 1, ext[s]);
      if (s + 1 < S) acc = log_add(acc, beta(t + 1, si + 1) + lattice(t + 1, ext[s + 1]));
      if (s + 2 < S && can_skip(ext, s + 2)) acc = log_add(acc, beta(t + 1, si + 2) + lattice(t + 1, ext[s + 2]));
      beta(t, si) = acc;
    }

  Scalar log_p = alpha(T - 1, static_cast<Index>(S - 1));
  if (S > 1) log_p = log_add(log_p, alpha(T - 1, static_cast<Index>(S - 2)));

  LossAndGrad out;
  out.loss = -log_p;
  out.grad = RowMatrix::Zero(T, lattice.cols());
  if (log_p == kNegInf) return out;
  for (Index t = 0; t < T; ++t) {
    std::vector<Scalar> occupancy(static_cast<std::size_t>(lattice.cols()), kNegInf);
    for (std::size_t s = 0; s < S; ++s) {
      const auto k = static_cast<std::size_t>(ext[s]);
      occupancy[k] = log_add(occupancy[k], alpha(t, static_cast<Index>(s)) + beta(t, static_cast<Index>(s)));
    }
    for (Index k = 0; k < lattice.cols(); ++k) {
      const Scalar occ = occupancy[static_cast<std::size_t>(k)];
      if (occ != kNegInf) out.grad(t, k) = -std::exp(occ - log_p);
    }
  }
  return out;
}

Scalar ctc_brute_force(const Eigen::Ref<const RowMatrix>& lattice, std::span<const int> labels) {
  const Index T = lattice.rows();
  const Index C = lattice.cols();
  double space = 1;
  for (Index t = 0; t < T; ++t) {
    space *= static_cast<double>(C);
    if (space > 1e7) throw Error(ErrorCode::kOracleTooLarge, "search space exceeds 1e7 paths");
  }
  const LabelSeq target(labels.begin(), labels.end());
  std::vector<int> path(static_cast<std::size_t>(T), 0);
  long double total = 0;
  while (true) {
    if (collapse(path) == target) {
      long double lp = 0;
      for (Index t = 0; t < T; ++t) lp += lattice(t, path[static_cast<std::size_t>(t)]);
      total += std::exp(lp);
    }
    Index t = T - 1;
    while (t >= 0 && ++path[static_cast<std::size_t>(t)] == C) path[static_cast<std::size_t>(t--)] = 0;
    if (t < 0) break;
  }
  if (total <= 0) return std::numeric_limits<Scalar>::infinity();
  return static_cast<Scalar>(-std::log(total));
}

LabelSeq ctc_greedy_decode(const Eigen::Ref<const RowMatrix>& lattice) {
  std::vector<int> path(static_cast<std::size_t>(lattice.rows()));
  for (Index t = 0; t < lattice.rows(); ++t) {
    Index best = 0;
    lattice.row(t).maxCoeff(&best);
    path[static_cast<std::size_t>(t)] = static_cast<int>(best);
  }
  return collapse(path);
}

Alignment ctc_forced_align(const Eigen::Ref<const RowMatrix>& lattice, std::span<const int> labels) {
  check_labels(lattice, labels);
  const Index T = lattice.rows();
  const std::vector<int> ext = extend(labels);
  const auto S = static_cast<Index>(ext.size());
  RowMatrix delta = RowMatrix::Constant(T, S, kNegInf);
  Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> back(T, S);
  back.setConstant(-1);
  delta(0, 0) = lattice(0, ext[0]);
  if (S > 1) delta(0, 1) = lattice(0, ext[1]);
  for (Index t = 1; t < T; ++t)
    for (Index s = 0; s < S; ++s) {
      // Strict comparisons keep the earliest candidate: stay, then advance by one, then skip.
      Scalar best = delta(t - 1, s);
      int from = static_cast<int>(s);
      if (s >= 1 && delta(t - 1, s - 1) > best) {
        best = delta(t - 1, s - 1);
        from = static_cast<int>(s - 1);
      }
      if (can_skip(ext, static_cast<std::size_t>(s)) && delta(t - 1, s - 2) > best) {
        best = delta(t - 1, s - 2);
        from = static_cast<int>(s - 2);
      }
      if (best == kNegInf) continue;
      delta(t, s) = best + lattice(t, ext[static_cast<std::size_t>(s)]);
      back(t, s) = from;
    }

  Index state = S - 1;
  if (S > 1 && delta(T - 1, S - 2) > delta(T - 1, S - 1)) state = S - 2;
  if (delta(T - 1, state) == kNegInf)
    throw Error(ErrorCode::kInfeasibleLabel, "no path with nonzero probability");

  Alignment out;
  out.log_prob = delta(T - 1, state);
  out.states.assign(static_cast<std::size_t>(T), 0);
  out.classes.assign(static_cast<std::size_t>(T), 0);
  for (Index t = T - 1; t >= 0; --t) {
    out.states[static_cast<std::size_t>(t)] = static_cast<int>(state);
    out.classes[static_cast<std::size_t>(t)] = ext[static_cast<std::size_t>(state)];
    if (t > 0) state = back(t, state);
  }
  return out;
}

ad::Tensor ctc_loss(ad::Tape& tape, const ad::Tensor& log_probs, std::span<const int> labels) {
  LossAndGrad lg = ctc_loss_grad(log_probs.matrix(), labels);
  Vector flat = Eigen::Map<const Vector>(lg.grad.data(), lg.grad.size());
  return ad::linearized(tape, log_probs, lg.loss, std::move(flat));
}

void write_alignments(std::ostream& os, std::span<const AlignmentRecord> records) {
  for (const auto& r : records) {
    os << r.utt_id << '\t';
    for (std::size_t i = 0; i < r.classes.size(); ++i) os << (i ? " " : "") << r.classes[i];
    os << '\n';
  }
}

std::vector<AlignmentRecord> read_alignments(std::istream& is) {
  std::vector<AlignmentRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0)
      throw Error(ErrorCode::kParseFault, "alignment line " + std::to_string(line_no));
    AlignmentRecord r;
    r.utt_id = line.substr(0, tab);
    std::istringstream ids(line.substr(tab + 1));
    int c = 0;
    while (ids >> c) r.classes.push_back(c);
    if (!ids.eof()) throw Error(ErrorCode::kParseFault, "alignment line " + std::to_string(line_no));
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace lid::ctc
