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
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "lid/pipeline/pipeline.hpp"
#include "lid/util/parallel.hpp"

namespace lid::pipeline {
namespace fs = std::filesystem;

Dataset load_dataset(const corpus::Manifest& manifest, const frontend::FrontendConfig& frontend,
                     const std::string& cache_dir) {
  if (!cache_dir.empty()) fs::create_directories(cache_dir);
  Dataset out(manifest.records.size());
  parallel_for(out.size(), [&](std::size_t i) {
    const auto& r = manifest.records[i];
    frontend::FeatureMatrix feats;
    const std::string cached = cache_dir.empty() ? "" : (fs::path(cache_dir) / (r.utt_id + ".lmfb")).string();
    if (!cached.empty() && fs::exists(cached)) {
      feats = frontend::read_feature_cache(cached);
    } else {
      feats = frontend::log_mel_features(frontend::read_wav(manifest.audio_file(r)), frontend);
      if (!cached.empty()) frontend::write_feature_cache(cached, feats);
    }
    out[i] = {r.utt_id, ad::from_matrix(feats), r.dialect, r.labels, r.duration};
  });
  return out;
}

// ---------------------------------------------------------------------------
// Configuration and logging

TrainConfig TrainConfig::am_stage(const std::string& stage) {
  TrainConfig tc;
  tc.stage = stage;
  return tc;
}

TrainConfig TrainConfig::lid_stage(const std::string& stage) {
  TrainConfig tc;
  tc.stage = stage;
  tc.learning_rate = 3e-4;
  return tc;
}

namespace {

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const auto* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) throw Error(ErrorCode::kConfigFault, key + ": bad number '" + value + "'");
  return out;
}

}  // namespace

void TrainConfig::set(const std::string& key, const std::string& value) {
  auto positive = [&](Scalar v) {
    if (!(v > 0)) throw Error(ErrorCode::kConfigFault, key + " must be positive");
    return v;
  };
  if (key == "learning_rate") learning_rate = positive(parse_number<double>(key, value));
  else if (key == "weight_decay") weight_decay = parse_number<double>(key, value);
  else if (key == "batch_size") batch_size = static_cast<int>(positive(parse_number<int>(key, value)));
  else if (key == "max_epochs") max_epochs = static_cast<int>(positive(parse_number<int>(key, value)));
  else if (key == "patience") patience = static_cast<int>(positive(parse_number<int>(key, value)));
  else if (key == "min_improvement") min_improvement = parse_number<double>(key, value);
  else if (key == "converge_tolerance") converge_tolerance = parse_number<double>(key, value);
  else if (key == "validation_fraction") validation_fraction = parse_number<double>(key, value);
  else if (key == "seed") seed = parse_number<std::uint64_t>(key, value);
  else throw Error(ErrorCode::kConfigFault, "unknown training key " + key);
  if (weight_decay < 0 || min_improvement < 0 || converge_tolerance < 0 || validation_fraction < 0 ||
      validation_fraction >= 1)
    throw Error(ErrorCode::kConfigFault, key + " out of range");
}

TrainLog::TrainLog(const std::string& path) {
  auto f = std::make_shared<std::ofstream>(path, std::ios::app);
  if (!*f) throw Error(ErrorCode::kIoFault, "cannot open " + path);
  out_ = std::move(f);
}

void TrainLog::epoch(const std::string& stage, const EpochRecord& r, const std::string& metric_name, int skipped) {
  if (!out_) return;
  nlohmann::json j = {{"stage", stage},           {"epoch", r.epoch},       {"train_loss", r.train_loss},
                      {"val_loss", r.val_loss},   {metric_name, r.val_metric}, {"skipped", skipped}};
  *out_ << j.dump() << '\n' << std::flush;
}

void TrainLog::note(const std::string& stage, const std::string& message) {
  if (!out_) return;
  *out_ << nlohmann::json{{"stage", stage}, {"note", message}}.dump() << '\n' << std::flush;
}

// ---------------------------------------------------------------------------
// Losses

ad::Tensor class_nll(ad::Tape& tape, const ad::Tensor& log_probs, int label) {
  if (log_probs.rank() != 1 || label < 0 || label >= log_probs.dim(0))
    throw Error(ErrorCode::kInvalidShape, "class_nll: label " + std::to_string(label) + " outside " +
                                              ad::to_string(log_probs.shape()));
  const auto picked = ad::slice(tape, log_probs, {{label, label + 1}});
  return ad::mul(tape, picked, ad::full({1}, -1));
}

ad::Tensor frame_cross_entropy(ad::Tape& tape, const ad::Tensor& log_probs, std::span<const int> classes) {
  if (log_probs.rank() != 2 || log_probs.dim(0) != static_cast<Index>(classes.size()))
    throw Error(ErrorCode::kDataFault, "frame_cross_entropy: " + std::to_string(classes.size()) +
                                           " classes for lattice " + ad::to_string(log_probs.shape()));
  const Index frames = log_probs.dim(0), width = log_probs.dim(1);
  Vector onehot = Vector::Zero(frames * width);
  for (Index t = 0; t < frames; ++t) {
    const int c = classes[static_cast<std::size_t>(t)];
    if (c < 0 || c >= width) throw Error(ErrorCode::kDataFault, "frame class " + std::to_string(c) + " out of range");
    onehot[t * width + c] = 1;
  }
  const auto picked = ad::sum(tape, ad::mul(tape, log_probs, ad::tensor_new(log_probs.shape(), std::move(onehot))));
  return ad::mul(tape, picked, ad::full(picked.shape(), -1 / static_cast<Scalar>(frames)));
}

Index edit_distance(std::span<const int> a, std::span<const int> b) {
  std::vector<Index> row(b.size() + 1);
  std::iota(row.begin(), row.end(), Index{0});
  for (std::size_t i = 1; i <= a.size(); ++i) {
    Index diag = row[0];
    row[0] = static_cast<Index>(i);
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const Index up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[b.size()];
}

// ---------------------------------------------------------------------------
// Generic trainer

namespace {

struct EvalItem {
  Scalar loss = 0;
  Scalar metric_num = 0;
  Scalar metric_den = 0;
};

struct LoopSpec {
  std::string metric_name;
  bool higher_is_better = true;
  /// Items usable for training (already filtered for feasibility).
  std::vector<std::size_t> items;
  /// Dialect used to stratify the validation split.
  std::function<int(std::size_t)> group;
  std::function<ad::Tensor(std::size_t, nn::ForwardContext&)> loss;
  std::function<EvalItem(std::size_t, nn::ForwardContext&)> evaluate;
};

/// Every ceil(1/fraction)-th utterance of each group, in dataset order.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_validation(const LoopSpec& spec,
                                                                                 Scalar fraction) {
  std::vector<std::size_t> train, val;
  if (fraction <= 0) return {spec.items, {}};
  const auto stride = static_cast<std::size_t>(std::ceil(1 / fraction));
  std::map<int, std::size_t> seen;
  for (std::size_t i : spec.items) {
    const std::size_t k = seen[spec.group(i)]++;
    (k % stride == stride - 1 ? val : train).push_back(i);
  }
  if (train.empty()) return {spec.items, {}};
  return {train, val};
}

int converged_epoch(const std::vector<EpochRecord>& history, bool higher_is_better, Scalar tolerance) {
  if (history.empty()) return 0;
  const auto sign = higher_is_better ? Scalar{1} : Scalar{-1};
  Scalar best = sign * history.front().val_metric;
  for (const auto& r : history) best = std::max(best, sign * r.val_metric);
  for (const auto& r : history)
    if (sign * r.val_metric >= best - tolerance) return r.epoch;
  return 0;
}

nn::Rng item_rng(std::uint64_t seed, int epoch, std::size_t item) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(item)};
  return nn::Rng(seq);
}

EvalItem evaluate_set(const LoopSpec& spec, const std::vector<std::size_t>& set) {
  std::vector<EvalItem> parts(set.size());
  parallel_for(set.size(), [&](std::size_t k) {
    ad::Tape tape(ad::Tape::Mode::kInference);
    nn::ForwardContext ctx{tape, false, nullptr, nullptr};
    parts[k] = spec.evaluate(set[k], ctx);
  });
  EvalItem total;
  for (const auto& p : parts) {
    total.loss += p.loss;
    total.metric_num += p.metric_num;
    total.metric_den += p.metric_den;
  }
  if (!set.empty()) total.loss /= static_cast<Scalar>(set.size());
  return total;
}

struct LoopResult {
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  int epochs_to_converge = 0;
};

/// Minibatch Adam over per-utterance graphs. Gradients of a batch are summed
/// in item order and divided by the batch size; the parameters of the epoch
/// with the lowest validation loss are restored at the end.
LoopResult run_loop(nn::ParamStore& params, const LoopSpec& spec, const TrainConfig& tc, TrainLog& log,
                    int skipped) {
  if (spec.items.empty()) throw Error(ErrorCode::kDataFault, tc.stage + ": no usable training utterances");
  auto [train_set, val_set] = split_validation(spec, tc.validation_fraction);
  const auto& monitor = val_set.empty() ? train_set : val_set;
  log.note(tc.stage, "train=" + std::to_string(train_set.size()) + " val=" + std::to_string(val_set.size()) +
                         " skipped=" + std::to_string(skipped));

  AdamState adam;
  LoopResult result;
  Scalar best = std::numeric_limits<Scalar>::infinity();
  std::vector<Vector> best_values;
  int stale = 0;
  const auto batch = static_cast<std::size_t>(tc.batch_size);

  for (int epoch = 1; epoch <= tc.max_epochs; ++epoch) {
    std::vector<std::size_t> order = train_set;
    nn::Rng shuffle_rng(tc.seed * 1000003ULL + static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    Scalar train_loss = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t n = std::min(batch, order.size() - start);
      std::vector<ad::GradientMap> grads(n);
      std::vector<nn::BatchNormMoments> moments(n);
      std::vector<Scalar> losses(n);
      parallel_for(n, [&](std::size_t k) {
        const std::size_t item = order[start + k];
        ad::Tape tape;
        nn::Rng rng = item_rng(tc.seed, epoch, item);
        nn::ForwardContext ctx{tape, true, &rng, &moments[k]};
        const ad::Tensor loss = spec.loss(item, ctx);
        losses[k] = loss.item();
        grads[k] = tape.backward(loss);
      });
      ad::GradientMap total;
      for (std::size_t k = 0; k < n; ++k) {
        if (!std::isfinite(losses[k]))
          throw Error(ErrorCode::kNumericalFault, tc.stage + ": non-finite loss at epoch " + std::to_string(epoch));
        total.accumulate(grads[k], 1 / static_cast<Scalar>(n));
        train_loss += losses[k];
      }
      adam_step(params, named_gradients(params, total), adam, tc.learning_rate, tc.weight_decay);
      nn::update_batch_norm(params, moments);
    }
    train_loss /= static_cast<Scalar>(order.size());

    const EvalItem val = evaluate_set(spec, monitor);
    if (!std::isfinite(val.loss))
      throw Error(ErrorCode::kNumericalFault, tc.stage + ": non-finite validation loss at epoch " + std::to_string(epoch));
    EpochRecord rec{epoch, train_loss, val.loss, val.metric_den > 0 ? val.metric_num / val.metric_den : 0};
    result.history.push_back(rec);
    log.epoch(tc.stage, rec, spec.metric_name, skipped);

    if (val.loss < best - tc.min_improvement * std::abs(best) || best_values.empty()) {
      best = val.loss;
      result.best_epoch = epoch;
      best_values.clear();
      for (const auto& e : params.entries()) best_values.push_back(e.tensor.values());
      stale = 0;
    } else if (++stale >= tc.patience) {
      break;
    }
  }

  std::size_t k = 0;
  for (const auto& e : params.entries()) params.at(e.name).mutable_values() = best_values[k++];

  result.epochs_to_converge = converged_epoch(result.history, spec.higher_is_better, tc.converge_tolerance);
  return result;
}

Checkpoint make_checkpoint(const std::string& stage, const models::ModelConfig& config, std::uint64_t vocab_hash,
                           nn::ParamStore params, const LoopResult& loop) {
  Checkpoint c;
  c.stage = stage;
  c.config = config;
  c.epoch = loop.best_epoch;
  c.history = loop.history;
  c.vocab_hash = vocab_hash;
  c.params = std::move(params);
  return c;
}

bool am_feasible(const Utterance& u) {
  return u.features.dim(0) >= 8 && ctc::is_feasible(nn::trunk_frames(u.features.dim(0)), u.labels);
}

}  // namespace

// ---------------------------------------------------------------------------
// Stages

StageResult train_am_ctc(const Dataset& train, const models::ModelConfig& config, std::uint64_t vocab_hash,
                         const TrainConfig& tc, TrainLog& log) {
  models::AmModel am = models::make_am(config, tc.seed);
  LoopSpec spec;
  spec.metric_name = "per";
  spec.higher_is_better = false;
  int skipped = 0;
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (am_feasible(train[i])) spec.items.push_back(i);
    else ++skipped;
  }
  spec.group = [&](std::size_t i) { return train[i].dialect; };
  spec.loss = [&](std::size_t i, nn::ForwardContext& ctx) {
    return ctc::ctc_loss(ctx.tape, models::am_forward(train[i].features, am, ctx).lattice, train[i].labels);
  };
  spec.evaluate = [&](std::size_t i, nn::ForwardContext& ctx) {
    const auto lattice = models::am_forward(train[i].features, am, ctx).lattice;
    const auto loss = ctc::ctc_loss(ctx.tape, lattice, train[i].labels);
    const auto hyp = ctc::ctc_greedy_decode(lattice.matrix());
    return EvalItem{loss.item(), static_cast<Scalar>(edit_distance(hyp, train[i].labels)),
                    static_cast<Scalar>(train[i].labels.size())};
  };
  const LoopResult loop = run_loop(am.params, spec, tc, log, skipped);
  return {make_checkpoint(tc.stage, config, vocab_hash, am.params, loop), loop.epochs_to_converge, skipped};
}

int epochs_to_converge(const std::vector<EpochRecord>& history, const std::string& stage, Scalar tolerance) {
  return converged_epoch(history, stage != "am", tolerance);
}

std::vector<ad::Tensor> am_features(const Dataset& data, const models::AmModel& am) {
  std::vector<ad::Tensor> out(data.size());
  parallel_for(data.size(), [&](std::size_t i) {
    ad::Tape tape(ad::Tape::Mode::kInference);
    nn::ForwardContext ctx{tape, false, nullptr, nullptr};
    out[i] = models::am_intermediate(data[i].features, am, ctx);
  });
  return out;
}

std::vector<ad::Tensor> cnn_features(const Dataset& data, const models::FrameCnn& cnn) {
  std::vector<ad::Tensor> out(data.size());
  parallel_for(data.size(), [&](std::size_t i) {
    ad::Tape tape(ad::Tape::Mode::kInference);
    nn::ForwardContext ctx{tape, false, nullptr, nullptr};
    out[i] = models::frame_cnn_forward(data[i].features, cnn, ctx).intermediate;
  });
  return out;
}

StageResult train_classifier(const std::vector<ad::Tensor>& inputs, const Dataset& data,
                             models::SequenceClassifier model, const models::ModelConfig& config,
                             std::uint64_t vocab_hash, const TrainConfig& tc, TrainLog& log) {
  if (inputs.size() != data.size())
    throw Error(ErrorCode::kDataFault, "train_classifier: inputs do not match the dataset");
  LoopSpec spec;
  spec.metric_name = "accuracy";
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data[i].dialect < 0 || data[i].dialect >= model.n_classes)
      throw Error(ErrorCode::kDataFault, data[i].utt_id + ": dialect " + std::to_string(data[i].dialect) +
                                             " outside the model's " + std::to_string(model.n_classes) + " classes");
    spec.items.push_back(i);
  }
  spec.group = [&](std::size_t i) { return data[i].dialect; };
  spec.loss = [&](std::size_t i, nn::ForwardContext& ctx) {
    return class_nll(ctx.tape, models::classify(inputs[i], model, ctx), data[i].dialect);
  };
  spec.evaluate = [&](std::size_t i, nn::ForwardContext& ctx) {
    const auto lp = models::classify(inputs[i], model, ctx);
    Index best = 0;
    lp.values().maxCoeff(&best);
    return EvalItem{-lp.values()[data[i].dialect], best == data[i].dialect ? Scalar{1} : Scalar{0}, 1};
  };
  const LoopResult loop = run_loop(model.params, spec, tc, log, 0);
  return {make_checkpoint(tc.stage, config, vocab_hash, model.params, loop), loop.epochs_to_converge, 0};
}

StageResult train_lid_on_intermediate(const Dataset& train, const Checkpoint& am_checkpoint, std::uint64_t vocab_hash,
                                      const TrainConfig& tc, TrainLog& log) {
  require_compatible(am_checkpoint, vocab_hash, "am");
  const models::AmModel am = am_from_checkpoint(am_checkpoint);
  const auto inputs = am_features(train, am);
  return train_classifier(inputs, train, models::make_lid_head(am_checkpoint.config, tc.seed), am_checkpoint.config,
                          vocab_hash, tc, log);
}

AlignmentTable align_corpus(const Dataset& data, const models::AmModel& am) {
  std::vector<std::optional<ctc::AlignmentRecord>> parts(data.size());
  parallel_for(data.size(), [&](std::size_t i) {
    if (!am_feasible(data[i])) return;
    ad::Tape tape(ad::Tape::Mode::kInference);
    nn::ForwardContext ctx{tape, false, nullptr, nullptr};
    const auto lattice = models::am_forward(data[i].features, am, ctx).lattice;
    parts[i] = ctc::AlignmentRecord{data[i].utt_id, ctc::ctc_forced_align(lattice.matrix(), data[i].labels).classes};
  });
  AlignmentTable table;
  for (auto& p : parts) {
    if (p) table.records.push_back(std::move(*p));
    else ++table.skipped;
  }
  return table;
}

StageResult train_frame_ce_cnn(const Dataset& train, const AlignmentTable& alignments,
                               const models::ModelConfig& config, std::uint64_t vocab_hash, const TrainConfig& tc,
                               TrainLog& log) {
  std::map<std::string, const std::vector<int>*> by_id;
  for (const auto& r : alignments.records) by_id[r.utt_id] = &r.classes;
  std::vector<const std::vector<int>*> targets(train.size(), nullptr);
  LoopSpec spec;
  spec.metric_name = "frame_accuracy";
  int skipped = 0;
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto it = by_id.find(train[i].utt_id);
    if (it == by_id.end()) {
      if (am_feasible(train[i])) throw Error(ErrorCode::kDataFault, train[i].utt_id + ": no alignment");
      ++skipped;
      continue;
    }
    const Index frames = nn::trunk_frames(train[i].features.dim(0));
    if (static_cast<Index>(it->second->size()) != frames)
      throw Error(ErrorCode::kDataFault, train[i].utt_id + ": alignment has " + std::to_string(it->second->size()) +
                                             " frames, trunk gives " + std::to_string(frames));
    targets[i] = it->second;
    spec.items.push_back(i);
  }
  models::FrameCnn cnn = models::make_frame_cnn(config, tc.seed);
  spec.group = [&](std::size_t i) { return train[i].dialect; };
  spec.loss = [&](std::size_t i, nn::ForwardContext& ctx) {
    return frame_cross_entropy(ctx.tape, models::frame_cnn_forward(train[i].features, cnn, ctx).log_probs,
                               *targets[i]);
  };
  spec.evaluate = [&](std::size_t i, nn::ForwardContext& ctx) {
    const auto lp = models::frame_cnn_forward(train[i].features, cnn, ctx).log_probs;
    const auto loss = frame_cross_entropy(ctx.tape, lp, *targets[i]);
    const auto m = lp.matrix();
    Scalar correct = 0;
    for (Index t = 0; t < m.rows(); ++t) {
      Index best = 0;
      m.row(t).maxCoeff(&best);
      correct += best == (*targets[i])[static_cast<std::size_t>(t)] ? 1 : 0;
    }
    return EvalItem{loss.item(), correct, static_cast<Scalar>(m.rows())};
  };
  const LoopResult loop = run_loop(cnn.params, spec, tc, log, skipped);
  return {make_checkpoint(tc.stage, config, vocab_hash, cnn.params, loop), loop.epochs_to_converge, skipped};
}

}  // namespace lid::pipeline
