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
#include <iostream>

#include <CLI11.hpp>

#include "lid/eval/eval.hpp"
#include "lid/util/config_file.hpp"

namespace fs = std::filesystem;
using namespace lid;

namespace {

// Vocabulary of a corpus directory: vocab.txt when present, otherwise the
// synthetic inventory named by spec.toml.
models::Vocab corpus_vocab(const std::string& dir) {
  const fs::path file = fs::path(dir) / "vocab.txt";
  if (fs::exists(file)) return models::read_vocab(file.string());
  const fs::path spec = fs::path(dir) / "spec.toml";
  if (!fs::exists(spec)) throw Error(ErrorCode::kConfigFault, dir + ": neither vocab.txt nor spec.toml found");
  return models::synthetic_vocab(corpus::load_synth_spec(spec.string()).vocab_size);
}

corpus::Manifest load_checked(const std::string& path) {
  corpus::Manifest m = corpus::load_manifest(path);
  if (!m.missing_audio.empty())
    throw Error(ErrorCode::kDataFault, path + ": " + std::to_string(m.missing_audio.size()) +
                                           " audio files missing, first " + m.missing_audio.front());
  return m;
}

int run_synth(const std::string& spec_path, const std::string& out) {
  const corpus::SynthSpec spec = spec_path.empty() ? corpus::SynthSpec{} : corpus::load_synth_spec(spec_path);
  const auto [train, test] = corpus::synth_corpus(spec, out);
  std::cout << "wrote " << train.records.size() << " train and " << test.records.size() << " test utterances to "
            << out << "\n";
  return 0;
}

int run_featurize(const std::string& manifest, const std::string& cache) {
  const auto data = pipeline::load_dataset(load_checked(manifest), {}, cache);
  std::cout << "cached features for " << data.size() << " utterances in " << cache << "\n";
  return 0;
}

struct TrainArgs {
  std::string system, corpus, config, out, am, cache;
  std::optional<std::uint64_t> seed;
};

int run_train(const TrainArgs& a) {
  const corpus::Manifest manifest = load_checked((fs::path(a.corpus) / "train.tsv").string());
  const models::Vocab vocab = corpus_vocab(a.corpus);
  pipeline::RunConfig rc;
  rc.model = models::ModelConfig::micro(vocab.size(), std::max(manifest.n_dialects(), 2));
  if (!a.config.empty()) rc = pipeline::load_run_config(a.config, rc);
  if (a.seed)
    for (pipeline::TrainConfig* tc : {&rc.am, &rc.lid, &rc.cnn, &rc.baseline}) tc->seed = *a.seed;
  rc.vocab_hash = vocab.hash();
  rc.out_dir = a.out;

  const pipeline::Dataset train = pipeline::load_dataset(manifest, {}, a.cache);
  pipeline::SystemRun run;
  if (a.system == "baseline") {
    run = pipeline::run_baseline(train, rc);
  } else if (a.system == "two-stage") {
    run = pipeline::run_two_stage(train, rc);
  } else {
    std::optional<pipeline::Checkpoint> am;
    if (!a.am.empty()) am = pipeline::load_checkpoint(a.am);
    run = pipeline::run_three_stage(train, rc, am ? &*am : nullptr);
  }
  std::cout << run.system << ":";
  for (const auto& e : run.convergence) std::cout << " " << e.stage << "=" << e.epochs;
  std::cout << " epochs to converge\n";
  return 0;
}

int run_align(const std::string& am_path, const std::string& manifest, const std::string& out) {
  const pipeline::Checkpoint ckpt = pipeline::load_checkpoint(am_path);
  if (ckpt.stage != "am") throw Error(ErrorCode::kIncompatibleCheckpoint, am_path + " is not an acoustic model");
  const auto table = pipeline::align_corpus(pipeline::load_dataset(load_checked(manifest)),
                                            pipeline::am_from_checkpoint(ckpt));
  std::ofstream os(out);
  if (!os) throw Error(ErrorCode::kIoFault, "cannot write " + out);
  ctc::write_alignments(os, table.records);
  std::cout << "aligned " << table.records.size() << " utterances, skipped " << table.skipped << "\n";
  return 0;
}

int run_decode(const std::string& am_path, const std::string& wav) {
  const pipeline::Checkpoint ckpt = pipeline::load_checkpoint(am_path);
  if (ckpt.stage != "am") throw Error(ErrorCode::kIncompatibleCheckpoint, am_path + " is not an acoustic model");
  const models::AmModel am = pipeline::am_from_checkpoint(ckpt);
  const auto feats = ad::from_matrix(frontend::log_mel_features(frontend::read_wav(wav), {}));
  ad::Tape tape(ad::Tape::Mode::kInference);
  nn::ForwardContext ctx{tape};
  const LabelSeq labels = ctc::ctc_greedy_decode(models::am_forward(feats, am, ctx).lattice.matrix());
  for (std::size_t i = 0; i < labels.size(); ++i) std::cout << (i ? " " : "") << labels[i];
  std::cout << "\n";
  return 0;
}

int run_evaluate(const std::string& system_dir, const std::string& test, const std::string& report) {
  const eval::System sys = eval::load_system(system_dir);
  const auto data = pipeline::load_dataset(load_checked(test));
  const eval::Metrics m = eval::evaluate(sys.predictor(), data, sys.n_classes(), sys.kind);
  eval::write_report(m, report);
  std::cout << sys.kind << ": all " << m.acc_all << "%  <=3s " << m.acc_short << "%  >3s " << m.acc_long << "%  ("
            << m.n_all << " utterances)\n";
  return 0;
}

int run_compare(const std::vector<std::string>& reports, const std::string& csv) {
  std::vector<eval::Metrics> metrics;
  for (const auto& r : reports) metrics.push_back(eval::read_report(r));
  const eval::Comparison c = eval::compare_systems(metrics);
  std::cout << c.text;
  if (!csv.empty()) {
    std::ofstream os(csv);
    if (!(os << c.csv)) throw Error(ErrorCode::kIoFault, "cannot write " + csv);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dialect identification with phonetic intermediate features"};
  app.require_subcommand(1);

  std::string spec_path, out;
  auto* synth = app.add_subcommand("synth-corpus", "Generate a synthetic dialect corpus");
  synth->add_option("--spec", spec_path, "Corpus spec (TOML)")->check(CLI::ExistingFile);
  synth->add_option("--out", out, "Output directory")->required();

  std::string manifest, cache;
  auto* featurize = app.add_subcommand("featurize", "Cache log-mel features for a manifest");
  featurize->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
  featurize->add_option("--cache", cache)->required();

  TrainArgs ta;
  std::uint64_t seed = 0;
  auto* train = app.add_subcommand("train", "Train a system");
  train->add_option("--system", ta.system)->required()->check(CLI::IsMember({"baseline", "two-stage", "three-stage"}));
  train->add_option("--corpus", ta.corpus, "Directory with train.tsv")->required()->check(CLI::ExistingDirectory);
  train->add_option("--config", ta.config, "Run config (TOML)")->check(CLI::ExistingFile);
  train->add_option("--out", ta.out)->required();
  auto* seed_opt = train->add_option("--seed", seed);
  train->add_option("--am", ta.am, "Reuse this acoustic model (three-stage)")->check(CLI::ExistingFile);
  train->add_option("--cache", ta.cache, "Feature cache directory");

  std::string am_path, align_out;
  auto* align = app.add_subcommand("align", "Force-align a manifest with an acoustic model");
  align->add_option("--am", am_path)->required()->check(CLI::ExistingFile);
  align->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
  align->add_option("--out", align_out)->required();

  std::string wav;
  auto* decode = app.add_subcommand("decode", "Greedy phoneme decode of one WAV file");
  decode->add_option("--am", am_path)->required()->check(CLI::ExistingFile);
  decode->add_option("--utt", wav)->required()->check(CLI::ExistingFile);

  std::string system_dir, test, report;
  auto* evaluate = app.add_subcommand("evaluate", "Score a trained system on a test manifest");
  evaluate->add_option("--system", system_dir)->required()->check(CLI::ExistingDirectory);
  evaluate->add_option("--test", test)->required()->check(CLI::ExistingFile);
  evaluate->add_option("--report", report)->required();

  std::vector<std::string> reports;
  std::string csv;
  auto* compare = app.add_subcommand("compare", "Tabulate evaluation reports");
  compare->add_option("--reports", reports)->required()->expected(2, -1)->check(CLI::ExistingDirectory);
  compare->add_option("--csv", csv, "Also write the table as CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*synth) return run_synth(spec_path, out);
    if (*featurize) return run_featurize(manifest, cache);
    if (*train) {
      if (*seed_opt) ta.seed = seed;
      return run_train(ta);
    }
    if (*align) return run_align(am_path, manifest, align_out);
    if (*decode) return run_decode(am_path, wav);
    if (*evaluate) return run_evaluate(system_dir, test, report);
    if (*compare) return run_compare(reports, csv);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
