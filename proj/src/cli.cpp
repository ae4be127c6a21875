// Copyright 2026  The hvector Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#include "hvector/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "CLI11.hpp"
#include "hvector/checkpoint.hpp"
#include "hvector/corpus.hpp"
#include "hvector/scoring.hpp"
#include "hvector/text.hpp"
#include "hvector/trainer.hpp"

namespace hvector {
namespace {

namespace fs = std::filesystem;

struct Options {
  // shared
  std::string out;
  std::uint64_t seed = 0;
  bool force = false;
  int precision = 64;
  // synth
  Index speakers = 10, utts = 60;
  double dur = 1.0;
  // prepare / train / embed / score-id
  std::string manifest;
  int len = 1;
  std::string model = "hvector";
  std::string preset = "desk";
  std::string config_file;
  std::vector<std::string> sets;
  double train_fraction = 0.9;
  std::string checkpoint;
  // scoring
  std::string enrol, test, eval, plda_train;
  std::string backend = "plda";
  Index lda_dim = -1;
  bool length_norm = false;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void echo(std::ostream& out, const std::string& text) {
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) out << "# " << line << '\n';
}

void require_path(const std::string& path, const std::string& what, const std::string& hint) {
  if (path.empty()) throw ConfigError(what + " not given; " + hint);
  if (!fs::exists(path)) throw IoError(what + " '" + path + "' not found; " + hint);
}

// An existing non-empty directory is only reused with --force; files inside
// are then overwritten in place.
void output_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir) && !(fs::is_directory(dir) && fs::is_empty(dir)) && !force)
    throw IoError("output '" + dir.string() + "' already exists; pass --force to overwrite");
  fs::create_directories(dir);
}

void output_file(const fs::path& file, bool force) {
  if (fs::exists(file) && !force)
    throw IoError("output '" + file.string() + "' already exists; pass --force to overwrite");
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
}

const char* kTrainHint = "run `hvector train --manifest <features> --out <dir>` first";
const char* kPrepareHint = "run `hvector prepare` to build a feature manifest";
const char* kEmbedHint = "run `hvector embed` to produce embedding CSVs";

int cmd_synth(const Options& o, std::ostream& out) {
  corpus::SynthOptions so;
  so.n_speakers = o.speakers;
  so.utts_per_speaker = o.utts;
  so.duration_s = o.dur;
  so.seed = o.seed;
  if (so.n_speakers < 2) throw ConfigError("--speakers must be at least 2, got " + std::to_string(so.n_speakers));
  echo(out, "command=synth\nspeakers=" + std::to_string(so.n_speakers) + "\nutts=" +
                std::to_string(so.utts_per_speaker) + "\ndur=" + format_double(so.duration_s) +
                "\nseed=" + std::to_string(so.seed) + "\nout=" + o.out);
  output_dir(o.out, o.force);
  const corpus::Manifest m = corpus::synth_corpus(so, o.out);
  out << "wrote " << m.size() << " utterances of " << so.n_speakers << " speakers to "
      << (fs::path(o.out) / "manifest.tsv").string() << '\n';
  return 0;
}

int cmd_prepare(const Options& o, std::ostream& out, std::ostream& err) {
  echo(out, "command=prepare\nmanifest=" + o.manifest + "\nlen=" + std::to_string(o.len) + "\nout=" + o.out);
  require_path(o.manifest, "audio manifest", "run `hvector synth` or write a manifest first");
  const corpus::Manifest audio_m = corpus::read_manifest(o.manifest);
  if (audio_m.size() == 0) throw DataError("audio manifest '" + o.manifest + "' lists no utterances");
  output_dir(o.out, o.force);
  const corpus::PrepareReport rep = corpus::prepare_features(audio_m, o.out, double(o.len));
  const fs::path mpath = fs::path(o.out) / "manifest.tsv";
  corpus::write_manifest(mpath, rep.features);
  for (const auto& f : rep.failures) err << "failed: " << f << '\n';
  out << "prepared " << rep.features.size() << " windows from " << audio_m.size() - rep.failures.size() << " of "
      << audio_m.size() << " files (" << rep.failures.size() << " failed) -> " << mpath.string() << '\n';
  return rep.failures.empty() ? 0 : 1;
}

void apply_setting(ModelConfig& mc, TrainConfig& tc, const std::string& key, const std::string& value) {
  if (!tc.set(key, value) && !mc.set(key, value)) throw ConfigError("unknown config key '" + key + "'");
}

template <typename S>
ModelParams<double> fit(const ModelConfig& cfg, const ModelParams<double>& init, const corpus::LoadedSet& tr,
                        const corpus::LoadedSet& dev, const TrainConfig& tc, std::ostream& log, std::ostream& out,
                        int& best_epoch, double& best_acc) {
  ModelParams<S> p = init.cast<S>();
  const TrainResult<S> r = train(cfg, p, tr.view(), dev.view(), tc, &log,
                                 [&](const EpochStats& s) { out << format_log_line(s) << '\n' << std::flush; });
  best_epoch = r.best_epoch;
  best_acc = r.best_dev_acc;
  return r.best.template cast<double>();
}

int cmd_train(const Options& o, const CLI::App& sub, std::ostream& out) {
  require_path(o.manifest, "feature manifest", kPrepareHint);
  const corpus::Manifest feats = corpus::read_manifest(o.manifest);
  if (feats.size() == 0) throw DataError("feature manifest '" + o.manifest + "' is empty");
  const std::vector<std::string> speakers = feats.speakers();

  ModelConfig mc;
  if (o.preset == "desk") mc = ModelConfig::desk(Index(speakers.size()));
  else mc = ModelConfig::full(Index(speakers.size()));
  mc.kind = parse_model_kind(o.model);
  if (auto it = feats.meta.find("n_fragments"); it != feats.meta.end()) mc.n_fragments = parse_int(it->first, it->second);
  if (auto it = feats.meta.find("frames_per_fragment"); it != feats.meta.end())
    mc.frames_per_fragment = parse_int(it->first, it->second);
  TrainConfig tc;
  if (!o.config_file.empty()) {
    require_path(o.config_file, "config file", "check the --config path");
    for (const auto& [k, v] : parse_key_values(read_text_file(o.config_file))) apply_setting(mc, tc, k, v);
  }
  for (const auto& s : o.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    apply_setting(mc, tc, trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
  }
  // explicit flags beat the config file and --set
  if (sub.count("--seed")) tc.seed = o.seed;
  if (sub.count("--model")) mc.kind = parse_model_kind(o.model);
  if (mc.n_speakers != Index(speakers.size()))
    throw ConfigError("n_speakers=" + std::to_string(mc.n_speakers) + " but the manifest has " +
                      std::to_string(speakers.size()) + " speakers");
  mc.dropout = tc.dropout;
  mc.validate();
  tc.validate();

  const std::string resolved = "command=train\nmanifest=" + o.manifest + "\nout=" + o.out + "\npreset=" + o.preset +
                               "\nprecision=" + std::to_string(o.precision) +
                               "\ntrain_fraction=" + format_double(o.train_fraction) + "\n" + mc.to_text() +
                               tc.to_text();
  echo(out, resolved);
  output_dir(o.out, o.force);
  const fs::path dir(o.out);
  write_text_file(dir / "run.cfg", resolved);

  const auto [tr_m, dev_m] = corpus::split(feats, o.train_fraction, tc.seed);
  corpus::write_manifest(dir / "train.tsv", tr_m);
  corpus::write_manifest(dir / "test.tsv", dev_m);
  const corpus::LoadedSet tr = corpus::load_set(tr_m, speakers, mc.n_fragments);
  const corpus::LoadedSet dev = corpus::load_set(dev_m, speakers, mc.n_fragments);

  const ModelParams<double> init = init_params<double>(mc, tc.seed);
  std::ofstream log(dir / "train.log");
  if (!log) throw IoError("cannot write " + (dir / "train.log").string());
  log << "epoch\tloss\ttrain_acc\tdev_acc\n";
  out << "epoch\tloss\ttrain_acc\tdev_acc\n";
  int best_epoch = 0;
  double best_acc = 0;
  Checkpoint ck{mc, speakers, {}};
  if (o.precision == 64) ck.params = fit<double>(mc, init, tr, dev, tc, log, out, best_epoch, best_acc);
  else ck.params = fit<float>(mc, init, tr, dev, tc, log, out, best_epoch, best_acc);
  save_checkpoint(dir, ck);
  out << "best_epoch=" << best_epoch << " dev_accuracy=" << fmt("%.6f", best_acc) << '\n'
      << "checkpoint written to " << dir.string() << '\n';
  return 0;
}

Checkpoint open_checkpoint(const std::string& path) {
  require_path(path, "checkpoint", kTrainHint);
  return load_checkpoint(path);
}

corpus::LoadedSet open_features(const std::string& path, const std::vector<std::string>& speakers, Index n_fragments) {
  require_path(path, "feature manifest", kPrepareHint);
  const corpus::Manifest m = corpus::read_manifest(path);
  if (m.size() == 0) throw DataError("feature manifest '" + path + "' is empty");
  return corpus::load_set(m, speakers.empty() ? m.speakers() : speakers, n_fragments);
}

int cmd_embed(const Options& o, std::ostream& out) {
  echo(out, "command=embed\ncheckpoint=" + o.checkpoint + "\nmanifest=" + o.manifest + "\nprecision=" +
                std::to_string(o.precision) + "\nout=" + o.out);
  const Checkpoint ck = open_checkpoint(o.checkpoint);
  const corpus::LoadedSet set = open_features(o.manifest, {}, ck.config.n_fragments);
  output_file(o.out, o.force);
  std::vector<const audio::UtteranceFeatures*> utts;
  for (const auto& f : set.features) utts.push_back(&f);
  TensorD e;
  if (o.precision == 64) {
    ModelParams<double> p = ck.params;
    e = embed_all(p, utts, ck.config);
  } else {
    ModelParams<float> p = ck.params.cast<float>();
    e = TensorD::from_matrix(embed_all(p, utts, ck.config).mat().cast<double>());
  }
  std::vector<EmbeddingRow> rows;
  for (std::size_t i = 0; i < utts.size(); ++i)
    rows.push_back({utts[i]->utterance_id, utts[i]->speaker_id, e.mat().row(Index(i)).transpose()});
  write_embedding_csv(o.out, rows);
  out << "wrote " << rows.size() << " embeddings of dimension " << e.cols() << " to " << o.out << '\n';
  return 0;
}

std::vector<EmbeddingRow> open_embeddings(const std::string& path, const std::string& what) {
  require_path(path, what, kEmbedHint);
  return read_embedding_csv(path);
}

scoring::PldaModel fit_backend(const Options& o, std::ostream& out, std::ostream& err) {
  scoring::PldaOptions po;
  po.reduced_dim = o.lda_dim;
  po.length_norm = o.length_norm;
  scoring::PldaModel m = scoring::plda_fit(open_embeddings(o.plda_train, "PLDA training embeddings"), po);
  for (const auto& w : m.warnings) err << "warning: " << w << '\n';
  out << "# plda_dim=" << m.plda.mu.size() << '\n';
  return m;
}

int cmd_score_id(const Options& o, std::ostream& out, std::ostream& err) {
  if (!o.checkpoint.empty()) {
    echo(out, "command=score-id\ncheckpoint=" + o.checkpoint + "\nmanifest=" + o.manifest);
    Checkpoint ck = open_checkpoint(o.checkpoint);
    const corpus::LoadedSet set = open_features(o.manifest, ck.speakers, ck.config.n_fragments);
    out << "accuracy=" << fmt("%.6f", evaluate_accuracy(ck.params, set.view(), ck.config)) << '\n';
    return 0;
  }
  echo(out, "command=score-id\nenrol=" + o.enrol + "\ntest=" + o.test + "\nbackend=" + o.backend +
                (o.backend == "plda" ? "\nplda_train=" + o.plda_train : ""));
  const auto enrol = open_embeddings(o.enrol, "enrolment embeddings");
  const auto test = open_embeddings(o.test, "test embeddings");
  std::vector<std::string> predicted;
  if (o.backend == "plda") {
    const scoring::PldaModel m = fit_backend(o, out, err);
    predicted = scoring::identify(enrol, test, scoring::Backend::kPlda, &m);
  } else {
    predicted = scoring::identify(enrol, test, scoring::Backend::kCosine);
  }
  std::vector<std::string> truth;
  for (const auto& t : test) truth.push_back(t.speaker_id);
  out << "accuracy=" << fmt("%.6f", scoring::accuracy(predicted, truth)) << '\n';
  return 0;
}

int cmd_score_ver(const Options& o, std::ostream& out, std::ostream& err) {
  echo(out, "command=score-ver\nenrol=" + o.enrol + "\neval=" + o.eval + "\nbackend=" + o.backend +
                (o.backend == "plda" ? "\nplda_train=" + o.plda_train + "\nlda_dim=" + std::to_string(o.lda_dim) +
                                           "\nlength_norm=" + std::to_string(int(o.length_norm))
                                     : "") +
                "\nout=" + o.out);
  const auto enrol = open_embeddings(o.enrol, "enrolment embeddings");
  const auto eval = open_embeddings(o.eval, "evaluation embeddings");
  output_file(o.out, o.force);
  scoring::PldaModel m;
  if (o.backend == "plda") m = fit_backend(o, out, err);
  std::vector<scoring::ScoredTrialRow> rows;
  std::vector<scoring::ScoredTrial> trials;
  for (const auto& t : scoring::make_trials(enrol, eval)) {
    const double s = o.backend == "plda" ? scoring::plda_score(m, t.enrol_vector, t.test_vector)
                                         : scoring::cosine_score(t.enrol_vector, t.test_vector);
    rows.push_back({t.enrol_speaker, t.test_utterance, s, t.target});
    trials.push_back({s, t.target});
  }
  scoring::write_trials_csv(o.out, rows);
  out << "trials=" << rows.size() << '\n' << scoring::format_eer(scoring::compute_eer(trials)) << '\n';
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Hierarchical attention speaker embeddings", "hvector"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "Generate a synthetic speaker corpus");
  synth->add_option("--speakers", o.speakers, "Number of speakers (at least 2)")->capture_default_str();
  synth->add_option("--utts", o.utts, "Utterances per speaker")->capture_default_str();
  synth->add_option("--dur", o.dur, "Utterance duration in seconds")->capture_default_str();
  synth->add_option("--seed", o.seed, "Seed")->capture_default_str();
  synth->add_option("--out", o.out, "Output directory")->required();
  synth->add_flag("--force", o.force, "Overwrite an existing output directory");

  auto* prepare = app.add_subcommand("prepare", "VAD, windowing and MFCC extraction");
  prepare->add_option("--manifest", o.manifest, "Audio manifest")->required();
  prepare->add_option("--len", o.len, "Window length in seconds")->check(CLI::IsMember({1, 3}))->capture_default_str();
  prepare->add_option("--out", o.out, "Output directory")->required();
  prepare->add_flag("--force", o.force, "Overwrite an existing output directory");

  auto* train_cmd = app.add_subcommand("train", "Train a speaker classifier");
  train_cmd->add_option("--manifest", o.manifest, "Feature manifest")->required();
  train_cmd->add_option("--out", o.out, "Checkpoint directory")->required();
  train_cmd->add_option("--model", o.model, "Architecture")
      ->check(CLI::IsMember({"hvector", "xvector", "xvector_attn"}))
      ->capture_default_str();
  train_cmd->add_option("--preset", o.preset, "Layer sizes")->check(CLI::IsMember({"desk", "full"}))->capture_default_str();
  train_cmd->add_option("--config", o.config_file, "key=value config file");
  train_cmd->add_option("--set", o.sets, "key=value override, may repeat");
  train_cmd->add_option("--seed", o.seed, "Seed for init, split, shuffling and dropout");
  train_cmd->add_option("--train-fraction", o.train_fraction, "Per-speaker train share")->capture_default_str();
  train_cmd->add_option("--precision", o.precision, "Float width")->check(CLI::IsMember({32, 64}))->capture_default_str();
  train_cmd->add_flag("--force", o.force, "Overwrite an existing checkpoint directory");

  auto* embed_cmd = app.add_subcommand("embed", "Extract embeddings to CSV");
  embed_cmd->add_option("--checkpoint", o.checkpoint, "Checkpoint directory")->required();
  embed_cmd->add_option("--manifest", o.manifest, "Feature manifest")->required();
  embed_cmd->add_option("--out", o.out, "Embedding CSV")->required();
  embed_cmd->add_option("--precision", o.precision, "Float width")->check(CLI::IsMember({32, 64}))->capture_default_str();
  embed_cmd->add_flag("--force", o.force, "Overwrite an existing file");

  auto* score_id = app.add_subcommand("score-id", "Closed-set identification accuracy");
  auto* id_ck = score_id->add_option("--checkpoint", o.checkpoint, "Classify with the network's output layer");
  auto* id_man = score_id->add_option("--manifest", o.manifest, "Feature manifest for --checkpoint");
  auto* id_enrol = score_id->add_option("--enrol", o.enrol, "Enrolment embedding CSV");
  auto* id_test = score_id->add_option("--test", o.test, "Test embedding CSV");
  score_id->add_option("--backend", o.backend, "Embedding backend")
      ->check(CLI::IsMember({"plda", "cosine"}))
      ->capture_default_str();
  score_id->add_option("--plda-train", o.plda_train, "Embeddings to fit PLDA on");
  score_id->add_option("--lda-dim", o.lda_dim, "LDA output size (-1: automatic)")->capture_default_str();
  score_id->add_flag("--length-norm", o.length_norm, "Length-normalise before LDA");
  id_ck->needs(id_man);
  id_man->needs(id_ck);
  id_enrol->needs(id_test);
  id_test->needs(id_enrol);
  id_ck->excludes(id_enrol);

  auto* score_ver = app.add_subcommand("score-ver", "Verification trials and EER");
  score_ver->add_option("--enrol", o.enrol, "Enrolment embedding CSV")->required();
  score_ver->add_option("--eval", o.eval, "Evaluation embedding CSV")->required();
  score_ver->add_option("--backend", o.backend, "Scoring backend")
      ->check(CLI::IsMember({"plda", "cosine"}))
      ->capture_default_str();
  score_ver->add_option("--plda-train", o.plda_train, "Embeddings to fit PLDA on");
  score_ver->add_option("--lda-dim", o.lda_dim, "LDA output size (-1: automatic)")->capture_default_str();
  score_ver->add_flag("--length-norm", o.length_norm, "Length-normalise before LDA");
  score_ver->add_option("--out", o.out, "Trials CSV")->required();
  score_ver->add_flag("--force", o.force, "Overwrite an existing file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }
  try {
    if (*synth) return cmd_synth(o, out);
    if (*prepare) return cmd_prepare(o, out, err);
    if (*train_cmd) return cmd_train(o, *train_cmd, out);
    if (*embed_cmd) return cmd_embed(o, out);
    if (*score_id) {
      if (o.checkpoint.empty() && o.enrol.empty())
        throw ConfigError("score-id needs --checkpoint with --manifest, or --enrol with --test");
      return cmd_score_id(o, out, err);
    }
    if (*score_ver) return cmd_score_ver(o, out, err);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

}  // namespace hvector
