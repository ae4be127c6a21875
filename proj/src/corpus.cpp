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

#include "hvector/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <set>
#include <sstream>

#include "hvector/archive.hpp"
#include "hvector/checkpoint.hpp"
#include "hvector/errors.hpp"
#include "hvector/random.hpp"
#include "hvector/text.hpp"

namespace hvector::corpus {

namespace fs = std::filesystem;

std::vector<std::string> Manifest::speakers() const {
  std::set<std::string> s;
  for (const auto& e : entries) s.insert(e.speaker_id);
  return {s.begin(), s.end()};
}

Manifest read_manifest(const fs::path& path) {
  std::istringstream is(read_text_file(path));
  const fs::path base = fs::absolute(path).parent_path();
  Manifest m;
  std::set<std::string> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    if (line[0] == '#') {
      const std::string body = trim(line.substr(1));
      const auto eq = body.find('=');
      if (eq != std::string::npos && eq > 0) m.meta[trim(body.substr(0, eq))] = trim(body.substr(eq + 1));
      continue;
    }
    const auto f = hvector::split(line, '\t');
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (f.size() != 4) throw FormatError(where + ": expected 4 tab-separated fields, got " + std::to_string(f.size()));
    ManifestEntry e;
    e.utterance_id = f[0];
    e.speaker_id = f[1];
    if (e.utterance_id.empty() || e.speaker_id.empty() || f[2].empty()) throw FormatError(where + ": empty field");
    try {
      e.n_frames = parse_int("n_frames", f[3]);
    } catch (const ConfigError& err) {
      throw FormatError(where + ": " + err.what());
    }
    if (e.n_frames < 0) throw FormatError(where + ": negative n_frames");
    if (!seen.insert(e.utterance_id).second) throw FormatError(where + ": duplicate utterance id '" + e.utterance_id + "'");
    e.path = fs::path(f[2]).is_absolute() ? fs::path(f[2]) : base / f[2];
    if (!fs::exists(e.path)) throw IoError(where + ": missing file " + e.path.string());
    m.entries.push_back(std::move(e));
  }
  return m;
}

void write_manifest(const fs::path& path, const Manifest& manifest) {
  const fs::path base = fs::absolute(path).parent_path();
  std::ostringstream os;
  for (const auto& [k, v] : manifest.meta) os << "# " << k << '=' << v << '\n';
  for (const auto& e : manifest.entries) {
    for (const auto* field : {&e.utterance_id, &e.speaker_id})
      if (field->find_first_of("\t\n") != std::string::npos) throw DataError("id contains a tab or newline: " + *field);
    fs::path p = fs::absolute(e.path);
    const fs::path rel = p.lexically_relative(base);
    if (!rel.empty() && *rel.begin() != "..") p = rel;
    os << e.utterance_id << '\t' << e.speaker_id << '\t' << p.generic_string() << '\t' << e.n_frames << '\n';
  }
  write_text_file(path, os.str());
}

namespace {

std::map<std::string, std::vector<std::size_t>> by_speaker(const Manifest& m) {
  std::map<std::string, std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < m.entries.size(); ++i) out[m.entries[i].speaker_id].push_back(i);
  return out;
}

Manifest subset(const Manifest& m, std::vector<std::size_t> idx) {
  std::sort(idx.begin(), idx.end());
  Manifest out;
  out.meta = m.meta;
  for (std::size_t i : idx) out.entries.push_back(m.entries[i]);
  return out;
}

}  // namespace

std::pair<Manifest, Manifest> split(const Manifest& manifest, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("train fraction must be in (0, 1)");
  if (manifest.entries.empty()) throw DataError("cannot split an empty manifest");
  std::vector<std::size_t> train, test;
  for (auto& [spk, idx] : by_speaker(manifest)) {
    const Index n = Index(idx.size());
    if (n < 2) throw DataError("speaker '" + spk + "' has " + std::to_string(n) + " utterance, need at least 2 to split");
    Rng rng(derive_seed(seed, "split/" + spk));
    rng.shuffle(idx.begin(), idx.end());
    const Index n_train = std::clamp<Index>(Index(std::lround(train_fraction * double(n))), 1, n - 1);
    train.insert(train.end(), idx.begin(), idx.begin() + n_train);
    test.insert(test.end(), idx.begin() + n_train, idx.end());
  }
  return {subset(manifest, train), subset(manifest, test)};
}

VerificationSplit make_verification_split(const Manifest& manifest, Index n_enrol_spk, Index n_eval_spk,
                                          Index utts_per_spk, std::uint64_t seed, Index heldout_per_spk) {
  if (n_enrol_spk <= 0 || n_eval_spk <= 0 || utts_per_spk <= 0 || heldout_per_spk < 0)
    throw ConfigError("speaker and utterance counts must be positive");
  auto groups = by_speaker(manifest);
  const Index enrol_need = utts_per_spk + heldout_per_spk;
  std::vector<std::string> rich, usable;  // rich: can enrol; usable: can evaluate
  for (const auto& [spk, idx] : groups) {
    if (Index(idx.size()) >= enrol_need) rich.push_back(spk);
    if (Index(idx.size()) >= utts_per_spk) usable.push_back(spk);
  }
  if (Index(rich.size()) < n_enrol_spk || Index(usable.size()) < n_enrol_spk + n_eval_spk)
    throw DataError("verification split needs " + std::to_string(n_enrol_spk) + " enrol speakers with >= " +
                    std::to_string(enrol_need) + " utterances and " + std::to_string(n_eval_spk) +
                    " more with >= " + std::to_string(utts_per_spk) + "; manifest has " +
                    std::to_string(groups.size()) + " speakers (" + std::to_string(rich.size()) + " and " +
                    std::to_string(usable.size()) + " qualify)");
  Rng rng(derive_seed(seed, "verification"));
  rng.shuffle(rich.begin(), rich.end());
  const std::set<std::string> enrol_spk(rich.begin(), rich.begin() + n_enrol_spk);
  std::vector<std::string> rest;
  for (const auto& s : usable)
    if (!enrol_spk.count(s)) rest.push_back(s);
  rng.shuffle(rest.begin(), rest.end());
  const std::set<std::string> eval_spk(rest.begin(), rest.begin() + n_eval_spk);

  std::vector<std::size_t> enrol, eval, held;
  for (auto& [spk, idx] : groups) {
    if (!enrol_spk.count(spk) && !eval_spk.count(spk)) continue;
    Rng pick(derive_seed(seed, "verification/" + spk));
    pick.shuffle(idx.begin(), idx.end());
    if (enrol_spk.count(spk)) {
      enrol.insert(enrol.end(), idx.begin(), idx.begin() + utts_per_spk);
      held.insert(held.end(), idx.begin() + utts_per_spk, idx.begin() + enrol_need);
    } else {
      eval.insert(eval.end(), idx.begin(), idx.begin() + utts_per_spk);
    }
  }
  return {subset(manifest, enrol), subset(manifest, eval), subset(manifest, held)};
}

SynthSpeakerSpec draw_speaker(std::uint64_t seed, Index index) {
  Rng rng(derive_seed(seed, "speaker", std::uint64_t(index)));
  SynthSpeakerSpec s;
  s.pitch_hz = rng.uniform(80.0, 250.0);
  s.formant_hz = {rng.uniform(300.0, 900.0), rng.uniform(1000.0, 2200.0), rng.uniform(2400.0, 3600.0)};
  s.bandwidth_hz = {rng.uniform(50.0, 120.0), rng.uniform(70.0, 150.0), rng.uniform(90.0, 200.0)};
  s.noise_level = rng.uniform(0.01, 0.04);
  s.seed = derive_seed(seed, "speaker-audio", std::uint64_t(index));
  return s;
}

audio::AudioClip synth_utterance(const SynthSpeakerSpec& spec, double duration_s, std::uint64_t seed) {
  if (!(spec.pitch_hz >= 60.0 && spec.pitch_hz <= 300.0)) throw ConfigError("pitch must be within [60, 300] Hz");
  for (double f : spec.formant_hz)
    if (!(f > 0.0 && f < audio::kSampleRate / 2.0)) throw ConfigError("formants must lie below 4000 Hz");
  const double fs = audio::kSampleRate;
  const Index n = Index(std::lround(duration_s * fs));
  if (n <= 0) throw ConfigError("duration must be positive");
  Rng rng(seed);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  const double period = fs / spec.pitch_hz;
  for (double t = rng.uniform(0.0, period); t < double(n); t += period * (1.0 + rng.uniform(-0.03, 0.03)))
    x[Index(t)] += 1.0;
  for (int k = 0; k < 3; ++k) {
    const double r = std::exp(-std::numbers::pi * spec.bandwidth_hz[k] / fs);
    const double a1 = 2.0 * r * std::cos(2.0 * std::numbers::pi * spec.formant_hz[k] / fs), a2 = -r * r;
    double y1 = 0, y2 = 0;
    for (Index i = 0; i < n; ++i) {
      const double y = x[i] + a1 * y1 + a2 * y2;
      y2 = y1;
      y1 = y;
      x[i] = y;
    }
  }
  const double rms = std::sqrt(x.squaredNorm() / double(n));
  const double level = rng.uniform(0.05, 0.2);
  x *= level / std::max(rms, 1e-12);
  for (Index i = 0; i < n; ++i) x[i] += spec.noise_level * level * rng.normal();
  return audio::AudioClip{x.cwiseMax(-0.99).cwiseMin(0.99), audio::kSampleRate};
}

Manifest synth_corpus(const SynthOptions& opts, const fs::path& out_dir) {
  if (opts.n_speakers < 2) throw ConfigError("need at least 2 speakers, got " + std::to_string(opts.n_speakers));
  if (opts.utts_per_speaker < 1) throw ConfigError("need at least 1 utterance per speaker");
  Manifest m;
  m.meta["kind"] = "audio";
  fs::create_directories(out_dir / "wav");
  for (Index s = 0; s < opts.n_speakers; ++s) {
    const Index index = opts.first_speaker + s;
    const SynthSpeakerSpec spec = draw_speaker(opts.seed, index);
    char spk[32];
    std::snprintf(spk, sizeof spk, "spk%03ld", long(index));
    for (Index u = 0; u < opts.utts_per_speaker; ++u) {
      char utt[64];
      std::snprintf(utt, sizeof utt, "%s_u%03ld", spk, long(u));
      const audio::AudioClip clip =
          synth_utterance(spec, opts.duration_s, derive_seed(spec.seed, "utterance", std::uint64_t(u)));
      const fs::path wav = out_dir / "wav" / (std::string(utt) + ".wav");
      audio::save_wav(wav, clip);
      m.entries.push_back({utt, spk, fs::absolute(wav), audio::num_frames(clip.size())});
    }
  }
  write_manifest(out_dir / "manifest.tsv", m);
  return m;
}

PrepareReport prepare_features(const Manifest& audio_manifest, const fs::path& out_dir, double window_s,
                               const audio::VadOptions& vad) {
  if (audio_manifest.entries.empty()) throw DataError("manifest is empty");
  if (!(window_s > 0.0)) throw ConfigError("window length must be positive");
  PrepareReport rep;
  rep.features.meta["kind"] = "features";
  rep.features.meta["window_s"] = format_double(window_s);
  rep.features.meta["n_fragments"] = std::to_string(audio::kNumFragments);
  fs::create_directories(out_dir / "feats");
  std::set<Index> layouts;
  for (const auto& e : audio_manifest.entries) {
    try {
      const audio::AudioClip clip = audio::load_wav(e.path);
      if (clip.sample_rate != audio::kSampleRate)
        throw ConfigError("sample rate " + std::to_string(clip.sample_rate) + " Hz is not supported (need 8000)");
      const auto windows = audio::window_utterances(audio::vad_filter(clip, vad), window_s);
      if (windows.empty()) throw DataError("shorter than one window after VAD");
      for (std::size_t k = 0; k < windows.size(); ++k) {
        const TensorD frames = audio::mfcc_frames(windows[k]);
        if (frames.rows() < audio::kNumFragments) throw DataError("window has too few frames");
        ManifestEntry f;
        f.utterance_id = e.utterance_id + "-w" + std::to_string(k);
        f.speaker_id = e.speaker_id;
        f.path = fs::absolute(out_dir / "feats" / (f.utterance_id + ".hvt"));
        f.n_frames = frames.rows();
        save_tensor(f.path, frames);
        layouts.insert((f.n_frames + audio::kNumFragments - 1) / audio::kNumFragments);
        rep.features.entries.push_back(std::move(f));
      }
    } catch (const std::exception& err) {
      rep.failures.push_back(e.utterance_id + ": " + err.what());
    }
  }
  if (layouts.size() == 1) rep.features.meta["frames_per_fragment"] = std::to_string(*layouts.begin());
  return rep;
}

audio::UtteranceFeatures load_features(const ManifestEntry& entry, Index n_fragments) {
  const TensorD frames = load_tensor<double>(entry.path);
  if (frames.rank() != 2 || frames.cols() != audio::kNumCeps)
    throw FormatError(entry.path.string() + ": expected a [T, 20] frame tensor, got " + shape_str(frames.shape()));
  if (frames.rows() != entry.n_frames)
    throw FormatError(entry.path.string() + ": manifest says " + std::to_string(entry.n_frames) + " frames, file has " +
                      std::to_string(frames.rows()));
  audio::UtteranceFeatures u = audio::split_fragments(frames, n_fragments);
  u.utterance_id = entry.utterance_id;
  u.speaker_id = entry.speaker_id;
  return u;
}

LabelledSet LoadedSet::view() const {
  LabelledSet s;
  for (const auto& f : features) s.utterances.push_back(&f);
  s.labels = labels;
  return s;
}

LoadedSet load_set(const Manifest& manifest, const std::vector<std::string>& speakers, Index n_fragments) {
  std::map<std::string, int> index;
  for (std::size_t i = 0; i < speakers.size(); ++i) index[speakers[i]] = int(i);
  LoadedSet out;
  out.features.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) {
    auto it = index.find(e.speaker_id);
    if (it == index.end()) throw DataError("speaker '" + e.speaker_id + "' of " + e.utterance_id + " is not a known class");
    out.features.push_back(load_features(e, n_fragments));
    out.labels.push_back(it->second);
  }
  return out;
}

}  // namespace hvector::corpus
