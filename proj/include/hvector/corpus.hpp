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

#ifndef HVECTOR_CORPUS_HPP_
#define HVECTOR_CORPUS_HPP_

// Manifests, deterministic splits, feature preparation and the synthetic
// speaker generator used in place of licensed corpora.

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "hvector/audio.hpp"
#include "hvector/trainer.hpp"

namespace hvector::corpus {

struct ManifestEntry {
  std::string utterance_id;
  std::string speaker_id;
  std::filesystem::path path;  // absolute once read
  Index n_frames = 0;
};

/// Line format: `utterance_id<TAB>speaker_id<TAB>path<TAB>n_frames`. Lines
/// starting with `# ` followed by key=value carry metadata (for instance the
/// fragment layout of a feature manifest); other `#` lines are ignored.
struct Manifest {
  std::vector<ManifestEntry> entries;
  std::map<std::string, std::string> meta;

  std::size_t size() const { return entries.size(); }
  /// Sorted distinct speaker ids.
  std::vector<std::string> speakers() const;
};

/// Paths are resolved against the manifest's directory. Throws FormatError
/// for malformed lines or duplicate utterance ids and IoError when a listed
/// file does not exist.
Manifest read_manifest(const std::filesystem::path& path);

/// Writes paths relative to the manifest's directory when they lie below it.
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);

/// Per-speaker stratified split: each speaker's utterances are shuffled with a
/// stream derived from (seed, speaker) and round(train_fraction * n) of them,
/// clamped to [1, n - 1], go to train. Order within each part follows the
/// input. Throws DataError naming any speaker with fewer than 2 utterances.
std::pair<Manifest, Manifest> split(const Manifest& manifest, double train_fraction, std::uint64_t seed);

struct VerificationSplit {
  Manifest enrol;          // utts_per_spk utterances of each enrol speaker
  Manifest eval;           // utts_per_spk utterances of each eval speaker
  Manifest enrol_heldout;  // further utterances of the enrol speakers (target trials)
};

/// Draws disjoint enrol and eval speaker sets (seeded) among the speakers with
/// enough utterances. Enrol speakers need utts_per_spk + heldout_per_spk
/// utterances, eval speakers utts_per_spk. Throws DataError with the counts
/// when there are not enough speakers.
VerificationSplit make_verification_split(const Manifest& manifest, Index n_enrol_spk, Index n_eval_spk,
                                          Index utts_per_spk, std::uint64_t seed, Index heldout_per_spk = 0);

// ---- synthetic speakers ----

struct SynthSpeakerSpec {
  double pitch_hz = 120;
  std::array<double, 3> formant_hz = {500, 1500, 2500};
  std::array<double, 3> bandwidth_hz = {80, 100, 120};
  double noise_level = 0.02;  // white-noise std relative to the voiced RMS
  std::uint64_t seed = 0;
};

/// Speaker `index` of the population defined by `seed`.
SynthSpeakerSpec draw_speaker(std::uint64_t seed, Index index);

/// Pulse train at the speaker's pitch with +-3% period jitter, passed through
/// the three formant resonators, scaled to a random level and mixed with white
/// noise. Deterministic in (spec, duration, seed).
audio::AudioClip synth_utterance(const SynthSpeakerSpec& spec, double duration_s, std::uint64_t seed);

struct SynthOptions {
  Index n_speakers = 10;
  Index utts_per_speaker = 60;
  double duration_s = 1.0;
  std::uint64_t seed = 0;
  Index first_speaker = 0;  // population index of the first speaker
};

/// Writes `<out_dir>/wav/<utt>.wav` for every utterance and
/// `<out_dir>/manifest.tsv` (n_frames = analysis frames of the raw clip).
/// Speaker ids are `spk%03d` by population index; utterance seeds derive from
/// (seed, speaker index, utterance index).
Manifest synth_corpus(const SynthOptions& opts, const std::filesystem::path& out_dir);

// ---- features ----

struct PrepareReport {
  Manifest features;
  std::vector<std::string> failures;  // "utterance: reason"
};

/// VAD -> windows of window_s seconds -> MFCC for every audio entry. Writes
/// one HVT1 tensor of frames [T, 20] per window to `<out_dir>/feats/` and a
/// feature manifest (not written to disk here). A file that fails (bad format,
/// unsupported rate) is recorded in `failures` and skipped.
PrepareReport prepare_features(const Manifest& audio_manifest, const std::filesystem::path& out_dir,
                               double window_s, const audio::VadOptions& vad = {});

/// Reads the frame tensor of a feature entry and splits it into fragments.
audio::UtteranceFeatures load_features(const ManifestEntry& entry, Index n_fragments = audio::kNumFragments);

/// Features of every entry plus labels indexed by `speakers` (sorted ids).
/// Throws DataError for a speaker missing from the list.
struct LoadedSet {
  std::vector<audio::UtteranceFeatures> features;
  std::vector<int> labels;

  /// Non-owning view for the trainer; invalidated if `features` reallocates.
  LabelledSet view() const;
};

LoadedSet load_set(const Manifest& manifest, const std::vector<std::string>& speakers,
                   Index n_fragments = audio::kNumFragments);

}  // namespace hvector::corpus

#endif  // HVECTOR_CORPUS_HPP_
