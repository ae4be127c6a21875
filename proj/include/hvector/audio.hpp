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

#ifndef HVECTOR_AUDIO_HPP_
#define HVECTOR_AUDIO_HPP_

// Front-end: WAV I/O, energy VAD, utterance windowing, MFCC and the split of
// an utterance's frame sequence into fixed-size fragments.

#include <Eigen/Dense>

#include <filesystem>
#include <string>
#include <vector>

#include "hvector/tensor.hpp"

namespace hvector::audio {

inline constexpr int kSampleRate = 8000;
inline constexpr Index kFrameLength = 200;  // 25 ms at 8 kHz
inline constexpr Index kFrameShift = 80;    // 10 ms at 8 kHz
inline constexpr Index kFftSize = 256;
inline constexpr Index kNumMelBins = 23;
inline constexpr Index kNumCeps = 20;
inline constexpr Index kNumFragments = 10;
inline constexpr double kPreemphasis = 0.97;
inline constexpr double kLogFloor = 1e-10;

struct AudioClip {
  Eigen::VectorXd samples;  // in [-1, 1]
  int sample_rate = kSampleRate;

  Index size() const { return samples.size(); }
  double duration() const { return double(samples.size()) / double(sample_rate); }
};

/// Reads a RIFF/WAVE PCM16 file. Multi-channel files are de-interleaved and
/// `channel` selects which one to keep.
AudioClip load_wav(const std::filesystem::path& path, int channel = 0);

/// Writes mono PCM16; samples are clipped to [-1, 1) and rounded.
void save_wav(const std::filesystem::path& path, const AudioClip& clip);

/// Number of complete analysis frames in n samples (0 if n < frame length).
Index num_frames(Index n_samples, Index frame_length = kFrameLength, Index frame_shift = kFrameShift);

struct VadOptions {
  double relative_db = 30.0;  // keep frames within this many dB of the loudest
  double floor_dbfs = -60.0;  // and never below this absolute level
};

/// Per-frame log energy in dB relative to full scale (mean square of 1).
Eigen::VectorXd frame_log_energy(const AudioClip& clip);

/// Energy VAD. Frames the clip at 25 ms / 10 ms, keeps frames whose log energy
/// is at least max(loudest - 30 dB, -60 dBFS) and returns the concatenation of
/// the samples they cover. Runs of exact-zero samples at the inner edges of a
/// kept region are stripped as well, so digital silence never survives next to
/// a cut. Clips shorter than one frame are returned unchanged.
AudioClip vad_filter(const AudioClip& clip, const VadOptions& opts = {});

/// Windows of `length_s` seconds starting at 0 with a half-window shift. The
/// trailing remainder is dropped; a clip shorter than one window yields none.
std::vector<AudioClip> window_utterances(const AudioClip& clip, double length_s);

/// Mel filterbank weights, kNumMelBins x (kFftSize/2 + 1), triangles spaced
/// evenly on the mel scale between 0 Hz and the Nyquist frequency.
const Eigen::MatrixXd& mel_filterbank();

/// Centre frequency in Hz of each mel filter.
Eigen::VectorXd mel_center_frequencies();

/// Orthonormal DCT-II, n_out x n_in.
Eigen::MatrixXd dct_matrix(Index n_out, Index n_in);

/// Power spectrum (kFftSize/2 + 1 bins) of one pre-emphasised, Hamming
/// windowed frame of kFrameLength samples.
Eigen::VectorXd frame_power_spectrum(const Eigen::Ref<const Eigen::VectorXd>& frame);

/// Mel filterbank energies of one frame.
Eigen::VectorXd mel_band_energies(const Eigen::Ref<const Eigen::VectorXd>& frame);

/// Cepstrum of one row of log mel energies: the first kNumCeps DCT-II outputs.
Eigen::VectorXd cepstrum(const Eigen::Ref<const Eigen::VectorXd>& log_mel);

/// 20-dim MFCC per frame, [T, 20] with T = num_frames(n). Only 8 kHz input is
/// supported; other rates throw ConfigError.
TensorD mfcc_frames(const AudioClip& clip);

/// One utterance in hierarchical form: kNumFragments fragments of M frames.
struct UtteranceFeatures {
  TensorD fragments;  // [N, M, 20], tail zero-padded
  Index n_frames = 0;  // real frames before padding
  std::string utterance_id;
  std::string speaker_id;

  Index n_fragments() const { return fragments.dim(0); }
  Index frames_per_fragment() const { return fragments.dim(1); }
  Index feat_dim() const { return fragments.dim(2); }
  /// The original frame sequence with padding removed, [n_frames, 20].
  TensorD frames() const;
};

/// Splits T frames in order into n_fragments chunks of M = ceil(T / n)
/// frames, zero-padding the tail. Throws DataError if T < n_fragments.
UtteranceFeatures split_fragments(const TensorD& frames, Index n_fragments = kNumFragments);

}  // namespace hvector::audio

#endif  // HVECTOR_AUDIO_HPP_
