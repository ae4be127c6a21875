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

#include "hvector/audio.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <fstream>
#include <numbers>

#include "hvector/errors.hpp"

namespace hvector::audio {

namespace {

std::uint32_t read_le(const unsigned char* p, int n) {
  std::uint32_t v = 0;
  for (int i = 0; i < n; ++i) v |= std::uint32_t(p[i]) << (8 * i);
  return v;
}

void write_le(std::ostream& os, std::uint32_t v, int n) {
  for (int i = 0; i < n; ++i) os.put(char((v >> (8 * i)) & 0xff));
}

double hz_to_mel(double hz) { return 1127.0 * std::log(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::exp(mel / 1127.0) - 1.0); }

Index samples_per_ms(int sample_rate, int ms) { return Index(std::lround(sample_rate * ms / 1000.0)); }

}  // namespace

AudioClip load_wav(const std::filesystem::path& path, int channel) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (bytes.size() < 12) throw IoError(path.string() + ": truncated RIFF header");
  if (std::string(bytes.begin(), bytes.begin() + 4) != "RIFF" ||
      std::string(bytes.begin() + 8, bytes.begin() + 12) != "WAVE")
    throw FormatError(path.string() + ": not a RIFF/WAVE file");

  int format = -1, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_len = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::string id(bytes.begin() + long(pos), bytes.begin() + long(pos) + 4);
    const std::size_t len = read_le(&bytes[pos + 4], 4);
    const std::size_t body = pos + 8;
    if (id == "fmt ") {
      if (len < 16 || body + 16 > bytes.size()) throw IoError(path.string() + ": truncated fmt chunk");
      format = int(read_le(&bytes[body], 2));
      channels = int(read_le(&bytes[body + 2], 2));
      rate = read_le(&bytes[body + 4], 4);
      bits = int(read_le(&bytes[body + 14], 2));
    } else if (id == "data") {
      if (body + len > bytes.size()) throw IoError(path.string() + ": truncated data chunk");
      data = bytes.data() + body;
      data_len = len;
      break;
    }
    pos = body + len + (len & 1);
  }
  if (format < 0) throw FormatError(path.string() + ": missing fmt chunk");
  if (format != 1 || bits != 16)
    throw FormatError(path.string() + ": only PCM 16-bit is supported (format " + std::to_string(format) +
                      ", " + std::to_string(bits) + " bits)");
  if (channels <= 0 || rate == 0) throw FormatError(path.string() + ": bad channel count or rate");
  if (channel < 0 || channel >= channels)
    throw ConfigError(path.string() + ": channel " + std::to_string(channel) + " not in file");
  if (data == nullptr) throw IoError(path.string() + ": missing data chunk");

  const std::size_t frame_bytes = std::size_t(channels) * 2;
  const Index n = Index(data_len / frame_bytes);
  AudioClip clip;
  clip.sample_rate = int(rate);
  clip.samples.resize(n);
  for (Index i = 0; i < n; ++i) {
    const auto raw = std::int16_t(read_le(data + std::size_t(i) * frame_bytes + std::size_t(channel) * 2, 2));
    clip.samples[i] = double(raw) / 32768.0;
  }
  return clip;
}

void save_wav(const std::filesystem::path& path, const AudioClip& clip) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  const auto n = std::uint32_t(clip.samples.size());
  os.write("RIFF", 4);
  write_le(os, 36 + 2 * n, 4);
  os.write("WAVEfmt ", 8);
  write_le(os, 16, 4);
  write_le(os, 1, 2);  // PCM
  write_le(os, 1, 2);  // mono
  write_le(os, std::uint32_t(clip.sample_rate), 4);
  write_le(os, std::uint32_t(clip.sample_rate) * 2, 4);
  write_le(os, 2, 2);
  write_le(os, 16, 2);
  os.write("data", 4);
  write_le(os, 2 * n, 4);
  for (Index i = 0; i < clip.samples.size(); ++i) {
    const double v = std::clamp(std::round(clip.samples[i] * 32768.0), -32768.0, 32767.0);
    write_le(os, std::uint32_t(std::uint16_t(std::int16_t(v))), 2);
  }
  if (!os) throw IoError("failed writing " + path.string());
}

Index num_frames(Index n_samples, Index frame_length, Index frame_shift) {
  if (n_samples < frame_length) return 0;
  return (n_samples - frame_length) / frame_shift + 1;
}

Eigen::VectorXd frame_log_energy(const AudioClip& clip) {
  const Index len = samples_per_ms(clip.sample_rate, 25);
  const Index shift = samples_per_ms(clip.sample_rate, 10);
  const Index n = num_frames(clip.size(), len, shift);
  Eigen::VectorXd energy(n);
  for (Index t = 0; t < n; ++t) {
    const double ms = clip.samples.segment(t * shift, len).squaredNorm() / double(len);
    energy[t] = 10.0 * std::log10(std::max(ms, 1e-20));
  }
  return energy;
}

AudioClip vad_filter(const AudioClip& clip, const VadOptions& opts) {
  const Index len = samples_per_ms(clip.sample_rate, 25);
  const Index shift = samples_per_ms(clip.sample_rate, 10);
  const Eigen::VectorXd energy = frame_log_energy(clip);
  const Index n = energy.size();
  if (n == 0) return clip;
  const double threshold = std::max(energy.maxCoeff() - opts.relative_db, opts.floor_dbfs);

  std::vector<char> keep(std::size_t(clip.size()), 0);
  for (Index t = 0; t < n; ++t) {
    if (energy[t] < threshold) continue;
    // the last frame also owns the remainder after it
    const Index end = (t == n - 1) ? clip.size() : t * shift + len;
    std::fill(keep.begin() + t * shift, keep.begin() + end, 1);
  }
  // strip exact zeros at region edges that border a cut
  const Index total = clip.size();
  for (Index i = 0; i < total;) {
    if (!keep[std::size_t(i)]) {
      ++i;
      continue;
    }
    Index j = i;
    while (j < total && keep[std::size_t(j)]) ++j;
    if (i > 0)
      for (Index k = i; k < j && clip.samples[k] == 0.0; ++k) keep[std::size_t(k)] = 0;
    if (j < total)
      for (Index k = j - 1; k >= i && clip.samples[k] == 0.0; --k) keep[std::size_t(k)] = 0;
    i = j;
  }

  AudioClip out;
  out.sample_rate = clip.sample_rate;
  out.samples.resize(std::count(keep.begin(), keep.end(), 1));
  Index o = 0;
  for (Index i = 0; i < total; ++i)
    if (keep[std::size_t(i)]) out.samples[o++] = clip.samples[i];
  return out;
}

std::vector<AudioClip> window_utterances(const AudioClip& clip, double length_s) {
  if (!(length_s > 0.0)) throw ConfigError("window length must be positive");
  const Index len = Index(std::lround(length_s * clip.sample_rate));
  const Index step = len / 2;
  std::vector<AudioClip> out;
  if (len <= 0 || clip.size() < len) return out;
  const Index count = (clip.size() - len) / step + 1;
  for (Index k = 0; k < count; ++k)
    out.push_back(AudioClip{clip.samples.segment(k * step, len), clip.sample_rate});
  return out;
}

const Eigen::MatrixXd& mel_filterbank() {
  static const Eigen::MatrixXd bank = [] {
    const Index n_bins = kFftSize / 2 + 1;
    const double lo = hz_to_mel(0.0), hi = hz_to_mel(kSampleRate / 2.0);
    const double delta = (hi - lo) / double(kNumMelBins + 1);
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(kNumMelBins, n_bins);
    for (Index m = 0; m < kNumMelBins; ++m) {
      const double left = lo + m * delta, centre = left + delta, right = centre + delta;
      for (Index k = 0; k < n_bins; ++k) {
        const double mel = hz_to_mel(double(k) * kSampleRate / double(kFftSize));
        if (mel > left && mel < right)
          w(m, k) = mel <= centre ? (mel - left) / (centre - left) : (right - mel) / (right - centre);
      }
    }
    return w;
  }();
  return bank;
}

Eigen::VectorXd mel_center_frequencies() {
  const double lo = hz_to_mel(0.0), hi = hz_to_mel(kSampleRate / 2.0);
  const double delta = (hi - lo) / double(kNumMelBins + 1);
  Eigen::VectorXd f(kNumMelBins);
  for (Index m = 0; m < kNumMelBins; ++m) f[m] = mel_to_hz(lo + double(m + 1) * delta);
  return f;
}

Eigen::MatrixXd dct_matrix(Index n_out, Index n_in) {
  Eigen::MatrixXd d(n_out, n_in);
  for (Index k = 0; k < n_out; ++k) {
    const double norm = std::sqrt((k == 0 ? 1.0 : 2.0) / double(n_in));
    for (Index n = 0; n < n_in; ++n)
      d(k, n) = norm * std::cos(std::numbers::pi * double(k) * (double(n) + 0.5) / double(n_in));
  }
  return d;
}

Eigen::VectorXd frame_power_spectrum(const Eigen::Ref<const Eigen::VectorXd>& frame) {
  if (frame.size() != kFrameLength)
    throw DimensionError("frame must have " + std::to_string(kFrameLength) + " samples");
  std::vector<double> buf(std::size_t(kFftSize), 0.0);
  for (Index n = 0; n < kFrameLength; ++n) {
    const double prev = n == 0 ? frame[0] : frame[n - 1];
    const double hamming =
        0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * double(n) / double(kFrameLength - 1));
    buf[std::size_t(n)] = (frame[n] - kPreemphasis * prev) * hamming;
  }
  static thread_local Eigen::FFT<double> fft;
  std::vector<std::complex<double>> spec;
  fft.fwd(spec, buf);
  Eigen::VectorXd power(kFftSize / 2 + 1);
  for (Index k = 0; k < power.size(); ++k) power[k] = std::norm(spec[std::size_t(k)]);
  return power;
}

Eigen::VectorXd mel_band_energies(const Eigen::Ref<const Eigen::VectorXd>& frame) {
  return mel_filterbank() * frame_power_spectrum(frame);
}

Eigen::VectorXd cepstrum(const Eigen::Ref<const Eigen::VectorXd>& log_mel) {
  static const Eigen::MatrixXd dct = dct_matrix(kNumCeps, kNumMelBins);
  if (log_mel.size() != kNumMelBins) throw DimensionError("cepstrum expects 23 log mel energies");
  return dct * log_mel;
}

TensorD mfcc_frames(const AudioClip& clip) {
  if (clip.sample_rate != kSampleRate)
    throw ConfigError("sample rate " + std::to_string(clip.sample_rate) + " Hz is not supported by the " +
                      std::to_string(kFftSize) + "-point front-end (expects 8000 Hz)");
  const Index T = num_frames(clip.size());
  if (T == 0) throw DataError("clip shorter than one analysis frame");
  TensorD out(Shape{T, kNumCeps});
  for (Index t = 0; t < T; ++t) {
    const Eigen::VectorXd logmel =
        mel_band_energies(clip.samples.segment(t * kFrameShift, kFrameLength)).array().max(kLogFloor).log();
    out.mat().row(t) = cepstrum(logmel).transpose();
  }
  return out;
}

TensorD UtteranceFeatures::frames() const {
  TensorD out(Shape{n_frames, feat_dim()});
  out.mat() = fragments.mat().topRows(n_frames);
  return out;
}

UtteranceFeatures split_fragments(const TensorD& frames, Index n_fragments) {
  const Index T = frames.rows(), D = frames.cols();
  if (n_fragments <= 0) throw ConfigError("fragment count must be positive");
  if (T < n_fragments)
    throw DataError("utterance has " + std::to_string(T) + " frames, need at least " +
                    std::to_string(n_fragments));
  const Index M = (T + n_fragments - 1) / n_fragments;
  UtteranceFeatures u;
  u.fragments = TensorD(Shape{n_fragments, M, D});
  u.fragments.mat().topRows(T) = frames.mat();
  u.n_frames = T;
  return u;
}

}  // namespace hvector::audio
