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

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "doctest.h"
#include "hvector/audio.hpp"
#include "hvector/random.hpp"

using namespace hvector;
using namespace hvector::audio;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "hvector_audio_test";
  std::filesystem::create_directories(dir);
  return dir / name;
}

Eigen::VectorXd tone(Index n, double hz, double amplitude, double phase = 0.3) {
  Eigen::VectorXd x(n);
  for (Index i = 0; i < n; ++i)
    x[i] = amplitude * std::sin(2.0 * std::numbers::pi * hz * double(i) / kSampleRate + phase);
  return x;
}

Eigen::VectorXd concat(std::initializer_list<Eigen::VectorXd> parts) {
  Index n = 0;
  for (const auto& p : parts) n += p.size();
  Eigen::VectorXd out(n);
  Index o = 0;
  for (const auto& p : parts) {
    out.segment(o, p.size()) = p;
    o += p.size();
  }
  return out;
}

void write_raw_wav(const std::filesystem::path& path, int channels, int bits, const std::vector<std::int16_t>& pcm,
                   bool truncate = false) {
  std::ofstream os(path, std::ios::binary);
  auto le = [&](std::uint32_t v, int n) {
    for (int i = 0; i < n; ++i) os.put(char((v >> (8 * i)) & 0xff));
  };
  const std::uint32_t data_len = std::uint32_t(pcm.size() * 2);
  os.write("RIFF", 4);
  le(36 + data_len, 4);
  os.write("WAVEfmt ", 8);
  le(16, 4);
  le(1, 2);
  le(std::uint32_t(channels), 2);
  le(8000, 4);
  le(8000u * std::uint32_t(channels * bits / 8), 4);
  le(std::uint32_t(channels * bits / 8), 2);
  le(std::uint32_t(bits), 2);
  os.write("data", 4);
  le(data_len, 4);
  const std::size_t n = truncate ? pcm.size() / 2 : pcm.size();
  for (std::size_t i = 0; i < n; ++i) le(std::uint16_t(pcm[i]), 2);
}

}  // namespace

TEST_CASE("load_wav") {
  SUBCASE("one second mono") {
    const auto path = temp_path("one_second.wav");
    save_wav(path, AudioClip{tone(8000, 440, 0.5), kSampleRate});
    const AudioClip clip = load_wav(path);
    CHECK(clip.size() == 8000);
    CHECK(clip.duration() == 1.0);
    CHECK(clip.sample_rate == 8000);
  }
  SUBCASE("zeros and full scale") {
    const auto path = temp_path("levels.wav");
    write_raw_wav(path, 1, 16, {0, 0, 32767, -32768});
    const AudioClip clip = load_wav(path);
    CHECK(clip.samples[0] == 0.0);
    CHECK(clip.samples[1] == 0.0);
    CHECK(clip.samples[2] == 32767.0 / 32768.0);
    CHECK(clip.samples[2] == doctest::Approx(0.99997).epsilon(1e-5));
    CHECK(clip.samples[3] == -1.0);
  }
  SUBCASE("stereo channel selection") {
    const auto path = temp_path("stereo.wav");
    write_raw_wav(path, 2, 16, {100, -200, 300, -400});
    CHECK(load_wav(path, 0).samples[1] == 300.0 / 32768.0);
    CHECK(load_wav(path, 1).samples[1] == -400.0 / 32768.0);
    CHECK_THROWS_AS(load_wav(path, 2), ConfigError);
  }
  SUBCASE("errors") {
    const auto trunc = temp_path("truncated.wav");
    write_raw_wav(trunc, 1, 16, std::vector<std::int16_t>(100, 7), true);
    CHECK_THROWS_AS(load_wav(trunc), IoError);
    const auto eight_bit = temp_path("eight.wav");
    write_raw_wav(eight_bit, 1, 8, {1, 2});
    CHECK_THROWS_AS(load_wav(eight_bit), FormatError);
    CHECK_THROWS_AS(load_wav(temp_path("does_not_exist.wav")), IoError);
  }
}

TEST_CASE("vad_filter") {
  SUBCASE("digital silence between tones is removed completely") {
    const Eigen::VectorXd x = concat({tone(4000, 300, 0.5), Eigen::VectorXd::Zero(3000), tone(2500, 500, 0.4),
                                      Eigen::VectorXd::Zero(1234), tone(3000, 700, 0.3)});
    const AudioClip out = vad_filter(AudioClip{x, kSampleRate});
    CHECK(out.size() == 4000 + 2500 + 3000);
    CHECK((out.samples.array() == 0.0).count() == 0);
  }
  SUBCASE("constant tone is untouched") {
    const AudioClip in{tone(8000, 440, 0.5), kSampleRate};
    CHECK(vad_filter(in).samples == in.samples);
  }
  SUBCASE("region 50 dB down is dropped") {
    const double quiet = std::pow(10.0, -50.0 / 20.0);
    const Eigen::VectorXd x = concat({tone(4000, 440, 1.0), tone(4000, 440, quiet, 0.7)});
    const AudioClip out = vad_filter(AudioClip{x, kSampleRate});
    // only frames overlapping the loud part survive
    CHECK(out.size() >= 4000);
    CHECK(out.size() < 4000 + kFrameLength);
  }
  SUBCASE("absolute floor") {
    const double faint = std::pow(10.0, -70.0 / 20.0);
    const AudioClip out = vad_filter(AudioClip{tone(4000, 440, faint), kSampleRate});
    CHECK(out.size() == 0);
  }
  SUBCASE("shorter than a frame is returned unchanged") {
    const AudioClip in{Eigen::VectorXd::Zero(150), kSampleRate};
    CHECK(vad_filter(in).size() == 150);
  }
}

TEST_CASE("vad_filter is idempotent (property)") {
  Rng rng(21);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<Eigen::VectorXd> parts;
    Index n = 0;
    const int bursts = 2 + int(rng.below(4));
    for (int b = 0; b < bursts; ++b) {
      const Index len = Index(800 + rng.below(3000));
      // loud bursts or digital silence, well away from the threshold
      const bool silent = rng.uniform() < 0.4;
      parts.push_back(silent ? Eigen::VectorXd::Zero(len)
                             : Eigen::VectorXd(tone(len, rng.uniform(100, 900), rng.uniform(0.2, 0.8),
                                                    rng.uniform(0.1, 1.0))));
      n += len;
    }
    Eigen::VectorXd x(n);
    Index o = 0;
    for (const auto& p : parts) {
      x.segment(o, p.size()) = p;
      o += p.size();
    }
    const AudioClip once = vad_filter(AudioClip{x, kSampleRate});
    const AudioClip twice = vad_filter(once);
    REQUIRE(once.samples == twice.samples);
  }
}

TEST_CASE("window_utterances") {
  const AudioClip three{Eigen::VectorXd::LinSpaced(24000, 0, 1), kSampleRate};
  const auto w = window_utterances(three, 1.0);
  REQUIRE(w.size() == 5);
  for (std::size_t k = 0; k < w.size(); ++k) {
    CHECK(w[k].size() == 8000);
    CHECK(w[k].samples[0] == three.samples[Index(k) * 4000]);
  }
  CHECK(window_utterances(AudioClip{Eigen::VectorXd::Zero(8000), kSampleRate}, 1.0).size() == 1);
  CHECK(window_utterances(AudioClip{Eigen::VectorXd::Zero(19200), kSampleRate}, 3.0).empty());
  for (Index n = 8000; n < 40000; n += 777) {
    const auto count = window_utterances(AudioClip{Eigen::VectorXd::Zero(n), kSampleRate}, 1.0).size();
    CHECK(Index(count) == (n - 8000) / 4000 + 1);
  }
}

TEST_CASE("mfcc frame count") {
  CHECK(mfcc_frames(AudioClip{tone(8000, 440, 0.5), kSampleRate}).shape() == Shape{98, 20});
  for (Index n = 200; n < 3000; n += 37) {
    CHECK(num_frames(n) == (n - 200) / 80 + 1);
    CHECK(mfcc_frames(AudioClip{tone(n, 440, 0.5), kSampleRate}).rows() == (n - 200) / 80 + 1);
  }
  CHECK(num_frames(199) == 0);
  CHECK_THROWS_AS(mfcc_frames(AudioClip{tone(16000, 440, 0.5), 16000}), ConfigError);
}

TEST_CASE("dct is orthonormal and constant spectra map to c0") {
  const Eigen::MatrixXd d = dct_matrix(kNumMelBins, kNumMelBins);
  CHECK((d.transpose() * d - Eigen::MatrixXd::Identity(kNumMelBins, kNumMelBins)).cwiseAbs().maxCoeff() < 1e-10);
  const Eigen::VectorXd c = cepstrum(Eigen::VectorXd::Constant(kNumMelBins, -3.5));
  CHECK(c[0] == doctest::Approx(-3.5 * std::sqrt(double(kNumMelBins))));
  CHECK(c.tail(kNumCeps - 1).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("1 kHz tone peaks in the filter centred nearest 1 kHz") {
  const Eigen::VectorXd e = mel_band_energies(tone(kFrameLength, 1000, 0.5));
  Index peak;
  e.maxCoeff(&peak);
  Index nearest;
  (mel_center_frequencies().array() - 1000.0).abs().minCoeff(&nearest);
  CHECK(peak == nearest);
  CHECK(mel_filterbank().rows() == 23);
  CHECK(mel_filterbank().cols() == 129);
}

TEST_CASE("split_fragments") {
  auto frames = [](Index T) {
    TensorD f(Shape{T, 20});
    for (Index i = 0; i < f.size(); ++i) f[i] = double(i % 97) + 1.0;
    return f;
  };
  SUBCASE("3 s utterance") {
    const UtteranceFeatures u = split_fragments(frames(298));
    CHECK(u.fragments.shape() == Shape{10, 30, 20});
    CHECK(u.fragments.mat().bottomRows(2).isZero(0));
    CHECK(u.fragments.mat().row(297).cwiseAbs().sum() > 0);
  }
  SUBCASE("exact fit") {
    const UtteranceFeatures u = split_fragments(frames(100));
    CHECK(u.fragments.shape() == Shape{10, 10, 20});
    CHECK((u.fragments.mat().rowwise().squaredNorm().array() > 0).all());
  }
  SUBCASE("1 s utterance") {
    const UtteranceFeatures u = split_fragments(frames(98));
    CHECK(u.frames_per_fragment() == 10);
    CHECK(u.fragments.mat().bottomRows(2).isZero(0));
    CHECK(u.fragments.mat().middleRows(90, 8).cwiseAbs().minCoeff() > 0);
  }
  SUBCASE("too short") { CHECK_THROWS_AS(split_fragments(frames(9)), DataError); }
  SUBCASE("lossless up to padding") {
    for (Index T = 10; T < 400; T += 13) {
      const TensorD f = frames(T);
      REQUIRE(split_fragments(f).frames() == f);
    }
  }
}
