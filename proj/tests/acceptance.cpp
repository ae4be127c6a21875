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

// Acceptance run: one PASS/FAIL line per criterion. Without arguments every
// criterion runs; `--criterion N` (repeatable) selects some. The exit code is
// the number of failed criteria.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>

#include "CLI11.hpp"
#include "hvector/checkpoint.hpp"
#include "hvector/cli.hpp"
#include "hvector/corpus.hpp"
#include "hvector/grad_check.hpp"
#include "hvector/scoring.hpp"
#include "hvector/trainer.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace hvector;
using hvector::testing::random_tensor;
namespace fs = std::filesystem;

namespace {

using G = Graph<double>;
using V = Var<double>;
using Batch = std::span<const audio::UtteranceFeatures* const>;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
  std::vector<std::string> notes;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

fs::path work_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "hvector_acceptance" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

V project(G& g, const V& y, std::uint64_t seed = 99) {
  Rng rng(seed);
  return sum(mul(y, g.constant(random_tensor(rng, y.shape()))));
}

// ---------------------------------------------------------------- 1

double op_suite() {
  Rng rng(12);
  const TensorD a = random_tensor(rng, {4, 3}), b = random_tensor(rng, {4, 3});
  const TensorD bias = random_tensor(rng, {3}), w = random_tensor(rng, {4, 1});
  double worst = 0;
  auto check = [&](auto&& f, const TensorD& theta) { worst = std::max(worst, grad_check(f, theta)); };
  check([&](G& g, V t) { return project(g, add(t, g.constant(b))); }, a);
  check([&](G& g, V t) { return project(g, sub(g.constant(b), t)); }, a);
  check([&](G& g, V t) { return project(g, mul(t, g.constant(b))); }, a);
  check([&](G& g, V t) { return project(g, scale(t, 2.5)); }, a);
  check([&](G& g, V t) { return project(g, add_bias(g.constant(a), t)); }, bias);
  check([&](G& g, V t) { return project(g, sigmoid(t)); }, a);
  check([&](G& g, V t) { return project(g, tanh(t)); }, a);
  check([&](G& g, V t) { return project(g, square(t)); }, a);
  check([&](G&, V t) { return mean(t); }, a);
  check([&](G&, V t) { return sum(t); }, a);
  check([&](G& g, V t) { return project(g, concat(t, g.constant(b))); }, a);
  check([&](G& g, V t) { return project(g, slice_cols(t, 1, 2)); }, a);
  check([&](G& g, V t) { return project(g, row_scale(t, g.constant(w))); }, a);
  check([&](G& g, V t) { return project(g, row_scale(g.constant(a), t)); }, w);
  check([&](G& g, V t) { return project(g, group_softmax(t, 4)); }, a);
  check([&](G& g, V t) { return project(g, softmax(t)); }, w);
  check([&](G& g, V t) { return project(g, stats_pool(t, 2)); }, a);
  check([&](G& g, V t) { return project(g, stats_pool(t)); }, a);
  TensorD pw(Shape{4, 1});
  for (Index i = 0; i < 4; ++i) pw[i] = 0.1 + rng.uniform(0.0, 0.4);
  check([&](G& g, V t) { return project(g, weighted_stats_pool(t, g.constant(pw), 2)); }, a);
  check([&](G& g, V t) { return project(g, weighted_stats_pool(g.constant(a), t, 2)); }, pw);
  TensorD off_kink = a;
  for (Index i = 0; i < off_kink.size(); ++i) off_kink[i] += off_kink[i] > 0 ? 0.1 : -0.1;
  check([&](G& g, V t) { return project(g, relu(t)); }, off_kink);
  check([&](G& g, V t) {
    Rng mask(5);
    return project(g, dropout(t, 0.3, mask, true));
  }, a);

  const TensorD m1 = random_tensor(rng, {3, 4}), m2 = random_tensor(rng, {4, 2});
  check([&](G& g, V t) { return project(g, matmul(t, g.constant(m2))); }, m1);
  check([&](G& g, V t) { return project(g, matmul(g.constant(m1), t)); }, m2);

  const TensorD x = random_tensor(rng, {8, 3}), k = random_tensor(rng, {3, 3, 2}), kb = random_tensor(rng, {2});
  check([&](G& g, V t) { return project(g, conv1d(t, g.constant(k), g.constant(kb), 4)); }, x);
  check([&](G& g, V t) { return project(g, conv1d(g.constant(x), t, g.constant(kb), 4)); }, k);
  check([&](G& g, V t) { return project(g, conv1d(g.constant(x), g.constant(k), t, 4)); }, kb);

  const Index L = 5, D = 3, H = 4;
  const TensorD gx = random_tensor(rng, {2 * L, D}), gh = random_tensor(rng, {2, H});
  const TensorD W = random_tensor(rng, {D, 3 * H}, 0.5), U = random_tensor(rng, {H, 3 * H}, 0.5);
  const TensorD gb = random_tensor(rng, {3 * H}, 0.5);
  auto gv = [&](G& g, const V* tw, const V* tu, const V* tb) {
    return GruVars<double>{tw ? *tw : g.constant(W), tu ? *tu : g.constant(U), tb ? *tb : g.constant(gb)};
  };
  const TensorD cx = random_tensor(rng, {2, D});
  check([&](G& g, V t) { return project(g, gru_cell(t, g.constant(gh), gv(g, nullptr, nullptr, nullptr))); }, cx);
  check([&](G& g, V t) { return project(g, gru_cell(g.constant(cx), t, gv(g, nullptr, nullptr, nullptr))); }, gh);
  for (bool reverse : {false, true}) {
    check([&](G& g, V t) { return project(g, gru_sequence(t, gv(g, nullptr, nullptr, nullptr), L, reverse)); }, gx);
    check([&](G& g, V t) { return project(g, gru_sequence(g.constant(gx), gv(g, &t, nullptr, nullptr), L, reverse)); }, W);
    check([&](G& g, V t) { return project(g, gru_sequence(g.constant(gx), gv(g, nullptr, &t, nullptr), L, reverse)); }, U);
    check([&](G& g, V t) { return project(g, gru_sequence(g.constant(gx), gv(g, nullptr, nullptr, &t), L, reverse)); }, gb);
  }

  for (bool training : {true, false}) {
    auto stats = BatchNormStats<double>::init(3);
    stats.running_mean = random_tensor(rng, {3});
    stats.running_var = TensorD::constant(Shape{3}, 2.0);
    const TensorD gamma = random_tensor(rng, {3}), beta = random_tensor(rng, {3});
    auto bn = [&](G& g, V xv, V gm, V bt) {
      auto s = stats;
      return project(g, batchnorm(xv, gm, bt, s, training));
    };
    check([&](G& g, V t) { return bn(g, t, g.constant(gamma), g.constant(beta)); }, a);
    check([&](G& g, V t) { return bn(g, g.constant(a), t, g.constant(beta)); }, gamma);
    check([&](G& g, V t) { return bn(g, g.constant(a), g.constant(gamma), t); }, beta);
  }
  const std::vector<int> labels{0, 2, 1, 2};
  check([&](G&, V t) { return cross_entropy(t, std::span<const int>(labels)); }, a);
  return worst;
}

Outcome criterion_gradients() {
  const auto t0 = Clock::now();
  const double ops = op_suite();

  ModelConfig cfg;
  cfg.n_fragments = 10;
  cfg.frames_per_fragment = 4;
  cfg.gru_hidden = 4;  // E = 8
  cfg.frame_cnn_out = 6;
  cfg.seg_cnn_out = 6;
  cfg.fc_dims = {6, 6};
  cfg.n_speakers = 3;
  Rng rng(31);
  ModelParams<double> params = init_params<double>(cfg, 32);
  for (auto& [name, st] : params.batchnorm) {
    params.at(name + ".gamma") = random_tensor(rng, {st.running_mean.size()});
    params.at(name + ".beta") = random_tensor(rng, {st.running_mean.size()}, 0.2);
  }
  std::vector<audio::UtteranceFeatures> utts;
  for (int i = 0; i < 3; ++i) {
    utts.push_back(audio::split_fragments(random_tensor(rng, {40, cfg.feat_dim}), cfg.n_fragments));
    utts.back().utterance_id = "u" + std::to_string(i);
  }
  std::vector<const audio::UtteranceFeatures*> batch;
  for (const auto& u : utts) batch.push_back(&u);
  // running statistics matched to the batch, so inference mode is well scaled
  Rng drop(0);
  for (int i = 0; i < 80; ++i) {
    G g;
    ParamBinder<double> p(g, params, false);
    forward(p, Batch(batch), cfg, ForwardOptions{true, &drop});
  }
  const int labels[3] = {0, 1, 2};
  auto loss = [&](const std::string& name, bool training) {
    return [&, name, training](G& g, V t) {
      ModelParams<double> local = params;
      ParamBinder<double> p(g, local, false);
      p.bind(name, t);
      Rng d(21);
      return cross_entropy(forward(p, Batch(batch), cfg, ForwardOptions{training, &d}).logits,
                           std::span<const int>(labels));
    };
  };
  double net = 0;
  std::string worst_name;
  Index entries = 0, train_bad = 0;
  for (const auto& [name, t] : params.tensors) {
    const double e = grad_check(loss(name, false), t);
    if (e > net) {
      net = e;
      worst_name = name;
    }
    entries += t.size();
    // training mode: a bias feeding batch norm has an exactly zero gradient,
    // judged with an absolute floor of 1e-9
    G g;
    const V tv = g.leaf(t, true);
    g.backward(loss(name, true)(g, tv));
    const TensorD ad = g.grad(tv.id());
    TensorD probe = t;
    for (Index i = 0; i < t.size(); ++i) {
      const double saved = probe[i];
      auto eval = [&](double v) {
        probe[i] = v;
        G h;
        return loss(name, true)(h, h.constant(probe)).value()[0];
      };
      const double fd = (eval(saved + kGradCheckStep) - eval(saved - kGradCheckStep)) / (2 * kGradCheckStep);
      probe[i] = saved;
      if (std::abs(fd - ad[i]) > 1e-4 * std::max(std::abs(fd), std::abs(ad[i])) + 1e-9) ++train_bad;
    }
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = ops < 1e-4 && net < 1e-4 && train_bad == 0 && secs < 60;
  o.detail = "ops max rel err " + fmt("%.2e", ops) + "; tiny H-vector (M=4,E=8,N=10,K=3, " + std::to_string(entries) +
             " parameters) inference-mode max rel err " + fmt("%.2e", net) + " (" + worst_name +
             "), training-mode mismatches " + std::to_string(train_bad) + "; " + fmt("%.1f", secs) + " s";
  return o;
}

// ---------------------------------------------------------------- 2

Outcome criterion_shapes() {
  const ModelConfig cfg = ModelConfig::full(4);
  ModelParams<double> params = init_params<double>(cfg, 1);
  Rng rng(2);
  audio::UtteranceFeatures u = audio::split_fragments(random_tensor(rng, {300, 20}), 10);
  G g;
  ParamBinder<double> p(g, params, false);
  const ForwardResult<double> r = forward(p, u, cfg);
  struct Want {
    const char* what;
    Shape got, want;
  };
  const std::vector<Want> wants = {
      {"BiGRU out per fragment", {r.frame_encoded.value().rows() / 10, r.frame_encoded.value().cols()}, {30, 1024}},
      {"segment vector", {r.frame_attention.pooled.value().cols()}, {2048}},
      {"segment encoder", r.segment_encoded.value().shape(), {10, 1500}},
      {"V_U", {r.utterance_vector.value().cols()}, {3000}},
      {"Emb_U", {r.embedding.value().cols()}, {512}},
  };
  Outcome o;
  o.pass = r.frame_encoded.value().rows() == 300 && r.frame_attention.pooled.value().rows() == 10;
  for (const auto& w : wants) {
    o.pass = o.pass && w.got == w.want;
    o.detail += std::string(o.detail.empty() ? "" : ", ") + w.what + " " + shape_str(w.got);
  }
  return o;
}

// ---------------------------------------------------------------- 3

Outcome criterion_attention() {
  Rng rng(3);
  double worst_sum = 0, worst_shift = 0;
  int negative = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    ModelConfig cfg = ModelConfig::desk(2);
    cfg.n_fragments = 2 + Index(rng.below(10));
    cfg.gru_hidden = 1 + Index(rng.below(6));
    cfg.seg_cnn_out = 1 + Index(rng.below(8));
    cfg.frame_cnn_out = 2;
    ModelParams<double> params = init_params<double>(cfg, 100 + std::uint64_t(trial));
    const double sc = rng.uniform(0.1, 5.0);
    for (const char* pre : {"frame_att", "seg_att"})
      for (const char* s : {".W0", ".b0", ".W1"}) {
        TensorD& t = params.at(std::string(pre) + s);
        t = random_tensor(rng, t.shape(), sc);
      }
    const Index M = 1 + Index(rng.below(30)), B = 1 + Index(rng.below(3));
    G g;
    ParamBinder<double> p(g, params, false);
    const V h = g.constant(random_tensor(rng, {B * cfg.n_fragments * M, cfg.frame_encoder_dim()}, 3.0));
    const V s = g.constant(random_tensor(rng, {B * cfg.n_fragments, cfg.seg_cnn_out}, 3.0));
    const AttentionOutput<double> fa = frame_attention(p, h, M);
    const AttentionOutput<double> sa = segment_attention(p, s, cfg);
    const double shift = rng.uniform(-1000.0, 1000.0);
    for (const auto& [att, group] : {std::pair{&fa, M}, std::pair{&sa, cfg.n_fragments}}) {
      const TensorD& alpha = att->alpha.value();
      negative += (alpha.vec().array() < 0).count();
      for (Index k = 0; k < alpha.size() / group; ++k)
        worst_sum = std::max(worst_sum, std::abs(alpha.vec().segment(k * group, group).sum() - 1.0));
      const TensorD shifted = TensorD::from_matrix((att->scores.value().mat().array() + shift).matrix());
      worst_shift = std::max(worst_shift, (group_softmax(g.constant(shifted), group).value().vec() - alpha.vec())
                                              .cwiseAbs()
                                              .maxCoeff());
    }
  }
  Outcome o;
  o.pass = worst_sum < 1e-9 && worst_shift < 1e-9 && negative == 0;
  o.detail = "1000 trials, frame and segment level: max |sum - 1| " + fmt("%.2e", worst_sum) +
             ", max weight change under score shift " + fmt("%.2e", worst_shift);
  return o;
}

// ---------------------------------------------------------------- 4

Outcome criterion_pooling() {
  Rng rng(4);
  double mean_err = 0, max_std = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const Index T = 1 + Index(rng.below(40)), E = 1 + Index(rng.below(16));
    const TensorD row = random_tensor(rng, {1, E}, 10.0);
    TensorD x(Shape{T, E});
    x.mat().rowwise() = row.mat().row(0);
    G g;
    const TensorD pooled = stats_pool(g.constant(x)).value();
    mean_err = std::max(mean_err, (pooled.vec().head(E) - row.vec()).cwiseAbs().maxCoeff() / row.vec().cwiseAbs().maxCoeff());
    max_std = std::max(max_std, pooled.vec().tail(E).maxCoeff());
  }
  // weighted segment pooling against scalar loops
  double seg_err = 0;
  for (int trial = 0; trial < 100; ++trial) {
    ModelConfig cfg = ModelConfig::desk(2);
    cfg.n_fragments = 1 + Index(rng.below(12));
    cfg.seg_cnn_out = 1 + Index(rng.below(10));
    ModelParams<double> params = init_params<double>(cfg, 400 + std::uint64_t(trial));
    for (const char* s : {".W0", ".b0", ".W1"}) params.at(std::string("seg_att") + s) =
        random_tensor(rng, params.at(std::string("seg_att") + s).shape());
    const Index N = cfg.n_fragments, F = cfg.seg_cnn_out;
    const TensorD s = random_tensor(rng, {N, F}, 2.0);
    G g;
    ParamBinder<double> p(g, params, false);
    const TensorD got = segment_attention(p, g.constant(s), cfg).pooled.value();
    const TensorD &W0 = params.at("seg_att.W0"), &b0 = params.at("seg_att.b0"), &W1 = params.at("seg_att.W1");
    const Index A = W0.dim(1);
    std::vector<double> z(std::size_t(N), 0.0);
    for (Index n = 0; n < N; ++n)
      for (Index a = 0; a < A; ++a) {
        double acc = b0[a];
        for (Index f = 0; f < F; ++f) acc += s[n * F + f] * W0[f * A + a];
        z[std::size_t(n)] += std::max(acc, 0.0) * W1[a];
      }
    const double zmax = *std::max_element(z.begin(), z.end());
    double denom = 0;
    for (double v : z) denom += std::exp(v - zmax);
    for (Index f = 0; f < F; ++f) {
      double mu = 0;
      std::vector<double> weighted(std::size_t(N), 0.0);
      for (Index n = 0; n < N; ++n) {
        weighted[std::size_t(n)] = std::exp(z[std::size_t(n)] - zmax) / denom * s[n * F + f];
        mu += weighted[std::size_t(n)];
      }
      mu /= double(N);
      double var = 0;
      for (double v : weighted) var += (v - mu) * (v - mu);
      const double sd = std::sqrt(std::max(var / double(N), kStatsPoolVarianceFloor));
      seg_err = std::max({seg_err, std::abs(got[f] - mu), std::abs(got[F + f] - sd)});
    }
  }
  Outcome o;
  // a zero variance sits on the variance floor, so the std reads sqrt(1e-12)
  // sum-then-divide rounds, so the mean is judged relative to the row
  o.pass = mean_err < 1e-12 && max_std <= std::sqrt(kStatsPoolVarianceFloor) && seg_err < 1e-10;
  o.detail = "identical rows: relative mean error " + fmt("%.1e", mean_err) + ", std " + fmt("%.1e", max_std) +
             " (variance floor 1e-12); segment pooling vs two-pass oracle max err " + fmt("%.2e", seg_err) +
             " over 100 inputs";
  return o;
}

// ---------------------------------------------------------------- 5, 6

struct DeskCorpus {
  corpus::Manifest features;
  std::vector<std::string> speakers;
};

DeskCorpus desk_corpus(const fs::path& dir, const corpus::SynthOptions& so) {
  const corpus::Manifest audio_m = corpus::synth_corpus(so, dir / "audio");
  const corpus::PrepareReport rep = corpus::prepare_features(audio_m, dir / "feats", 1.0);
  if (!rep.failures.empty()) throw DataError("feature preparation failed: " + rep.failures.front());
  return {rep.features, rep.features.speakers()};
}

corpus::SynthOptions identification_preset() {
  corpus::SynthOptions so;  // 10 speakers x 60 utterances x 1 s
  so.seed = 7;
  return so;
}

struct TrainedModel {
  ModelConfig cfg;
  ModelParams<double> params;
  double heldout_acc = 0;
  corpus::Manifest train_part;
};

TrainedModel train_desk(const DeskCorpus& c, ModelKind kind, std::uint64_t seed) {
  const auto [tr_m, te_m] = corpus::split(c.features, 0.9, seed);
  const corpus::LoadedSet tr = corpus::load_set(tr_m, c.speakers), te = corpus::load_set(te_m, c.speakers);
  TrainedModel m;
  m.cfg = ModelConfig::desk(Index(c.speakers.size()));
  m.cfg.kind = kind;
  m.params = init_params<double>(m.cfg, seed);
  TrainConfig tc;
  tc.epochs = 30;
  tc.seed = seed;
  train(m.cfg, m.params, tr.view(), te.view(), tc);
  // accuracy of the final weights; the held-out tenth is not used to pick an epoch
  m.heldout_acc = evaluate_accuracy(m.params, te.view(), m.cfg);
  m.train_part = tr_m;
  return m;
}

Outcome criterion_identification() {
  const auto t0 = Clock::now();
  const DeskCorpus c = desk_corpus(work_dir("c5"), identification_preset());
  const std::vector<std::pair<ModelKind, const char*>> kinds = {
      {ModelKind::kHVector, "hvector"}, {ModelKind::kXVector, "xvector"}, {ModelKind::kXVectorAttention, "xvector_attn"}};
  std::map<std::string, std::vector<double>> acc;
  Outcome o;
  for (std::uint64_t seed : {1, 2, 3})
    for (const auto& [kind, name] : kinds) {
      const auto t1 = Clock::now();
      const double a = train_desk(c, kind, seed).heldout_acc;
      acc[name].push_back(a);
      o.notes.push_back(std::string(name) + " seed " + std::to_string(seed) + ": held-out accuracy " + fmt("%.4f", a) +
                        " (" + fmt("%.0f", seconds_since(t1)) + " s)");
    }
  auto mean = [&](const char* k) { return std::accumulate(acc[k].begin(), acc[k].end(), 0.0) / 3.0; };
  const double hv = mean("hvector"), xv = mean("xvector"), xa = mean("xvector_attn"), secs = seconds_since(t0);
  o.pass = hv >= 0.95 && xv >= 0.90 && xa >= 0.90 && hv >= xv - 0.01 && secs <= 900;
  o.detail = "mean held-out accuracy over 3 seeds: hvector " + fmt("%.4f", hv) + ", xvector " + fmt("%.4f", xv) +
             ", xvector_attn " + fmt("%.4f", xa) + "; " + fmt("%.0f", secs) + " s total";
  return o;
}

std::vector<EmbeddingRow> embed_rows(ModelParams<double>& params, const ModelConfig& cfg, const corpus::Manifest& m) {
  const corpus::LoadedSet set = corpus::load_set(m, m.speakers(), cfg.n_fragments);
  std::vector<const audio::UtteranceFeatures*> utts;
  for (const auto& f : set.features) utts.push_back(&f);
  const TensorD e = embed_all(params, utts, cfg);
  std::vector<EmbeddingRow> rows;
  for (std::size_t i = 0; i < utts.size(); ++i)
    rows.push_back({utts[i]->utterance_id, utts[i]->speaker_id, e.mat().row(Index(i)).transpose()});
  return rows;
}

Outcome criterion_verification() {
  const fs::path dir = work_dir("c6");
  const DeskCorpus train_c = desk_corpus(dir / "train", identification_preset());
  corpus::SynthOptions held = identification_preset();
  held.n_speakers = 10;
  held.utts_per_speaker = 20;
  held.first_speaker = 10;  // speakers never seen in training
  const DeskCorpus held_c = desk_corpus(dir / "heldout", held);

  TrainedModel m = train_desk(train_c, ModelKind::kHVector, 1);
  const corpus::VerificationSplit vs = corpus::make_verification_split(held_c.features, 5, 5, 10, 1, 10);
  const scoring::PldaModel plda = scoring::plda_fit(embed_rows(m.params, m.cfg, m.train_part));
  std::vector<EmbeddingRow> enrol = embed_rows(m.params, m.cfg, vs.enrol);
  std::vector<EmbeddingRow> eval = embed_rows(m.params, m.cfg, vs.enrol_heldout);
  for (auto& r : embed_rows(m.params, m.cfg, vs.eval)) eval.push_back(std::move(r));

  std::vector<scoring::ScoredTrial> trials;
  Index targets = 0;
  for (const auto& t : scoring::make_trials(enrol, eval)) {
    trials.push_back({scoring::plda_score(plda, t.enrol_vector, t.test_vector), t.target});
    targets += t.target;
  }
  const double eer = scoring::compute_eer(trials).eer, oracle = hvector::testing::brute_force_eer(trials);
  Outcome o;
  o.pass = eer <= 0.10 && eer == oracle;
  o.detail = "EER " + fmt("%.4f", eer) + " on " + std::to_string(trials.size()) + " trials (" +
             std::to_string(targets) + " target), brute-force sweep " + fmt("%.4f", oracle) +
             (eer == oracle ? " (identical)" : " (DIFFERENT)");
  o.notes.push_back("enrol speakers: 10 enrolment + 10 held-out utterances each; eval speakers: 10 utterances; "
                    "PLDA fitted on training-speaker embeddings, LDA to " + std::to_string(plda.plda.mu.size()) +
                    " dims; identification accuracy of this model " + fmt("%.4f", m.heldout_acc));
  return o;
}

// ---------------------------------------------------------------- 7

Eigen::MatrixXd random_spd(Rng& rng, Index d, double scale) {
  Eigen::MatrixXd a(d, d);
  for (Index i = 0; i < d * d; ++i) a(i / d, i % d) = rng.normal();
  return scale * (a * a.transpose() / double(d) + 0.5 * Eigen::MatrixXd::Identity(d, d));
}

Eigen::VectorXd gaussian(Rng& rng, const Eigen::VectorXd& mean, const Eigen::LLT<Eigen::MatrixXd>& chol) {
  Eigen::VectorXd z(mean.size());
  for (Index i = 0; i < z.size(); ++i) z[i] = rng.normal();
  return mean + chol.matrixL() * z;
}

struct TwoCovDraw {
  Eigen::MatrixXd x, latent;
  std::vector<int> labels;
};

TwoCovDraw draw_two_cov(Rng& rng, const scoring::TwoCovModel& truth, int speakers, int per) {
  const Eigen::LLT<Eigen::MatrixXd> cb(truth.phi_b), cw(truth.phi_w);
  TwoCovDraw d;
  const Index D = truth.mu.size();
  d.x.resize(speakers * per, D);
  d.latent.resize(speakers, D);
  for (int s = 0; s < speakers; ++s) {
    const Eigen::VectorXd y = gaussian(rng, truth.mu, cb);
    d.latent.row(s) = y.transpose();
    for (int j = 0; j < per; ++j) {
      d.x.row(s * per + j) = gaussian(rng, y, cw).transpose();
      d.labels.push_back(s);
    }
  }
  return d;
}

double rel_err(const Eigen::MatrixXd& est, const Eigen::MatrixXd& truth) { return (est - truth).norm() / truth.norm(); }

// Sample covariance (divide by n) of the true speaker latents: what an
// estimator that could see the latents would report for phi_b.
Eigen::MatrixXd latent_covariance(const Eigen::MatrixXd& latent) {
  const Eigen::MatrixXd c = latent.rowwise() - latent.colwise().mean();
  return c.transpose() * c / double(latent.rows());
}

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = 0.5 * double(i + j);
    i = j + 1;
  }
  return r;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  const auto ra = ranks(a), rb = ranks(b);
  const Eigen::Map<const Eigen::VectorXd> x(ra.data(), Index(ra.size())), y(rb.data(), Index(rb.size()));
  const Eigen::VectorXd xc = x.array() - x.mean(), yc = y.array() - y.mean();
  return xc.dot(yc) / (xc.norm() * yc.norm());
}

// Spearman correlation between fitted and true-parameter LLRs on fresh
// trials from the true model, half of them same-speaker.
double ranking_agreement(Rng& rng, const scoring::TwoCovModel& truth, const scoring::TwoCovModel& fit, int n) {
  const Eigen::LLT<Eigen::MatrixXd> cb(truth.phi_b), cw(truth.phi_w);
  const scoring::PldaScorer fitted(fit), oracle(truth);
  std::vector<double> sf, so;
  for (int i = 0; i < n; ++i) {
    const Eigen::VectorXd y1 = gaussian(rng, truth.mu, cb);
    const Eigen::VectorXd y2 = i % 2 ? y1 : Eigen::VectorXd(gaussian(rng, truth.mu, cb));
    const Eigen::VectorXd e = gaussian(rng, y1, cw), t = gaussian(rng, y2, cw);
    sf.push_back(fitted(e, t));
    so.push_back(oracle(e, t));
  }
  return spearman(sf, so);
}

scoring::TwoCovModel known_model(Rng& rng, Index d) {
  scoring::TwoCovModel t;
  t.mu = Eigen::VectorXd::LinSpaced(d, -1.0, 1.0);
  t.phi_b = random_spd(rng, d, 1.0);
  t.phi_w = random_spd(rng, d, 0.5);
  return t;
}

Outcome criterion_plda_recovery() {
  const Index d = 5;
  const int speakers = 20, per = 30;
  Rng rng(7);
  const scoring::TwoCovModel truth = known_model(rng, d);
  const TwoCovDraw draw = draw_two_cov(rng, truth, speakers, per);
  const scoring::TwoCovModel fit = scoring::fit_two_covariance(draw.x, draw.labels, 1000, 1e-10);
  const double eb = rel_err(fit.phi_b, truth.phi_b), ew = rel_err(fit.phi_w, truth.phi_w);
  const double emu = (fit.mu - truth.mu).norm() / truth.mu.norm();

  const double rho = ranking_agreement(rng, truth, fit, 2000);

  Outcome o;
  o.pass = eb < 0.1 && ew < 0.1 && emu < 0.1 && rho > 0.99;
  o.detail = "relative Frobenius error phi_b " + fmt("%.3f", eb) + ", phi_w " + fmt("%.3f", ew) + ", mu " +
             fmt("%.3f", emu) + "; Spearman vs true-parameter LLR " + fmt("%.4f", rho);

  // How far phi_b can get from 20 speakers at all: the same error for the
  // covariance of the true latents, over independent replications.
  const double latent_now = rel_err(latent_covariance(draw.latent), truth.phi_b);
  std::vector<double> em_b, lat_b, em_w, rhos;
  for (std::uint64_t r = 0; r < 200; ++r) {
    Rng rr(derive_seed(7, "replication", r));
    const scoring::TwoCovModel tr = known_model(rr, d);
    const TwoCovDraw dr = draw_two_cov(rr, tr, speakers, per);
    const scoring::TwoCovModel f = scoring::fit_two_covariance(dr.x, dr.labels, 1000, 1e-10);
    em_b.push_back(rel_err(f.phi_b, tr.phi_b));
    em_w.push_back(rel_err(f.phi_w, tr.phi_w));
    lat_b.push_back(rel_err(latent_covariance(dr.latent), tr.phi_b));
    rhos.push_back(ranking_agreement(rr, tr, f, 500));
  }
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return 0.5 * (v[v.size() / 2] + v[(v.size() - 1) / 2]);
  };
  auto below = [](const std::vector<double>& v) { return double(std::count_if(v.begin(), v.end(), [](double x) { return x < 0.1; })) / double(v.size()); };
  o.notes.push_back("covariance of the 20 true speaker latents misses phi_b by " + fmt("%.3f", latent_now) +
                    " in this draw");
  o.notes.push_back("200 replications: EM phi_b error median " + fmt("%.3f", median(em_b)) + " (" +
                    fmt("%.0f", 100 * below(em_b)) + "% under 0.1), latent-covariance oracle median " +
                    fmt("%.3f", median(lat_b)) + " (" + fmt("%.0f", 100 * below(lat_b)) +
                    "% under 0.1); EM phi_w error median " + fmt("%.3f", median(em_w)) + " (" +
                    fmt("%.0f", 100 * below(em_w)) + "% under 0.1); Spearman median " + fmt("%.4f", median(rhos)) +
                    " (" + fmt("%.0f", 100.0 * double(std::count_if(rhos.begin(), rhos.end(), [](double r) { return r > 0.99; })) / 200.0) +
                    "% above 0.99)");
  return o;
}

// ---------------------------------------------------------------- 8

Outcome criterion_frontend() {
  bool ok = true;
  std::vector<std::string> bad;
  // frame count, closed form and on real MFCC output
  for (Index n = 0; n <= 30000; ++n) {
    const Index want = n < 200 ? 0 : (n - 200) / 80 + 1;
    if (audio::num_frames(n) != want) {
      ok = false;
      bad.push_back("num_frames(" + std::to_string(n) + ")");
      break;
    }
  }
  Rng rng(8);
  for (Index n : {200, 201, 279, 280, 281, 1000, 7999, 8000, 8001, 24000}) {
    audio::AudioClip c;
    c.samples.resize(n);
    for (Index i = 0; i < n; ++i) c.samples[i] = 0.3 * rng.normal();
    if (audio::mfcc_frames(c).rows() != (n - 200) / 80 + 1) {
      ok = false;
      bad.push_back("mfcc rows for n=" + std::to_string(n));
    }
  }
  // orthonormal DCT-II
  const Eigen::MatrixXd full = audio::dct_matrix(audio::kNumMelBins, audio::kNumMelBins);
  const Eigen::MatrixXd kept = audio::dct_matrix(audio::kNumCeps, audio::kNumMelBins);
  const double dct_err = std::max((full * full.transpose() - Eigen::MatrixXd::Identity(23, 23)).cwiseAbs().maxCoeff(),
                                  (kept * kept.transpose() - Eigen::MatrixXd::Identity(20, 20)).cwiseAbs().maxCoeff());
  ok = ok && dct_err < 1e-10;
  // windowing counts
  Index window_mismatch = 0;
  for (double len : {1.0, 3.0})
    for (Index n = 0; n <= 60000; n += 97) {
      const Index w = Index(len * 8000), want = n < w ? 0 : (n - w) / (w / 2) + 1;
      window_mismatch += Index(audio::window_utterances(audio::AudioClip{Eigen::VectorXd::Zero(n), 8000}, len).size()) != want;
    }
  ok = ok && window_mismatch == 0;
  // injected digital silence
  Index zeros_left = 0, speech = 0, kept_total = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const audio::AudioClip voice =
        corpus::synth_utterance(corpus::draw_speaker(3, trial), 2.0, derive_seed(8, "vad", std::uint64_t(trial)));
    std::vector<std::pair<Index, Index>> gaps;  // (position, length)
    for (int g = 0; g < 3; ++g) gaps.push_back({Index(rng.below(std::uint64_t(voice.size()))), Index(400 + rng.below(4000))});
    std::sort(gaps.begin(), gaps.end());
    Eigen::VectorXd x(voice.size() + std::accumulate(gaps.begin(), gaps.end(), Index(0), [](Index a, auto& p) { return a + p.second; }));
    Index src = 0, dst = 0;
    for (const auto& [pos, len] : gaps) {
      x.segment(dst, pos - src) = voice.samples.segment(src, pos - src);
      dst += pos - src;
      x.segment(dst, len).setZero();
      dst += len;
      src = pos;
    }
    x.segment(dst, voice.size() - src) = voice.samples.segment(src, voice.size() - src);
    const audio::AudioClip out = audio::vad_filter(audio::AudioClip{x, 8000});
    zeros_left += (out.samples.array() == 0.0).count();
    speech += voice.size();
    kept_total += out.size();
  }
  ok = ok && zeros_left == 0 && kept_total <= speech;
  Outcome o;
  o.pass = ok;
  o.detail = "frame counts " + std::string(bad.empty() ? "exact" : "WRONG: " + bad.front()) + "; DCT orthonormality err " +
             fmt("%.1e", dct_err) + "; window count mismatches " + std::to_string(window_mismatch) +
             "; zero samples left after VAD " + std::to_string(zeros_left) + " (speech kept " +
             fmt("%.3f", double(kept_total) / double(speech)) + ")";
  return o;
}

// ---------------------------------------------------------------- 9

int cli(const std::vector<std::string>& args, std::string* out_text = nullptr) {
  std::vector<const char*> argv = {"hvector"};
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(int(argv.size()), argv.data(), out, err);
  if (out_text) *out_text = out.str();
  if (code != 0) throw std::runtime_error("hvector " + args.front() + " failed: " + err.str());
  return code;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

struct PipelineRun {
  std::string accuracy, embeddings, params;
};

PipelineRun pipeline(const fs::path& dir) {
  const std::string d = dir.string();
  cli({"synth", "--speakers", "4", "--utts", "20", "--dur", "1", "--seed", "9", "--out", d + "/audio"});
  cli({"prepare", "--manifest", d + "/audio/manifest.tsv", "--len", "1", "--out", d + "/feats"});
  cli({"train", "--manifest", d + "/feats/manifest.tsv", "--seed", "9", "--set", "epochs=4", "--out", d + "/ck"});
  cli({"embed", "--checkpoint", d + "/ck", "--manifest", d + "/ck/test.tsv", "--out", d + "/emb.csv"});
  std::string out;
  cli({"score-id", "--checkpoint", d + "/ck", "--manifest", d + "/ck/test.tsv"}, &out);
  const auto pos = out.find("accuracy=");
  return {pos == std::string::npos ? "" : out.substr(pos, out.find('\n', pos) - pos), slurp(dir / "emb.csv"),
          slurp(dir / "ck" / "params.hva")};
}

Outcome criterion_determinism() {
  const fs::path dir = work_dir("c9");
  const PipelineRun a = pipeline(dir / "run_a"), b = pipeline(dir / "run_b");
  Outcome o;
  o.pass = !a.accuracy.empty() && a.accuracy == b.accuracy && a.embeddings == b.embeddings && a.params == b.params;
  o.detail = "synth -> prepare -> train -> embed -> score-id twice: " + a.accuracy + " vs " + b.accuracy +
             ", embedding CSV " + (a.embeddings == b.embeddings ? "byte-identical" : "DIFFERENT") + " (" +
             std::to_string(a.embeddings.size()) + " bytes), checkpoint " +
             (a.params == b.params ? "byte-identical" : "DIFFERENT");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<int> selected;
  CLI::App app{"Acceptance criteria"};
  app.add_option("--criterion", selected, "Criterion number(s) to run")->check(CLI::Range(1, 9));
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"gradient suite", criterion_gradients},
      {"shape conformance", criterion_shapes},
      {"attention invariants", criterion_attention},
      {"pooling identities", criterion_pooling},
      {"synthetic identification", criterion_identification},
      {"synthetic verification", criterion_verification},
      {"PLDA recovery", criterion_plda_recovery},
      {"front-end exactness", criterion_frontend},
      {"determinism", criterion_determinism},
  };
  if (selected.empty()) {
    selected.resize(criteria.size());
    std::iota(selected.begin(), selected.end(), 1);
  }
  int failed = 0;
  for (int id : selected) {
    const auto& [name, run] = criteria[std::size_t(id - 1)];
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("error: ") + e.what();
    }
    failed += !o.pass;
    std::cout << "criterion " << id << " " << (o.pass ? "PASS" : "FAIL") << ": " << name << ": " << o.detail << '\n';
    for (const auto& n : o.notes) std::cout << "  " << n << '\n';
    std::cout << std::flush;
  }
  return failed;
}
