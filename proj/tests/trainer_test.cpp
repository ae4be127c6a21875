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
#include <numbers>
#include <sstream>

#include "doctest.h"
#include "hvector/checkpoint.hpp"
#include "hvector/trainer.hpp"
#include "test_util.hpp"

using namespace hvector;
using hvector::testing::random_tensor;

namespace {

using G = Graph<double>;

ModelConfig small_config(ModelKind kind) {
  ModelConfig c;
  c.kind = kind;
  c.n_fragments = 3;
  c.frames_per_fragment = 4;
  c.feat_dim = 4;
  c.frame_cnn_width = 3;
  c.frame_cnn_out = 4;
  c.gru_hidden = 3;
  c.seg_cnn_out = 4;
  c.fc_dims = {6, 5};
  c.tdnn_widths = {3, 1};
  c.tdnn_channels = {4, 5};
  c.n_speakers = 3;
  return c;
}

// Three speakers whose frames differ in mean; 12 frames each.
struct ToyData {
  std::vector<audio::UtteranceFeatures> utts;
  LabelledSet set;
};

ToyData toy_data(int per_speaker, std::uint64_t seed) {
  Rng rng(seed);
  ToyData d;
  for (int s = 0; s < 3; ++s)
    for (int u = 0; u < per_speaker; ++u) {
      TensorD f = random_tensor(rng, {12, 4}, 0.5);
      for (Index t = 0; t < 12; ++t) f.mat()(t, s) += 1.5;
      auto uf = audio::split_fragments(f, 3);
      uf.utterance_id = "s" + std::to_string(s) + "u" + std::to_string(u);
      uf.speaker_id = "s" + std::to_string(s);
      d.utts.push_back(std::move(uf));
      d.set.labels.push_back(s);
    }
  for (const auto& u : d.utts) d.set.utterances.push_back(&u);
  return d;
}

std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

}  // namespace

TEST_CASE("cross-entropy values") {
  G g;
  const int labels4[] = {2};
  CHECK(std::abs(cross_entropy(g.constant(TensorD::zeros({1, 4})), std::span<const int>(labels4)).value()[0] -
                 std::log(4.0)) < 1e-12);
  TensorD sat = TensorD::zeros({1, 4});
  sat[2] = 40;
  CHECK(cross_entropy(g.constant(sat), std::span<const int>(labels4)).value()[0] < 1e-8);

  Rng rng(1);
  const TensorD z = random_tensor(rng, {3, 5});
  const int labels[] = {0, 4, 2};
  G g2;
  const Var<double> v = g2.leaf(z, true);
  g2.backward(cross_entropy(v, std::span<const int>(labels)));
  for (Index r = 0; r < 3; ++r) {
    const Eigen::RowVectorXd e = (z.mat().row(r).array() - z.mat().row(r).maxCoeff()).exp();
    Eigen::RowVectorXd expect = e / e.sum();
    expect[labels[r]] -= 1.0;
    expect /= 3.0;
    CHECK((v.grad().mat().row(r) - expect).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("adam update") {
  ModelParams<double> p;
  p.tensors["w"] = TensorD::from_vector(Eigen::Vector3d(1.0, -2.0, 0.5));
  TrainConfig tc;
  tc.lr = 0.01;
  AdamState<double> st;
  std::map<std::string, TensorD> grads;
  grads["w"] = TensorD::from_vector(Eigen::Vector3d(3.0, -1e-3, 0.0));

  SUBCASE("first step moves each entry by about lr against the gradient sign") {
    adam_step(p, grads, st, tc);
    CHECK(p.at("w")[0] == doctest::Approx(1.0 - 0.01).epsilon(1e-6));
    CHECK(p.at("w")[1] == doctest::Approx(-2.0 + 0.01).epsilon(1e-4));
    CHECK(p.at("w")[2] == 0.5);
    CHECK(st.step == 1);
  }
  SUBCASE("two steps on a quadratic reduce it") {
    for (int i = 0; i < 2; ++i) {
      const double before = p.at("w").vec().squaredNorm();
      grads["w"].vec() = 2.0 * p.at("w").vec();
      adam_step(p, grads, st, tc);
      CHECK(p.at("w").vec().squaredNorm() < before);
    }
  }
  SUBCASE("zero gradient leaves parameters unchanged") {
    grads["w"] = TensorD::zeros({3});
    adam_step(p, grads, st, tc);
    CHECK(p.at("w").vec() == Eigen::Vector3d(1.0, -2.0, 0.5));
  }
  SUBCASE("non-finite gradients are rejected and named") {
    grads["w"][1] = NAN;
    try {
      adam_step(p, grads, st, tc);
      FAIL("no exception");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("'w'") != std::string::npos);
    }
    CHECK(st.step == 0);
    grads["w"][1] = INFINITY;
    CHECK_THROWS_AS(adam_step(p, grads, st, tc), NumericError);
  }
  SUBCASE("shape mismatch") {
    grads["w"] = TensorD::zeros({2});
    CHECK_THROWS_AS(adam_step(p, grads, st, tc), DimensionError);
  }
}

TEST_CASE("train config") {
  TrainConfig tc;
  CHECK_NOTHROW(tc.validate());
  CHECK(tc.lr == 1e-4);
  CHECK(tc.beta1 == 0.95);
  CHECK(tc.beta2 == 0.999);
  CHECK(tc.eps == 1e-8);
  CHECK(tc.set("lr", "0.5"));
  CHECK(tc.lr == 0.5);
  CHECK_FALSE(tc.set("nonsense", "1"));
  for (auto [k, v] : std::vector<std::pair<const char*, const char*>>{
           {"beta1", "1"}, {"beta2", "0"}, {"eps", "0"}, {"lr", "-1"}, {"batch_size", "0"}, {"dropout", "1"}}) {
    TrainConfig bad;
    bad.set(k, v);
    CHECK_THROWS_AS(bad.validate(), ConfigError);
  }
  TrainConfig back;
  std::istringstream in(tc.to_text());
  for (std::string line; std::getline(in, line);) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) back.set(line.substr(0, eq), line.substr(eq + 1));
  }
  CHECK(back.to_text() == tc.to_text());
}

TEST_CASE("training steps") {
  for (ModelKind kind : {ModelKind::kHVector, ModelKind::kXVector, ModelKind::kXVectorAttention}) {
    CAPTURE(to_string(kind));
    const ModelConfig cfg = small_config(kind);
    ToyData data = toy_data(4, 2);
    const auto batch = iota(data.set.size());

    SUBCASE("zero learning rate leaves weights bit-identical") {
      ModelParams<double> p = init_params<double>(cfg, 3);
      const ModelParams<double> before = p;
      TrainConfig tc;
      tc.lr = 0;
      AdamState<double> adam;
      Rng rng(1);
      for (int i = 0; i < 3; ++i) train_step(p, adam, data.set, batch, cfg, tc, rng);
      for (const auto& [name, t] : before.tensors) CHECK(p.at(name).vec() == t.vec());
    }
    SUBCASE("loss falls on a fixed batch") {
      ModelConfig c = cfg;
      c.dropout = 0;
      ModelParams<double> p = init_params<double>(c, 3);
      TrainConfig tc;
      tc.lr = 1e-2;
      AdamState<double> adam;
      Rng rng(1);
      double prev = INFINITY;
      for (int i = 0; i < 5; ++i) {
        const double loss = train_step(p, adam, data.set, batch, c, tc, rng).loss;
        CHECK(loss < prev);
        prev = loss;
      }
    }
  }
}

TEST_CASE("train loop") {
  const ModelConfig cfg = small_config(ModelKind::kHVector);
  ToyData tr = toy_data(6, 4), dev = toy_data(2, 5);
  TrainConfig tc;
  tc.lr = 5e-3;
  tc.batch_size = 5;
  tc.epochs = 6;
  tc.seed = 9;

  ModelParams<double> p1 = init_params<double>(cfg, 1), p2 = p1;
  std::ostringstream log1, log2;
  const auto r1 = train(cfg, p1, tr.set, dev.set, tc, &log1);
  const auto r2 = train(cfg, p2, tr.set, dev.set, tc, &log2);
  CHECK(log1.str() == log2.str());
  REQUIRE(r1.history.size() == 6);
  for (const auto& [name, t] : p1.tensors) CHECK(p2.at(name).vec() == t.vec());
  CHECK(r1.history.back().loss < r1.history.front().loss);
  for (const auto& h : r1.history) CHECK(h.dev_acc <= r1.best_dev_acc);
  CHECK(r1.history[std::size_t(r1.best_epoch - 1)].dev_acc == r1.best_dev_acc);

  // log line: epoch, loss, train accuracy, dev accuracy, tab separated
  std::istringstream first(log1.str());
  std::string line;
  std::getline(first, line);
  CHECK(std::count(line.begin(), line.end(), '\t') == 3);
  CHECK(line.rfind("1\t", 0) == 0);

  TrainConfig other = tc;
  other.seed = 10;
  ModelParams<double> p3 = init_params<double>(cfg, 1);
  std::ostringstream log3;
  train(cfg, p3, tr.set, dev.set, other, &log3);
  CHECK(log3.str() != log1.str());

  SUBCASE("trained weights survive a checkpoint") {
    const auto dir = std::filesystem::temp_directory_path() / "hvector_trainer_ckpt";
    std::filesystem::remove_all(dir);
    Checkpoint ck{cfg, {"s0", "s1", "s2"}, r1.best};
    save_checkpoint(dir, ck);
    Checkpoint back = load_checkpoint(dir);
    for (const auto& [name, t] : r1.best.tensors) CHECK(back.params.at(name).vec() == t.vec());
    CHECK(evaluate_accuracy(back.params, dev.set, back.config) == r1.best_dev_acc);
    std::filesystem::remove_all(dir);
  }
  SUBCASE("invalid input") {
    ModelParams<double> p = init_params<double>(cfg, 1);
    CHECK_THROWS_AS(train(cfg, p, LabelledSet{}, dev.set, tc), DataError);
    LabelledSet bad = tr.set;
    bad.labels[0] = 7;
    CHECK_THROWS_AS(train(cfg, p, bad, dev.set, tc), DataError);
    CHECK_THROWS_AS(evaluate_accuracy(p, LabelledSet{}, cfg), DataError);
  }
}
