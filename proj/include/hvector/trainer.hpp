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

#ifndef HVECTOR_TRAINER_HPP_
#define HVECTOR_TRAINER_HPP_

// Cross-entropy training with Adam, seeded epoch shuffling and best-model
// tracking on a held-out set.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "hvector/model.hpp"

namespace hvector {

struct TrainConfig {
  double lr = 1e-4;
  double beta1 = 0.95;
  double beta2 = 0.999;
  double eps = 1e-8;
  double dropout = 0.2;  // copied into the model config by train()
  Index batch_size = 32;
  int epochs = 30;
  std::uint64_t seed = 0;

  /// Throws ConfigError unless 0 < beta < 1, lr >= 0, eps > 0, batch_size > 0,
  /// epochs >= 0 and 0 <= dropout < 1. lr = 0 is allowed (frozen run).
  void validate() const;
  bool set(const std::string& key, const std::string& value);
  std::string to_text() const;
};

/// Adam moments per parameter name; shapes mirror the parameters.
template <typename S>
struct AdamState {
  long step = 0;
  std::map<std::string, Tensor<S>> m, v;
};

/// One Adam update of every parameter that has a gradient:
///   m = b1 m + (1 - b1) g,  v = b2 v + (1 - b2) g^2,
///   theta -= lr * m_hat / (sqrt(v_hat) + eps)  with bias-corrected moments.
/// A non-finite gradient throws NumericError naming the parameter; nothing is
/// updated in that case.
template <typename S>
void adam_step(ModelParams<S>& params, const std::map<std::string, Tensor<S>>& grads, AdamState<S>& state,
               const TrainConfig& cfg) {
  for (const auto& [name, g] : grads) {
    if (g.shape() != params.at(name).shape())
      throw DimensionError("gradient for '" + name + "' has shape " + shape_str(g.shape()));
    for (Index i = 0; i < g.size(); ++i)
      if (!std::isfinite(double(g[i])))
        throw NumericError("non-finite gradient in parameter '" + name + "' at entry " + std::to_string(i) +
                           " (step " + std::to_string(state.step + 1) + ")");
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, double(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, double(state.step));
  for (const auto& [name, g] : grads) {
    Tensor<S>& theta = params.at(name);
    auto [mi, new_m] = state.m.try_emplace(name, Tensor<S>::zeros(g.shape()));
    auto [vi, new_v] = state.v.try_emplace(name, Tensor<S>::zeros(g.shape()));
    auto m = mi->second.vec().array();
    auto v = vi->second.vec().array();
    const auto ga = g.vec().array();
    m = S(cfg.beta1) * m + S(1 - cfg.beta1) * ga;
    v = S(cfg.beta2) * v + S(1 - cfg.beta2) * ga.square();
    theta.vec().array() -= S(cfg.lr) * (m / S(c1)) / ((v / S(c2)).sqrt() + S(cfg.eps));
  }
}

/// Utterances with integer class labels. Non-owning.
struct LabelledSet {
  std::vector<const audio::UtteranceFeatures*> utterances;
  std::vector<int> labels;

  std::size_t size() const { return utterances.size(); }
};

namespace detail {

// Groups positions of `order` by utterance shape so every group can go through
// one batched forward pass.
inline std::vector<std::vector<std::size_t>> shape_groups(const LabelledSet& data, std::span<const std::size_t> order,
                                                          ModelKind kind) {
  std::vector<std::pair<Index, std::vector<std::size_t>>> groups;
  for (std::size_t idx : order) {
    const auto* u = data.utterances[idx];
    const Index key = kind == ModelKind::kHVector ? u->frames_per_fragment() : u->n_frames;
    auto it = std::find_if(groups.begin(), groups.end(), [&](const auto& g) { return g.first == key; });
    if (it == groups.end()) groups.push_back({key, {idx}});
    else it->second.push_back(idx);
  }
  std::vector<std::vector<std::size_t>> out;
  for (auto& g : groups) out.push_back(std::move(g.second));
  return out;
}

template <typename S>
Index count_correct(const Tensor<S>& logits, std::span<const int> labels) {
  Index correct = 0;
  for (Index r = 0; r < logits.rows(); ++r) {
    Index best = 0;
    logits.mat().row(r).maxCoeff(&best);
    correct += best == labels[std::size_t(r)];
  }
  return correct;
}

}  // namespace detail

struct StepResult {
  double loss = 0;   // mean cross-entropy over the batch
  Index correct = 0;  // training-mode argmax hits
};

/// Forward + backward over the utterances `batch` (indices into data) and one
/// Adam step. The loss is the mean of per-utterance losses.
template <typename S>
StepResult train_step(ModelParams<S>& params, AdamState<S>& adam, const LabelledSet& data,
                      std::span<const std::size_t> batch, const ModelConfig& cfg, const TrainConfig& tc, Rng& rng) {
  if (batch.empty()) throw DataError("empty training batch");
  Graph<S> g;
  ParamBinder<S> p(g, params, true);
  StepResult res;
  Var<S> total;
  for (const auto& group : detail::shape_groups(data, batch, cfg.kind)) {
    std::vector<const audio::UtteranceFeatures*> utts;
    std::vector<int> labels;
    for (std::size_t i : group) {
      utts.push_back(data.utterances[i]);
      labels.push_back(data.labels[i]);
    }
    const ForwardResult<S> r = forward(p, std::span<const audio::UtteranceFeatures* const>(utts), cfg,
                                       ForwardOptions{true, &rng});
    res.correct += detail::count_correct(r.logits.value(), labels);
    const Var<S> part = scale(cross_entropy(r.logits, std::span<const int>(labels)),
                              S(double(group.size()) / double(batch.size())));
    total = total.valid() ? add(total, part) : part;
  }
  res.loss = double(total.value()[0]);
  g.backward(total);
  std::map<std::string, Tensor<S>> grads;
  for (const auto& [name, v] : p.bound()) grads.emplace(name, v.grad());
  adam_step(params, grads, adam, tc);
  return res;
}

/// Inference-mode logits for every utterance of data, [n, K], in order.
template <typename S>
Tensor<S> predict_logits(ModelParams<S>& params, const LabelledSet& data, const ModelConfig& cfg,
                         Index batch_size = 64) {
  Tensor<S> out(Shape{Index(data.size()), cfg.n_speakers});
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t start = 0; start < order.size(); start += std::size_t(batch_size)) {
    const std::size_t end = std::min(order.size(), start + std::size_t(batch_size));
    const std::span<const std::size_t> chunk(order.data() + start, end - start);
    for (const auto& group : detail::shape_groups(data, chunk, cfg.kind)) {
      std::vector<const audio::UtteranceFeatures*> utts;
      for (std::size_t i : group) utts.push_back(data.utterances[i]);
      Graph<S> g;
      ParamBinder<S> p(g, params, false);
      const Tensor<S> logits = forward(p, std::span<const audio::UtteranceFeatures* const>(utts), cfg).logits.value();
      for (std::size_t k = 0; k < group.size(); ++k) out.mat().row(Index(group[k])) = logits.mat().row(Index(k));
    }
  }
  return out;
}

/// Inference-mode embeddings for a list of utterances, [n, fc_dims[0]].
template <typename S>
Tensor<S> embed_all(ModelParams<S>& params, const std::vector<const audio::UtteranceFeatures*>& utts,
                    const ModelConfig& cfg, Index batch_size = 64) {
  LabelledSet data{utts, std::vector<int>(utts.size(), 0)};
  Tensor<S> out(Shape{Index(utts.size()), cfg.embedding_dim()});
  std::vector<std::size_t> order(utts.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t start = 0; start < order.size(); start += std::size_t(batch_size)) {
    const std::size_t end = std::min(order.size(), start + std::size_t(batch_size));
    for (const auto& group : detail::shape_groups(data, std::span<const std::size_t>(order.data() + start, end - start),
                                                  cfg.kind)) {
      std::vector<const audio::UtteranceFeatures*> batch;
      for (std::size_t i : group) batch.push_back(utts[i]);
      const Tensor<S> e = embed(params, std::span<const audio::UtteranceFeatures* const>(batch), cfg);
      for (std::size_t k = 0; k < group.size(); ++k) out.mat().row(Index(group[k])) = e.mat().row(Index(k));
    }
  }
  return out;
}

/// Fraction of utterances whose inference-mode argmax equals the label.
template <typename S>
double evaluate_accuracy(ModelParams<S>& params, const LabelledSet& data, const ModelConfig& cfg) {
  if (data.size() == 0) throw DataError("empty evaluation set");
  return double(detail::count_correct(predict_logits(params, data, cfg), data.labels)) / double(data.size());
}

struct EpochStats {
  int epoch = 0;
  double loss = 0;       // mean over the epoch's utterances
  double train_acc = 0;  // training-mode predictions made during the epoch
  double dev_acc = 0;    // inference mode; NaN without a dev set
};

/// `epoch<TAB>loss<TAB>train_acc<TAB>dev_acc`
std::string format_log_line(const EpochStats& s);

template <typename S>
struct TrainResult {
  std::vector<EpochStats> history;
  ModelParams<S> best;  // parameters after the epoch with the best dev accuracy
  int best_epoch = 0;
  double best_dev_acc = -1;
  AdamState<S> adam;
};

/// Trains params in place for tc.epochs epochs. Each epoch shuffles the
/// training set with a stream derived from (seed, epoch), steps through
/// batches of tc.batch_size, evaluates the dev set (if non-empty) and writes
/// one log line to `log` (may be null). The best epoch is the first one with
/// the highest dev accuracy (lowest loss when there is no dev set).
template <typename S>
TrainResult<S> train(ModelConfig cfg, ModelParams<S>& params, const LabelledSet& train_set, const LabelledSet& dev_set,
                     const TrainConfig& tc, std::ostream* log = nullptr,
                     const std::function<void(const EpochStats&)>& on_epoch = {}) {
  tc.validate();
  cfg.dropout = tc.dropout;
  cfg.validate();
  if (train_set.size() == 0) throw DataError("empty training set");
  if (train_set.labels.size() != train_set.size() || dev_set.labels.size() != dev_set.size())
    throw DimensionError("labels and utterances differ in count");
  for (const auto* set : {&train_set, &dev_set})
    for (int l : set->labels)
      if (l < 0 || l >= cfg.n_speakers)
        throw DataError("label " + std::to_string(l) + " outside [0, " + std::to_string(cfg.n_speakers) + ")");

  TrainResult<S> result;
  result.best = params;
  Rng dropout_rng(derive_seed(tc.seed, "dropout"));
  std::vector<std::size_t> order(train_set.size());
  double best_loss = INFINITY;
  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(derive_seed(tc.seed, "shuffle", std::uint64_t(epoch)));
    shuffle_rng.shuffle(order.begin(), order.end());
    EpochStats st;
    st.epoch = epoch;
    Index correct = 0;
    for (std::size_t start = 0; start < order.size(); start += std::size_t(tc.batch_size)) {
      const std::size_t end = std::min(order.size(), start + std::size_t(tc.batch_size));
      const StepResult r = train_step(params, result.adam, train_set,
                                      std::span<const std::size_t>(order.data() + start, end - start), cfg, tc,
                                      dropout_rng);
      st.loss += r.loss * double(end - start);
      correct += r.correct;
    }
    st.loss /= double(order.size());
    st.train_acc = double(correct) / double(order.size());
    st.dev_acc = dev_set.size() ? evaluate_accuracy(params, dev_set, cfg) : NAN;
    result.history.push_back(st);
    const bool better = dev_set.size() ? st.dev_acc > result.best_dev_acc : st.loss < best_loss;
    if (better) {
      result.best = params;
      result.best_epoch = epoch;
      result.best_dev_acc = st.dev_acc;
      best_loss = st.loss;
    }
    if (log) *log << format_log_line(st) << '\n' << std::flush;
    if (on_epoch) on_epoch(st);
  }
  return result;
}

}  // namespace hvector

#endif  // HVECTOR_TRAINER_HPP_
