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

#ifndef HVECTOR_MODEL_HPP_
#define HVECTOR_MODEL_HPP_

// The hierarchical attention network (H-vector) and the two TDNN baselines
// (X-vector, X-vector with attentive pooling), batched over utterances.

#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "hvector/archive.hpp"
#include "hvector/audio.hpp"
#include "hvector/model_config.hpp"
#include "hvector/ops.hpp"
#include "hvector/random.hpp"

namespace hvector {

/// Named trainable tensors plus the running statistics of every batch-norm
/// layer. Shapes are a function of the ModelConfig alone.
template <typename S>
struct ModelParams {
  std::map<std::string, Tensor<S>> tensors;
  std::map<std::string, BatchNormStats<S>> batchnorm;

  Tensor<S>& at(const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw std::out_of_range("no parameter named '" + name + "'");
    return it->second;
  }
  const Tensor<S>& at(const std::string& name) const {
    return const_cast<ModelParams*>(this)->at(name);
  }

  Index count() const {
    Index n = 0;
    for (const auto& [name, t] : tensors) n += t.size();
    return n;
  }

  /// Flattened view for archiving; batch-norm statistics appear as
  /// "<layer>.running_mean" and "<layer>.running_var".
  NamedTensors<S> to_named() const {
    NamedTensors<S> out(tensors.begin(), tensors.end());
    for (const auto& [name, st] : batchnorm) {
      out.emplace_back(name + ".running_mean", st.running_mean);
      out.emplace_back(name + ".running_var", st.running_var);
    }
    return out;
  }

  /// Overwrites every tensor of this (already shaped) set from an archive.
  void assign(const NamedTensors<S>& named) {
    std::map<std::string, const Tensor<S>*> by_name;
    for (const auto& [name, t] : named) by_name[name] = &t;
    auto take = [&](const std::string& name, Tensor<S>& dst) {
      auto it = by_name.find(name);
      if (it == by_name.end()) throw FormatError("checkpoint is missing tensor '" + name + "'");
      if (it->second->shape() != dst.shape())
        throw FormatError("checkpoint tensor '" + name + "' has shape " + shape_str(it->second->shape()) +
                          ", model expects " + shape_str(dst.shape()));
      dst = *it->second;
      by_name.erase(it);
    };
    for (auto& [name, t] : tensors) take(name, t);
    for (auto& [name, st] : batchnorm) {
      take(name + ".running_mean", st.running_mean);
      take(name + ".running_var", st.running_var);
    }
    if (!by_name.empty()) throw FormatError("checkpoint has unexpected tensor '" + by_name.begin()->first + "'");
  }

  template <typename T>
  ModelParams<T> cast() const {
    ModelParams<T> out;
    for (const auto& [name, t] : tensors) out.tensors.emplace(name, t.template cast<T>());
    for (const auto& [name, st] : batchnorm)
      out.batchnorm.emplace(name, BatchNormStats<T>{st.running_mean.template cast<T>(),
                                                    st.running_var.template cast<T>()});
    return out;
  }
};

namespace detail {

template <typename S>
Tensor<S> uniform_init(Rng& rng, Shape shape, Index fan_in) {
  Tensor<S> t(std::move(shape));
  const double bound = 1.0 / std::sqrt(double(fan_in));
  for (Index i = 0; i < t.size(); ++i) t[i] = S(rng.uniform(-bound, bound));
  return t;
}

}  // namespace detail

/// Seeded initialisation: weights and biases ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)),
/// batch-norm scale 1 and shift 0, running statistics (0, 1).
template <typename S>
ModelParams<S> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelParams<S> p;
  Rng rng(derive_seed(seed, "init"));
  auto dense = [&](const std::string& name, Index in, Index out) {
    p.tensors[name + ".W"] = detail::uniform_init<S>(rng, {in, out}, in);
    p.tensors[name + ".b"] = detail::uniform_init<S>(rng, {out}, in);
  };
  auto conv = [&](const std::string& name, Index width, Index in, Index out) {
    p.tensors[name + ".kernel"] = detail::uniform_init<S>(rng, {width, in, out}, width * in);
    p.tensors[name + ".bias"] = detail::uniform_init<S>(rng, {out}, width * in);
  };
  auto bn = [&](const std::string& name, Index channels) {
    p.tensors[name + ".gamma"] = Tensor<S>::constant(Shape{channels}, S(1));
    p.tensors[name + ".beta"] = Tensor<S>::zeros(Shape{channels});
    p.batchnorm[name] = BatchNormStats<S>::init(channels);
  };
  auto gru = [&](const std::string& name, Index in, Index hidden) {
    p.tensors[name + ".W"] = detail::uniform_init<S>(rng, {in, 3 * hidden}, hidden);
    p.tensors[name + ".U"] = detail::uniform_init<S>(rng, {hidden, 3 * hidden}, hidden);
    p.tensors[name + ".b"] = detail::uniform_init<S>(rng, {3 * hidden}, hidden);
  };
  auto attention = [&](const std::string& name, Index dim) {
    p.tensors[name + ".W0"] = detail::uniform_init<S>(rng, {dim, dim}, dim);
    p.tensors[name + ".b0"] = detail::uniform_init<S>(rng, {dim}, dim);
    p.tensors[name + ".W1"] = detail::uniform_init<S>(rng, {dim, 1}, dim);
  };

  if (cfg.kind == ModelKind::kHVector) {
    conv("frame_conv", cfg.frame_cnn_width, cfg.feat_dim, cfg.frame_cnn_out);
    bn("frame_bn", cfg.frame_cnn_out);
    gru("gru_fwd", cfg.frame_cnn_out, cfg.gru_hidden);
    gru("gru_bwd", cfg.frame_cnn_out, cfg.gru_hidden);
    attention("frame_att", cfg.frame_encoder_dim());
    conv("seg_conv", cfg.seg_cnn_width, cfg.segment_vector_dim(), cfg.seg_cnn_out);
    bn("seg_bn", cfg.seg_cnn_out);
    attention("seg_att", cfg.seg_cnn_out);
  } else {
    Index in = cfg.feat_dim;
    for (std::size_t i = 0; i < cfg.tdnn_widths.size(); ++i) {
      const std::string name = "tdnn" + std::to_string(i + 1);
      conv(name, cfg.tdnn_widths[i], in, cfg.tdnn_channels[i]);
      bn(name + "_bn", cfg.tdnn_channels[i]);
      in = cfg.tdnn_channels[i];
    }
    if (cfg.kind == ModelKind::kXVectorAttention) attention("frame_att", in);
  }
  dense("fc1", cfg.utterance_vector_dim(), cfg.fc_dims[0]);
  bn("fc1_bn", cfg.fc_dims[0]);
  dense("fc2", cfg.fc_dims[0], cfg.fc_dims[1]);
  dense("out", cfg.fc_dims[1], cfg.n_speakers);
  return p;
}

/// Binds parameters onto a graph on first use, one leaf per name.
template <typename S>
class ParamBinder {
 public:
  ParamBinder(Graph<S>& graph, ModelParams<S>& params, bool trainable)
      : graph_(graph), params_(params), trainable_(trainable) {}

  Var<S> operator()(const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    const Var<S> v = graph_.leaf(params_.at(name), trainable_);
    bound_.emplace(name, v);
    return v;
  }

  /// Uses `v` for `name` instead of a leaf made from the stored tensor.
  void bind(const std::string& name, const Var<S>& v) {
    if (v.shape() != params_.at(name).shape())
      throw DimensionError("bind '" + name + "': " + shape_str(v.shape()) + " vs " +
                           shape_str(params_.at(name).shape()));
    bound_[name] = v;
  }

  BatchNormStats<S>& stats(const std::string& name) {
    auto it = params_.batchnorm.find(name);
    if (it == params_.batchnorm.end()) throw std::out_of_range("no batch-norm layer '" + name + "'");
    return it->second;
  }

  Graph<S>& graph() { return graph_; }
  const std::map<std::string, Var<S>>& bound() const { return bound_; }

 private:
  Graph<S>& graph_;
  ModelParams<S>& params_;
  bool trainable_;
  std::map<std::string, Var<S>> bound_;
};

/// Per-call switches. `rng` drives dropout and is only touched in training.
struct ForwardOptions {
  bool training = false;
  Rng* rng = nullptr;
};

template <typename S>
struct AttentionOutput {
  Var<S> pooled;  // [sequences, 2 * dim]
  Var<S> scores;  // [rows, 1], z
  Var<S> alpha;   // [rows, 1], softmax of z within each sequence
};

/// Everything a forward pass exposes. Unused stages stay invalid for the
/// baselines.
template <typename S>
struct ForwardResult {
  Var<S> logits;            // [B, K]
  Var<S> embedding;         // [B, fc_dims[0]]
  Var<S> frame_encoded;     // [B*N*M, E]        (hvector)
  AttentionOutput<S> frame_attention;  // pooled [B*N, 2E] (hvector) or [B, 2C] (xvector_attn)
  Var<S> segment_encoded;   // [B*N, seg_cnn_out] (hvector)
  AttentionOutput<S> segment_attention;  // pooled [B, 2 * seg_cnn_out] (hvector)
  Var<S> utterance_vector;  // [B, utterance_vector_dim]
};

/// conv1d -> relu -> batch norm -> bidirectional GRU over each fragment.
/// x holds B*N fragments of M frames: [B*N*M, feat_dim] -> [B*N*M, 2H].
template <typename S>
Var<S> frame_encode(ParamBinder<S>& p, const Var<S>& x, const ModelConfig& cfg, Index frames_per_fragment,
                    bool training) {
  if (x.cols() != cfg.feat_dim)
    throw DimensionError("frame_encode: features " + shape_str(x.shape()) + " but feat_dim " +
                         std::to_string(cfg.feat_dim));
  const Index M = frames_per_fragment;
  Var<S> c = relu(conv1d(x, p("frame_conv.kernel"), p("frame_conv.bias"), M));
  c = batchnorm(c, p("frame_bn.gamma"), p("frame_bn.beta"), p.stats("frame_bn"), training);
  const Var<S> fwd = gru_sequence(c, GruVars<S>{p("gru_fwd.W"), p("gru_fwd.U"), p("gru_fwd.b")}, M, false);
  const Var<S> bwd = gru_sequence(c, GruVars<S>{p("gru_bwd.W"), p("gru_bwd.U"), p("gru_bwd.b")}, M, true);
  return concat(fwd, bwd);
}

/// Additive attention with statistics pooling over each sequence of `group`
/// rows of h: z_t = relu(h_t W0 + b0) W1, alpha = softmax_t(z), A_t = alpha_t h_t,
/// pooled = [mean_t A_t, std_t A_t]. `prefix` names the W0/b0/W1 parameters,
/// which are shared by every sequence.
template <typename S>
AttentionOutput<S> attention_pool(ParamBinder<S>& p, const std::string& prefix, const Var<S>& h, Index group) {
  AttentionOutput<S> out;
  out.scores = matmul(relu(add_bias(matmul(h, p(prefix + ".W0")), p(prefix + ".b0"))), p(prefix + ".W1"));
  out.alpha = group_softmax(out.scores, group);
  out.pooled = stats_pool(row_scale(h, out.alpha), group);
  return out;
}

/// Frame-level attention: [B*N*M, E] -> segment vectors [B*N, 2E].
template <typename S>
AttentionOutput<S> frame_attention(ParamBinder<S>& p, const Var<S>& h, Index frames_per_fragment) {
  return attention_pool(p, "frame_att", h, frames_per_fragment);
}

/// Segment encoder: width-w conv over each utterance's N segment vectors, relu,
/// batch norm. [B*N, 2E] -> [B*N, seg_cnn_out].
template <typename S>
Var<S> segment_encode(ParamBinder<S>& p, const Var<S>& v, const ModelConfig& cfg, bool training) {
  if (v.cols() != cfg.segment_vector_dim())
    throw DimensionError("segment_encode: input " + shape_str(v.shape()) + " but segment vectors have " +
                         std::to_string(cfg.segment_vector_dim()) + " dims");
  Var<S> s = relu(conv1d(v, p("seg_conv.kernel"), p("seg_conv.bias"), cfg.n_fragments));
  return batchnorm(s, p("seg_bn.gamma"), p("seg_bn.beta"), p.stats("seg_bn"), training);
}

/// Segment-level attention: [B*N, C] -> utterance vectors [B, 2C].
template <typename S>
AttentionOutput<S> segment_attention(ParamBinder<S>& p, const Var<S>& s, const ModelConfig& cfg) {
  return attention_pool(p, "seg_att", s, cfg.n_fragments);
}

/// fc1 -> relu -> batch norm (= embedding) -> dropout -> fc2 -> relu -> logits.
template <typename S>
void classifier_head(ParamBinder<S>& p, const ModelConfig& cfg, const ForwardOptions& opt, ForwardResult<S>& r) {
  Var<S> h = relu(add_bias(matmul(r.utterance_vector, p("fc1.W")), p("fc1.b")));
  r.embedding = batchnorm(h, p("fc1_bn.gamma"), p("fc1_bn.beta"), p.stats("fc1_bn"), opt.training);
  Var<S> d = r.embedding;
  if (opt.training && cfg.dropout > 0.0) {
    if (opt.rng == nullptr) throw std::logic_error("training forward needs an Rng for dropout");
    d = dropout(d, cfg.dropout, *opt.rng, true);
  }
  h = relu(add_bias(matmul(d, p("fc2.W")), p("fc2.b")));
  r.logits = add_bias(matmul(h, p("out.W")), p("out.b"));
}

/// Stacks the fragments of a batch into [B*N*M, feat_dim]; every utterance
/// must have the configured fragment count and feature size and the same M.
template <typename S>
Tensor<S> stack_fragments(std::span<const audio::UtteranceFeatures* const> batch, const ModelConfig& cfg) {
  if (batch.empty()) throw DataError("empty batch");
  const Index M = batch.front()->frames_per_fragment();
  for (const auto* u : batch)
    if (u->n_fragments() != cfg.n_fragments || u->feat_dim() != cfg.feat_dim || u->frames_per_fragment() != M)
      throw DimensionError("utterance '" + u->utterance_id + "' has shape " + shape_str(u->fragments.shape()) +
                           ", expected (" + std::to_string(cfg.n_fragments) + "," + std::to_string(M) + "," +
                           std::to_string(cfg.feat_dim) + ")");
  const Index rows = cfg.n_fragments * M;
  Tensor<S> x(Shape{Index(batch.size()) * rows, cfg.feat_dim});
  for (std::size_t b = 0; b < batch.size(); ++b)
    x.mat().middleRows(Index(b) * rows, rows) = batch[b]->fragments.mat().template cast<S>();
  return x;
}

/// Flattens each utterance back to its real frames, [B*T, feat_dim]; all
/// utterances in a batch must have the same frame count.
template <typename S>
Tensor<S> stack_frames(std::span<const audio::UtteranceFeatures* const> batch, const ModelConfig& cfg) {
  if (batch.empty()) throw DataError("empty batch");
  const Index T = batch.front()->n_frames;
  for (const auto* u : batch)
    if (u->n_frames != T || u->feat_dim() != cfg.feat_dim)
      throw DimensionError("utterance '" + u->utterance_id + "' has " + std::to_string(u->n_frames) +
                           " frames of dim " + std::to_string(u->feat_dim()) + ", batch expects " +
                           std::to_string(T) + " of dim " + std::to_string(cfg.feat_dim));
  Tensor<S> x(Shape{Index(batch.size()) * T, cfg.feat_dim});
  for (std::size_t b = 0; b < batch.size(); ++b)
    x.mat().middleRows(Index(b) * T, T) = batch[b]->fragments.mat().topRows(T).template cast<S>();
  return x;
}

/// H-vector forward pass over a batch of utterances.
template <typename S>
ForwardResult<S> forward_hvector(ParamBinder<S>& p, std::span<const audio::UtteranceFeatures* const> batch,
                                 const ModelConfig& cfg, const ForwardOptions& opt = {}) {
  const Var<S> x = p.graph().constant(stack_fragments<S>(batch, cfg));
  const Index M = batch.front()->frames_per_fragment();
  ForwardResult<S> r;
  r.frame_encoded = frame_encode(p, x, cfg, M, opt.training);
  r.frame_attention = frame_attention(p, r.frame_encoded, M);
  r.segment_encoded = segment_encode(p, r.frame_attention.pooled, cfg, opt.training);
  r.segment_attention = segment_attention(p, r.segment_encoded, cfg);
  r.utterance_vector = r.segment_attention.pooled;
  classifier_head(p, cfg, opt, r);
  return r;
}

/// TDNN baselines. xvector: five conv layers (relu + batch norm) and plain
/// statistics pooling over all frames. xvector_attn: the same stack, with an
/// additive scorer (shared MLP, softmax over all frames) whose weights drive
/// attentive statistics pooling (weighted mean and weighted std).
template <typename S>
ForwardResult<S> forward_baseline(ParamBinder<S>& p, std::span<const audio::UtteranceFeatures* const> batch,
                                  const ModelConfig& cfg, const ForwardOptions& opt = {}) {
  Var<S> h = p.graph().constant(stack_frames<S>(batch, cfg));
  const Index T = batch.front()->n_frames;
  for (std::size_t i = 0; i < cfg.tdnn_widths.size(); ++i) {
    const std::string name = "tdnn" + std::to_string(i + 1);
    h = relu(conv1d(h, p(name + ".kernel"), p(name + ".bias"), T));
    h = batchnorm(h, p(name + "_bn.gamma"), p(name + "_bn.beta"), p.stats(name + "_bn"), opt.training);
  }
  ForwardResult<S> r;
  if (cfg.kind == ModelKind::kXVectorAttention) {
    AttentionOutput<S>& a = r.frame_attention;
    a.scores = matmul(relu(add_bias(matmul(h, p("frame_att.W0")), p("frame_att.b0"))), p("frame_att.W1"));
    a.alpha = group_softmax(a.scores, T);
    a.pooled = weighted_stats_pool(h, a.alpha, T);
    r.utterance_vector = a.pooled;
  } else {
    r.utterance_vector = stats_pool(h, T);
  }
  classifier_head(p, cfg, opt, r);
  return r;
}

/// Dispatches on cfg.kind.
template <typename S>
ForwardResult<S> forward(ParamBinder<S>& p, std::span<const audio::UtteranceFeatures* const> batch,
                         const ModelConfig& cfg, const ForwardOptions& opt = {}) {
  return cfg.kind == ModelKind::kHVector ? forward_hvector(p, batch, cfg, opt) : forward_baseline(p, batch, cfg, opt);
}

template <typename S>
ForwardResult<S> forward(ParamBinder<S>& p, const audio::UtteranceFeatures& u, const ModelConfig& cfg,
                         const ForwardOptions& opt = {}) {
  const audio::UtteranceFeatures* one[1] = {&u};
  return forward(p, std::span<const audio::UtteranceFeatures* const>(one, 1), cfg, opt);
}

/// Inference-mode embeddings for a batch, [B, fc_dims[0]].
template <typename S>
Tensor<S> embed(ModelParams<S>& params, std::span<const audio::UtteranceFeatures* const> batch,
                const ModelConfig& cfg) {
  Graph<S> g;
  ParamBinder<S> p(g, params, false);
  return forward(p, batch, cfg).embedding.value();
}

}  // namespace hvector

#endif  // HVECTOR_MODEL_HPP_
