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

#include "hvector/model_config.hpp"

#include <map>
#include <sstream>

#include "hvector/errors.hpp"
#include "hvector/text.hpp"

namespace hvector {

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::kHVector: return "hvector";
    case ModelKind::kXVector: return "xvector";
    case ModelKind::kXVectorAttention: return "xvector_attn";
  }
  return "?";
}

ModelKind parse_model_kind(const std::string& name) {
  if (name == "hvector") return ModelKind::kHVector;
  if (name == "xvector") return ModelKind::kXVector;
  if (name == "xvector_attn") return ModelKind::kXVectorAttention;
  throw ConfigError("unknown model '" + name + "' (expected hvector, xvector or xvector_attn)");
}

ModelConfig ModelConfig::full(Index n_speakers) {
  ModelConfig c;
  c.n_speakers = n_speakers;
  return c;
}

ModelConfig ModelConfig::desk(Index n_speakers) {
  ModelConfig c;
  c.frames_per_fragment = 10;
  c.frame_cnn_out = 32;
  c.gru_hidden = 32;
  c.seg_cnn_out = 64;
  c.fc_dims = {64, 64};
  c.tdnn_channels = {64, 64, 64, 64, 128};
  c.n_speakers = n_speakers;
  return c;
}

Index ModelConfig::utterance_vector_dim() const {
  return kind == ModelKind::kHVector ? 2 * seg_cnn_out : 2 * tdnn_channels.back();
}

void ModelConfig::validate() const {
  auto positive = [](const char* key, Index v) {
    if (v <= 0) throw ConfigError(std::string(key) + " must be positive, got " + std::to_string(v));
  };
  auto odd = [](const char* key, Index v) {
    if (v % 2 == 0) throw ConfigError(std::string(key) + " must be odd, got " + std::to_string(v));
  };
  positive("n_fragments", n_fragments);
  positive("frames_per_fragment", frames_per_fragment);
  positive("feat_dim", feat_dim);
  positive("frame_cnn_width", frame_cnn_width);
  odd("frame_cnn_width", frame_cnn_width);
  positive("frame_cnn_out", frame_cnn_out);
  positive("gru_hidden", gru_hidden);
  positive("seg_cnn_width", seg_cnn_width);
  odd("seg_cnn_width", seg_cnn_width);
  positive("seg_cnn_out", seg_cnn_out);
  if (fc_dims.size() != 2) throw ConfigError("fc_dims must list exactly two layer sizes");
  for (Index d : fc_dims) positive("fc_dims", d);
  if (tdnn_widths.empty() || tdnn_widths.size() != tdnn_channels.size())
    throw ConfigError("tdnn_widths and tdnn_channels must be non-empty and equally long");
  for (Index w : tdnn_widths) {
    positive("tdnn_widths", w);
    odd("tdnn_widths", w);
  }
  for (Index c : tdnn_channels) positive("tdnn_channels", c);
  positive("n_speakers", n_speakers);
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must be in [0, 1)");
}

std::string ModelConfig::to_text() const {
  std::ostringstream os;
  os << "model=" << to_string(kind) << '\n'
     << "n_fragments=" << n_fragments << '\n'
     << "frames_per_fragment=" << frames_per_fragment << '\n'
     << "feat_dim=" << feat_dim << '\n'
     << "frame_cnn_width=" << frame_cnn_width << '\n'
     << "frame_cnn_out=" << frame_cnn_out << '\n'
     << "gru_hidden=" << gru_hidden << '\n'
     << "seg_cnn_width=" << seg_cnn_width << '\n'
     << "seg_cnn_out=" << seg_cnn_out << '\n'
     << "fc_dims=" << join_ints(fc_dims) << '\n'
     << "tdnn_widths=" << join_ints(tdnn_widths) << '\n'
     << "tdnn_channels=" << join_ints(tdnn_channels) << '\n'
     << "n_speakers=" << n_speakers << '\n'
     << "dropout=" << format_double(dropout) << '\n';
  return os.str();
}

bool ModelConfig::set(const std::string& key, const std::string& value) {
  if (key == "model") kind = parse_model_kind(value);
  else if (key == "n_fragments") n_fragments = parse_int(key, value);
  else if (key == "frames_per_fragment") frames_per_fragment = parse_int(key, value);
  else if (key == "feat_dim") feat_dim = parse_int(key, value);
  else if (key == "frame_cnn_width") frame_cnn_width = parse_int(key, value);
  else if (key == "frame_cnn_out") frame_cnn_out = parse_int(key, value);
  else if (key == "gru_hidden") gru_hidden = parse_int(key, value);
  else if (key == "seg_cnn_width") seg_cnn_width = parse_int(key, value);
  else if (key == "seg_cnn_out") seg_cnn_out = parse_int(key, value);
  else if (key == "fc_dims") fc_dims = parse_int_list(key, value);
  else if (key == "tdnn_widths") tdnn_widths = parse_int_list(key, value);
  else if (key == "tdnn_channels") tdnn_channels = parse_int_list(key, value);
  else if (key == "n_speakers") n_speakers = parse_int(key, value);
  else if (key == "dropout") dropout = parse_double(key, value);
  else return false;
  return true;
}

ModelConfig ModelConfig::from_text(const std::string& text) {
  ModelConfig c;
  for (const auto& [key, value] : parse_key_values(text))
    if (!c.set(key, value)) throw ConfigError("unknown model config key '" + key + "'");
  c.validate();
  return c;
}

}  // namespace hvector
