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

#ifndef HVECTOR_MODEL_CONFIG_HPP_
#define HVECTOR_MODEL_CONFIG_HPP_

#include <string>
#include <vector>

#include "hvector/tensor.hpp"

namespace hvector {

enum class ModelKind { kHVector, kXVector, kXVectorAttention };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& name);

/// Layer sizes of all three architectures. The defaults are the full-size
/// network (30 frames per fragment, 512 conv filters, 2 x 512 BiGRU, 1500
/// segment filters, 512-d embedding); desk() is a reduced variant for
/// single-core training.
struct ModelConfig {
  Index n_fragments = 10;
  Index frames_per_fragment = 30;
  Index feat_dim = 20;
  Index frame_cnn_width = 5;
  Index frame_cnn_out = 512;
  Index gru_hidden = 512;  // per direction
  Index seg_cnn_width = 1;
  Index seg_cnn_out = 1500;
  std::vector<Index> fc_dims = {512, 512};
  std::vector<Index> tdnn_widths = {5, 3, 3, 1, 1};
  std::vector<Index> tdnn_channels = {512, 512, 512, 512, 1500};
  Index n_speakers = 2;
  double dropout = 0.2;
  ModelKind kind = ModelKind::kHVector;

  static ModelConfig full(Index n_speakers = 2);
  static ModelConfig desk(Index n_speakers = 2);

  Index frame_encoder_dim() const { return 2 * gru_hidden; }     // E
  Index segment_vector_dim() const { return 4 * gru_hidden; }    // 2E
  Index utterance_vector_dim() const;                            // input of fc1
  Index embedding_dim() const { return fc_dims.at(0); }

  /// Throws ConfigError on non-positive sizes, even kernel widths or a bad
  /// dropout rate.
  void validate() const;

  /// Flat `key=value` lines.
  std::string to_text() const;
  /// Assigns one key; returns false for a key this struct does not own.
  bool set(const std::string& key, const std::string& value);
  /// Parses to_text() output; unknown keys are rejected.
  static ModelConfig from_text(const std::string& text);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

}  // namespace hvector

#endif  // HVECTOR_MODEL_CONFIG_HPP_
