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

#ifndef HVECTOR_CHECKPOINT_HPP_
#define HVECTOR_CHECKPOINT_HPP_

// Checkpoint directories and embedding CSV files.
//
// A checkpoint is a directory holding
//   model.cfg     ModelConfig as key=value lines
//   speakers.txt  class index -> speaker id, one per line
//   params.hva    named-tensor archive (weights and batch-norm statistics)

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hvector/model.hpp"

namespace hvector {

struct Checkpoint {
  ModelConfig config;
  std::vector<std::string> speakers;
  ModelParams<double> params;
};

/// Writes into `dir`, creating it if needed. Parameters are stored in 64-bit
/// whatever the training precision.
void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt);

/// Reads a checkpoint written by save_checkpoint. Throws IoError for missing
/// files and FormatError when the archive does not match the config.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

struct EmbeddingRow {
  std::string utterance_id;
  std::string speaker_id;
  Eigen::VectorXd vector;
};

/// `utterance_id,speaker_id,e0,...,e{D-1}` with a header line; values are
/// printed in shortest round-trip form.
void write_embedding_csv(const std::filesystem::path& path, const std::vector<EmbeddingRow>& rows);
std::vector<EmbeddingRow> read_embedding_csv(const std::filesystem::path& path);

/// Whole-file helpers shared by the text formats.
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace hvector

#endif  // HVECTOR_CHECKPOINT_HPP_
