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

#include "hvector/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "hvector/errors.hpp"
#include "hvector/text.hpp"

namespace hvector {

namespace fs = std::filesystem;

std::string read_text_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_text_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << text;
  if (!os) throw IoError("error writing " + path.string());
}

void save_checkpoint(const fs::path& dir, const Checkpoint& ckpt) {
  if (Index(ckpt.speakers.size()) != ckpt.config.n_speakers)
    throw DataError("checkpoint has " + std::to_string(ckpt.speakers.size()) + " speaker names for " +
                    std::to_string(ckpt.config.n_speakers) + " classes");
  fs::create_directories(dir);
  write_text_file(dir / "model.cfg", ckpt.config.to_text());
  std::string spk;
  for (const auto& s : ckpt.speakers) spk += s + '\n';
  write_text_file(dir / "speakers.txt", spk);
  save_archive(dir / "params.hva", ckpt.params.to_named());
}

Checkpoint load_checkpoint(const fs::path& dir) {
  Checkpoint ckpt;
  ckpt.config = ModelConfig::from_text(read_text_file(dir / "model.cfg"));
  std::istringstream spk(read_text_file(dir / "speakers.txt"));
  for (std::string line; std::getline(spk, line);)
    if (!trim(line).empty()) ckpt.speakers.push_back(trim(line));
  if (Index(ckpt.speakers.size()) != ckpt.config.n_speakers)
    throw FormatError(dir.string() + ": speakers.txt lists " + std::to_string(ckpt.speakers.size()) +
                      " speakers, config says " + std::to_string(ckpt.config.n_speakers));
  ckpt.params = init_params<double>(ckpt.config, 0);
  ckpt.params.assign(load_archive<double>(dir / "params.hva"));
  return ckpt;
}

void write_embedding_csv(const fs::path& path, const std::vector<EmbeddingRow>& rows) {
  std::ostringstream os;
  const Index dim = rows.empty() ? 0 : rows.front().vector.size();
  os << "utterance_id,speaker_id";
  for (Index i = 0; i < dim; ++i) os << ",e" << i;
  os << '\n';
  for (const auto& r : rows) {
    if (r.vector.size() != dim) throw DimensionError("embedding rows differ in length");
    if (r.utterance_id.find(',') != std::string::npos || r.speaker_id.find(',') != std::string::npos)
      throw DataError("ids may not contain commas: " + r.utterance_id);
    os << r.utterance_id << ',' << r.speaker_id;
    for (Index i = 0; i < dim; ++i) os << ',' << format_double(r.vector[i]);
    os << '\n';
  }
  write_text_file(path, os.str());
}

std::vector<EmbeddingRow> read_embedding_csv(const fs::path& path) {
  std::istringstream is(read_text_file(path));
  std::string line;
  if (!std::getline(is, line)) throw FormatError(path.string() + ": empty embedding file");
  const auto header = split(trim(line), ',');
  if (header.size() < 2 || header[0] != "utterance_id" || header[1] != "speaker_id")
    throw FormatError(path.string() + ": bad embedding header");
  const std::size_t dim = header.size() - 2;
  std::vector<EmbeddingRow> rows;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != dim + 2)
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected " + std::to_string(dim + 2) +
                        " fields, got " + std::to_string(f.size()));
    EmbeddingRow r{f[0], f[1], Eigen::VectorXd(Index(dim))};
    try {
      for (std::size_t i = 0; i < dim; ++i) r.vector[Index(i)] = parse_double("e" + std::to_string(i), f[i + 2]);
    } catch (const ConfigError& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace hvector
