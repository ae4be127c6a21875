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

#ifndef HVECTOR_ARCHIVE_HPP_
#define HVECTOR_ARCHIVE_HPP_

#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "hvector/tensor.hpp"

namespace hvector {

template <typename Scalar>
using NamedTensors = std::vector<std::pair<std::string, Tensor<Scalar>>>;

inline constexpr char kArchiveMagic[4] = {'H', 'V', 'A', '1'};

// Archive: "HVA1", entry count (u64), then per entry the name length (u64),
// the name bytes and one tensor record.
template <typename Scalar>
void write_archive(std::ostream& os, const NamedTensors<Scalar>& entries) {
  os.write(kArchiveMagic, 4);
  detail::put_u64(os, entries.size());
  for (const auto& [name, t] : entries) {
    detail::put_u64(os, name.size());
    os.write(name.data(), std::streamsize(name.size()));
    write_tensor(os, t);
  }
  if (!os) throw IoError("failed writing archive");
}

template <typename Scalar>
NamedTensors<Scalar> read_archive(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4)) throw IoError("truncated archive");
  if (std::string_view(magic, 4) != std::string_view(kArchiveMagic, 4))
    throw FormatError("bad archive magic");
  const std::uint64_t n = detail::get_u64(is);
  NamedTensors<Scalar> out;
  for (std::uint64_t i = 0; i < n; ++i) {
    const std::uint64_t len = detail::get_u64(is);
    if (len > 4096) throw FormatError("archive entry name too long");
    std::string name(len, '\0');
    if (!is.read(name.data(), std::streamsize(len))) throw IoError("truncated archive");
    out.emplace_back(std::move(name), read_tensor<Scalar>(is));
  }
  return out;
}

template <typename Scalar>
void save_tensor(const std::filesystem::path& path, const Tensor<Scalar>& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  write_tensor(os, t);
}

template <typename Scalar>
Tensor<Scalar> load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path.string());
  return read_tensor<Scalar>(is);
}

template <typename Scalar>
void save_archive(const std::filesystem::path& path, const NamedTensors<Scalar>& entries) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  write_archive(os, entries);
}

template <typename Scalar>
NamedTensors<Scalar> load_archive(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path.string());
  return read_archive<Scalar>(is);
}

}  // namespace hvector

#endif  // HVECTOR_ARCHIVE_HPP_
