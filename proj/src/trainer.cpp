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

#include "hvector/trainer.hpp"

#include <cstdio>
#include <sstream>

#include "hvector/text.hpp"

namespace hvector {

void TrainConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be a finite non-negative number");
  if (!(beta1 > 0.0 && beta1 < 1.0)) throw ConfigError("beta1 must be in (0, 1)");
  if (!(beta2 > 0.0 && beta2 < 1.0)) throw ConfigError("beta2 must be in (0, 1)");
  if (!(eps > 0.0)) throw ConfigError("eps must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must be in [0, 1)");
  if (batch_size <= 0) throw ConfigError("batch_size must be positive");
  if (epochs < 0) throw ConfigError("epochs must be non-negative");
}

bool TrainConfig::set(const std::string& key, const std::string& value) {
  if (key == "lr") lr = parse_double(key, value);
  else if (key == "beta1") beta1 = parse_double(key, value);
  else if (key == "beta2") beta2 = parse_double(key, value);
  else if (key == "eps") eps = parse_double(key, value);
  else if (key == "dropout") dropout = parse_double(key, value);
  else if (key == "batch_size") batch_size = parse_int(key, value);
  else if (key == "epochs") epochs = int(parse_int(key, value));
  else if (key == "seed") seed = std::uint64_t(parse_int(key, value));
  else return false;
  return true;
}

std::string TrainConfig::to_text() const {
  std::ostringstream os;
  os << "lr=" << format_double(lr) << '\n'
     << "beta1=" << format_double(beta1) << '\n'
     << "beta2=" << format_double(beta2) << '\n'
     << "eps=" << format_double(eps) << '\n'
     << "dropout=" << format_double(dropout) << '\n'
     << "batch_size=" << batch_size << '\n'
     << "epochs=" << epochs << '\n'
     << "seed=" << seed << '\n';
  return os.str();
}

std::string format_log_line(const EpochStats& s) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%d\t%.9f\t%.6f\t%.6f", s.epoch, s.loss, s.train_acc, s.dev_acc);
  return buf;
}

}  // namespace hvector
