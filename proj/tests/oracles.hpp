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

#ifndef HVECTOR_TESTS_ORACLES_HPP_
#define HVECTOR_TESTS_ORACLES_HPP_

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "hvector/scoring.hpp"

namespace hvector::testing {

// Minimum, over every pair of operating points on opposite sides of
// FAR = FRR (or on it), of the crossing of the chord between them.
inline double brute_force_eer(const std::vector<scoring::ScoredTrial>& trials) {
  long long nt = 0, nn = 0;
  std::vector<double> thresholds;
  for (const auto& t : trials) {
    (t.target ? nt : nn) += 1;
    thresholds.push_back(t.score);
  }
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  thresholds.push_back(INFINITY);
  std::vector<std::pair<long long, long long>> pts;  // (false alarms, misses)
  for (double th : thresholds) {
    long long fa = 0, miss = 0;
    for (const auto& t : trials) {
      if (t.target && t.score < th) ++miss;
      if (!t.target && t.score >= th) ++fa;
    }
    pts.emplace_back(fa, miss);
  }
  double best = INFINITY;
  for (const auto& [fa, miss] : pts)
    if (fa * nt == miss * nn) best = std::min(best, double(fa) / double(nn));
  for (const auto& [fa1, m1] : pts)
    for (const auto& [fa2, m2] : pts) {
      if (!(m1 * nn > fa1 * nt && m2 * nn < fa2 * nt)) continue;
      const __int128 num = __int128(fa1) * m2 - __int128(m1) * fa2;
      const __int128 den = __int128(fa1) * nt - __int128(m1) * nn - __int128(fa2) * nt + __int128(m2) * nn;
      best = std::min(best, double(num) / double(den));
    }
  return best;
}

}  // namespace hvector::testing

#endif  // HVECTOR_TESTS_ORACLES_HPP_
