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

#ifndef HVECTOR_GRAD_CHECK_HPP_
#define HVECTOR_GRAD_CHECK_HPP_

#include <algorithm>
#include <cmath>

#include "hvector/graph.hpp"

namespace hvector {

inline constexpr double kGradCheckStep = 1e-5;

/// Largest relative error between the reverse-mode gradient of a scalar
/// function and central finite differences, taken over every entry of theta:
///   |g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-8).
/// `f` is called as f(graph, theta_var) and must return a scalar Var built on
/// that graph. 64-bit only.
template <typename F>
double grad_check(F&& f, const Tensor<double>& theta, double step = kGradCheckStep) {
  Tensor<double> analytic;
  {
    Graph<double> g;
    const Var<double> t = g.leaf(theta, true);
    const Var<double> loss = f(g, t);
    if (!loss.value().all_finite()) throw NumericError("grad_check: non-finite function value");
    g.backward(loss);
    analytic = g.grad(t.id());
  }
  auto eval = [&](const Tensor<double>& at) {
    Graph<double> g;
    const Var<double> loss = f(g, g.leaf(at, false));
    if (loss.value().size() != 1) throw DimensionError("grad_check: function is not scalar");
    const double v = loss.value()[0];
    if (!std::isfinite(v)) throw NumericError("grad_check: non-finite function value");
    return v;
  };
  double worst = 0.0;
  Tensor<double> probe = theta;
  for (Index i = 0; i < theta.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + step;
    const double up = eval(probe);
    probe[i] = saved - step;
    const double down = eval(probe);
    probe[i] = saved;
    const double fd = (up - down) / (2.0 * step);
    const double ad = analytic[i];
    const double denom = std::max({std::abs(ad), std::abs(fd), 1e-8});
    worst = std::max(worst, std::abs(ad - fd) / denom);
  }
  return worst;
}

}  // namespace hvector

#endif  // HVECTOR_GRAD_CHECK_HPP_
