/**
 * Copyright 2026 The tripletml Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "tml/error.hpp"
#include "tml/tape.hpp"
#include "tml/tensor.hpp"

namespace tml {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  /// Coordinates where a +/-eps perturbation flipped a relu sign, a pooling
  /// argmax, a mining choice or a hinge, i.e. the finite difference
  /// straddles a kink.
  std::size_t skipped = 0;
  /// Analytic and numeric values at the worst coordinate.
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

struct GradCheckOptions {
  double eps = 1e-3;
  /// Denominator floor: error is |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
};

/// Compares reverse-mode gradients of a scalar loss against central
/// differences (f(p+eps) - f(p-eps)) / 2eps, one coordinate at a time, in
/// double precision.
///
/// `build(tape, params)` must record the loss on `tape` using the parameter
/// handles it is given and return the loss handle.
template <typename Build>
GradCheckReport grad_check(Build&& build, std::vector<TensorD> params, GradCheckOptions opts = {}) {
  if (!(opts.eps > 0.0)) throw ContractError("grad_check needs eps > 0");

  struct Probe {
    double value;
    std::uint64_t signature;
  };
  auto evaluate = [&](bool with_grads, std::vector<TensorD>* grads) {
    GradTape<double> tape;
    tape.track_branches(true);
    std::vector<Var> handles;
    handles.reserve(params.size());
    for (const auto& p : params) handles.push_back(tape.parameter(p));
    Var loss = build(tape, std::span<const Var>(handles));
    if (with_grads) *grads = backward(tape, loss);
    return Probe{tape.value(loss)[0], tape.branch_signature()};
  };

  std::vector<TensorD> analytic;
  const Probe base = evaluate(true, &analytic);

  GradCheckReport report;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < params[p].size(); ++i) {
      const double original = params[p][i];
      params[p][i] = original + opts.eps;
      const Probe plus = evaluate(false, nullptr);
      params[p][i] = original - opts.eps;
      const Probe minus = evaluate(false, nullptr);
      params[p][i] = original;
      if (plus.signature != base.signature || minus.signature != base.signature) {
        ++report.skipped;
        continue;
      }
      const double numeric = (plus.value - minus.value) / (2.0 * opts.eps);
      const double a = analytic[p][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), opts.floor});
      const double err = std::abs(a - numeric) / denom;
      if (err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
      ++report.checked;
    }
  }
  return report;
}

}  // namespace tml
