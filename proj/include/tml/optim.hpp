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

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tml/error.hpp"
#include "tml/tensor.hpp"

namespace tml {

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const {
    if (!(lr > 0.0)) throw ConfigError("adam: learning rate must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
      throw ConfigError("adam: betas must lie in [0, 1)");
    }
    if (!(eps > 0.0)) throw ConfigError("adam: eps must be positive");
  }
};

/// First/second moments per parameter; empty until the first step.
template <typename Scalar>
struct AdamState {
  std::vector<Tensor<Scalar>> m;
  std::vector<Tensor<Scalar>> v;
  std::uint64_t t = 0;
};

/// One bias-corrected Adam update of every parameter in place.
template <typename Scalar>
void adam_step(std::span<Tensor<Scalar>> params, std::span<const Tensor<Scalar>> grads, AdamState<Scalar>& state,
               const AdamConfig& cfg) {
  if (params.size() != grads.size()) {
    throw ContractError("adam_step: " + std::to_string(params.size()) + " parameters but " +
                        std::to_string(grads.size()) + " gradients");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != grads[i].shape()) {
      throw ContractError("adam_step: gradient " + std::to_string(i) + " has shape " +
                          shape_string(grads[i].shape()) + ", parameter has " + shape_string(params[i].shape()));
    }
  }
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.shape(), Scalar(0));
      state.v.emplace_back(p.shape(), Scalar(0));
    }
  } else if (state.m.size() != params.size()) {
    throw ContractError("adam_step: optimizer state belongs to a different parameter set");
  }

  ++state.t;
  const double c1 = 1.0 - std::pow(cfg.beta1, double(state.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, double(state.t));
  const Scalar b1 = Scalar(cfg.beta1), b2 = Scalar(cfg.beta2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto& g = grads[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = b1 * m[j] + (Scalar(1) - b1) * g[j];
      v[j] = b2 * v[j] + (Scalar(1) - b2) * g[j] * g[j];
      const double m_hat = double(m[j]) / c1;
      const double v_hat = double(v[j]) / c2;
      p[j] = Scalar(double(p[j]) - cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps));
    }
  }
}

}  // namespace tml
