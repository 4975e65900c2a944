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

// Finite-difference gradient cases shared by the unit tests and the
// acceptance binary. Each case builds a small random problem from a seed and
// scalarizes the op output with fixed random weights.
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "tml/embedder.hpp"
#include "tml/grad_check.hpp"
#include "tml/ops.hpp"
#include "tml/triplet.hpp"

namespace cases {

using tml::GradTape;
using tml::TensorD;
using tml::Var;

struct GradCase {
  std::string name;
  std::function<tml::GradCheckReport(std::uint64_t seed)> run;
};

inline TensorD weights_like(const tml::Shape& shape, tml::Rng& rng) { return oracle::random_tensor(shape, rng); }

// Records `op` on the tape, then a weighted sum with weights drawn once.
template <typename Op>
tml::GradCheckReport check_op(std::vector<TensorD> params, const tml::Shape& out_shape, tml::Rng& rng, Op op,
                              tml::GradCheckOptions opts = {}) {
  const TensorD w = weights_like(out_shape, rng);
  return tml::grad_check(
      [&](GradTape<double>& tape, std::span<const Var> p) { return tml::weighted_sum(tape, op(tape, p), w); },
      std::move(params), opts);
}

inline std::vector<std::size_t> balanced_labels(std::size_t classes, std::size_t per_class) {
  std::vector<std::size_t> labels;
  for (std::size_t c = 0; c < classes; ++c)
    for (std::size_t k = 0; k < per_class; ++k) labels.push_back(c);
  return labels;
}

inline std::vector<GradCase> all_cases() {
  using oracle::random_tensor;
  std::vector<GradCase> out;

  out.push_back({"dense", [](std::uint64_t seed) {
                   tml::Rng rng(seed);
                   auto x = random_tensor({3, 5}, rng), w = random_tensor({5, 4}, rng), b = random_tensor({4}, rng);
                   return check_op({x, w, b}, {3, 4}, rng, [](auto& t, auto p) { return tml::dense(t, p[0], p[1], p[2]); });
                 }});
  out.push_back({"conv2d", [](std::uint64_t seed) {
                   tml::Rng rng(seed);
                   auto x = random_tensor({2, 2, 5, 4}, rng), k = random_tensor({3, 2, 3, 3}, rng),
                        b = random_tensor({3}, rng);
                   return check_op({x, k, b}, {2, 3, 5, 4}, rng,
                                   [](auto& t, auto p) { return tml::conv2d(t, p[0], p[1], p[2]); });
                 }});
  out.push_back({"relu", [](std::uint64_t seed) {
                   tml::Rng rng(seed);
                   auto x = random_tensor({4, 6}, rng);
                   return check_op({x}, {4, 6}, rng, [](auto& t, auto p) { return tml::relu(t, p[0]); });
                 }});
  out.push_back({"maxpool2", [](std::uint64_t seed) {
                   tml::Rng rng(seed);
                   auto x = random_tensor({2, 2, 4, 6}, rng);
                   return check_op({x}, {2, 2, 2, 3}, rng, [](auto& t, auto p) { return tml::maxpool2(t, p[0]); });
                 }});
  out.push_back({"flatten", [](std::uint64_t seed) {
                   tml::Rng rng(seed);
                   auto x = random_tensor({2, 3, 2, 2}, rng);
                   return check_op({x}, {2, 12}, rng, [](auto& t, auto p) { return tml::flatten(t, p[0]); });
                 }});
  out.push_back({"l2_normalize", [](std::uint64_t seed) {
                   tml::Rng rng(seed);
                   auto x = random_tensor({4, 5}, rng);
                   return check_op({x}, {4, 5}, rng, [](auto& t, auto p) { return tml::l2_normalize(t, p[0]); });
                 }});
  out.push_back({"embedder", [](std::uint64_t seed) {
                   tml::EmbedderConfig cfg;
                   cfg.input_h = cfg.input_w = 8;
                   cfg.conv_channels = {3, 4};
                   cfg.embedding_dim = 5;
                   cfg.init_seed = seed;
                   const auto net = tml::build_embedder(cfg);
                   tml::Rng rng(seed);
                   std::vector<TensorD> params;
                   for (const auto& p : net.parameters()) {
                     TensorD d = p.template cast<double>();
                     // Non-zero biases so relu inputs avoid exact ties.
                     if (d.rank() == 1)
                       for (auto& v : d.data()) v = rng.uniform(-0.1, 0.1);
                     params.push_back(std::move(d));
                   }
                   const TensorD images = random_tensor({2, 3, 8, 8}, rng, 0.0, 1.0);
                   // Whole-network composite: the final normalisation makes the
                   // default step's truncation error visible, so use a finer one.
                   return check_op(
                       params, {2, 5}, rng,
                       [&](auto& t, auto p) { return tml::embed_on_tape(t, cfg, p, t.constant(images)); },
                       {.eps = 1e-5});
                 }});
  for (auto mining : {tml::Mining::batch_all, tml::Mining::batch_hard}) {
    out.push_back({"triplet_" + tml::to_string(mining), [mining](std::uint64_t seed) {
                     tml::Rng rng(seed);
                     const auto labels = balanced_labels(3, 3);
                     auto e = random_tensor({labels.size(), 4}, rng);
                     tml::TripletConfig cfg{0.5, mining};
                     return tml::grad_check(
                         [&](GradTape<double>& tape, std::span<const Var> p) {
                           return tml::triplet_loss(tape, p[0], labels, cfg).loss;
                         },
                         {e});
                   }});
    out.push_back({"triplet_" + tml::to_string(mining) + "_normalized", [mining](std::uint64_t seed) {
                     tml::Rng rng(seed);
                     const auto labels = balanced_labels(2, 3);
                     auto e = random_tensor({labels.size(), 3}, rng);
                     tml::TripletConfig cfg{0.2, mining};
                     // Normalisation curvature grows like 1/|x|^2, so the
                     // default step leaves too much truncation error.
                     return tml::grad_check(
                         [&](GradTape<double>& tape, std::span<const Var> p) {
                           return tml::triplet_loss(tape, tml::l2_normalize(tape, p[0]), labels, cfg).loss;
                         },
                         {e}, {.eps = 1e-5});
                   }});
  }
  return out;
}

}  // namespace cases
