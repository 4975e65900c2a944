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
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "tml/dataset.hpp"
#include "tml/random.hpp"
#include "tml/tape.hpp"
#include "tml/tensor.hpp"

namespace tml {

enum class Mining { batch_all, batch_hard };

struct TripletConfig {
  double margin = 0.2;
  Mining mining = Mining::batch_hard;
};

struct MiningStats {
  std::size_t total_valid_triplets = 0;
  std::size_t active_triplets = 0;
  double batch_loss = 0.0;
};

/// P classes x K images, grouped by class in draw order.
struct PKBatch {
  TensorF images;
  std::vector<std::size_t> labels;
  std::size_t P = 0;
  std::size_t K = 0;
};

inline double triplet_hinge(double d_ap, double d_an, double margin) {
  return std::max(0.0, d_ap - d_an + margin);
}

/// M[i,j] = |E_i - E_j|^2, computed per pair so the diagonal is exactly zero.
template <typename Scalar>
Var pairwise_sq_dist(GradTape<Scalar>& tape, Var e) {
  const auto& ev = tape.value(e);
  if (ev.rank() != 2) throw DimensionError("pairwise_sq_dist expects BxD, got " + shape_string(ev.shape()));
  const std::size_t b = ev.dim(0), d = ev.dim(1);
  Tensor<Scalar> m({b, b});
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = i + 1; j < b; ++j) {
      Scalar s = 0;
      for (std::size_t k = 0; k < d; ++k) {
        const Scalar diff = ev(i, k) - ev(j, k);
        s += diff * diff;
      }
      s = std::max(s, Scalar(0));
      m(i, j) = s;
      m(j, i) = s;
    }
  }
  return tape.record(std::move(m), {e},
                     [e](GradTape<Scalar>& t, const Tensor<Scalar>& g) {
                       const auto& ev = t.value(e);
                       auto& ge = t.grad(e);
                       const std::size_t b = ev.dim(0), d = ev.dim(1);
                       for (std::size_t i = 0; i < b; ++i) {
                         for (std::size_t j = 0; j < b; ++j) {
                           const Scalar w = g(i, j);
                           if (i == j || w == Scalar(0)) continue;
                           for (std::size_t k = 0; k < d; ++k) {
                             const Scalar diff = Scalar(2) * w * (ev(i, k) - ev(j, k));
                             ge(i, k) += diff;
                             ge(j, k) -= diff;
                           }
                         }
                       }
                     },
                     "pairwise_sq_dist");
}

template <typename Scalar>
Tensor<Scalar> pairwise_sq_dist(const Tensor<Scalar>& e) {
  GradTape<Scalar> tape;
  return tape.value(pairwise_sq_dist(tape, tape.constant_ref(e)));
}

struct LossVar {
  Var loss;
  MiningStats stats;
};

namespace detail {

struct LabelCounts {
  std::size_t classes = 0;
  std::size_t max_count = 0;
  std::size_t min_count = 0;
};

inline LabelCounts count_labels(std::span<const std::size_t> labels) {
  std::map<std::size_t, std::size_t> counts;
  for (std::size_t l : labels) ++counts[l];
  LabelCounts out{counts.size(), 0, labels.empty() ? 0 : labels.size()};
  for (const auto& [label, n] : counts) {
    out.max_count = std::max(out.max_count, n);
    out.min_count = std::min(out.min_count, n);
  }
  return out;
}

inline void check_batch(std::size_t rows, std::span<const std::size_t> labels) {
  if (rows != labels.size()) {
    throw DimensionError("embedding rows (" + std::to_string(rows) + ") and labels (" +
                         std::to_string(labels.size()) + ") differ");
  }
}

}  // namespace detail

/// Mean hinge over the active (positive-loss) triplets among all valid
/// (anchor, positive, negative) index triples; 0 when none is active.
template <typename Scalar>
LossVar batch_all_loss(GradTape<Scalar>& tape, Var e, std::span<const std::size_t> labels, const TripletConfig& cfg) {
  detail::check_batch(tape.value(e).dim(0), labels);
  const auto counts = detail::count_labels(labels);
  if (counts.classes < 2 || counts.max_count < 2) {
    throw BatchCompositionError("batch-all needs at least two classes and one class with two samples");
  }
  Var dist = pairwise_sq_dist(tape, e);
  const auto& m = tape.value(dist);
  const std::size_t b = labels.size();
  const Scalar margin = Scalar(cfg.margin);

  struct Triple {
    std::size_t a, p, n;
  };
  std::vector<Triple> active;
  MiningStats stats;
  Scalar total = 0;
  std::uint64_t sig = 0;
  for (std::size_t a = 0; a < b; ++a) {
    for (std::size_t p = 0; p < b; ++p) {
      if (p == a || labels[p] != labels[a]) continue;
      for (std::size_t n = 0; n < b; ++n) {
        if (labels[n] == labels[a]) continue;
        ++stats.total_valid_triplets;
        const Scalar h = m(a, p) - m(a, n) + margin;
        if (h > Scalar(0)) {
          active.push_back({a, p, n});
          total += h;
          sig = sig * 1315423911u + (a * b + p) * b + n + 1;
        }
      }
    }
  }
  stats.active_triplets = active.size();
  const Scalar loss = active.empty() ? Scalar(0) : total / Scalar(active.size());
  stats.batch_loss = double(loss);
  if (tape.tracking_branches()) tape.note_branch(sig);

  Var out = tape.record(Tensor<Scalar>({1}, loss), {dist},
                        [dist, active = std::move(active)](GradTape<Scalar>& t, const Tensor<Scalar>& g) {
                          if (active.empty()) return;
                          auto& gm = t.grad(dist);
                          const Scalar w = g[0] / Scalar(active.size());
                          for (const auto& tr : active) {
                            gm(tr.a, tr.p) += w;
                            gm(tr.a, tr.n) -= w;
                          }
                        },
                        "batch_all_loss");
  return {out, stats};
}

/// Per anchor: farthest same-class sample and nearest other-class sample
/// (ties to the lowest index), hinge on that pair, mean over anchors.
template <typename Scalar>
LossVar batch_hard_loss(GradTape<Scalar>& tape, Var e, std::span<const std::size_t> labels, const TripletConfig& cfg) {
  detail::check_batch(tape.value(e).dim(0), labels);
  const auto counts = detail::count_labels(labels);
  if (counts.classes < 2 || counts.min_count < 2) {
    throw BatchCompositionError("batch-hard needs at least two classes and two samples of every class");
  }
  Var dist = pairwise_sq_dist(tape, e);
  const auto& m = tape.value(dist);
  const std::size_t b = labels.size();
  const Scalar margin = Scalar(cfg.margin);

  struct Pick {
    std::size_t a, p, n;
  };
  std::vector<Pick> active;
  MiningStats stats;
  stats.total_valid_triplets = b;
  Scalar total = 0;
  std::uint64_t sig = 0;
  for (std::size_t a = 0; a < b; ++a) {
    std::size_t hp = b, hn = b;
    for (std::size_t j = 0; j < b; ++j) {
      if (j == a) continue;
      if (labels[j] == labels[a]) {
        if (hp == b || m(a, j) > m(a, hp)) hp = j;
      } else if (hn == b || m(a, j) < m(a, hn)) {
        hn = j;
      }
    }
    const Scalar h = m(a, hp) - m(a, hn) + margin;
    const bool on = h > Scalar(0);
    if (on) {
      active.push_back({a, hp, hn});
      total += h;
    }
    sig = sig * 1315423911u + (hp * b + hn) * 2 + (on ? 1 : 0);
  }
  stats.active_triplets = active.size();
  const Scalar loss = total / Scalar(b);
  stats.batch_loss = double(loss);
  if (tape.tracking_branches()) tape.note_branch(sig);

  Var out = tape.record(Tensor<Scalar>({1}, loss), {dist},
                        [dist, b, active = std::move(active)](GradTape<Scalar>& t, const Tensor<Scalar>& g) {
                          auto& gm = t.grad(dist);
                          const Scalar w = g[0] / Scalar(b);
                          for (const auto& pk : active) {
                            gm(pk.a, pk.p) += w;
                            gm(pk.a, pk.n) -= w;
                          }
                        },
                        "batch_hard_loss");
  return {out, stats};
}

template <typename Scalar>
LossVar triplet_loss(GradTape<Scalar>& tape, Var e, std::span<const std::size_t> labels, const TripletConfig& cfg) {
  return cfg.mining == Mining::batch_all ? batch_all_loss(tape, e, labels, cfg) : batch_hard_loss(tape, e, labels, cfg);
}

/// Value-only convenience wrappers.
template <typename Scalar>
MiningStats batch_all_loss(const Tensor<Scalar>& e, std::span<const std::size_t> labels, const TripletConfig& cfg) {
  GradTape<Scalar> tape;
  return batch_all_loss(tape, tape.constant_ref(e), labels, cfg).stats;
}

template <typename Scalar>
MiningStats batch_hard_loss(const Tensor<Scalar>& e, std::span<const std::size_t> labels, const TripletConfig& cfg) {
  GradTape<Scalar> tape;
  return batch_hard_loss(tape, tape.constant_ref(e), labels, cfg).stats;
}

/// Draws P distinct classes uniformly, then K images from each (without
/// replacement when the class has at least K images, with replacement
/// otherwise).
PKBatch pk_sample(const Dataset& dataset, std::size_t P, std::size_t K, Rng& rng);

std::string to_string(Mining mining);
Mining parse_mining(const std::string& name);

}  // namespace tml
