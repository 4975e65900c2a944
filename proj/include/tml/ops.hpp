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
#include <string>
#include <vector>

#include "tml/detail/im2col.hpp"
#include "tml/tape.hpp"
#include "tml/tensor.hpp"

namespace tml {

namespace detail {

inline void require_rank(const Shape& s, std::size_t rank, const char* what) {
  if (s.size() != rank) {
    throw DimensionError(std::string(what) + " expects rank " + std::to_string(rank) + ", got " + shape_string(s));
  }
}

}  // namespace detail

/// y = x W + b for x: BxI, W: IxO, b: O.
template <typename Scalar>
Var dense(GradTape<Scalar>& tape, Var x, Var w, Var b) {
  const auto& xv = tape.value(x);
  const auto& wv = tape.value(w);
  const auto& bv = tape.value(b);
  detail::require_rank(xv.shape(), 2, "dense input");
  detail::require_rank(wv.shape(), 2, "dense weight");
  detail::require_rank(bv.shape(), 1, "dense bias");
  if (xv.dim(1) != wv.dim(0) || bv.dim(0) != wv.dim(1)) {
    throw DimensionError("dense shape mismatch: input " + shape_string(xv.shape()) + ", weight " +
                         shape_string(wv.shape()) + ", bias " + shape_string(bv.shape()));
  }
  const std::size_t batch = xv.dim(0);
  const std::size_t out = wv.dim(1);
  Tensor<Scalar> y({batch, out});
  auto ym = y.matrix();
  ym.noalias() = xv.matrix() * wv.matrix();
  ym.rowwise() += bv.matrix(1, out).row(0);

  return tape.record(std::move(y), {x, w, b},
                     [x, w, b](GradTape<Scalar>& t, const Tensor<Scalar>& g) {
                       const auto gm = g.matrix();
                       if (t.requires_grad(x)) t.grad(x).matrix().noalias() += gm * t.value(w).matrix().transpose();
                       if (t.requires_grad(w)) t.grad(w).matrix().noalias() += t.value(x).matrix().transpose() * gm;
                       if (t.requires_grad(b)) {
                         auto& gb = t.grad(b);
                         gb.matrix(1, gb.size()) += gm.colwise().sum();
                       }
                     },
                     "dense");
}

/// 3x3 cross-correlation, stride 1, zero padding 1: BxCxHxW -> BxFxHxW.
template <typename Scalar>
Var conv2d(GradTape<Scalar>& tape, Var x, Var k, Var b) {
  const auto& xv = tape.value(x);
  const auto& kv = tape.value(k);
  const auto& bv = tape.value(b);
  detail::require_rank(xv.shape(), 4, "conv2d input");
  detail::require_rank(kv.shape(), 4, "conv2d kernel");
  detail::require_rank(bv.shape(), 1, "conv2d bias");
  if (kv.dim(2) != 3 || kv.dim(3) != 3) {
    throw DimensionError("conv2d kernel must be FxCx3x3, got " + shape_string(kv.shape()));
  }
  if (kv.dim(1) != xv.dim(1) || bv.dim(0) != kv.dim(0)) {
    throw DimensionError("conv2d channel mismatch: input " + shape_string(xv.shape()) + ", kernel " +
                         shape_string(kv.shape()) + ", bias " + shape_string(bv.shape()));
  }
  const std::size_t batch = xv.dim(0), channels = xv.dim(1), height = xv.dim(2), width = xv.dim(3);
  const std::size_t filters = kv.dim(0);
  const std::size_t plane = height * width;
  const std::size_t patch = channels * 9;

  Tensor<Scalar> y({batch, filters, height, width});
  RowMatrix<Scalar> cols{Eigen::Index(patch), Eigen::Index(plane)};
  const auto km = kv.matrix(filters, patch);
  const auto bias = bv.matrix(filters, 1);
  for (std::size_t n = 0; n < batch; ++n) {
    detail::im2col3x3(xv.data().data() + n * channels * plane, channels, height, width, cols.data());
    MatrixMap<Scalar> out(y.data().data() + n * filters * plane, Eigen::Index(filters), Eigen::Index(plane));
    out.noalias() = km * cols;
    out.colwise() += bias.col(0);
  }

  return tape.record(
      std::move(y), {x, k, b},
      [x, k, b](GradTape<Scalar>& t, const Tensor<Scalar>& g) {
        const auto& xv = t.value(x);
        const auto& kv = t.value(k);
        const std::size_t batch = xv.dim(0), channels = xv.dim(1), height = xv.dim(2), width = xv.dim(3);
        const std::size_t filters = kv.dim(0), plane = height * width, patch = channels * 9;
        RowMatrix<Scalar> cols{Eigen::Index(patch), Eigen::Index(plane)};
        RowMatrix<Scalar> dcols;
        for (std::size_t n = 0; n < batch; ++n) {
          ConstMatrixMap<Scalar> gn(g.data().data() + n * filters * plane, Eigen::Index(filters), Eigen::Index(plane));
          if (t.requires_grad(k)) {
            detail::im2col3x3(xv.data().data() + n * channels * plane, channels, height, width, cols.data());
            t.grad(k).matrix(filters, patch).noalias() += gn * cols.transpose();
          }
          if (t.requires_grad(b)) t.grad(b).matrix(filters, 1) += gn.rowwise().sum();
          if (t.requires_grad(x)) {
            dcols.noalias() = kv.matrix(filters, patch).transpose() * gn;
            detail::col2im3x3(dcols.data(), channels, height, width,
                              t.grad(x).data().data() + n * channels * plane);
          }
        }
      },
      "conv2d");
}

template <typename Scalar>
Var relu(GradTape<Scalar>& tape, Var x) {
  const auto& xv = tape.value(x);
  Tensor<Scalar> y(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) y[i] = xv[i] > Scalar(0) ? xv[i] : Scalar(0);
  if (tape.tracking_branches()) {
    std::uint64_t h = 0;
    for (std::size_t i = 0; i < xv.size(); ++i) h = h * 31 + (xv[i] > Scalar(0) ? 1 : 0) + (i << 1);
    tape.note_branch(h);
  }
  return tape.record(std::move(y), {x},
                     [x](GradTape<Scalar>& t, const Tensor<Scalar>& g) {
                       const auto& xv = t.value(x);
                       auto& gx = t.grad(x);
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         if (xv[i] > Scalar(0)) gx[i] += g[i];
                       }
                     },
                     "relu");
}

/// 2x2 max pool with stride 2. Gradient goes to the argmax cell; ties pick
/// the first cell in row-major order.
template <typename Scalar>
Var maxpool2(GradTape<Scalar>& tape, Var x) {
  const auto& xv = tape.value(x);
  detail::require_rank(xv.shape(), 4, "maxpool2 input");
  const std::size_t batch = xv.dim(0), channels = xv.dim(1), height = xv.dim(2), width = xv.dim(3);
  if (height % 2 != 0 || width % 2 != 0) {
    throw DimensionError("maxpool2 needs even spatial dims, got " + shape_string(xv.shape()));
  }
  const std::size_t oh = height / 2, ow = width / 2;
  Tensor<Scalar> y({batch, channels, oh, ow});
  std::vector<std::size_t> argmax(y.size());
  std::size_t o = 0;
  for (std::size_t plane = 0; plane < batch * channels; ++plane) {
    const std::size_t base = plane * height * width;
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j, ++o) {
        std::size_t best = base + (2 * i) * width + 2 * j;
        for (std::size_t cand : {best + 1, best + width, best + width + 1}) {
          if (xv[cand] > xv[best]) best = cand;
        }
        argmax[o] = best;
        y[o] = xv[best];
      }
    }
  }
  if (tape.tracking_branches()) {
    std::uint64_t h = 0;
    for (std::size_t a : argmax) h = h * 1000003 + a;
    tape.note_branch(h);
  }
  return tape.record(std::move(y), {x},
                     [x, argmax = std::move(argmax)](GradTape<Scalar>& t, const Tensor<Scalar>& g) {
                       auto& gx = t.grad(x);
                       for (std::size_t i = 0; i < g.size(); ++i) gx[argmax[i]] += g[i];
                     },
                     "maxpool2");
}

/// Collapses every axis after the first: BxCxHxW -> Bx(C*H*W).
template <typename Scalar>
Var flatten(GradTape<Scalar>& tape, Var x) {
  const auto& xv = tape.value(x);
  const std::size_t batch = xv.dim(0);
  return tape.record(xv.reshaped({batch, xv.size() / batch}), {x},
                     [x](GradTape<Scalar>& t, const Tensor<Scalar>& g) {
                       auto& gx = t.grad(x);
                       for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                     },
                     "flatten");
}

inline constexpr double kMinRowNorm = 1e-12;

/// Divides each row by its Euclidean norm.
template <typename Scalar>
Var l2_normalize(GradTape<Scalar>& tape, Var x) {
  const auto& xv = tape.value(x);
  detail::require_rank(xv.shape(), 2, "l2_normalize input");
  const std::size_t rows = xv.dim(0), cols = xv.dim(1);
  Tensor<Scalar> y(xv.shape());
  std::vector<Scalar> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    Scalar sq = 0;
    for (std::size_t c = 0; c < cols; ++c) sq += xv(r, c) * xv(r, c);
    norms[r] = std::sqrt(sq);
    if (!(double(norms[r]) >= kMinRowNorm)) {
      throw DegenerateError("l2_normalize: row " + std::to_string(r) + " has norm below 1e-12");
    }
    for (std::size_t c = 0; c < cols; ++c) y(r, c) = xv(r, c) / norms[r];
  }
  Tensor<Scalar> unit = y;
  return tape.record(std::move(y), {x},
                     [x, unit = std::move(unit), norms = std::move(norms)](GradTape<Scalar>& t,
                                                                           const Tensor<Scalar>& g) {
                       auto& gx = t.grad(x);
                       const std::size_t rows = unit.dim(0), cols = unit.dim(1);
                       for (std::size_t r = 0; r < rows; ++r) {
                         Scalar dot = 0;
                         for (std::size_t c = 0; c < cols; ++c) dot += unit(r, c) * g(r, c);
                         for (std::size_t c = 0; c < cols; ++c) gx(r, c) += (g(r, c) - unit(r, c) * dot) / norms[r];
                       }
                     },
                     "l2_normalize");
}

/// Sum of all elements as a 1-element tensor.
template <typename Scalar>
Var sum(GradTape<Scalar>& tape, Var x) {
  const auto& xv = tape.value(x);
  Scalar s = 0;
  for (Scalar v : xv.data()) s += v;
  return tape.record(Tensor<Scalar>({1}, s), {x},
                     [x](GradTape<Scalar>& t, const Tensor<Scalar>& g) {
                       auto& gx = t.grad(x);
                       for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[0];
                     },
                     "sum");
}

/// Sum of elementwise products with a constant weight tensor; used to turn
/// a tensor-valued output into a scalar for gradient checks.
template <typename Scalar>
Var weighted_sum(GradTape<Scalar>& tape, Var x, const Tensor<Scalar>& weights) {
  const auto& xv = tape.value(x);
  if (xv.shape() != weights.shape()) {
    throw DimensionError("weighted_sum shape mismatch: " + shape_string(xv.shape()) + " vs " +
                         shape_string(weights.shape()));
  }
  Scalar s = 0;
  for (std::size_t i = 0; i < xv.size(); ++i) s += xv[i] * weights[i];
  return tape.record(Tensor<Scalar>({1}, s), {x},
                     [x, weights](GradTape<Scalar>& t, const Tensor<Scalar>& g) {
                       auto& gx = t.grad(x);
                       for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[0] * weights[i];
                     },
                     "weighted_sum");
}

}  // namespace tml
