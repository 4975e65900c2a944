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

// Independent reference implementations used by the unit and acceptance
// tests. Everything here is written as plain loops over doubles and shares
// no code with the library beyond the Tensor container.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <vector>

#include "tml/random.hpp"
#include "tml/tensor.hpp"

namespace oracle {

template <typename S = double>
tml::Tensor<S> random_tensor(const tml::Shape& shape, tml::Rng& rng, double lo = -1.0, double hi = 1.0) {
  tml::Tensor<S> t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = S(rng.uniform(lo, hi));
  return t;
}

inline std::vector<double> matmul(const std::vector<double>& a, const std::vector<double>& b, std::size_t n,
                                  std::size_t k, std::size_t m) {
  std::vector<double> c(n * m, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t p = 0; p < k; ++p) c[i * m + j] += a[i * k + p] * b[p * m + j];
  return c;
}

// x: BxCxHxW, k: FxCx3x3, b: F. Stride 1, zero padding 1.
inline std::vector<double> conv3x3(const tml::TensorD& x, const tml::TensorD& k, const tml::TensorD& b) {
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), F = k.dim(0);
  std::vector<double> y(B * F * H * W);
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t f = 0; f < F; ++f)
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j) {
          double acc = b[f];
          for (std::size_t c = 0; c < C; ++c)
            for (int di = -1; di <= 1; ++di)
              for (int dj = -1; dj <= 1; ++dj) {
                const long r = long(i) + di, s = long(j) + dj;
                if (r < 0 || s < 0 || r >= long(H) || s >= long(W)) continue;
                acc += x(n, c, std::size_t(r), std::size_t(s)) * k(f, c, std::size_t(di + 1), std::size_t(dj + 1));
              }
          y[((n * F + f) * H + i) * W + j] = acc;
        }
  return y;
}

inline std::vector<double> maxpool2(const tml::TensorD& x) {
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  std::vector<double> y;
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < H; i += 2)
        for (std::size_t j = 0; j < W; j += 2) {
          double m = -std::numeric_limits<double>::infinity();
          for (std::size_t a = 0; a < 2; ++a)
            for (std::size_t d = 0; d < 2; ++d) m = std::max(m, x(n, c, i + a, j + d));
          y.push_back(m);
        }
  return y;
}

inline double sq_dist(const tml::TensorD& e, std::size_t i, std::size_t j) {
  double s = 0.0;
  for (std::size_t d = 0; d < e.dim(1); ++d) {
    const double t = e(i, d) - e(j, d);
    s += t * t;
  }
  return s;
}

struct LossOracle {
  double loss = 0.0;
  std::size_t valid = 0;
  std::size_t active = 0;
};

// O(B^3) enumeration of every (a, p, n) triple.
inline LossOracle batch_all(const tml::TensorD& e, std::span<const std::size_t> labels, double margin) {
  LossOracle out;
  double total = 0.0;
  const std::size_t B = labels.size();
  for (std::size_t a = 0; a < B; ++a)
    for (std::size_t p = 0; p < B; ++p)
      for (std::size_t n = 0; n < B; ++n) {
        if (p == a || labels[p] != labels[a] || labels[n] == labels[a]) continue;
        ++out.valid;
        const double h = sq_dist(e, a, p) - sq_dist(e, a, n) + margin;
        if (h > 0) {
          ++out.active;
          total += h;
        }
      }
  out.loss = out.active ? total / double(out.active) : 0.0;
  return out;
}

// O(B^2) scan: hardest positive and hardest negative per anchor.
inline LossOracle batch_hard(const tml::TensorD& e, std::span<const std::size_t> labels, double margin) {
  LossOracle out;
  double total = 0.0;
  const std::size_t B = labels.size();
  for (std::size_t a = 0; a < B; ++a) {
    double hp = -1.0, hn = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < B; ++j) {
      if (j == a) continue;
      const double d = sq_dist(e, a, j);
      if (labels[j] == labels[a]) hp = std::max(hp, d);
      else hn = std::min(hn, d);
    }
    const double h = hp - hn + margin;
    if (h > 0) {
      ++out.active;
      total += h;
    }
  }
  out.valid = B;
  out.loss = total / double(B);
  return out;
}

struct KnnOracle {
  std::size_t label;
  double confidence;
};

// Linear scan with a full sort; vote ties by mean distance, then lower id.
inline KnnOracle knn(std::span<const float> rows, std::span<const std::size_t> labels, std::size_t dim,
                     std::span<const float> query, std::size_t k) {
  const std::size_t n = labels.size();
  std::vector<std::pair<double, std::size_t>> d;
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      const double t = double(rows[i * dim + j]) - double(query[j]);
      s += t * t;
    }
    d.emplace_back(s, i);
  }
  std::sort(d.begin(), d.end());
  k = std::min(k, n);
  std::map<std::size_t, std::pair<std::size_t, double>> votes;
  for (std::size_t i = 0; i < k; ++i) {
    auto& v = votes[labels[d[i].second]];
    ++v.first;
    v.second += d[i].first;
  }
  std::size_t best = 0, best_votes = 0;
  double best_mean = 0.0;
  for (const auto& [label, v] : votes) {
    const double mean = v.second / double(v.first);
    if (v.first > best_votes || (v.first == best_votes && mean < best_mean)) {
      best = label;
      best_votes = v.first;
      best_mean = mean;
    }
  }
  return {best, double(best_votes) / double(k)};
}

// Scalar Adam, textbook form.
struct ScalarAdam {
  double lr = 0.001, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double m = 0.0, v = 0.0;
  int t = 0;

  double step(double p, double g) {
    ++t;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t));
    const double vh = v / (1 - std::pow(b2, t));
    return p - lr * mh / (std::sqrt(vh) + eps);
  }
};

}  // namespace oracle
