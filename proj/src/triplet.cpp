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

#include "tml/triplet.hpp"

#include <numeric>

namespace tml {

PKBatch pk_sample(const Dataset& dataset, std::size_t P, std::size_t K, Rng& rng) {
  if (P == 0 || K == 0) throw ConfigError("pk_sample needs P >= 1 and K >= 1");
  const auto by_class = dataset.indices_by_class();
  std::vector<std::size_t> classes;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    if (!by_class[c].empty()) classes.push_back(c);
  }
  if (classes.size() < P) {
    throw DatasetError("pk_sample: dataset has " + std::to_string(classes.size()) + " non-empty classes, P = " +
                       std::to_string(P));
  }
  // Partial Fisher-Yates: the first P slots become the drawn classes.
  for (std::size_t i = 0; i < P; ++i) {
    std::swap(classes[i], classes[i + rng.index(classes.size() - i)]);
  }

  std::vector<std::size_t> picks;
  picks.reserve(P * K);
  for (std::size_t i = 0; i < P; ++i) {
    std::vector<std::size_t> pool = by_class[classes[i]];
    if (pool.size() >= K) {
      for (std::size_t j = 0; j < K; ++j) {
        std::swap(pool[j], pool[j + rng.index(pool.size() - j)]);
        picks.push_back(pool[j]);
      }
    } else {
      for (std::size_t j = 0; j < K; ++j) picks.push_back(pool[rng.index(pool.size())]);
    }
  }

  PKBatch batch;
  batch.images = dataset.stack(picks);
  batch.labels.reserve(picks.size());
  for (std::size_t idx : picks) batch.labels.push_back(dataset.images[idx].label);
  batch.P = P;
  batch.K = K;
  return batch;
}

std::string to_string(Mining mining) { return mining == Mining::batch_all ? "batch_all" : "batch_hard"; }

Mining parse_mining(const std::string& name) {
  if (name == "batch_all") return Mining::batch_all;
  if (name == "batch_hard") return Mining::batch_hard;
  throw ConfigError("unknown mining mode '" + name + "' (expected batch_all or batch_hard)");
}

}  // namespace tml
