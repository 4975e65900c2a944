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

#include <cstdint>
#include <functional>
#include <vector>

#include "tml/classifier.hpp"
#include "tml/dataset.hpp"
#include "tml/embedder.hpp"
#include "tml/optim.hpp"
#include "tml/triplet.hpp"

namespace tml {

struct TrainConfig {
  std::size_t epochs = 300;
  std::size_t batch = 32;
  std::size_t P = 8;
  std::size_t K = 4;
  std::uint64_t seed = 0;
  TripletConfig triplet;
  AdamConfig adam;

  void validate() const;
};

struct TrainHistory {
  std::vector<double> epoch_loss;
  std::vector<double> active_fraction;
};

struct StratifiedSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Per class: round(ratio * n) images (at least one on each side) go to
/// train after a seeded in-class shuffle. Indices are sorted ascending.
StratifiedSplit split_stratified(const Dataset& dataset, double ratio, std::uint64_t seed);

struct TrainedEmbedder {
  EmbedderNet net;
  TrainHistory history;
};

using EpochCallback = std::function<void(std::size_t epoch, double loss, double active_fraction)>;

/// epochs x ceil(N / batch) steps of PK sampling, embedding, mining loss,
/// backward and Adam. Deterministic given the seeds in the configs.
TrainedEmbedder train_embedder(const Dataset& dataset, const EmbedderConfig& embed_cfg, const TrainConfig& train_cfg,
                               const EpochCallback& on_epoch = {});

struct HeadConfig {
  std::size_t hidden = 128;
  std::size_t epochs = 40;
  std::size_t batch = 32;
  std::uint64_t seed = 0;
  AdamConfig adam;
};

/// Trains an MLP on frozen embeddings of `train` with cross-entropy.
MlpHead train_classifier_head(const EmbedderNet& net, const Dataset& train, const HeadConfig& cfg);

/// Same, on precomputed NxD embeddings.
MlpHead train_head_on_embeddings(const TensorF& embeddings, std::span<const std::size_t> labels,
                                 const std::vector<std::string>& class_names, const HeadConfig& cfg);

}  // namespace tml
