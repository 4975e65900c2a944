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

#include "tml/train.hpp"

#include <cmath>
#include <numeric>

namespace tml {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("training needs at least one epoch");
  if (P == 0 || K == 0) throw ConfigError("P and K must be positive");
  if (batch != P * K) {
    throw ConfigError("batch " + std::to_string(batch) + " must equal P*K = " + std::to_string(P * K));
  }
  if (!(triplet.margin >= 0.0)) throw ConfigError("triplet margin must be non-negative");
  adam.validate();
}

StratifiedSplit split_stratified(const Dataset& dataset, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("split ratio must lie strictly between 0 and 1");
  Rng rng(seed);
  StratifiedSplit split;
  const auto by_class = dataset.indices_by_class();
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto members = by_class[c];
    if (members.size() < 2) {
      throw DatasetError("class '" + dataset.class_names[c] + "' has " + std::to_string(members.size()) +
                         " images; a split needs at least 2");
    }
    rng.shuffle(std::span<std::size_t>(members));
    const auto n = double(members.size());
    const std::size_t n_train = std::clamp<std::size_t>(std::size_t(std::round(ratio * n)), 1, members.size() - 1);
    split.train.insert(split.train.end(), members.begin(), members.begin() + long(n_train));
    split.test.insert(split.test.end(), members.begin() + long(n_train), members.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

TrainedEmbedder train_embedder(const Dataset& dataset, const EmbedderConfig& embed_cfg, const TrainConfig& cfg,
                               const EpochCallback& on_epoch) {
  cfg.validate();
  if (dataset.size() == 0) throw DatasetError("cannot train on an empty dataset");
  EmbedderNet net = build_embedder(embed_cfg);
  Rng rng(cfg.seed);
  AdamState<float> state;
  TrainHistory history;
  const std::size_t steps = (dataset.size() + cfg.batch - 1) / cfg.batch;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double loss_sum = 0.0;
    std::size_t active = 0, total = 0;
    for (std::size_t step = 0; step < steps; ++step) {
      PKBatch batch = pk_sample(dataset, cfg.P, cfg.K, rng);
      GradTape<float> tape;
      Var images = tape.constant_ref(batch.images);
      Var e = embed_on_tape<float>(tape, net, net.parameters(), images);
      LossVar loss = triplet_loss(tape, e, batch.labels, cfg.triplet);
      // The hinge treats NaN as inactive, so an overflowed distance would
      // otherwise pass as zero loss.
      if (!std::isfinite(loss.stats.batch_loss) || !all_finite(pairwise_sq_dist(tape.value(e)))) {
        throw DivergenceError("non-finite triplet loss in epoch " + std::to_string(epoch + 1));
      }
      auto grads = backward(tape, loss.loss);
      adam_step<float>(net.parameters(), grads, state, cfg.adam);
      loss_sum += loss.stats.batch_loss;
      active += loss.stats.active_triplets;
      total += loss.stats.total_valid_triplets;
    }
    history.epoch_loss.push_back(loss_sum / double(steps));
    history.active_fraction.push_back(total ? double(active) / double(total) : 0.0);
    if (on_epoch) on_epoch(epoch + 1, history.epoch_loss.back(), history.active_fraction.back());
  }
  return {std::move(net), std::move(history)};
}

MlpHead train_head_on_embeddings(const TensorF& embeddings, std::span<const std::size_t> labels,
                                 const std::vector<std::string>& class_names, const HeadConfig& cfg) {
  if (cfg.epochs < 1 || cfg.batch < 1) throw ConfigError("head training needs epochs >= 1 and batch >= 1");
  cfg.adam.validate();
  if (embeddings.rank() != 2 || embeddings.dim(0) != labels.size()) {
    throw DimensionError("head training: embeddings and labels are misaligned");
  }
  for (std::size_t l : labels) {
    if (l >= class_names.size()) {
      throw ConfigError("head training: label " + std::to_string(l) + " exceeds class count " +
                        std::to_string(class_names.size()));
    }
  }
  MlpHead head = build_mlp_head(embeddings.dim(1), cfg.hidden, class_names, cfg.seed);
  Rng rng(cfg.seed ^ 0x5eedULL);
  AdamState<float> state;
  const std::size_t n = labels.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t begin = 0; begin < n; begin += cfg.batch) {
      const std::size_t end = std::min(n, begin + cfg.batch);
      const std::size_t d = embeddings.dim(1);
      TensorF x({end - begin, d});
      std::vector<std::size_t> y;
      for (std::size_t i = begin; i < end; ++i) {
        std::copy_n(embeddings.data().begin() + long(order[i] * d), d, x.data().begin() + long((i - begin) * d));
        y.push_back(labels[order[i]]);
      }
      GradTape<float> tape;
      std::vector<Var> handles;
      for (const auto& p : head.parameters()) handles.push_back(tape.parameter(p));
      Var logits = mlp_on_tape<float>(tape, handles, tape.constant_ref(x));
      Var loss = cross_entropy(tape, logits, y);
      if (!std::isfinite(tape.value(loss)[0])) {
        throw DivergenceError("non-finite cross-entropy in head epoch " + std::to_string(epoch + 1));
      }
      auto grads = backward(tape, loss);
      adam_step<float>(head.parameters(), grads, state, cfg.adam);
    }
  }
  return head;
}

MlpHead train_classifier_head(const EmbedderNet& net, const Dataset& train, const HeadConfig& cfg) {
  if (train.size() == 0) throw DatasetError("cannot train a head on an empty dataset");
  const TensorF embeddings = embed_all(net, train.stack_all());
  const auto labels = train.labels();
  return train_head_on_embeddings(embeddings, labels, train.class_names, cfg);
}

}  // namespace tml
