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

#include "tml/classifier.hpp"

#include <algorithm>
#include <numeric>

#include "tml/random.hpp"

namespace tml {

MlpHead::MlpHead(std::vector<TensorF> params, std::vector<std::string> class_names)
    : params_(std::move(params)), class_names_(std::move(class_names)) {
  if (params_.size() != 4) throw DimensionError("MLP head needs 4 parameter tensors");
  const auto& w1 = params_[0];
  const auto& b1 = params_[1];
  const auto& w2 = params_[2];
  const auto& b2 = params_[3];
  if (w1.rank() != 2 || b1.rank() != 1 || w2.rank() != 2 || b2.rank() != 1 || b1.dim(0) != w1.dim(1) ||
      w2.dim(0) != w1.dim(1) || b2.dim(0) != w2.dim(1)) {
    throw DimensionError("MLP head parameter shapes are inconsistent: " + shape_string(w1.shape()) + ", " +
                         shape_string(b1.shape()) + ", " + shape_string(w2.shape()) + ", " + shape_string(b2.shape()));
  }
  if (class_names_.size() != w2.dim(1)) {
    throw ConfigError("MLP head has " + std::to_string(w2.dim(1)) + " outputs but " +
                      std::to_string(class_names_.size()) + " class names");
  }
}

MlpHead build_mlp_head(std::size_t input_dim, std::size_t hidden_dim, std::vector<std::string> class_names,
                       std::uint64_t seed) {
  if (input_dim == 0 || hidden_dim == 0 || class_names.empty()) throw ConfigError("MLP head dims must be positive");
  Rng rng(seed);
  auto init = [&rng](std::size_t in, std::size_t out) {
    TensorF w({in, out});
    const double bound = std::sqrt(6.0 / double(in));
    for (float& v : w.data()) v = float(rng.uniform(-bound, bound));
    return w;
  };
  std::vector<TensorF> params;
  params.push_back(init(input_dim, hidden_dim));
  params.emplace_back(Shape{hidden_dim});
  params.push_back(init(hidden_dim, class_names.size()));
  params.emplace_back(Shape{class_names.size()});
  return MlpHead(std::move(params), std::move(class_names));
}

TensorF mlp_forward(const MlpHead& head, const TensorF& embeddings) {
  if (embeddings.rank() != 2 || embeddings.dim(1) != head.input_dim()) {
    throw DimensionError("MLP head expects Bx" + std::to_string(head.input_dim()) + " embeddings, got " +
                         shape_string(embeddings.shape()));
  }
  GradTape<float> tape;
  std::vector<Var> handles;
  for (const auto& p : head.parameters()) handles.push_back(tape.constant_ref(p));
  return tape.value(mlp_on_tape<float>(tape, handles, tape.constant_ref(embeddings)));
}

TensorF softmax(const TensorF& logits) {
  TensorF out(logits.shape());
  const std::size_t b = logits.dim(0), c = logits.dim(1);
  for (std::size_t i = 0; i < b; ++i) {
    double mx = logits(i, 0);
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, double(logits(i, j)));
    double s = 0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(double(logits(i, j)) - mx);
    for (std::size_t j = 0; j < c; ++j) out(i, j) = float(std::exp(double(logits(i, j)) - mx) / s);
  }
  return out;
}

std::vector<Prediction> predict_from_logits(const TensorF& logits) {
  if (logits.rank() != 2) throw DimensionError("expected BxC logits, got " + shape_string(logits.shape()));
  const std::size_t b = logits.dim(0), c = logits.dim(1);
  std::vector<Prediction> out(b);
  for (std::size_t i = 0; i < b; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j) {
      if (logits(i, j) > logits(i, best)) best = j;
    }
    double s = 0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(double(logits(i, j)) - double(logits(i, best)));
    out[i] = {best, 1.0 / s};
  }
  return out;
}

std::vector<Prediction> mlp_predict(const MlpHead& head, const TensorF& embeddings) {
  return predict_from_logits(mlp_forward(head, embeddings));
}

// ---- KNN --------------------------------------------------------------------

KnnIndex::KnnIndex(std::size_t dim) : dim_(dim) {
  if (dim == 0) throw DimensionError("KNN index dimension must be positive");
}

KnnIndex::KnnIndex(std::size_t dim, std::vector<float> rows, std::vector<std::size_t> labels,
                   std::vector<std::string> class_names)
    : dim_(dim), rows_(std::move(rows)), labels_(std::move(labels)), class_names_(std::move(class_names)) {
  if (dim_ == 0) throw DimensionError("KNN index dimension must be positive");
  if (rows_.size() != labels_.size() * dim_) throw DimensionError("KNN index rows and labels are misaligned");
  for (std::size_t l : labels_) {
    if (l >= class_names_.size()) throw FormatError("KNN index label out of range of its class registry");
  }
}

std::size_t KnnIndex::register_class(const std::string& name) {
  const std::size_t id = find_class(name);
  if (id < class_names_.size()) return id;
  class_names_.push_back(name);
  return class_names_.size() - 1;
}

std::size_t KnnIndex::find_class(const std::string& name) const {
  return std::size_t(std::find(class_names_.begin(), class_names_.end(), name) - class_names_.begin());
}

void KnnIndex::enroll(std::span<const float> rows, const std::string& name) {
  if (rows.size() % dim_ != 0) {
    throw DimensionError("enrolled data length " + std::to_string(rows.size()) + " is not a multiple of index width " +
                         std::to_string(dim_));
  }
  if (rows.empty()) return;
  const std::size_t id = register_class(name);
  rows_.insert(rows_.end(), rows.begin(), rows.end());
  labels_.insert(labels_.end(), rows.size() / dim_, id);
}

void KnnIndex::enroll(const TensorF& rows, const std::string& name) {
  if (rows.rank() != 2 || rows.dim(1) != dim_) {
    throw DimensionError("enrolled embeddings must be Nx" + std::to_string(dim_) + ", got " +
                         shape_string(rows.shape()));
  }
  enroll(rows.data(), name);
}

KnnResult knn_predict(const KnnIndex& index, const TensorF& queries, std::size_t k) {
  if (index.empty()) throw StateError("knn_predict on an empty index");
  if (k == 0) throw ContractError("knn_predict needs k >= 1");
  if (queries.rank() != 2 || queries.dim(1) != index.dim()) {
    throw DimensionError("queries must be Nx" + std::to_string(index.dim()) + ", got " +
                         shape_string(queries.shape()));
  }
  KnnResult result;
  if (k > index.size()) {
    k = index.size();
    result.k_clamped = true;
  }
  const std::size_t n = index.size(), d = index.dim();
  std::vector<std::pair<double, std::size_t>> dist(n);
  std::vector<std::size_t> votes(index.num_classes());
  std::vector<double> dist_sum(index.num_classes());
  for (std::size_t q = 0; q < queries.dim(0); ++q) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = index.row(i);
      double s = 0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = double(queries(q, j)) - double(row[j]);
        s += diff * diff;
      }
      dist[i] = {s, i};
    }
    std::partial_sort(dist.begin(), dist.begin() + long(k), dist.end());
    std::fill(votes.begin(), votes.end(), 0);
    std::fill(dist_sum.begin(), dist_sum.end(), 0.0);
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t label = index.labels()[dist[i].second];
      ++votes[label];
      dist_sum[label] += dist[i].first;
    }
    std::size_t best = index.num_classes();
    for (std::size_t c = 0; c < votes.size(); ++c) {
      if (votes[c] == 0) continue;
      if (best == index.num_classes() || votes[c] > votes[best] ||
          (votes[c] == votes[best] && dist_sum[c] / double(votes[c]) < dist_sum[best] / double(votes[best]))) {
        best = c;
      }
    }
    result.predictions.push_back({best, double(votes[best]) / double(k)});
  }
  return result;
}

}  // namespace tml
