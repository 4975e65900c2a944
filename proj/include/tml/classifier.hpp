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

#include "tml/ops.hpp"
#include "tml/tape.hpp"
#include "tml/tensor.hpp"

namespace tml {

// ---- MLP head ---------------------------------------------------------------

/// dense(D->H) -> relu -> dense(H->C). Parameters are [W1, b1, W2, b2].
class MlpHead {
 public:
  MlpHead(std::vector<TensorF> params, std::vector<std::string> class_names);

  std::size_t input_dim() const { return params_[0].dim(0); }
  std::size_t hidden_dim() const { return params_[0].dim(1); }
  std::size_t num_classes() const { return params_[2].dim(1); }
  const std::vector<std::string>& class_names() const noexcept { return class_names_; }
  std::span<const TensorF> parameters() const noexcept { return params_; }
  std::span<TensorF> parameters() noexcept { return params_; }

  friend bool operator==(const MlpHead&, const MlpHead&) = default;

 private:
  std::vector<TensorF> params_;
  std::vector<std::string> class_names_;
};

/// He-uniform weights from `seed`, zero biases.
MlpHead build_mlp_head(std::size_t input_dim, std::size_t hidden_dim, std::vector<std::string> class_names,
                       std::uint64_t seed);

template <typename Scalar>
Var mlp_on_tape(GradTape<Scalar>& tape, std::span<const Var> params, Var e) {
  Var h = relu(tape, dense(tape, e, params[0], params[1]));
  return dense(tape, h, params[2], params[3]);
}

/// Logits, no softmax.
TensorF mlp_forward(const MlpHead& head, const TensorF& embeddings);

/// Mean of -log softmax(logits)[label] with max-subtraction.
template <typename Scalar>
Var cross_entropy(GradTape<Scalar>& tape, Var logits, std::span<const std::size_t> labels) {
  const auto& z = tape.value(logits);
  if (z.rank() != 2) throw DimensionError("cross_entropy expects BxC logits, got " + shape_string(z.shape()));
  const std::size_t b = z.dim(0), c = z.dim(1);
  if (labels.size() != b) throw DimensionError("cross_entropy: label count does not match batch");
  Tensor<Scalar> probs({b, c});
  Scalar total = 0;
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] >= c) {
      throw ContractError("cross_entropy: label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(c) +
                          ")");
    }
    Scalar mx = z(i, 0);
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, z(i, j));
    Scalar s = 0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(z(i, j) - mx);
    for (std::size_t j = 0; j < c; ++j) probs(i, j) = std::exp(z(i, j) - mx) / s;
    total += -(z(i, labels[i]) - mx - std::log(s));
  }
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  return tape.record(Tensor<Scalar>({1}, total / Scalar(b)), {logits},
                     [logits, probs = std::move(probs), lab = std::move(lab)](GradTape<Scalar>& t,
                                                                              const Tensor<Scalar>& g) {
                       auto& gz = t.grad(logits);
                       const std::size_t b = probs.dim(0), c = probs.dim(1);
                       const Scalar w = g[0] / Scalar(b);
                       for (std::size_t i = 0; i < b; ++i) {
                         for (std::size_t j = 0; j < c; ++j) {
                           gz(i, j) += w * (probs(i, j) - (j == lab[i] ? Scalar(1) : Scalar(0)));
                         }
                       }
                     },
                     "cross_entropy");
}

template <typename Scalar>
Scalar cross_entropy(const Tensor<Scalar>& logits, std::span<const std::size_t> labels) {
  GradTape<Scalar> tape;
  return tape.value(cross_entropy(tape, tape.constant_ref(logits), labels))[0];
}

/// Row-wise softmax with max-subtraction.
TensorF softmax(const TensorF& logits);

struct Prediction {
  std::size_t label = 0;
  double confidence = 0.0;
};

/// Argmax (lowest id on ties) and its softmax probability.
std::vector<Prediction> predict_from_logits(const TensorF& logits);
std::vector<Prediction> mlp_predict(const MlpHead& head, const TensorF& embeddings);

// ---- KNN index ----------------------------------------------------------------

/// Stored embedding rows with aligned class ids and a name registry.
/// Reads may run concurrently; enroll is exclusive.
class KnnIndex {
 public:
  explicit KnnIndex(std::size_t dim);
  KnnIndex(std::size_t dim, std::vector<float> rows, std::vector<std::size_t> labels,
           std::vector<std::string> class_names);

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return labels_.size(); }
  bool empty() const noexcept { return labels_.empty(); }
  std::size_t num_classes() const noexcept { return class_names_.size(); }
  const std::vector<std::string>& class_names() const noexcept { return class_names_; }
  const std::vector<std::size_t>& labels() const noexcept { return labels_; }
  std::span<const float> rows() const noexcept { return rows_; }
  std::span<const float> row(std::size_t i) const { return std::span<const float>(rows_).subspan(i * dim_, dim_); }

  /// Registers `name` if unseen and returns its id.
  std::size_t register_class(const std::string& name);
  /// Id of `name`, or num_classes() if unknown.
  std::size_t find_class(const std::string& name) const;

  /// Appends rows (a flat multiple of dim) under `name`. Existing rows are
  /// never touched; an empty span leaves the index unchanged.
  void enroll(std::span<const float> rows, const std::string& name);
  void enroll(const TensorF& rows, const std::string& name);

  friend bool operator==(const KnnIndex&, const KnnIndex&) = default;

 private:
  std::size_t dim_;
  std::vector<float> rows_;
  std::vector<std::size_t> labels_;
  std::vector<std::string> class_names_;
};

inline void knn_enroll(KnnIndex& index, const TensorF& embeddings, const std::string& name) {
  index.enroll(embeddings, name);
}

struct KnnResult {
  std::vector<Prediction> predictions;  // confidence = vote share of the winner
  bool k_clamped = false;               // k exceeded the index size
};

/// Squared-Euclidean k nearest (distance ties to the lower row), majority
/// vote; vote ties go to the smaller mean distance, then the lower class id.
KnnResult knn_predict(const KnnIndex& index, const TensorF& queries, std::size_t k);

}  // namespace tml
