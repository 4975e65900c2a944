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

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tml/classifier.hpp"
#include "tml/dataset.hpp"
#include "tml/embedder.hpp"
#include "tml/train.hpp"

namespace tml {

/// Rows are true classes, columns predicted classes.
using ConfusionMatrix = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct EvalReport {
  std::vector<std::string> class_names;
  ConfusionMatrix confusion;
  double accuracy = 0.0;

  std::int64_t total() const { return confusion.sum(); }

  /// accuracy = trace / total, computed from the counts alone.
  static EvalReport from_confusion(std::vector<std::string> class_names, ConfusionMatrix confusion);
};

/// Counts (truth, predicted) pairs in index order.
EvalReport tally(std::span<const std::size_t> truth, std::span<const std::size_t> predicted,
                 std::vector<std::string> class_names);

/// Maps images to embeddings; lets float and quantized nets share the
/// evaluation code.
using EmbedFn = std::function<TensorF(const TensorF&)>;

EmbedFn embed_fn(const EmbedderNet& net);

/// Every test class must exist in the head's class table (by name), else
/// ConfigError. The report uses the classifier's class table.
EvalReport evaluate(const EmbedFn& embed, const MlpHead& head, const Dataset& test);

/// Same contract for a KNN index; an empty index raises StateError.
EvalReport evaluate(const EmbedFn& embed, const KnnIndex& index, std::size_t k, const Dataset& test);

/// Embeds `data` and enrolls every image under its class name.
KnnIndex build_index(const EmbedFn& embed, const Dataset& data);

enum class ClassifierKind : std::uint8_t { knn = 0, mlp = 1 };

std::string to_string(ClassifierKind kind);
ClassifierKind parse_classifier(const std::string& name);

struct RepeatedEvalConfig {
  double split = 0.8;
  EmbedderConfig embedder;
  TrainConfig train;
  ClassifierKind classifier = ClassifierKind::knn;
  std::size_t k = 1;
  HeadConfig head;
};

struct SplitSummary {
  std::vector<double> accuracies;
  double mean = 0.0;
  double max = 0.0;

  static SplitSummary from_accuracies(std::vector<double> accuracies);
};

/// `runs` seeds derived from `base`, all distinct and deterministic.
std::vector<std::uint64_t> derive_run_seeds(std::uint64_t base, std::size_t runs);

using RunCallback = std::function<void(std::size_t run, std::uint64_t seed, const EvalReport& report)>;

/// One run per seed: stratified split, embedder training, classifier fit on
/// the train part, evaluation on the held-out part. The seed drives the
/// split, the weight init and every sampler of that run.
SplitSummary repeated_splits(const Dataset& dataset, const RepeatedEvalConfig& cfg,
                             std::span<const std::uint64_t> seeds, const RunCallback& on_run = {});

struct FewShotConfig {
  std::size_t shots = 2;
  std::size_t k = 1;
};

/// Enrolls the first `shots` images (dataset order) of every novel class,
/// plus every image of `base` when given, into a KNN index and evaluates on
/// the remaining novel images. shots >= class size is a ContractError;
/// fewer than 2*shots images in a class is a DatasetError.
EvalReport fewshot_enroll_eval(const EmbedFn& embed, const Dataset& novel, const FewShotConfig& cfg,
                               const Dataset* base = nullptr);

struct Projection2D {
  Eigen::MatrixX2d coords;      // N x 2
  Eigen::MatrixX2d components;  // D x 2, orthonormal columns
  std::array<double, 2> explained{};
  std::vector<std::size_t> labels;
};

/// Top-two principal directions of the centred rows by power iteration with
/// deflation. Each component's largest-magnitude entry is made positive.
Projection2D pca_project(const TensorF& embeddings, std::span<const std::size_t> labels = {});

/// Mean Euclidean distance between different-class pairs divided by the mean
/// over same-class pairs.
double separation_ratio(const TensorF& embeddings, std::span<const std::size_t> labels);

void export_confusion_csv(const EvalReport& report, const std::filesystem::path& path);
void export_summary_csv(const SplitSummary& summary, const std::filesystem::path& path);
void export_projection_csv(const Projection2D& projection, const std::vector<std::string>& class_names,
                           const std::filesystem::path& path);

/// Inverse of export_confusion_csv.
EvalReport read_confusion_csv(const std::filesystem::path& path);

std::string confusion_csv(const EvalReport& report);
std::string summary_csv(const SplitSummary& summary);

}  // namespace tml
