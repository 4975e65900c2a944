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

#include "tml/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "tml/random.hpp"

namespace tml {

EvalReport EvalReport::from_confusion(std::vector<std::string> class_names, ConfusionMatrix confusion) {
  if (confusion.rows() != confusion.cols() || std::size_t(confusion.rows()) != class_names.size()) {
    throw DimensionError("confusion matrix must be NxN with one name per class");
  }
  if ((confusion.array() < 0).any()) throw ContractError("confusion counts must be non-negative");
  EvalReport r;
  r.class_names = std::move(class_names);
  r.confusion = std::move(confusion);
  const std::int64_t total = r.confusion.sum();
  r.accuracy = total > 0 ? double(r.confusion.trace()) / double(total) : 0.0;
  return r;
}

EvalReport tally(std::span<const std::size_t> truth, std::span<const std::size_t> predicted,
                 std::vector<std::string> class_names) {
  if (truth.size() != predicted.size()) throw DimensionError("tally: truth and prediction counts differ");
  const auto n = Eigen::Index(class_names.size());
  ConfusionMatrix m = ConfusionMatrix::Zero(n, n);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] >= class_names.size() || predicted[i] >= class_names.size()) {
      throw ContractError("tally: class id outside the class table");
    }
    ++m(Eigen::Index(truth[i]), Eigen::Index(predicted[i]));
  }
  return EvalReport::from_confusion(std::move(class_names), std::move(m));
}

EmbedFn embed_fn(const EmbedderNet& net) {
  return [&net](const TensorF& images) { return embed_all(net, images); };
}

namespace {

// Test labels re-expressed in the classifier's class table.
std::vector<std::size_t> map_labels(const Dataset& test, const std::vector<std::string>& names, const char* what) {
  std::vector<std::size_t> remap(test.num_classes());
  for (std::size_t c = 0; c < test.num_classes(); ++c) {
    auto it = std::find(names.begin(), names.end(), test.class_names[c]);
    if (it == names.end()) {
      throw ConfigError(std::string(what) + " does not cover test class '" + test.class_names[c] + "'");
    }
    remap[c] = std::size_t(it - names.begin());
  }
  std::vector<std::size_t> out;
  out.reserve(test.size());
  for (const auto& img : test.images) out.push_back(remap.at(img.label));
  return out;
}

std::vector<std::size_t> labels_of(const std::vector<Prediction>& preds) {
  std::vector<std::size_t> out;
  out.reserve(preds.size());
  for (const auto& p : preds) out.push_back(p.label);
  return out;
}

}  // namespace

EvalReport evaluate(const EmbedFn& embed, const MlpHead& head, const Dataset& test) {
  if (test.size() == 0) throw DatasetError("evaluation needs at least one test image");
  const auto truth = map_labels(test, head.class_names(), "classifier head");
  const auto preds = mlp_predict(head, embed(test.stack_all()));
  return tally(truth, labels_of(preds), head.class_names());
}

EvalReport evaluate(const EmbedFn& embed, const KnnIndex& index, std::size_t k, const Dataset& test) {
  if (test.size() == 0) throw DatasetError("evaluation needs at least one test image");
  if (index.empty()) throw StateError("KNN index is empty; enroll images first");
  const auto truth = map_labels(test, index.class_names(), "KNN index");
  const auto result = knn_predict(index, embed(test.stack_all()), k);
  return tally(truth, labels_of(result.predictions), index.class_names());
}

KnnIndex build_index(const EmbedFn& embed, const Dataset& data) {
  if (data.size() == 0) throw DatasetError("cannot build an index from an empty dataset");
  const TensorF e = embed(data.stack_all());
  const std::size_t d = e.dim(1);
  KnnIndex index(d);
  for (const auto& name : data.class_names) index.register_class(name);
  for (std::size_t i = 0; i < data.size(); ++i) {
    index.enroll(e.data().subspan(i * d, d), data.class_names[data.images[i].label]);
  }
  return index;
}

std::string to_string(ClassifierKind kind) { return kind == ClassifierKind::knn ? "knn" : "mlp"; }

ClassifierKind parse_classifier(const std::string& name) {
  if (name == "knn") return ClassifierKind::knn;
  if (name == "mlp") return ClassifierKind::mlp;
  throw ConfigError("unknown classifier '" + name + "' (expected knn or mlp)");
}

SplitSummary SplitSummary::from_accuracies(std::vector<double> accuracies) {
  if (accuracies.empty()) throw ContractError("a split summary needs at least one run");
  SplitSummary s;
  double sum = 0.0;
  for (double a : accuracies) sum += a;
  s.mean = sum / double(accuracies.size());
  s.max = *std::max_element(accuracies.begin(), accuracies.end());
  // Summation rounding can push the mean of equal values one ulp past them.
  s.mean = std::min(s.mean, s.max);
  s.accuracies = std::move(accuracies);
  return s;
}

std::vector<std::uint64_t> derive_run_seeds(std::uint64_t base, std::size_t runs) {
  Rng rng(base);
  std::vector<std::uint64_t> seeds;
  while (seeds.size() < runs) {
    const std::uint64_t s = rng.next();
    if (std::find(seeds.begin(), seeds.end(), s) == seeds.end()) seeds.push_back(s);
  }
  return seeds;
}

SplitSummary repeated_splits(const Dataset& dataset, const RepeatedEvalConfig& cfg,
                             std::span<const std::uint64_t> seeds, const RunCallback& on_run) {
  if (seeds.empty()) throw ContractError("repeated evaluation needs at least one run");
  std::vector<double> accuracies;
  for (std::size_t r = 0; r < seeds.size(); ++r) {
    const std::uint64_t seed = seeds[r];
    const auto split = split_stratified(dataset, cfg.split, seed);
    const Dataset train = dataset.subset(split.train);
    const Dataset test = dataset.subset(split.test);

    EmbedderConfig ecfg = cfg.embedder;
    ecfg.init_seed = seed;
    TrainConfig tcfg = cfg.train;
    tcfg.seed = seed;
    const EmbedderNet net = train_embedder(train, ecfg, tcfg).net;
    const EmbedFn embed = embed_fn(net);

    EvalReport report;
    if (cfg.classifier == ClassifierKind::mlp) {
      HeadConfig hcfg = cfg.head;
      hcfg.seed = seed;
      report = evaluate(embed, train_classifier_head(net, train, hcfg), test);
    } else {
      report = evaluate(embed, build_index(embed, train), cfg.k, test);
    }
    accuracies.push_back(report.accuracy);
    if (on_run) on_run(r + 1, seed, report);
  }
  return SplitSummary::from_accuracies(std::move(accuracies));
}

EvalReport fewshot_enroll_eval(const EmbedFn& embed, const Dataset& novel, const FewShotConfig& cfg,
                               const Dataset* base) {
  if (cfg.shots == 0) throw ContractError("few-shot enrollment needs at least one shot");
  const auto by_class = novel.indices_by_class();
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    const std::size_t n = by_class[c].size();
    if (cfg.shots >= n) {
      throw ContractError("shots (" + std::to_string(cfg.shots) + ") cover all " + std::to_string(n) +
                          " images of class '" + novel.class_names[c] + "'; nothing is held out");
    }
    if (n < 2 * cfg.shots) {
      throw DatasetError("class '" + novel.class_names[c] + "' has " + std::to_string(n) + " images; " +
                         std::to_string(2 * cfg.shots) + " are needed for " + std::to_string(cfg.shots) + " shots");
    }
  }

  std::vector<std::size_t> shot_idx, held_idx;
  for (const auto& members : by_class) {
    shot_idx.insert(shot_idx.end(), members.begin(), members.begin() + long(cfg.shots));
    held_idx.insert(held_idx.end(), members.begin() + long(cfg.shots), members.end());
  }
  std::sort(shot_idx.begin(), shot_idx.end());
  std::sort(held_idx.begin(), held_idx.end());

  const Dataset shots = novel.subset(shot_idx);
  KnnIndex index = build_index(embed, shots);
  if (base != nullptr && base->size() > 0) {
    const TensorF e = embed(base->stack_all());
    const std::size_t d = e.dim(1);
    for (std::size_t i = 0; i < base->size(); ++i) {
      index.enroll(e.data().subspan(i * d, d), base->class_names[base->images[i].label]);
    }
  }
  return evaluate(embed, index, cfg.k, novel.subset(held_idx));
}

namespace {

constexpr double kPcaTol = 1e-9;
constexpr int kPcaMaxIter = 1000;

void fix_sign(Eigen::VectorXd& v) {
  Eigen::Index arg = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (std::abs(v(i)) > std::abs(v(arg))) arg = i;
  }
  if (v(arg) < 0) v = -v;
}

// Dominant eigenvector of the symmetric PSD `c`, kept orthogonal to `against`
// when given. Returns a zero vector once |c v| drops below `noise_floor`, i.e. when
// `c` vanishes on that subspace up to rounding.
Eigen::VectorXd power_iteration(const Eigen::MatrixXd& c, const Eigen::VectorXd* against, double noise_floor) {
  const Eigen::Index d = c.rows();
  auto project = [&](Eigen::VectorXd& v) {
    if (against) v -= against->dot(v) * (*against);
  };
  // Start from the column of largest norm: deterministic and never
  // orthogonal to the dominant direction.
  Eigen::Index best = 0;
  c.colwise().norm().maxCoeff(&best);
  Eigen::VectorXd v = c.col(best);
  project(v);
  if (v.norm() < noise_floor) {
    v = Eigen::VectorXd::Ones(d);
    project(v);
  }
  if (v.norm() < 1e-12) return Eigen::VectorXd::Zero(d);
  v.normalize();
  for (int it = 0; it < kPcaMaxIter; ++it) {
    Eigen::VectorXd w = c * v;
    project(w);
    const double n = w.norm();
    if (n < noise_floor) return Eigen::VectorXd::Zero(d);
    w /= n;
    const double delta = std::min((w - v).norm(), (w + v).norm());
    v = std::move(w);
    if (delta < kPcaTol) break;
  }
  return v;
}

// Any unit vector orthogonal to `u`, used when the data has rank one.
Eigen::VectorXd orthogonal_unit(const Eigen::VectorXd& u) {
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    Eigen::VectorXd e = Eigen::VectorXd::Unit(u.size(), i);
    e -= u.dot(e) * u;
    if (e.norm() > 1e-6) return e.normalized();
  }
  return Eigen::VectorXd::Zero(u.size());
}

}  // namespace

Projection2D pca_project(const TensorF& embeddings, std::span<const std::size_t> labels) {
  if (embeddings.rank() != 2) throw DimensionError("pca_project expects NxD, got " + shape_string(embeddings.shape()));
  const std::size_t n = embeddings.dim(0);
  if (n < 3) throw ContractError("pca_project needs at least 3 rows, got " + std::to_string(n));
  if (!labels.empty() && labels.size() != n) throw DimensionError("pca_project: label count does not match rows");
  if (embeddings.dim(1) < 2) throw DimensionError("pca_project needs at least 2 columns");

  Eigen::MatrixXd x = embeddings.matrix().cast<double>();
  x.rowwise() -= x.colwise().mean();
  const Eigen::MatrixXd cov = (x.transpose() * x) / double(n);
  const double total = cov.trace();
  if (!(total > 1e-24)) throw DegenerateError("pca_project: all rows are identical (rank-0 data)");

  // Eigenvalues below this are rounding residue of the deflation.
  const double noise_floor = 1e-12 * total;
  Eigen::VectorXd v1 = power_iteration(cov, nullptr, noise_floor);
  fix_sign(v1);
  const double l1 = v1.dot(cov * v1);
  Eigen::MatrixXd deflated = cov - l1 * v1 * v1.transpose();
  Eigen::VectorXd v2 = power_iteration(deflated, &v1, noise_floor);
  if (v2.isZero()) v2 = orthogonal_unit(v1);
  // Re-orthogonalise once more so columns are orthonormal to rounding.
  v2 -= v1.dot(v2) * v1;
  v2.normalize();
  fix_sign(v2);
  const double l2 = std::max(0.0, v2.dot(cov * v2));

  Projection2D p;
  p.components.resize(v1.size(), 2);
  p.components.col(0) = v1;
  p.components.col(1) = v2;
  p.coords = x * p.components;
  p.explained = {std::clamp(l1 / total, 0.0, 1.0), std::clamp(l2 / total, 0.0, 1.0)};
  p.explained[1] = std::min(p.explained[1], p.explained[0]);
  p.labels.assign(labels.begin(), labels.end());
  return p;
}

double separation_ratio(const TensorF& embeddings, std::span<const std::size_t> labels) {
  if (embeddings.rank() != 2 || embeddings.dim(0) != labels.size()) {
    throw DimensionError("separation_ratio: embeddings and labels are misaligned");
  }
  const auto e = embeddings.matrix().cast<double>();
  double inter = 0.0, intra = 0.0;
  std::size_t n_inter = 0, n_intra = 0;
  for (Eigen::Index i = 0; i < e.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < e.rows(); ++j) {
      const double d = (e.row(i) - e.row(j)).norm();
      if (labels[std::size_t(i)] == labels[std::size_t(j)]) {
        intra += d;
        ++n_intra;
      } else {
        inter += d;
        ++n_inter;
      }
    }
  }
  if (n_inter == 0 || n_intra == 0) throw DegenerateError("separation_ratio needs same-class and cross-class pairs");
  if (intra == 0.0) throw DegenerateError("separation_ratio: intra-class distances are all zero");
  return (inter / double(n_inter)) / (intra / double(n_intra));
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        out.back() += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        out.back() += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.emplace_back();
    } else {
      out.back() += ch;
    }
  }
  if (quoted) throw FormatError("unterminated quote in CSV line");
  return out;
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace

std::string confusion_csv(const EvalReport& report) {
  std::string s = "true\\predicted";
  for (const auto& name : report.class_names) s += "," + csv_field(name);
  s += "\n";
  for (Eigen::Index i = 0; i < report.confusion.rows(); ++i) {
    s += csv_field(report.class_names[std::size_t(i)]);
    for (Eigen::Index j = 0; j < report.confusion.cols(); ++j) s += "," + std::to_string(report.confusion(i, j));
    s += "\n";
  }
  return s;
}

std::string summary_csv(const SplitSummary& summary) {
  std::string s = "run,accuracy\n";
  for (std::size_t r = 0; r < summary.accuracies.size(); ++r) {
    s += std::to_string(r + 1) + "," + fmt_double(summary.accuracies[r]) + "\n";
  }
  s += "mean," + fmt_double(summary.mean) + "\n";
  s += "max," + fmt_double(summary.max) + "\n";
  return s;
}

void export_confusion_csv(const EvalReport& report, const std::filesystem::path& path) {
  write_text(path, confusion_csv(report));
}

void export_summary_csv(const SplitSummary& summary, const std::filesystem::path& path) {
  write_text(path, summary_csv(summary));
}

void export_projection_csv(const Projection2D& projection, const std::vector<std::string>& class_names,
                           const std::filesystem::path& path) {
  std::string s = "x,y,label\n";
  for (Eigen::Index i = 0; i < projection.coords.rows(); ++i) {
    s += fmt_double(projection.coords(i, 0)) + "," + fmt_double(projection.coords(i, 1)) + ",";
    if (std::size_t(i) < projection.labels.size()) {
      const std::size_t l = projection.labels[std::size_t(i)];
      s += l < class_names.size() ? csv_field(class_names[l]) : std::to_string(l);
    }
    s += "\n";
  }
  write_text(path, s);
}

EvalReport read_confusion_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError("confusion CSV " + path.string() + " is empty");
  auto header = split_csv_line(line);
  std::vector<std::string> names(header.begin() + 1, header.end());
  const auto n = Eigen::Index(names.size());
  ConfusionMatrix m = ConfusionMatrix::Zero(n, n);
  Eigen::Index row = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (row >= n || Eigen::Index(cells.size()) != n + 1 || cells[0] != names[std::size_t(row)]) {
      throw FormatError("confusion CSV row " + std::to_string(row + 1) + " does not match the header");
    }
    for (Eigen::Index j = 0; j < n; ++j) {
      try {
        std::size_t used = 0;
        m(row, j) = std::stoll(cells[std::size_t(j + 1)], &used);
        if (used != cells[std::size_t(j + 1)].size()) throw std::invalid_argument("trailing");
      } catch (const std::logic_error&) {
        throw FormatError("confusion CSV has a non-integer cell in row " + std::to_string(row + 1));
      }
    }
    ++row;
  }
  if (row != n) throw FormatError("confusion CSV has " + std::to_string(row) + " rows for " + std::to_string(n) +
                                  " classes");
  return EvalReport::from_confusion(std::move(names), std::move(m));
}

}  // namespace tml
