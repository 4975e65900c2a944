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

#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "oracles.hpp"
#include "tml/eval.hpp"

using namespace tml;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& stem) {
  static int counter = 0;
  return fs::temp_directory_path() /
         ("tml_eval_" + std::to_string(::getpid()) + "_" + std::to_string(counter++) + "_" + stem);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Constant 3x2x2 images; the value is the whole signal.
Dataset valued(const std::vector<std::vector<float>>& per_class, std::vector<std::string> names) {
  Dataset ds;
  ds.class_names = std::move(names);
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    for (float v : per_class[c]) ds.images.push_back({TensorF({3, 2, 2}, v), c, ""});
  }
  return ds;
}

// Embeds a constant image as (value, 0).
TensorF value_embed(const TensorF& images) {
  const std::size_t n = images.dim(0), stride = images.size() / n;
  TensorF out({n, 2});
  for (std::size_t i = 0; i < n; ++i) out(i, 0) = images[i * stride];
  return out;
}

// Embeds a constant image with value c as the one-hot of class c.
TensorF onehot_embed(const TensorF& images) {
  const std::size_t n = images.dim(0), stride = images.size() / n;
  TensorF out({n, 3});
  for (std::size_t i = 0; i < n; ++i) out(i, std::size_t(images[i * stride])) = 1.0f;
  return out;
}

}  // namespace

TEST(Tally, MatchesHandCountedOracle) {
  Rng rng(4);
  std::vector<std::size_t> truth(200), pred(200);
  std::int64_t oracle[4][4] = {};
  for (std::size_t i = 0; i < 200; ++i) {
    truth[i] = rng.index(4);
    pred[i] = rng.uniform() < 0.7 ? truth[i] : rng.index(4);
    ++oracle[truth[i]][pred[i]];
  }
  const auto r = tally(truth, pred, {"a", "b", "c", "d"});
  std::int64_t diag = 0;
  for (int i = 0; i < 4; ++i) {
    diag += oracle[i][i];
    for (int j = 0; j < 4; ++j) EXPECT_EQ(r.confusion(i, j), oracle[i][j]);
  }
  EXPECT_EQ(r.total(), 200);
  EXPECT_DOUBLE_EQ(r.accuracy, double(diag) / 200.0);
  EXPECT_THROW(tally(truth, std::vector<std::size_t>(3), {"a"}), DimensionError);
  EXPECT_THROW(tally(std::vector<std::size_t>{5}, std::vector<std::size_t>{0}, {"a"}), ContractError);
}

TEST(Tally, AccuracyFromCounts) {
  ConfusionMatrix m(2, 2);
  m << 900, 10, 25, 5;
  const auto r = EvalReport::from_confusion({"p", "q"}, m);
  EXPECT_EQ(r.total(), 940);
  EXPECT_DOUBLE_EQ(r.accuracy, 905.0 / 940.0);
  ConfusionMatrix big = ConfusionMatrix::Zero(2, 2);
  big(0, 0) = 905;
  big(1, 0) = 30;
  EXPECT_DOUBLE_EQ(EvalReport::from_confusion({"p", "q"}, big).accuracy, 905.0 / 935.0);
  EXPECT_THROW(EvalReport::from_confusion({"p"}, big), DimensionError);
}

TEST(Evaluate, PerfectPredictorGivesIdentityConfusion) {
  const Dataset test = valued({{0, 0, 0}, {1, 1}, {2, 2, 2, 2}}, {"a", "b", "c"});
  // Hand-built head: identity weights, so logits equal the one-hot embedding.
  std::vector<TensorF> params{TensorF({3, 3}, std::vector<float>{1, 0, 0, 0, 1, 0, 0, 0, 1}), TensorF({3}),
                              TensorF({3, 3}, std::vector<float>{1, 0, 0, 0, 1, 0, 0, 0, 1}), TensorF({3})};
  const MlpHead head(params, {"a", "b", "c"});
  const auto r = evaluate(onehot_embed, head, test);
  ConfusionMatrix expect = ConfusionMatrix::Zero(3, 3);
  expect.diagonal() << 3, 2, 4;
  EXPECT_EQ(r.confusion, expect);
  EXPECT_DOUBLE_EQ(r.accuracy, 1.0);

  const auto index = build_index(onehot_embed, test);
  const auto rk = evaluate(onehot_embed, index, 1, test);
  EXPECT_EQ(rk.confusion, expect);
}

TEST(Evaluate, ClassTableMismatchAndEmptyIndex) {
  const Dataset test = valued({{0}, {1}}, {"a", "zzz"});
  std::vector<TensorF> params{TensorF({3, 3}), TensorF({3}), TensorF({3, 2}), TensorF({2})};
  const MlpHead head(params, {"a", "b"});
  try {
    evaluate(onehot_embed, head, test);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("zzz"), std::string::npos);
  }
  KnnIndex empty(3);
  EXPECT_THROW(evaluate(onehot_embed, empty, 1, test), StateError);
}

TEST(Evaluate, TestClassesMapByNameIntoClassifierTable) {
  // The test set lists classes in a different order and omits one.
  const Dataset train = valued({{0}, {1}, {2}}, {"a", "b", "c"});
  const Dataset test = valued({{2, 2}, {0}}, {"c", "a"});
  const auto r = evaluate(onehot_embed, build_index(onehot_embed, train), 1, test);
  EXPECT_EQ(r.class_names, train.class_names);
  EXPECT_EQ(r.confusion(2, 2), 2);
  EXPECT_EQ(r.confusion(0, 0), 1);
  EXPECT_EQ(r.total(), 3);
}

TEST(FewShot, HandTalliedTwoNovelClasses) {
  // First two images of each class are the shots.
  //   A held out: 0.45 -> nearest shot A 0.1 (0.35) vs B 0.9 (0.45): A
  //               0.05 -> A
  //   B held out: 0.95 -> B
  //               0.40 -> A 0.1 (0.30) vs B 0.9 (0.50): A, wrong
  const Dataset novel = valued({{0.0f, 0.1f, 0.45f, 0.05f}, {1.0f, 0.9f, 0.95f, 0.4f}}, {"A", "B"});
  FewShotConfig cfg;
  cfg.shots = 2;
  const auto r = fewshot_enroll_eval(value_embed, novel, cfg);
  ConfusionMatrix expect(2, 2);
  expect << 2, 0, 1, 1;
  EXPECT_EQ(r.confusion, expect);
  EXPECT_DOUBLE_EQ(r.accuracy, 0.75);

  // A base class sitting at 0.42 captures the two mid-range queries.
  const Dataset base = valued({{0.42f}}, {"base"});
  const auto rb = fewshot_enroll_eval(value_embed, novel, cfg, &base);
  ASSERT_EQ(rb.class_names, (std::vector<std::string>{"A", "B", "base"}));
  EXPECT_EQ(rb.confusion(0, 2), 1);
  EXPECT_EQ(rb.confusion(1, 2), 1);
  EXPECT_EQ(rb.confusion(0, 0), 1);
  EXPECT_EQ(rb.confusion(1, 1), 1);
}

TEST(FewShot, Errors) {
  const Dataset small = valued({{0, 0, 0}, {1, 1, 1, 1}}, {"A", "B"});
  FewShotConfig cfg;
  cfg.shots = 0;
  EXPECT_THROW(fewshot_enroll_eval(value_embed, small, cfg), ContractError);
  cfg.shots = 3;
  EXPECT_THROW(fewshot_enroll_eval(value_embed, small, cfg), ContractError);
  cfg.shots = 2;
  EXPECT_THROW(fewshot_enroll_eval(value_embed, small, cfg), DatasetError);
}

TEST(Pca, PointsOnALine) {
  TensorF e({5, 3});
  for (std::size_t i = 0; i < 5; ++i) {
    const float t = float(i) - 2.0f;
    e(i, 0) = t;
    e(i, 1) = -2.0f * t;
    e(i, 2) = 0.5f;
  }
  const auto p = pca_project(e);
  Eigen::Vector3d dir(1, -2, 0);
  dir.normalize();
  // Largest-magnitude entry (-2) is made positive.
  EXPECT_NEAR(p.components.col(0).dot(-dir), 1.0, 1e-9);
  EXPECT_NEAR(p.explained[0], 1.0, 1e-9);
  EXPECT_NEAR(p.explained[1], 0.0, 1e-9);
  EXPECT_NEAR(p.components.col(0).dot(p.components.col(1)), 0.0, 1e-12);
  EXPECT_NEAR(p.components.col(1).norm(), 1.0, 1e-12);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(p.coords(Eigen::Index(i), 1), 0.0, 1e-6);
}

TEST(Pca, MatchesEigenSolverOnRandomData) {
  Rng rng(21);
  // Anisotropic scales keep the top eigenvalues well separated.
  TensorF e({20, 8});
  const double scale[8] = {5, 3, 1, 0.8, 0.5, 0.3, 0.2, 0.1};
  for (std::size_t i = 0; i < 20; ++i)
    for (std::size_t j = 0; j < 8; ++j) e(i, j) = float(scale[j] * rng.normal());
  std::vector<std::size_t> labels(20, 1);
  const auto p = pca_project(e, labels);
  EXPECT_EQ(p.labels, labels);

  Eigen::MatrixXd x = e.matrix().cast<double>();
  x.rowwise() -= x.colwise().mean();
  const Eigen::MatrixXd cov = x.transpose() * x / 20.0;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  const Eigen::VectorXd u1 = es.eigenvectors().col(7), u2 = es.eigenvectors().col(6);
  EXPECT_NEAR(std::abs(p.components.col(0).dot(u1)), 1.0, 1e-6);
  EXPECT_NEAR(std::abs(p.components.col(1).dot(u2)), 1.0, 1e-6);
  const Eigen::Matrix2d gram = p.components.transpose() * p.components;
  EXPECT_TRUE(gram.isApprox(Eigen::Matrix2d::Identity(), 1e-8));
  EXPECT_NEAR(p.explained[0], es.eigenvalues()(7) / cov.trace(), 1e-6);
  EXPECT_NEAR(p.explained[1], es.eigenvalues()(6) / cov.trace(), 1e-6);
  EXPECT_GE(p.explained[0], p.explained[1]);
  // Projected coordinates are centred.
  EXPECT_NEAR(p.coords.col(0).mean(), 0.0, 1e-9);
  EXPECT_NEAR(p.coords.col(1).mean(), 0.0, 1e-9);
}

TEST(Pca, DeterministicAndErrors) {
  Rng rng(3);
  const TensorF e = oracle::random_tensor<float>({10, 4}, rng, -1.0, 1.0);
  const auto a = pca_project(e), b = pca_project(e);
  EXPECT_EQ(a.coords, b.coords);
  EXPECT_THROW(pca_project(TensorF({5, 3}, 0.7f)), DegenerateError);
  EXPECT_THROW(pca_project(TensorF({2, 3}, std::vector<float>{0, 1, 2, 3, 4, 5})), ContractError);
  EXPECT_THROW(pca_project(e, std::vector<std::size_t>{1, 2}), DimensionError);
}

TEST(SeparationRatio, HandComputed) {
  // Two pairs 1 apart, 10 apart across: inter mean is (10+11+9+10)/4 = 10.
  TensorF e({4, 1}, std::vector<float>{0, 1, 10, 11});
  const std::vector<std::size_t> labels{0, 0, 1, 1};
  EXPECT_DOUBLE_EQ(separation_ratio(e, labels), 10.0);
  EXPECT_THROW(separation_ratio(e, std::vector<std::size_t>{0, 1, 2, 3}), DegenerateError);
}

TEST(Csv, ConfusionGridAndRoundTrip) {
  ConfusionMatrix m(2, 2);
  m << 3, 1, 0, 4;
  const auto r = EvalReport::from_confusion({"cat", "dog, big"}, m);
  EXPECT_EQ(confusion_csv(r), "true\\predicted,cat,\"dog, big\"\ncat,3,1\n\"dog, big\",0,4\n");
  const auto path = temp_file("confusion.csv");
  export_confusion_csv(r, path);
  const auto back = read_confusion_csv(path);
  EXPECT_EQ(back.class_names, r.class_names);
  EXPECT_EQ(back.confusion, r.confusion);
  EXPECT_DOUBLE_EQ(back.accuracy, r.accuracy);
  const auto again = temp_file("confusion2.csv");
  export_confusion_csv(back, again);
  EXPECT_EQ(slurp(path), slurp(again));
  fs::remove(path);
  fs::remove(again);
}

TEST(Csv, SummaryWithOneRun) {
  const auto s = SplitSummary::from_accuracies({0.9});
  EXPECT_EQ(s.mean, 0.9);
  EXPECT_EQ(s.max, 0.9);
  EXPECT_EQ(summary_csv(s), "run,accuracy\n1,0.90000000000000002\nmean,0.90000000000000002\nmax,0.90000000000000002\n");
  EXPECT_THROW(SplitSummary::from_accuracies({}), ContractError);
  const auto many = SplitSummary::from_accuracies(std::vector<double>(16, 0.1));
  EXPECT_LE(many.mean, many.max);
}

TEST(Csv, ProjectionUsesClassNames) {
  TensorF e({3, 2}, std::vector<float>{0, 0, 1, 0, 0, 2});
  const auto p = pca_project(e, std::vector<std::size_t>{0, 1, 1});
  const auto path = temp_file("proj.csv");
  export_projection_csv(p, {"red", "blue"}, path);
  std::istringstream lines(slurp(path));
  std::string line;
  std::getline(lines, line);
  EXPECT_EQ(line, "x,y,label");
  int rows = 0;
  while (std::getline(lines, line)) {
    ++rows;
    EXPECT_EQ(line.substr(line.rfind(',') + 1), rows == 1 ? "red" : "blue");
  }
  EXPECT_EQ(rows, 3);
  fs::remove(path);
}

TEST(RepeatedSplits, SeedsAreDistinctAndDeterministic) {
  const auto a = derive_run_seeds(7, 16), b = derive_run_seeds(7, 16);
  EXPECT_EQ(a, b);
  std::vector<std::uint64_t> sorted = a;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(std::unique(sorted.begin(), sorted.end()), sorted.end());
  EXPECT_NE(derive_run_seeds(8, 1), std::vector<std::uint64_t>{a[0]});
}

TEST(RepeatedSplits, TinyRunReportsEveryRun) {
  SyntheticSpec spec;
  spec.classes = 3;
  spec.per_class = 6;
  spec.size = 8;
  const Dataset ds = generate_synthetic(spec);
  RepeatedEvalConfig cfg;
  cfg.embedder.input_h = cfg.embedder.input_w = 8;
  cfg.embedder.conv_channels = {4};
  cfg.embedder.embedding_dim = 4;
  cfg.train.epochs = 2;
  cfg.train.P = 3;
  cfg.train.K = 2;
  cfg.train.batch = 6;
  const auto seeds = derive_run_seeds(1, 2);
  std::vector<std::size_t> seen;
  const auto s = repeated_splits(ds, cfg, seeds, [&](std::size_t run, std::uint64_t seed, const EvalReport& r) {
    seen.push_back(run);
    EXPECT_EQ(seed, seeds[run - 1]);
    EXPECT_EQ(r.total(), 3);  // round(0.8 * 6) = 5 train, 1 held out per class
  });
  EXPECT_EQ(seen, (std::vector<std::size_t>{1, 2}));
  ASSERT_EQ(s.accuracies.size(), 2u);
  const auto again = repeated_splits(ds, cfg, seeds);
  EXPECT_EQ(again.accuracies, s.accuracies);
  cfg.classifier = ClassifierKind::mlp;
  cfg.head.epochs = 2;
  cfg.head.hidden = 8;
  EXPECT_NO_THROW(repeated_splits(ds, cfg, std::span<const std::uint64_t>(seeds).first(1)));
}

TEST(ClassifierKind, Parse) {
  EXPECT_EQ(parse_classifier("knn"), ClassifierKind::knn);
  EXPECT_EQ(parse_classifier("mlp"), ClassifierKind::mlp);
  EXPECT_EQ(to_string(ClassifierKind::mlp), "mlp");
  EXPECT_THROW(parse_classifier("svm"), ConfigError);
}
