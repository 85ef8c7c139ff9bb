/* Copyright 2026 The partlang Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "partlang/head.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "partlang/error.hpp"
#include "partlang/synthetic.hpp"

namespace partlang {
namespace {

using testing::RandomMatrix;

ProjectionParams Projection(Matrix weight, Matrix bias) {
  ProjectionParams p;
  p.weight = std::move(weight);
  p.bias = std::move(bias);
  p.logit_scale_raw = Matrix::Constant(1, 1, 0.0);
  p.logit_shift = Matrix::Zero(1, 1);
  return p;
}

MLPParams RandomMlp(std::size_t in, std::size_t hidden, std::size_t out, std::mt19937_64& rng) {
  MLPParams m;
  const std::size_t dims[4] = {in, hidden, hidden, out};
  for (int l = 0; l < 3; ++l) {
    m.layers[l].weight = RandomMatrix(dims[l], dims[l + 1], rng, 0.5);
    m.layers[l].bias = RandomMatrix(1, dims[l + 1], rng, 0.1);
  }
  return m;
}

MLPParams ZeroMlp(std::size_t in, std::size_t hidden, std::size_t out) {
  MLPParams m;
  const std::size_t dims[4] = {in, hidden, hidden, out};
  for (int l = 0; l < 3; ++l) {
    m.layers[l].weight = Matrix::Zero(dims[l], dims[l + 1]);
    m.layers[l].bias = Matrix::Zero(1, dims[l + 1]);
  }
  return m;
}

TEST(ProjectPatchesTest, IdentityAndZero) {
  std::mt19937_64 rng(1);
  const Matrix x = RandomMatrix(5, 4, rng);
  EXPECT_TRUE(ProjectPatches(x, Projection(Matrix::Identity(4, 4), Matrix::Zero(1, 4))) == x);
  Matrix bias(1, 3);
  bias << 1, 2, 3;
  const Matrix out = ProjectPatches(x, Projection(Matrix::Zero(4, 3), bias));
  for (Eigen::Index i = 0; i < out.rows(); ++i) EXPECT_TRUE(out.row(i) == bias);
}

TEST(ProjectPatchesTest, MatchesMatmulOracle) {
  std::mt19937_64 rng(2);
  const Matrix x = RandomMatrix(3, 4, rng);
  const Matrix w = RandomMatrix(4, 2, rng);
  const Matrix out = ProjectPatches(x, Projection(w, Matrix::Zero(1, 2)));
  EXPECT_LT((out - oracle::Matmul(x, w)).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_THROW(ProjectPatches(RandomMatrix(3, 5, rng), Projection(w, Matrix::Zero(1, 2))), ShapeError);
}

TEST(SelectPartsTest, Examples) {
  Matrix s(3, 2);
  s << 0.9, 0.1, 0.2, 0.8, 0.5, 0.5;
  EXPECT_EQ(SelectFromSimilarity(s).indices, (std::vector<int>{0, 1}));
  EXPECT_EQ(SelectFromSimilarity(Matrix::Constant(4, 3, 0.25)).indices, (std::vector<int>{0, 0, 0}));
}

TEST(SelectPartsTest, ExhaustiveOracle) {
  std::mt19937_64 rng(3);
  const Matrix projected = RandomMatrix(50, 16, rng);
  const Matrix names = RandomMatrix(12, 16, rng);
  const PartSelection sel = SelectParts(projected, names);
  for (Eigen::Index j = 0; j < 12; ++j) {
    std::vector<double> cos(50);
    for (Eigen::Index i = 0; i < 50; ++i) {
      cos[i] = projected.row(i).dot(names.row(j)) / (projected.row(i).norm() * names.row(j).norm());
    }
    EXPECT_EQ(sel.indices[j], oracle::FirstArgmax(cos));
  }
}

TEST(SelectPartsTest, DotModeDiffersFromCosineOnScaledRows) {
  Matrix projected(2, 2);
  projected << 1, 0, 3, 3;  // row 1 is longer but at 45 degrees
  Matrix names(1, 2);
  names << 1, 0;
  EXPECT_EQ(SelectParts(projected, names, SimilarityMode::kCosine).indices[0], 0);
  EXPECT_EQ(SelectParts(projected, names, SimilarityMode::kDot).indices[0], 1);
}

TEST(SelectPartsTest, RowPermutationEquivariance) {
  std::mt19937_64 rng(4);
  const Matrix projected = RandomMatrix(20, 8, rng);
  const Matrix names = RandomMatrix(12, 8, rng);
  std::vector<int> perm(20);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Matrix permuted(20, 8);
  for (int i = 0; i < 20; ++i) permuted.row(i) = projected.row(perm[i]);
  const PartSelection a = SelectParts(projected, names);
  const PartSelection b = SelectParts(permuted, names);
  for (int j = 0; j < 12; ++j) EXPECT_EQ(perm[b.indices[j]], a.indices[j]);
}

TEST(SelectionLogitsTest, ScaleIsEluPlusOneAndArgmaxUnchanged) {
  std::mt19937_64 rng(5);
  const Matrix s = RandomMatrix(10, 3, rng);
  ProjectionParams p = Projection(Matrix::Identity(2, 2), Matrix::Zero(1, 2));
  p.logit_scale_raw(0, 0) = -0.5;
  p.logit_shift(0, 0) = 0.3;
  const double scale = std::exp(-0.5);
  EXPECT_NEAR(p.logit_scale(), scale, 1e-15);
  const Matrix l = SelectionLogits(s, p);
  EXPECT_LT((l - ((s.array() + 0.3) * scale).matrix()).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_EQ(SelectFromSimilarity(l), SelectFromSimilarity(s));
}

TEST(PartScoresTest, DotProducts) {
  // Identity-like MLP is not available, so check the dot stage against the
  // MLP output directly.
  std::mt19937_64 rng(6);
  const MLPParams mlp = RandomMlp(5, 7, 8, rng);
  const Matrix selected = RandomMatrix(12, 5, rng);
  const Matrix t = RandomMatrix(24, 8, rng);
  const Matrix scores = PartScores(selected, mlp, t);
  ASSERT_EQ(scores.rows(), 12);
  ASSERT_EQ(scores.cols(), 24);
  const Matrix s = MlpForward(mlp, selected);
  EXPECT_LT((scores - oracle::Matmul(s, t.transpose())).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(MlpTest, MatchesHandWrittenForward) {
  std::mt19937_64 rng(7);
  const MLPParams mlp = RandomMlp(3, 4, 2, rng);
  const Matrix x = RandomMatrix(2, 3, rng);
  Matrix h = x;
  for (int l = 0; l < 3; ++l) {
    h = oracle::Matmul(h, mlp.layers[l].weight);
    for (Eigen::Index i = 0; i < h.rows(); ++i) h.row(i) += mlp.layers[l].bias;
    if (l < 2) h = h.unaryExpr([](double v) { return 0.5 * v * (1 + std::erf(v / std::sqrt(2.0))); });
  }
  EXPECT_LT((MlpForward(mlp, x) - h).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ClassifyTest, Examples) {
  Matrix a(1, 2);
  a << 1.0, 0.0;
  const ClassLogits la = Classify(a);
  EXPECT_EQ(la.logits(0), 1.0);
  EXPECT_EQ(la.logits(1), 0.0);
  EXPECT_EQ(la.prediction, 0);

  // Columns: c0p0 c0p1 c1p0 c1p1.
  Matrix b = Matrix::Zero(2, 4);
  b(0, 0) = 0.5;
  b(1, 1) = 0.2;
  b(0, 2) = 0.4;
  b(1, 3) = 0.4;
  const ClassLogits lb = Classify(b);
  EXPECT_NEAR(lb.logits(0), 0.7, 1e-15);
  EXPECT_NEAR(lb.logits(1), 0.8, 1e-15);
  EXPECT_EQ(lb.prediction, 1);
}

TEST(ClassifyTest, TwoHundredClassOracleIsExact) {
  std::mt19937_64 rng(8);
  const Matrix scores = RandomMatrix(12, 12 * 200, rng);
  const ClassLogits l = Classify(scores);
  const std::vector<double> want = oracle::DiagonalSums(scores);
  for (int c = 0; c < 200; ++c) EXPECT_EQ(l.logits(c), want[c]) << "class " << c;
  EXPECT_EQ(l.prediction, oracle::FirstArgmax(want));
}

TEST(ClassifyTest, TiesAndShapes) {
  EXPECT_EQ(Classify(Matrix::Zero(3, 9)).prediction, 0);
  Vector v(4);
  v << 1, 3, 3, 2;
  EXPECT_EQ(ArgmaxLowest(v), 1);
  EXPECT_THROW(Classify(Matrix::Zero(12, 25)), ShapeError);
}

TEST(ClassifyTest, UniformShiftKeepsPrediction) {
  std::mt19937_64 rng(9);
  const Matrix scores = RandomMatrix(12, 12 * 10, rng);
  const Matrix shifted = (scores.array() + 3.25).matrix();
  EXPECT_EQ(Classify(scores).prediction, Classify(shifted).prediction);
}

TEST(PredictBoxesTest, ZeroWeightsGiveHalf) {
  const Matrix selected = Matrix::Ones(12, 6);
  for (const BoundingBox& b : PredictBoxes(selected, ZeroMlp(6, 5, 4))) {
    EXPECT_EQ(b, (BoundingBox{0.5, 0.5, 0.5, 0.5}));
  }
}

TEST(PredictBoxesTest, DistinctInputsDistinctBoxesInUnitRange) {
  std::mt19937_64 rng(10);
  const MLPParams mlp = RandomMlp(6, 5, 4, rng);
  const auto boxes = PredictBoxes(RandomMatrix(2, 6, rng), mlp);
  EXPECT_NE(boxes[0], boxes[1]);
  for (const BoundingBox& b : boxes) EXPECT_TRUE(b.IsNormalized());
}

class ExplainTest : public ::testing::Test {
 protected:
  void SetUp() override {
    SyntheticConfig sc;
    sc.num_classes = 4;
    world_ = std::make_shared<SyntheticWorld>(sc);
    text_ = world_->MakeTextEncoder();
    ModelConfig mc;
    mc.seed = 3;
    model_ = std::make_shared<Model>(Model::Initialize(mc));
    classifier_ = std::make_unique<Classifier>(model_, text_, std::make_shared<SyntheticImageEncoder>(world_));
  }
  std::shared_ptr<SyntheticWorld> world_;
  std::shared_ptr<TableTextEncoder> text_;
  std::shared_ptr<Model> model_;
  std::unique_ptr<Classifier> classifier_;
};

TEST_F(ExplainTest, PartsSumToTotalAndSorted) {
  const DescriptorBank bank = classifier_->EncodeLibrary(std::make_shared<DescriptorLibrary>(world_->Library()));
  const auto ex = classifier_->Explain(world_->Sample(1, 0).raw_patches, bank);
  ASSERT_EQ(ex.size(), 4u);
  double prob = 0;
  for (std::size_t i = 0; i < ex.size(); ++i) {
    ASSERT_EQ(ex[i].per_part.size(), 12u);
    double sum = 0;
    for (const auto& p : ex[i].per_part) sum += p.score;
    EXPECT_NEAR(sum, ex[i].total_logit, 1e-9 * std::max(1.0, std::abs(sum)));
    EXPECT_EQ(ex[i].per_part[1].part, "beak");
    EXPECT_EQ(ex[i].per_part[1].phrase, bank.library->phrase(ex[i].class_index, 1));
    if (i > 0) {
      EXPECT_GE(ex[i - 1].softmax_prob, ex[i].softmax_prob);
    }
    prob += ex[i].softmax_prob;
  }
  EXPECT_NEAR(prob, 1.0, 1e-12);
}

TEST_F(ExplainTest, SingleClassHasProbabilityOne) {
  const DescriptorBank bank = classifier_->EncodeLibrary(std::make_shared<DescriptorLibrary>(world_->Library(1)));
  const auto ex = classifier_->Explain(world_->Sample(0, 0).raw_patches, bank);
  ASSERT_EQ(ex.size(), 1u);
  EXPECT_EQ(ex[0].softmax_prob, 1.0);
}

TEST_F(ExplainTest, EmptyLibraryIsRejected) {
  auto empty = std::make_shared<DescriptorLibrary>(LoadLibrary(
      R"({"parts": ["back", "beak", "belly", "breast", "crown", "forehead", "eyes", "legs", "wings", "nape", "tail", "throat"], "classes": {}})"));
  EXPECT_THROW(classifier_->EncodeLibrary(empty), ValidationError);
}

TEST_F(ExplainTest, ClassPermutationEquivariance) {
  const DescriptorLibrary lib = world_->Library();
  std::vector<std::pair<std::string, std::map<std::string, std::string>>> reversed;
  for (std::size_t c = lib.num_classes(); c-- > 0;) {
    std::map<std::string, std::string> m;
    for (std::size_t j = 0; j < lib.num_parts(); ++j) m[lib.vocabulary().name(j)] = lib.phrase(c, j);
    reversed.emplace_back(lib.class_name(c), m);
  }
  const auto rev = std::make_shared<DescriptorLibrary>(DescriptorLibrary::Create(lib.vocabulary(), reversed));
  const Matrix x = world_->Sample(2, 3).raw_patches;
  const InferenceResult a = classifier_->Infer(x, classifier_->EncodeLibrary(std::make_shared<DescriptorLibrary>(lib)).embeddings);
  const InferenceResult b = classifier_->Infer(x, classifier_->EncodeLibrary(rev).embeddings);
  for (Eigen::Index c = 0; c < 4; ++c) EXPECT_NEAR(a.logits.logits(c), b.logits.logits(3 - c), 1e-12);
}

TEST(ModelTest, ParameterCountIndependentOfClasses) {
  ModelConfig mc;
  const Model m = Model::Initialize(mc);
  const std::size_t di = mc.image_dim, dt = mc.text_dim, dh = mc.hidden_dim;
  const std::size_t mlp_common = di * dh + dh + dh * dh + dh;
  const std::size_t want = di * di + di + di * dt + dt + 2 + mlp_common + dh * dt + dt + mlp_common + dh * 4 + 4;
  EXPECT_EQ(m.ParameterCount(), want);
  // Nothing in the config refers to the class count; the same model serves
  // libraries of any size.
  SyntheticConfig sc;
  sc.num_classes = 3;
  auto world = std::make_shared<SyntheticWorld>(sc);
  Classifier clf(std::make_shared<Model>(m), world->MakeTextEncoder(), std::make_shared<SyntheticImageEncoder>(world));
  for (std::size_t n : {1u, 3u}) {
    const auto bank = clf.EncodeLibrary(std::make_shared<DescriptorLibrary>(world->Library(n)));
    EXPECT_EQ(clf.Infer(world->Sample(0, 0).raw_patches, bank.embeddings).logits.logits.size(), static_cast<Eigen::Index>(n));
  }
  EXPECT_EQ(m.ParameterCount(), want);
}

TEST(ModelTest, InitialAdapterIsIdentity) {
  const Model m = Model::Initialize(ModelConfig{});
  std::mt19937_64 rng(11);
  const Matrix x = RandomMatrix(4, 32, rng);
  EXPECT_TRUE(EncodePatches(x, m.params().encoder) == x);
  EXPECT_NEAR(m.params().projection.logit_scale(), 10.0, 1e-12);
}

}  // namespace
}  // namespace partlang
