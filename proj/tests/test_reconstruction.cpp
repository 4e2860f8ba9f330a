#include "mfda/reconstruction.hpp"

#include <gtest/gtest.h>

#include <numeric>

using namespace mfda;

namespace {

AnalogLibrary line_library(std::initializer_list<double> keys, std::initializer_list<double> vals) {
  Matrix k(static_cast<Index>(keys.size()), 1), v(static_cast<Index>(vals.size()), 1);
  Index i = 0;
  for (double x : keys) k(i++, 0) = x;
  i = 0;
  for (double x : vals) v(i++, 0) = x;
  return make_library(k, v, LibraryRole::kReconstruction);
}

Matrix random_matrix(Index rows, Index cols, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return Matrix::NullaryExpr(rows, cols, [&] { return n(rng); });
}

// Exhaustive scan ordered by (distance, index).
std::vector<Neighbor> scan(const Matrix& keys, const Vector& q, Index count) {
  std::vector<std::pair<double, Index>> all;
  for (Index i = 0; i < keys.rows(); ++i)
    all.emplace_back((keys.row(i).transpose() - q).squaredNorm(), i);
  std::sort(all.begin(), all.end());
  std::vector<Neighbor> out;
  for (Index i = 0; i < count; ++i) out.push_back({all[i].second, std::sqrt(all[i].first)});
  return out;
}

}  // namespace

TEST(Knn, ExactKeyAtDistanceZero) {
  const AnalogLibrary lib = line_library({0, 1, 2}, {0, 0, 0});
  const auto nb = knn_query(lib, Vector::Constant(1, 1.0), 1);
  ASSERT_EQ(nb.size(), 1u);
  EXPECT_EQ(nb[0].index, 1);
  EXPECT_EQ(nb[0].distance, 0.0);
}

TEST(Knn, CollinearHandCase) {
  const AnalogLibrary lib = line_library({0, 1, 2}, {0, 0, 0});
  const auto nb = knn_query(lib, Vector::Constant(1, 0.9), 2);
  ASSERT_EQ(nb.size(), 2u);
  EXPECT_EQ(nb[0].index, 1);
  EXPECT_EQ(nb[1].index, 0);
  EXPECT_NEAR(nb[0].distance, 0.1, 1e-15);
  EXPECT_NEAR(nb[1].distance, 0.9, 1e-15);
}

TEST(Knn, TiesBrokenByInsertionIndex) {
  const AnalogLibrary lib = line_library({2, -1, 1, 1, -1}, {0, 0, 0, 0, 0});
  const auto nb = knn_query(lib, Vector::Zero(1), 4);
  std::vector<Index> idx;
  for (const auto& n : nb) idx.push_back(n.index);
  EXPECT_EQ(idx, (std::vector<Index>{1, 2, 3, 4}));
}

TEST(Knn, MatchesExhaustiveScan) {
  Rng rng = make_rng(7, 0, StreamRole::kMisc);
  const Matrix keys = random_matrix(1000, 6, rng);
  const AnalogLibrary lib = make_library(keys, Matrix::Zero(1000, 1), LibraryRole::kTransition);
  const Matrix queries = random_matrix(25, 6, rng);
  const auto batch = knn_query_batch(lib, queries, 40);
  for (Index j = 0; j < queries.rows(); ++j) {
    const auto expect = scan(keys, queries.row(j).transpose(), 40);
    for (std::size_t i = 0; i < expect.size(); ++i) {
      EXPECT_EQ(batch[j][i].index, expect[i].index);
      EXPECT_DOUBLE_EQ(batch[j][i].distance, expect[i].distance);
    }
  }
}

TEST(Knn, TooManyNeighboursIsRejected) {
  const AnalogLibrary lib = line_library({0, 1}, {0, 0});
  EXPECT_THROW(knn_query(lib, Vector::Zero(1), 3), ContractViolation);
}

TEST(KernelWeights, HandEvaluated) {
  const auto w = kernel_weights({{0, 0.0}, {1, 1.0}}, 1.0);
  EXPECT_NEAR(w.weights[0], 1.0 / (1.0 + std::exp(-1.0)), 1e-12);
  EXPECT_NEAR(w.weights[0], 0.7311, 1e-4);
  EXPECT_NEAR(w.weights[1], 0.2689, 1e-4);
  EXPECT_FALSE(w.uniform_fallback);
}

TEST(KernelWeights, UniformLimits) {
  const auto eq = kernel_weights({{0, 2.0}, {1, 2.0}, {2, 2.0}, {3, 2.0}}, 5.0);
  for (Index i = 0; i < 4; ++i) EXPECT_NEAR(eq.weights[i], 0.25, 1e-15);
  const auto flat = kernel_weights({{0, 0.1}, {1, 3.0}, {2, 7.0}}, 1e-12);
  for (Index i = 0; i < 3; ++i) EXPECT_NEAR(flat.weights[i], 1.0 / 3.0, 1e-9);
}

TEST(KernelWeights, PositiveAndNormalised) {
  Rng rng = make_rng(2, 0, StreamRole::kMisc);
  std::uniform_real_distribution<double> u(0.0, 50.0);
  for (int t = 0; t < 200; ++t) {
    std::vector<Neighbor> nb;
    for (Index i = 0; i < 10; ++i) nb.push_back({i, u(rng)});
    const auto w = kernel_weights(nb, median_lambda(nb) * (1 + t));
    EXPECT_NEAR(w.weights.sum(), 1.0, 1e-12);
    EXPECT_GT(w.weights.minCoeff(), 0.0);
  }
}

TEST(LocallyConstant, SingleNeighbourIsNearestValue) {
  const AnalogLibrary lib = line_library({0, 1, 2}, {5, 7, 9});
  EXPECT_EQ(lc_apply(lib, Vector::Constant(1, 1.8), 1).value[0], 9.0);
}

TEST(LocallyConstant, UniformWeightsAverage) {
  AnalogLibrary lib = line_library({0, 1, 2, 10}, {5, 7, 9, 100});
  lib.weighting = Weighting::kUniform;
  EXPECT_NEAR(lc_apply(lib, Vector::Constant(1, 0.5), 3).value[0], 7.0, 1e-14);
}

TEST(LocallyConstant, LargeLambdaConcentrates) {
  AnalogLibrary lib = line_library({0, 1, 2}, {5, 7, 9});
  lib.lambda = 1e3;
  const double v = lc_apply(lib, Vector::Constant(1, 1.0), 3).value[0];
  EXPECT_LT(std::abs(v - 7.0) / 7.0, 1e-3);
}

TEST(LocallyConstant, StaysInConvexHull) {
  Rng rng = make_rng(4, 0, StreamRole::kMisc);
  const AnalogLibrary lib =
      make_library(random_matrix(300, 3, rng), random_matrix(300, 2, rng), LibraryRole::kReconstruction);
  for (int t = 0; t < 50; ++t) {
    const Vector q = random_matrix(1, 3, rng).transpose();
    const auto nb = knn_query(lib, q, 12);
    const Vector v = lc_from_neighbors(lib, nb).value;
    for (Index c = 0; c < 2; ++c) {
      double lo = 1e300, hi = -1e300;
      for (const auto& n : nb) {
        lo = std::min(lo, lib.values(n.index, c));
        hi = std::max(hi, lib.values(n.index, c));
      }
      EXPECT_GE(v[c], lo - 1e-12);
      EXPECT_LE(v[c], hi + 1e-12);
    }
  }
}

TEST(LocallyLinear, RecoversAffineMap) {
  Rng rng = make_rng(5, 0, StreamRole::kMisc);
  const Matrix keys = random_matrix(200, 4, rng);
  const Matrix a = random_matrix(2, 4, rng);
  const Vector b = random_matrix(2, 1, rng);
  const Matrix vals = (keys * a.transpose()).rowwise() + b.transpose();
  const AnalogLibrary lib = make_library(keys, vals, LibraryRole::kReconstruction);
  for (int t = 0; t < 20; ++t) {
    const Vector q = random_matrix(4, 1, rng);
    const AnalogResult r = ll_apply(lib, q, 30);
    EXPECT_FALSE(r.fallback);
    const Vector expect = a * q + b;
    EXPECT_LT((r.value - expect).norm() / (1.0 + expect.norm()), 1e-8);
  }
}

TEST(LocallyLinear, ConstantValues) {
  Rng rng = make_rng(6, 0, StreamRole::kMisc);
  const AnalogLibrary lib = make_library(random_matrix(50, 3, rng), Matrix::Constant(50, 2, 4.25),
                                         LibraryRole::kReconstruction);
  const Vector v = ll_apply(lib, Vector::Zero(3), 20).value;
  EXPECT_NEAR(v[0], 4.25, 1e-10);
  EXPECT_NEAR(v[1], 4.25, 1e-10);
}

TEST(LocallyLinear, HandRegression) {
  AnalogLibrary lib = line_library({0, 1, 2}, {0, 2, 4});
  lib.weighting = Weighting::kUniform;
  EXPECT_NEAR(ll_apply(lib, Vector::Constant(1, 1.5), 3).value[0], 3.0, 1e-8);
}

TEST(LocallyLinear, DegenerateKeysGiveWeightedMean) {
  // Identical keys with differing values: the slope is undetermined.
  const AnalogLibrary lib = line_library({1, 1, 1}, {0, 3, 6});
  const AnalogResult r = ll_apply(lib, Vector::Constant(1, 1.0), 3);
  EXPECT_TRUE(std::isfinite(r.value[0]));
  EXPECT_NEAR(r.value[0], 3.0, 1e-6);
}

TEST(Regressor, LearnsLinearMap) {
  Rng rng = make_rng(8, 0, StreamRole::kMisc);
  ReconstructionDataset ds;
  ds.inputs = random_matrix(400, 3, rng);
  Matrix a(2, 3);
  a << 0.5, -1.0, 0.25, 1.5, 0.0, -0.75;
  ds.targets = ds.inputs * a.transpose();
  RegressorSpec spec;
  spec.hidden = {16};
  spec.activation = Activation::kIdentity;
  spec.learning_rate = 1e-2;
  spec.epochs = 300;
  spec.batch_size = 0;
  spec.seed = 3;
  const RegressorSpec trained = train_regressor(ds, spec);
  EXPECT_LT(trained.final_mse, 1e-4);
  const Matrix held = random_matrix(50, 3, rng);
  const Matrix expect = held * a.transpose();
  const Matrix pred = predict_regressor_batch(trained, held);
  EXPECT_LT((pred - expect).norm() / expect.norm(), 1e-2);
}

TEST(Regressor, FullBatchLossDecreases) {
  Rng rng = make_rng(9, 0, StreamRole::kMisc);
  ReconstructionDataset ds;
  ds.inputs = random_matrix(200, 2, rng);
  ds.targets = ds.inputs.col(0) - 2.0 * ds.inputs.col(1);
  RegressorSpec spec;
  spec.hidden = {8};
  spec.activation = Activation::kIdentity;
  spec.optimizer = "sgd";
  spec.learning_rate = 1e-2;
  spec.final_lr_fraction = 1.0;
  spec.batch_size = 0;
  spec.epochs = 200;
  const RegressorSpec trained = train_regressor(ds, spec);
  for (std::size_t i = 1; i < trained.loss_history.size(); ++i)
    EXPECT_LE(trained.loss_history[i], trained.loss_history[i - 1] + 1e-15) << i;
}

TEST(Regressor, ConstantDataset) {
  ReconstructionDataset ds;
  ds.inputs = Matrix::Constant(32, 3, 0.4);
  ds.targets = Matrix::Constant(32, 2, -1.5);
  RegressorSpec spec = RegressorSpec::defaults_for(3);
  const RegressorSpec trained = train_regressor(ds, spec);
  EXPECT_LT(trained.final_mse, 1e-10);
  const Vector y = predict_regressor(trained, Vector::Constant(3, 0.4));
  EXPECT_NEAR(y[0], -1.5, 1e-5);
  EXPECT_NEAR(y[1], -1.5, 1e-5);
}

TEST(Regressor, DeterministicAndFinite) {
  Rng rng = make_rng(10, 0, StreamRole::kMisc);
  ReconstructionDataset ds;
  ds.inputs = random_matrix(100, 4, rng);
  ds.targets = ds.inputs.array().sin().matrix().leftCols(2);
  RegressorSpec spec = RegressorSpec::defaults_for(4);
  spec.epochs = 20;
  spec.seed = 42;
  const RegressorSpec a = train_regressor(ds, spec);
  const RegressorSpec b = train_regressor(ds, spec);
  EXPECT_EQ(a.loss_history, b.loss_history);
  const Vector q = Vector::Zero(4);
  EXPECT_EQ(predict_regressor(a, q), predict_regressor(b, q));
  EXPECT_TRUE(predict_regressor(a, q).allFinite());
}

TEST(Regressor, UntrainedIsRejected) {
  EXPECT_THROW(predict_regressor(RegressorSpec{}, Vector::Zero(2)), ContractViolation);
}
