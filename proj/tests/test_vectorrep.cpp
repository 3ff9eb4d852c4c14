#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "test_support.hpp"
#include "vbev/vectorrep.hpp"

using namespace vbev;
using T = double;

namespace {

std::vector<VectorCell> dummy_groups(std::size_t n) { return std::vector<VectorCell>(n, {Axis::x, 0}); }

Tensor<T> random_coords(std::size_t n, std::size_t w, std::size_t h, Rng& rng) {
  std::vector<Vec2<T>> pts;
  for (std::size_t i = 0; i < n; ++i) pts.push_back({rng.uniform(0, double(w)), rng.uniform(0, double(h))});
  return coords_tensor(pts);
}

}  // namespace

TEST(InitVectorQueries, ShapesAtFullScale) {
  const auto vq = init_vector_queries<T>(450, 450, 256, 7);
  EXPECT_EQ(vq.vx.shape(), (Shape{450, 256}));
  EXPECT_EQ(vq.vy.shape(), (Shape{450, 256}));
  EXPECT_EQ(vq.pex.shape(), (Shape{450, 256}));
  EXPECT_EQ(vq.combine, Combine::add);
  EXPECT_NO_THROW(vq.validate());
}

TEST(InitVectorQueries, DeterministicPerSeed) {
  const auto a = init_vector_queries<T>(16, 12, 8, 99);
  const auto b = init_vector_queries<T>(16, 12, 8, 99);
  EXPECT_EQ(a.vx.to_vector(), b.vx.to_vector());
  EXPECT_EQ(a.pey.to_vector(), b.pey.to_vector());
  const auto c = init_vector_queries<T>(16, 12, 8, 100);
  EXPECT_NE(a.vx.to_vector(), c.vx.to_vector());
}

TEST(InitVectorQueries, ZeroMeanWithinThreeSigma) {
  const auto vq = init_vector_queries<T>(450, 450, 256, 3);
  const double n = double(vq.vx.numel());
  double s = 0;
  for (T v : vq.vx.data()) s += v;
  EXPECT_LT(std::abs(s / n), 3 * 0.02 / std::sqrt(n));
}

TEST(ComposeSparseHr, IntegerCentersAddRows) {
  auto vq = init_vector_queries<T>(5, 4, 3, 1);
  const auto set = compose_sparse_hr(vq, coords_tensor<T>({{2.5, 1.5}}), dummy_groups(1));
  for (std::size_t k = 0; k < 3; ++k) EXPECT_DOUBLE_EQ(set.feats.at(0, k), vq.vx.at(2, k) + vq.vy.at(1, k));
}

TEST(ComposeSparseHr, ZeroVectorsGiveZeroFeatures) {
  VectorQueryPair<T> vq;
  vq.vx = Tensor<T>::zeros({6, 4});
  vq.vy = Tensor<T>::zeros({5, 4});
  vq.pex = Tensor<T>::zeros({6, 4});
  vq.pey = Tensor<T>::zeros({5, 4});
  Rng rng(2);
  const auto set = compose_sparse_hr(vq, random_coords(10, 6, 5, rng), dummy_groups(10));
  for (T v : set.feats.data()) EXPECT_EQ(v, 0.0);
}

TEST(ComposeSparseHr, EmptyCoordsGiveEmptySet) {
  const auto vq = init_vector_queries<T>(4, 4, 2, 1);
  const auto set = compose_sparse_hr(vq, Tensor<T>::zeros({0, 2}), {});
  EXPECT_EQ(set.size(), 0u);
  EXPECT_EQ(set.feats.dim(0), 0u);
}

TEST(ComposeSparseHr, MatchesDenseOracleBothModes) {
  Rng rng(77);
  for (Combine mode : {Combine::add, Combine::multiply}) {
    auto vq = init_vector_queries<T>(13, 9, 5, 5, mode);
    // Larger magnitudes make the product mode non-trivial.
    for (auto& v : vq.vx.data()) v *= 50;
    for (auto& v : vq.vy.data()) v *= 50;
    const auto coords = random_coords(100, 13, 9, rng);
    const auto set = compose_sparse_hr(vq, coords, dummy_groups(100));
    const auto vx = vq.vx.to_vector(), vy = vq.vy.to_vector();
    for (std::size_t i = 0; i < 100; ++i) {
      const auto ref = oracle::dense_factorized_sample(vx, vy, 13, 9, 5, mode == Combine::multiply,
                                                       coords.at(i, 0), coords.at(i, 1));
      for (std::size_t k = 0; k < 5; ++k) EXPECT_NEAR(set.feats.at(i, k), ref[k], 1e-12);
    }
  }
}

TEST(ComposeSparseHr, CombineModeChangesValuesNotShapes) {
  Rng rng(4);
  const auto coords = random_coords(20, 8, 8, rng);
  auto add_vq = init_vector_queries<T>(8, 8, 4, 3, Combine::add);
  auto mul_vq = add_vq;
  mul_vq.combine = Combine::multiply;
  const auto a = compose_sparse_hr(add_vq, coords, dummy_groups(20));
  const auto m = compose_sparse_hr(mul_vq, coords, dummy_groups(20));
  EXPECT_EQ(a.feats.shape(), m.feats.shape());
  EXPECT_EQ(a.group_of, m.group_of);
  EXPECT_NE(a.feats.to_vector(), m.feats.to_vector());
}

TEST(ComposeSparseHr, GradientFlowsToBothVectors) {
  Rng rng(12);
  for (Combine mode : {Combine::add, Combine::multiply}) {
    auto vq = init_vector_queries<T>(7, 6, 3, 8, mode);
    const auto coords = random_coords(15, 7, 6, rng);
    const double err = check_gradients<T>(
        [&] { return sum(compose_sparse_hr(vq, coords, dummy_groups(15)).feats); }, {vq.vx, vq.vy});
    EXPECT_LT(err, 1e-6);
  }
}

TEST(ComposeSparseHr, GradientFlowsToCoordinates) {
  Rng rng(31);
  auto vq = init_vector_queries<T>(7, 6, 3, 8);
  auto coords = random_coords(10, 7, 6, rng);
  coords.node().requires_grad = true;
  const double err = check_gradients<T>(
      [&] { return vbev::testing::probe(compose_features(vq, coords), 5); }, {coords});
  EXPECT_LT(err, 1e-6);
}

TEST(VectorQueryPair, StorageIsLinearInResolution) {
  for (std::size_t n : {16u, 64u, 450u}) {
    const auto vq = init_vector_queries<T>(n, n, 8, 1);
    EXPECT_EQ(vq.parameter_count(), (n + n) * 8 * 2);
  }
}

TEST(SamplePe, CenterAndConstantCoords) {
  const auto vq = init_vector_queries<T>(6, 5, 4, 21);
  const auto pe = sample_pe(vq, coords_tensor<T>({{3.5, 2.5}, {3.5, 2.5}, {3.5, 2.5}}));
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_DOUBLE_EQ(pe.pe_x.at(0, k), vq.pex.at(3, k));
    EXPECT_DOUBLE_EQ(pe.pe_y.at(0, k), vq.pey.at(2, k));
    for (std::size_t r = 1; r < 3; ++r) {
      EXPECT_EQ(pe.pe_x.at(r, k), pe.pe_x.at(0, k));
      EXPECT_EQ(pe.pe_y.at(r, k), pe.pe_y.at(0, k));
    }
  }
}

TEST(SamplePe, MatchesDenseOracle) {
  Rng rng(55);
  const auto vq = init_vector_queries<T>(10, 7, 3, 2);
  const auto coords = random_coords(50, 10, 7, rng);
  const auto pe = sample_pe(vq, coords);
  const auto pex = vq.pex.to_vector(), pey = vq.pey.to_vector();
  const std::vector<double> zx(10 * 3, 0.0), zy(7 * 3, 0.0);
  for (std::size_t i = 0; i < 50; ++i) {
    const auto rx = oracle::dense_factorized_sample(pex, zy, 10, 7, 3, false, coords.at(i, 0), coords.at(i, 1));
    const auto ry = oracle::dense_factorized_sample(zx, pey, 10, 7, 3, false, coords.at(i, 0), coords.at(i, 1));
    for (std::size_t k = 0; k < 3; ++k) {
      EXPECT_NEAR(pe.pe_x.at(i, k), rx[k], 1e-12);
      EXPECT_NEAR(pe.pe_y.at(i, k), ry[k], 1e-12);
    }
  }
}

TEST(SamplePe, EmbeddingsReceiveGradient) {
  Rng rng(3);
  auto vq = init_vector_queries<T>(6, 6, 2, 4);
  const auto coords = random_coords(8, 6, 6, rng);
  const double err = check_gradients<T>(
      [&] {
        const auto pe = sample_pe(vq, coords);
        return add(vbev::testing::probe(pe.pe_x, 1), vbev::testing::probe(pe.pe_y, 2));
      },
      {vq.pex, vq.pey});
  EXPECT_LT(err, 1e-6);
}
