#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "oracles.hpp"
#include "test_support.hpp"
#include "vbev/scattering.hpp"

using namespace vbev;
using vbev::testing::probe;
using vbev::testing::random_tensor;
using T = double;

namespace {

BevSpec small_spec() {
  BevSpec s;
  s.h_lr = s.w_lr = 4;
  s.h_hr = 8;
  s.w_hr = 6;
  s.x_min = s.y_min = -8;
  s.x_max = s.y_max = 8;
  return s;
}

void fill(Tensor<T>& t, T v) {
  for (auto& x : t.data()) x = v;
}

}  // namespace

TEST(PredictHeatmap, OrthogonalMlpOutputsGiveZeroEntry) {
  BevSpec s;
  s.h_lr = s.w_lr = s.h_hr = s.w_hr = 1;
  Rng rng(1);
  HeatmapParams<T> p(2, rng);
  p.mlp_x.layers = {Linear<T>::identity(2)};
  p.mlp_y.layers = {Linear<T>::identity(2)};
  VectorQueryPair<T> vq;
  vq.vx = Tensor<T>::from({1, 2}, {1.0, 0.0});
  vq.vy = Tensor<T>::from({1, 2}, {0.0, 1.0});
  vq.pex = Tensor<T>::zeros({1, 2});
  vq.pey = Tensor<T>::zeros({1, 2});
  const auto hm = predict_heatmap(vq, Tensor<T>::zeros({1, 1, 2}), p, s);
  EXPECT_EQ(hm.logits_h.item(), 0.0);
}

TEST(PredictHeatmap, ConstantLrTermUpsamplesToConstant) {
  const auto s = small_spec();
  Rng rng(2);
  HeatmapParams<T> p(8, rng);
  fill(p.conv2.weight, 0.0);
  fill(p.conv2.bias, 0.7);
  const auto vq = init_vector_queries<T>(s.w_hr, s.h_hr, 8, 3);
  const auto hm = predict_heatmap(vq, random_tensor({4, 4, 8}, rng), p, s);
  EXPECT_EQ(hm.logits.shape(), (Shape{8, 6}));
  EXPECT_EQ(hm.logits_hprime.shape(), (Shape{4, 4}));
  for (std::size_t i = 0; i < hm.logits.numel(); ++i)
    EXPECT_NEAR(hm.logits.at(i) - hm.logits_h.at(i), 0.7, 1e-14);
}

TEST(PredictHeatmap, ZeroLogitsGiveHalfProbability) {
  const auto s = small_spec();
  Rng rng(3);
  HeatmapParams<T> p(8, rng);
  fill(p.conv2.weight, 0.0);
  fill(p.conv2.bias, 0.0);
  p.mlp_x.layers.back() = Linear<T>::zero(8, 8);
  const auto vq = init_vector_queries<T>(s.w_hr, s.h_hr, 8, 3);
  const auto hm = predict_heatmap(vq, random_tensor({4, 4, 8}, rng), p, s);
  for (T v : hm.probs.data()) EXPECT_EQ(v, 0.5);
}

TEST(PredictHeatmap, ChannelMismatchThrows) {
  const auto s = small_spec();
  Rng rng(4);
  HeatmapParams<T> p(8, rng);
  const auto vq = init_vector_queries<T>(s.w_hr, s.h_hr, 8, 3);
  EXPECT_THROW(predict_heatmap(vq, Tensor<T>::zeros({4, 4, 6}), p, s), ShapeError);
}

TEST(PredictHeatmap, ProbabilitiesStrictlyInsideUnitInterval) {
  const auto s = small_spec();
  Rng rng(5);
  HeatmapParams<T> p(8, rng);
  const auto vq = init_vector_queries<T>(s.w_hr, s.h_hr, 8, 9);
  const auto hm = predict_heatmap(vq, random_tensor({4, 4, 8}, rng), p, s);
  for (T v : hm.probs.data()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(HeatmapLoss, PerfectPredictionIsZero) {
  Heatmap<T> hm;
  hm.logits = Tensor<T>::from({1, 3}, {40.0, -40.0, -40.0});
  hm.logits_hprime = Tensor<T>::from({1, 2}, {40.0, -40.0});
  const std::vector<T> gt{1, 0, 0}, gt_lr{1, 0};
  EXPECT_NEAR(heatmap_loss<T>(hm, gt, gt_lr).item(), 0.0, 1e-12);
}

TEST(HeatmapLoss, HalfProbabilityPositivesPerMap) {
  // Each map has one positive at p = 0.5 costing 0.25 ln 2.
  Heatmap<T> hm;
  hm.logits = Tensor<T>::zeros({1, 1});
  hm.logits_hprime = Tensor<T>::zeros({1, 1});
  const std::vector<T> one{1};
  EXPECT_NEAR(heatmap_loss<T>(hm, one, one).item(), 2 * 0.25 * std::log(2.0), 1e-12);
}

TEST(HeatmapLoss, TargetOutsideUnitIntervalThrows) {
  Heatmap<T> hm;
  hm.logits = Tensor<T>::zeros({1, 1});
  hm.logits_hprime = Tensor<T>::zeros({1, 1});
  const std::vector<T> bad{1.5}, ok{0};
  EXPECT_THROW(heatmap_loss<T>(hm, bad, ok), InvalidTarget);
}

TEST(HeatmapLoss, GradientWrtVectorsAndLrBev) {
  const auto s = small_spec();
  const std::vector<Box3D> boxes{{.cx = 2.f, .cy = -3.f, .w = 2.f, .l = 4.f}};
  const auto gt = build_gt_heatmap<T>(boxes, s, GridKind::hr);
  const auto gt_lr = build_gt_heatmap<T>(boxes, s, GridKind::lr);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    HeatmapParams<T> p(8, rng);
    auto vq = init_vector_queries<T>(s.w_hr, s.h_hr, 8, seed + 100);
    for (auto& v : vq.vx.data()) v *= 20;
    for (auto& v : vq.vy.data()) v *= 20;
    auto bev = random_tensor({4, 4, 8}, rng, -1, 1, true);
    const double err = check_gradients<T>(
        [&] { return heatmap_loss<T>(predict_heatmap(vq, bev, p, s), gt, gt_lr); },
        {vq.vx, vq.vy, bev, p.conv1.weight, p.mlp_x.layers[0].weight});
    EXPECT_LT(err, 1e-4) << "seed " << seed;
  }
}

TEST(SelectTopk, TwoByTwoExhaustive) {
  const auto probs = Tensor<T>::from({2, 2}, {0.9, 0.1, 0.2, 0.8});
  const auto sel = select_topk_directional(probs, 1);
  ASSERT_EQ(sel.size(), 4u);
  const std::vector<Vec2<T>> want{{0.5, 0.5}, {1.5, 1.5}, {0.5, 0.5}, {1.5, 1.5}};
  EXPECT_EQ(sel.coords, want);
  EXPECT_EQ(sel.groups[0], (VectorCell{Axis::x, 0}));
  EXPECT_EQ(sel.groups[1], (VectorCell{Axis::x, 1}));
  EXPECT_EQ(sel.groups[2], (VectorCell{Axis::y, 0}));
  EXPECT_EQ(sel.groups[3], (VectorCell{Axis::y, 1}));
}

TEST(SelectTopk, UniformMapPicksLowestIndices) {
  const auto probs = Tensor<T>::full({5, 4}, 0.3);
  const auto sel = select_topk_directional(probs, 2);
  for (std::size_t i = 0; i < sel.size(); ++i) {
    const auto rank = T(i % 2) + 0.5;
    if (sel.groups[i].axis == Axis::x) EXPECT_EQ(sel.coords[i][1], rank);
    else EXPECT_EQ(sel.coords[i][0], rank);
  }
}

TEST(SelectTopk, MatchesSortOracleOnRandomMaps) {
  Rng rng(2024);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<T> v(256);
    // Coarse quantization forces plenty of ties.
    for (auto& x : v) x = std::round(rng.uniform(0, 1) * 8) / 8;
    const auto sel = select_topk_directional(Tensor<T>::from({16, 16}, std::span<const T>(v)), 3);
    const auto ref = oracle::sort_topk(v, 16, 16, 3);
    ASSERT_EQ(sel.size(), ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) {
      EXPECT_EQ(sel.groups[i].axis, ref[i].axis);
      EXPECT_EQ(sel.groups[i].index, ref[i].owner);
      EXPECT_EQ(sel.coords[i][0], ref[i].x + 0.5);
      EXPECT_EQ(sel.coords[i][1], ref[i].y + 0.5);
    }
  }
}

TEST(SelectTopk, SelectedDominateUnselected) {
  Rng rng(7);
  std::vector<T> v(12 * 9);
  for (auto& x : v) x = rng.uniform(0, 1);
  const auto sel = select_topk_directional(Tensor<T>::from({12, 9}, std::span<const T>(v)), 4);
  std::map<std::pair<int, std::uint32_t>, std::vector<std::size_t>> chosen;
  for (std::size_t i = 0; i < sel.size(); ++i) {
    const auto g = sel.groups[i];
    const auto x = std::size_t(sel.coords[i][0]), y = std::size_t(sel.coords[i][1]);
    chosen[{int(g.axis), g.index}].push_back(g.axis == Axis::x ? y : x);
  }
  EXPECT_EQ(chosen.size(), 12u + 9u);
  for (const auto& [key, picks] : chosen) {
    ASSERT_EQ(picks.size(), 4u);
    const bool col = key.first == int(Axis::x);
    const std::size_t len = col ? 12 : 9;
    auto val = [&](std::size_t t) { return col ? v[t * 9 + key.second] : v[key.second * 9 + t]; };
    T min_sel = 2;
    for (auto t : picks) min_sel = std::min(min_sel, val(t));
    for (std::size_t t = 0; t < len; ++t)
      if (std::find(picks.begin(), picks.end(), t) == picks.end()) {
        EXPECT_GE(min_sel, val(t));
      }
  }
}

TEST(DeformOffsets, ZeroInitRepeatsProposals) {
  Rng rng(1);
  const auto vq = init_vector_queries<T>(6, 8, 8, 3);
  OffsetParams<T> p(8, 2, rng);
  const auto sel = select_topk_directional(random_tensor({8, 6}, rng, 0, 1), 3);
  const auto def = deform_offsets(vq, sel, &p, ScatterConfig{});
  ASSERT_EQ(def.size(), sel.size() * 2);
  for (std::size_t i = 0; i < sel.size(); ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      EXPECT_EQ(def.coords.at(i * 2 + j, 0), sel.coords[i][0]);
      EXPECT_EQ(def.coords.at(i * 2 + j, 1), sel.coords[i][1]);
      EXPECT_EQ(def.groups[i * 2 + j], sel.groups[i]);
    }
}

TEST(DeformOffsets, FullScaleCount) {
  const auto vq = init_vector_queries<T>(450, 450, 4, 3);
  const auto sel = select_topk_directional(Tensor<T>::full({450, 450}, 0.5), 3);
  Rng rng(2);
  OffsetParams<T> p(4, 2, rng);
  const auto def = deform_offsets(vq, sel, &p, ScatterConfig{});
  EXPECT_EQ(def.size(), 5400u);
  EXPECT_EQ(def.coords.dim(0), 5400u);
}

TEST(DeformOffsets, EachCellOwnsKDeltaEntries) {
  for (std::size_t k : {1u, 2u, 4u})
    for (std::size_t d : {1u, 3u}) {
      Rng rng(k * 10 + d);
      const auto vq = init_vector_queries<T>(7, 5, 4, 3);
      OffsetParams<T> p(4, d, rng);
      ScatterConfig cfg;
      cfg.k = k;
      cfg.delta = d;
      const auto def = deform_offsets(vq, select_topk_directional(random_tensor({5, 7}, rng, 0, 1), k), &p, cfg);
      EXPECT_EQ(def.size(), (7u + 5u) * k * d);
      std::map<std::pair<int, std::uint32_t>, std::size_t> count;
      for (const auto& g : def.groups) ++count[{int(g.axis), g.index}];
      EXPECT_EQ(count.size(), 12u);
      for (const auto& [_, n] : count) EXPECT_EQ(n, k * d);
      // X-owned entries precede Y-owned ones.
      for (std::size_t i = 0; i < def.size(); ++i) EXPECT_EQ(def.groups[i].axis, i < 7 * k * d ? Axis::x : Axis::y);
    }
}

TEST(DeformOffsets, LargeOffsetsAreClampedInsideGrid) {
  Rng rng(5);
  const auto vq = init_vector_queries<T>(6, 8, 4, 3);
  OffsetParams<T> p(4, 2, rng);
  p.fc2.bias = Tensor<T>::from({4}, {-100.0, -100.0, 100.0, 100.0});
  ScatterConfig cfg;
  cfg.offset_scale = 50;
  auto probs = Tensor<T>::zeros({8, 6});
  probs.data()[0] = 1;  // corner cell
  const auto def = deform_offsets(vq, select_topk_directional(probs, 1), &p, cfg);
  EXPECT_EQ(def.coords.at(0, 0), 0.0);
  EXPECT_EQ(def.coords.at(0, 1), 0.0);
  EXPECT_EQ(def.coords.at(1, 0), 6.0);
  EXPECT_EQ(def.coords.at(1, 1), 8.0);
  for (std::size_t i = 0; i < def.size(); ++i) {
    EXPECT_GE(def.coords.at(i, 0), 0.0);
    EXPECT_LE(def.coords.at(i, 0), 6.0);
    EXPECT_GE(def.coords.at(i, 1), 0.0);
    EXPECT_LE(def.coords.at(i, 1), 8.0);
  }
}

TEST(DeformOffsets, DisabledOffsetsRepeatProposals) {
  Rng rng(6);
  const auto vq = init_vector_queries<T>(6, 8, 4, 3);
  OffsetParams<T> p(4, 2, rng);
  p.fc2 = Linear<T>(4, 4, rng);
  ScatterConfig cfg;
  cfg.offsets_on = false;
  const auto sel = select_topk_directional(random_tensor({8, 6}, rng, 0, 1), 3);
  const auto def = deform_offsets(vq, sel, &p, cfg);
  for (std::size_t i = 0; i < def.size(); ++i) EXPECT_EQ(def.coords.at(i, 0), sel.coords[i / 2][0]);
}

TEST(DeformOffsets, OffsetsReceiveGradientThroughSampling) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const auto vq = init_vector_queries<T>(6, 8, 4, seed);
    OffsetParams<T> p(4, 2, rng);
    p.fc2 = Linear<T>(4, 4, rng);
    // A nonzero bias keeps samples off the cell centers, where bilinear
    // interpolation has kinks.
    p.fc2.bias = random_tensor({4}, rng, -1, 1);
    const auto sel = select_topk_directional(random_tensor({8, 6}, rng, 0, 1), 2);
    const double err = check_gradients<T>(
        [&] {
          const auto def = deform_offsets(vq, sel, &p, ScatterConfig{});
          return probe(compose_features(vq, def.coords), seed);
        },
        {p.fc2.weight, p.fc2.bias, vq.vx, vq.vy});
    EXPECT_LT(err, 1e-4) << "seed " << seed;
  }
}

TEST(PrefuseLrHr, IdentityOnSecondHalfReturnsHrFeatures) {
  const auto s = small_spec();
  Rng rng(1);
  auto proj = Linear<T>::zero(8, 4);
  for (std::size_t i = 0; i < 4; ++i) proj.weight.data()[(4 + i) * 4 + i] = 1;
  const auto vq = init_vector_queries<T>(s.w_hr, s.h_hr, 4, 2);
  const auto coords = coords_tensor<T>({{0.5, 0.5}, {3.2, 7.1}, {5.9, 2.0}});
  const auto hr = compose_sparse_hr(vq, coords, {{Axis::x, 0}, {Axis::x, 3}, {Axis::y, 2}});
  const auto fused = prefuse_lr_hr(random_tensor({4, 4, 4}, rng), hr, proj, s);
  EXPECT_EQ(fused.feats.to_vector(), hr.feats.to_vector());
  EXPECT_EQ(fused.group_of, hr.group_of);
}

TEST(PrefuseLrHr, ConstantLrMapSamplesConstant) {
  const auto s = small_spec();
  auto proj = Linear<T>::zero(8, 4);
  for (std::size_t i = 0; i < 4; ++i) proj.weight.data()[i * 4 + i] = 1;
  const auto vq = init_vector_queries<T>(s.w_hr, s.h_hr, 4, 2);
  Rng rng(3);
  std::vector<Vec2<T>> pts;
  for (int i = 0; i < 10; ++i) pts.push_back({rng.uniform(0, 6), rng.uniform(0, 8)});
  const auto hr = compose_sparse_hr(vq, coords_tensor(pts), std::vector<VectorCell>(10, {Axis::x, 0}));
  const auto fused = prefuse_lr_hr(Tensor<T>::full({4, 4, 4}, 2.5), hr, proj, s);
  for (T v : fused.feats.data()) EXPECT_NEAR(v, 2.5, 1e-14);
}

TEST(PrefuseLrHr, GradientToLrBevAndVectors) {
  const auto s = small_spec();
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    Linear<T> proj(8, 4, rng);
    auto vq = init_vector_queries<T>(s.w_hr, s.h_hr, 4, seed);
    auto bev = random_tensor({4, 4, 4}, rng, -1, 1, true);
    std::vector<Vec2<T>> pts;
    for (int i = 0; i < 12; ++i) pts.push_back({rng.uniform(0, 6), rng.uniform(0, 8)});
    const auto coords = coords_tensor(pts);
    const double err = check_gradients<T>(
        [&] {
          const auto hr = compose_sparse_hr(vq, coords, std::vector<VectorCell>(12, {Axis::y, 1}));
          return probe(prefuse_lr_hr(bev, hr, proj, s).feats, seed);
        },
        {bev, vq.vx, vq.vy, proj.weight});
    EXPECT_LT(err, 1e-4) << "seed " << seed;
  }
}

TEST(GtHeatmap, CenteredBoxPeaksAtCentralCell) {
  const BevSpec s;
  const auto map = build_gt_heatmap<T>({Box3D{.w = 2, .l = 4}}, s, GridKind::hr);
  const auto c = world_to_hr_cell(s, {0.0, 0.0});
  const auto i = std::size_t(c[1]), j = std::size_t(c[0]);
  EXPECT_EQ(map[i * s.w_hr + j], 1.0);
  EXPECT_EQ(*std::max_element(map.begin(), map.end()), 1.0);
  EXPECT_EQ(std::count(map.begin(), map.end(), 1.0), 1);
}

TEST(GtHeatmap, NoBoxesAllZero) {
  const BevSpec s;
  const auto map = build_gt_heatmap<T>({}, s, GridKind::lr);
  EXPECT_EQ(map.size(), s.h_lr * s.w_lr);
  for (T v : map) EXPECT_EQ(v, 0.0);
}

TEST(GtHeatmap, TwoDistantBoxesTwoUnitPeaks) {
  const BevSpec s;
  const std::vector<Box3D> boxes{{.cx = -10, .cy = -10, .w = 2, .l = 4}, {.cx = 9, .cy = 7, .w = 2, .l = 4}};
  const auto map = build_gt_heatmap<T>(boxes, s, GridKind::hr);
  EXPECT_EQ(std::count(map.begin(), map.end(), 1.0), 2);
  for (T v : map) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  for (const auto& b : boxes) {
    const auto c = world_to_hr_cell(s, {double(b.cx), double(b.cy)});
    EXPECT_EQ(map[std::size_t(c[1]) * s.w_hr + std::size_t(c[0])], 1.0);
  }
}

TEST(GtHeatmap, OutsideBoxesSkipped) {
  const BevSpec s;
  const auto map = build_gt_heatmap<T>({Box3D{.cx = 100, .cy = 0}}, s, GridKind::hr);
  for (T v : map) EXPECT_EQ(v, 0.0);
}
