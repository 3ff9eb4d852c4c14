#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "test_support.hpp"
#include "vbev/model.hpp"

using namespace vbev;
using vbev::testing::random_tensor;
using T = double;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.channels = 8;
  c.heads = 2;
  c.points = 2;
  c.bev.h_lr = c.bev.w_lr = 4;
  c.bev.h_hr = c.bev.w_hr = 8;
  c.bev.x_min = c.bev.y_min = -8;
  c.bev.x_max = c.bev.y_max = 8;
  c.scatter.k = 2;
  c.seed = 3;
  return c;
}

struct Frame {
  CameraRig rig;
  std::vector<Tensor<T>> feats;
  EgoPose ego;

  FrameInput<T> input() const { return {feats, rig, ego}; }
};

Frame random_frame(std::size_t c, std::uint64_t seed, EgoPose ego = {}) {
  RigSpec rs;
  rs.image_h = rs.image_w = 8;
  Frame f{make_surround_rig(rs), {}, ego};
  Rng rng(seed);
  for (std::size_t i = 0; i < rs.cameras; ++i) f.feats.push_back(random_tensor({8, 8, c}, rng, -1, 1, false));
  return f;
}

std::vector<Box3D> two_boxes() {
  Box3D a;
  a.cx = 2.5f, a.cy = -3.0f, a.w = 1.8f, a.l = 4.0f, a.h = 1.5f, a.yaw = 0.3f, a.vx = 1.0f, a.cls = 0;
  Box3D b;
  b.cx = -4.0f, b.cy = 5.0f, b.w = 0.8f, b.l = 0.8f, b.h = 1.7f, b.yaw = -1.0f, b.vy = -0.5f, b.cls = 2;
  return {a, b};
}

std::size_t count_hr_params(const ParamSet<T>& ps) {
  std::size_t n = 0;
  for (const auto& [name, _] : ps.items())
    if (name.find("hr.") != std::string::npos) ++n;
  return n;
}

void expect_bitwise(const Tensor<T>& a, const Tensor<T>& b) {
  ASSERT_EQ(a.shape(), b.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) ASSERT_EQ(a.at(i), b.at(i)) << "entry " << i;
}

}  // namespace

TEST(SolveAssignment, MatchesExhaustiveOracle) {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t rows = 1 + rng.index(4), cols = rows + rng.index(3);
    std::vector<double> cost(rows * cols);
    for (auto& c : cost) c = rng.uniform(-2, 2);
    const auto got = solve_assignment(cost, rows, cols);

    std::vector<std::size_t> perm(cols);
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
      double s = 0;
      for (std::size_t r = 0; r < rows; ++r) s += cost[r * cols + perm[r]];
      best = std::min(best, s);
    } while (std::next_permutation(perm.begin(), perm.end()));

    double s = 0;
    std::vector<char> used(cols, 0);
    for (std::size_t r = 0; r < rows; ++r) {
      ASSERT_LT(got[r], cols);
      ASSERT_FALSE(used[got[r]]) << "column reused";
      used[got[r]] = 1;
      s += cost[r * cols + got[r]];
    }
    EXPECT_NEAR(s, best, 1e-12) << "trial " << trial;
  }
}

TEST(SolveAssignment, RejectsNonFiniteCost) {
  EXPECT_THROW(solve_assignment({0.0, std::nan("")}, 1, 2), NumericError);
  EXPECT_THROW(solve_assignment({0.0, 1.0}, 2, 1), std::invalid_argument);
}

namespace {

Detection<T> detection_from(const std::vector<Box3D>& boxes, std::size_t nc, const std::vector<int>& labels,
                            double logit = 8.0) {
  std::vector<T> lg(boxes.size() * nc, -logit), bx;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    if (labels[i] >= 0) lg[i * nc + std::size_t(labels[i])] = logit;
    for (double v : encode_box(boxes[i])) bx.push_back(v);
  }
  return {Tensor<T>::from({boxes.size(), nc}, lg, true), Tensor<T>::from({boxes.size(), kBoxParams}, bx, true)};
}

}  // namespace

TEST(HungarianMatch, SinglePredictionSingleTarget) {
  const auto gt = std::vector<Box3D>{two_boxes()[0]};
  auto pred = gt;
  pred[0].cx += 3;
  const auto a = hungarian_match(detection_from(pred, 3, {0}), gt, 2.0, 0.25);
  ASSERT_EQ(a.pred_of_gt.size(), 1u);
  EXPECT_EQ(a.pred_of_gt[0], 0u);
  EXPECT_EQ(a.gt_of_pred[0], 0);
}

TEST(HungarianMatch, NearerOfTwoPredictionsWins) {
  const auto gt = std::vector<Box3D>{two_boxes()[0]};
  auto far = gt[0], near = gt[0];
  far.cx += 5;
  near.cx += 0.5;
  const auto a = hungarian_match(detection_from({far, near}, 3, {0, 0}), gt, 2.0, 0.25);
  EXPECT_EQ(a.pred_of_gt[0], 1u);
  EXPECT_EQ(a.gt_of_pred[0], -1);
  EXPECT_EQ(a.gt_of_pred[1], 0);
}

TEST(HungarianMatch, AgreesWithBruteForceOnRandomDetections) {
  Rng rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<Box3D> gt(1 + rng.index(3)), pred(5);
    for (auto* v : {&gt, &pred})
      for (auto& b : *v) {
        b.cx = float(rng.uniform(-8, 8));
        b.cy = float(rng.uniform(-8, 8));
        b.yaw = float(rng.uniform(-3, 3));
        b.cls = int(rng.index(3));
      }
    auto det = detection_from(pred, 3, {0, 1, 2, 0, 1}, rng.uniform(-2, 2));
    const auto a = hungarian_match(det, gt, 2.0, 0.25);

    auto cost_of = [&](std::size_t g, std::size_t i) {
      const double p = 1.0 / (1.0 + std::exp(-det.logits.at(i, std::size_t(gt[g].cls))));
      return -2.0 * p + 0.25 * box_l1(det.boxes.ptr() + i * kBoxParams, encode_box(gt[g]));
    };
    std::vector<std::size_t> perm(5);
    std::iota(perm.begin(), perm.end(), 0);
    double best = 1e300, got = 0;
    do {
      double s = 0;
      for (std::size_t g = 0; g < gt.size(); ++g) s += cost_of(g, perm[g]);
      best = std::min(best, s);
    } while (std::next_permutation(perm.begin(), perm.end()));
    for (std::size_t g = 0; g < gt.size(); ++g) got += cost_of(g, a.pred_of_gt[g]);
    EXPECT_NEAR(got, best, 1e-12);
  }
}

TEST(HungarianMatch, NoGroundTruthMeansAllBackground) {
  const auto a = hungarian_match(detection_from(two_boxes(), 3, {0, 2}), {}, 2.0, 0.25);
  EXPECT_TRUE(a.pred_of_gt.empty());
  EXPECT_EQ(a.gt_of_pred, (std::vector<std::int64_t>{-1, -1}));
}

TEST(DetectionLoss, PerfectPredictionsGiveZero) {
  const auto gt = two_boxes();
  const auto det = detection_from(gt, 3, {gt[0].cls, gt[1].cls}, 40.0);
  const auto a = hungarian_match(det, gt, 2.0, 0.25);
  const auto l = detection_loss(det, gt, a);
  EXPECT_NEAR(l.cls.item(), 0.0, 1e-12);
  EXPECT_EQ(l.box.item(), 0.0);
}

TEST(DetectionLoss, NoGroundTruthPenalizesOnlyConfidence) {
  const auto det = detection_from(two_boxes(), 3, {0, 1}, 3.0);
  const auto l = detection_loss(det, {}, hungarian_match(det, {}, 2.0, 0.25));
  EXPECT_GT(l.cls.item(), 0.0);
  EXPECT_EQ(l.box.item(), 0.0);
}

TEST(BoxCoding, RoundTrip) {
  for (const auto& b : two_boxes()) {
    const auto d = decode_box(encode_box(b), b.cls);
    EXPECT_NEAR(d.cx, b.cx, 1e-6);
    EXPECT_NEAR(d.w, b.w, 1e-6);
    EXPECT_NEAR(d.l, b.l, 1e-6);
    EXPECT_NEAR(d.yaw, b.yaw, 1e-6);
    EXPECT_NEAR(d.vy, b.vy, 1e-6);
    EXPECT_EQ(d.cls, b.cls);
  }
}

TEST(ModelConfig, DecodingQueriesAreVectorLengthSum) {
  ModelConfig c;
  c.bev.h_lr = c.bev.w_lr = 200;
  c.bev.h_hr = c.bev.w_hr = 450;
  EXPECT_EQ(c.decoder_queries(), 900u);
  Rng rng(0);
  const Decoder<T> dec(c, rng);
  EXPECT_EQ(dec.query_pos.dim(0), 900u);
}

TEST(ModelConfig, RejectsInvalid) {
  auto c = tiny_config();
  c.channels = 6;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = tiny_config();
  c.scatter.k = 9;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = tiny_config();
  c.num_classes = 4;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Model, OutputShapes) {
  const auto cfg = tiny_config();
  const Model<T> m(cfg);
  const auto f = random_frame(cfg.channels, 1);
  const auto r = m.forward(f.input(), nullptr);
  EXPECT_EQ(r.state.bev.shape(), (Shape{16, 8}));
  ASSERT_TRUE(r.state.vq);
  EXPECT_EQ(r.state.vq->vx.shape(), (Shape{8, 8}));
  EXPECT_EQ(r.state.vq->vy.shape(), (Shape{8, 8}));
  ASSERT_EQ(r.dets.size(), cfg.decoder_layers);
  for (const auto& d : r.dets) {
    EXPECT_EQ(d.logits.shape(), (Shape{16, 3}));
    EXPECT_EQ(d.boxes.shape(), (Shape{16, kBoxParams}));
  }
  for (const auto& t : r.traces) EXPECT_EQ(t.sparse_queries, (8 + 8) * cfg.scatter.k * cfg.scatter.delta);
}

TEST(Model, BoxCentersStayInsideRange) {
  const auto cfg = tiny_config();
  const Model<T> m(cfg);
  const auto r = m.forward(random_frame(cfg.channels, 2).input(), nullptr);
  for (const auto& d : r.dets)
    for (std::size_t i = 0; i < d.boxes.dim(0); ++i) {
      EXPECT_GT(d.boxes.at(i, 0), cfg.bev.x_min);
      EXPECT_LT(d.boxes.at(i, 0), cfg.bev.x_max);
      EXPECT_GT(d.boxes.at(i, 1), cfg.bev.y_min);
      EXPECT_LT(d.boxes.at(i, 1), cfg.bev.y_max);
    }
}

TEST(Model, EncodeEqualsChainedLayers) {
  const auto cfg = tiny_config();
  const Model<T> m(cfg);
  const auto f = random_frame(cfg.channels, 3);
  const auto [st, traces] = m.encode(f.input(), nullptr);

  const auto& ps = m.params();
  EncoderState<T> manual{ps.items()[0].second, VectorQueryPair<T>{}};
  for (const auto& [name, t] : ps.items()) {
    if (name == "hr.vx") manual.vq->vx = t;
    if (name == "hr.vy") manual.vq->vy = t;
    if (name == "hr.pex") manual.vq->pex = t;
    if (name == "hr.pey") manual.vq->pey = t;
  }
  manual.vq->combine = cfg.combine;
  for (const auto& layer : m.encoder()) manual = encoder_layer_forward<T>(layer, manual, nullptr, f.input(), cfg).first;
  expect_bitwise(st.bev, manual.bev);
  expect_bitwise(st.vq->vx, manual.vq->vx);
  expect_bitwise(st.vq->vy, manual.vq->vy);
}

TEST(Model, DeterministicForSeed) {
  const auto cfg = tiny_config();
  const Model<T> a(cfg), b(cfg);
  const auto f = random_frame(cfg.channels, 4);
  const auto ra = a.forward(f.input(), nullptr), rb = b.forward(f.input(), nullptr);
  expect_bitwise(ra.dets.back().boxes, rb.dets.back().boxes);
  EXPECT_EQ(a.loss(ra, two_boxes()).total.item(), b.loss(rb, two_boxes()).total.item());
}

TEST(Model, ZeroRefinementHeadGivesIdenticalBoxesPerLayer) {
  auto cfg = tiny_config();
  cfg.decoder_layers = 3;
  const Model<T> m(cfg);
  const auto r = m.forward(random_frame(cfg.channels, 5).input(), nullptr);
  for (std::size_t l = 1; l < r.dets.size(); ++l) expect_bitwise(r.dets[l].boxes, r.dets[0].boxes);
}

TEST(Model, DetachingReferencesLeavesForwardUnchanged) {
  auto cfg = tiny_config();
  cfg.decoder_layers = 3;
  auto open = cfg;
  open.detach_refs = false;
  const Model<T> a(cfg), b(open);
  const auto f = random_frame(cfg.channels, 9);
  const auto ra = a.forward(f.input(), nullptr), rb = b.forward(f.input(), nullptr);
  for (std::size_t l = 0; l < ra.dets.size(); ++l) expect_bitwise(ra.dets[l].boxes, rb.dets[l].boxes);
}

TEST(Model, BaselineHasNoHighResolutionPath) {
  const auto cfg = baseline_config(tiny_config());
  const Model<T> m(cfg);
  EXPECT_EQ(count_hr_params(m.params()), 0u);
  EXPECT_GT(count_hr_params(Model<T>(tiny_config()).params()), 0u);

  const auto f = random_frame(cfg.channels, 6);
  const auto r = m.forward(f.input(), nullptr);
  EXPECT_FALSE(r.state.vq);
  EXPECT_TRUE(r.intermediate.empty());
  for (const auto& t : r.traces) {
    EXPECT_FALSE(t.heatmap);
    EXPECT_EQ(t.sparse_queries, 0u);
  }
  EXPECT_EQ(m.loss(r, two_boxes()).heatmaps, 0u);
}

TEST(Model, BaselineLayerIsTemporalThenSca) {
  const auto cfg = baseline_config(tiny_config());
  const Model<T> m(cfg);
  const auto f = random_frame(cfg.channels, 7);
  const auto& layer = m.encoder()[0];
  const Tensor<T> bev0 = m.params().items()[0].second;
  const auto got = encoder_layer_forward<T>(layer, EncoderState<T>{bev0, std::nullopt}, nullptr, f.input(), cfg).first;

  const auto fused = temporal_bev_fusion<T>(bev0, nullptr, cfg.bev, f.ego, f.ego, *layer.bev_temporal);
  const SparseHrSet<T> none{Tensor<T>::zeros({0, 2}), Tensor<T>::zeros({0, cfg.channels}), {}};
  const auto want = layer.ffn_bev(spatial_cross_attention(fused, none, f.feats, f.rig, cfg.bev, layer.sca).first);
  expect_bitwise(got.bev, want);
}

TEST(Model, AuxiliaryOutputCounts) {
  auto cfg = tiny_config();
  cfg.encoder_layers = 3;
  cfg.decoder_layers = 2;
  const auto gt = two_boxes();
  const auto f = random_frame(cfg.channels, 8);
  const Model<T> on(cfg);
  const auto r_on = on.forward(f.input(), nullptr);
  const auto l_on = on.loss(r_on, gt);
  EXPECT_EQ(l_on.det_sets, 2u + 3u - 1u);
  EXPECT_EQ(l_on.heatmaps, 3u);

  cfg.intermediate_on = false;
  const Model<T> off(cfg);
  const auto r_off = off.forward(f.input(), nullptr);
  const auto l_off = off.loss(r_off, gt);
  EXPECT_EQ(l_off.det_sets, 2u);
  EXPECT_EQ(l_off.heatmaps, 3u);
  // Same parameters, so the difference is exactly the intermediate summands.
  expect_bitwise(r_on.dets.back().boxes, r_off.dets.back().boxes);
  double extra = 0;
  for (const auto& d : r_on.intermediate) {
    const auto l = detection_loss(d, gt, hungarian_match(d, gt, cfg.lambda_cls, cfg.lambda_box));
    extra += cfg.lambda_cls * l.cls.item() + cfg.lambda_box * l.box.item();
  }
  EXPECT_GT(extra, 0.0);
  EXPECT_NEAR(l_on.total.item() - l_off.total.item(), extra, 1e-9 * std::abs(l_on.total.item()));
}

TEST(Model, VectorDecodingToggleOnlySwapsQuerySource) {
  auto cfg = tiny_config();
  cfg.intermediate_on = false;
  const Model<T> on(cfg);
  cfg.vector_decoding_on = false;
  const Model<T> off(cfg);

  const auto& a = on.params().items();
  const auto& b = off.params().items();
  ASSERT_EQ(b.size(), a.size() + 1);
  std::size_t j = 0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    if (b[i].first == "dec.query_embed") continue;
    ASSERT_EQ(a[j].first, b[i].first);
    expect_bitwise(a[j].second, b[i].second);
    ++j;
  }

  const auto f = random_frame(cfg.channels, 9);
  const auto ra = on.forward(f.input(), nullptr), rb = off.forward(f.input(), nullptr);
  expect_bitwise(ra.state.bev, rb.state.bev);
  ASSERT_EQ(ra.dets.size(), rb.dets.size());
  for (std::size_t l = 0; l < ra.dets.size(); ++l) EXPECT_EQ(ra.dets[l].boxes.shape(), rb.dets[l].boxes.shape());
  const auto la = on.loss(ra, two_boxes()), lb = off.loss(rb, two_boxes());
  EXPECT_EQ(la.det_sets, lb.det_sets);
  EXPECT_EQ(la.heatmaps, lb.heatmaps);
}

TEST(Model, ToggleChangesParameterCount) {
  const auto base = Model<T>(tiny_config()).params().count();
  auto with = [&](auto edit) {
    auto c = tiny_config();
    edit(c);
    return Model<T>(c).params().count();
  };
  EXPECT_LT(with([](ModelConfig& c) { c.scatter.offsets_on = false; }), base);
  EXPECT_LT(with([](ModelConfig& c) { c.scatter.prefusion_on = false; }), base);
  EXPECT_LT(with([](ModelConfig& c) { c.temporal_on = false; }), base);
  EXPECT_LT(with([](ModelConfig& c) { c.vector_on = false; }), base);
  EXPECT_GT(with([](ModelConfig& c) { c.vector_decoding_on = false; }), base);
}

TEST(Model, PreviousFrameIsDetachedAndChangesOutput) {
  const auto cfg = tiny_config();
  const Model<T> m(cfg);
  const auto f0 = random_frame(cfg.channels, 10, EgoPose::from_xy_yaw(0, 0, 0));
  const auto f1 = random_frame(cfg.channels, 11, EgoPose::from_xy_yaw(1.0, 0.5, 0.1));
  const auto prev = m.to_prev(m.forward(f0.input(), nullptr), f0.ego);
  EXPECT_FALSE(prev.bev_grid.requires_grad());
  ASSERT_TRUE(prev.vq);
  EXPECT_FALSE(prev.vq->vx.requires_grad());

  const auto with_prev = m.forward(f1.input(), &prev);
  const auto without = m.forward(f1.input(), nullptr);
  double diff = 0;
  for (std::size_t i = 0; i < with_prev.state.bev.numel(); ++i)
    diff += std::abs(with_prev.state.bev.at(i) - without.state.bev.at(i));
  EXPECT_GT(diff, 1e-6);
}

TEST(Model, LossBackwardReachesEveryParameter) {
  const auto cfg = tiny_config();
  const Model<T> m(cfg);
  const auto f = random_frame(cfg.channels, 12);
  const auto r = m.forward(f.input(), nullptr);
  auto l = m.loss(r, two_boxes());
  EXPECT_TRUE(std::isfinite(l.total.item()));
  backward(l.total);
  for (const auto& [name, t] : m.params().items()) {
    ASSERT_TRUE(t.has_grad()) << name;
    for (T g : t.grad()) ASSERT_TRUE(std::isfinite(g)) << name;
  }
}

TEST(Model, DecoderChainGradientToVectorQueries) {
  auto cfg = tiny_config();
  cfg.channels = 4;
  cfg.heads = 1;
  cfg.points = 1;
  cfg.encoder_layers = 2;
  cfg.decoder_layers = 2;
  cfg.bev.h_lr = cfg.bev.w_lr = 2;
  cfg.bev.h_hr = cfg.bev.w_hr = 4;
  cfg.scatter.k = 1;
  cfg.detach_refs = false;
  const auto gt = std::vector<Box3D>{two_boxes()[0]};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    cfg.seed = seed;
    Model<T> m(cfg);
    Rng init(seed + 200);
    for (auto& [name, t] : m.params().items())
      if (name.ends_with(".reg2.weight"))
        for (auto& v : t.data()) v = init.uniform(-0.5, 0.5);
    RigSpec rs;
    rs.image_h = rs.image_w = 4;
    Frame f{make_surround_rig(rs), {}, {}};
    Rng rng(seed + 100);
    for (std::size_t i = 0; i < rs.cameras; ++i) f.feats.push_back(random_tensor({4, 4, cfg.channels}, rng, -1, 1, false));
    std::vector<Tensor<T>> check;
    for (const auto& [name, t] : m.params().items())
      if (name == "hr.vx" || name == "hr.vy" || name.ends_with(".query_pos") || name.ends_with(".ref.weight"))
        check.push_back(t);
    ASSERT_EQ(check.size(), 4u);
    const auto res = check_gradients_detailed<T>(
        [&] { return m.loss(m.forward(f.input(), nullptr), gt).total; }, check, 1e-6);
    EXPECT_LT(res.max_rel_error, 1e-3) << "seed " << seed << " param " << res.worst_param << "[" << res.worst_index
                                       << "] analytic " << res.analytic << " numeric " << res.numeric;
  }
}
