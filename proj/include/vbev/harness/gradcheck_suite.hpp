#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "vbev/harness/config.hpp"
#include "vbev/model.hpp"

namespace vbev {

// One differentiable operation with a seeded fixture. `chain` entries are
// long compositions held to the looser chain threshold.
struct GradCheckEntry {
  std::string name;
  bool chain = false;
  std::function<GradCheckResult(std::uint64_t seed)> run;
};

struct GradCheckOpReport {
  std::string name;
  double threshold = 0;
  double max_rel_error = 0;
  std::uint64_t worst_seed = 0;
  std::size_t seeds = 0;
  bool passed = false;
};

struct GradCheckReport {
  std::vector<GradCheckOpReport> ops;
  bool passed() const {
    return !ops.empty() && std::all_of(ops.begin(), ops.end(), [](const auto& o) { return o.passed; });
  }
};

namespace gc {

using D = double;

inline Tensor<D> uniform(Shape shape, Rng& rng, double lo = -1, double hi = 1, bool grad = true) {
  Buffer<D> v(numel_of(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor<D>::from_buffer(std::move(shape), std::move(v), grad);
}

inline Tensor<D> probe(const Tensor<D>& t, std::uint64_t seed) {
  Rng rng(seed ^ 0x9E3779B97F4A7C15ull);
  std::vector<D> w(t.numel());
  for (auto& x : w) x = rng.uniform(-1.0, 1.0);
  return sum(mul_const<D>(t, w));
}

inline BevSpec small_spec() {
  BevSpec s;
  s.h_lr = s.w_lr = 4;
  s.h_hr = s.w_hr = 8;
  s.x_min = s.y_min = -8;
  s.x_max = s.y_max = 8;
  return s;
}

inline Tensor<D> random_coords(std::size_t n, double w, double h, Rng& rng, bool grad = false) {
  std::vector<Vec2<D>> pts;
  for (std::size_t i = 0; i < n; ++i) pts.push_back({rng.uniform(0, w), rng.uniform(0, h)});
  return coords_tensor(pts, grad);
}

inline SparseHrSet<D> random_sparse(const VectorQueryPair<D>& vq, std::size_t per_cell, Rng& rng, bool grad) {
  const std::size_t w = vq.w_hr(), h = vq.h_hr();
  std::vector<VectorCell> groups;
  std::vector<Vec2<D>> pts;
  for (std::size_t x = 0; x < w; ++x)
    for (std::size_t r = 0; r < per_cell; ++r) {
      groups.push_back({Axis::x, std::uint32_t(x)});
      pts.push_back({x + 0.5, rng.uniform(0, double(h))});
    }
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t r = 0; r < per_cell; ++r) {
      groups.push_back({Axis::y, std::uint32_t(y)});
      pts.push_back({rng.uniform(0, double(w)), y + 0.5});
    }
  return {coords_tensor(pts), uniform({pts.size(), vq.channels()}, rng, -1, 1, grad), groups};
}

// Random offsets and attention logits so the sampling path is exercised
// away from the zero-initialized reference points.
inline DeformAttnParams<D> random_deform(std::size_t c, std::size_t heads, std::size_t points, Rng& rng) {
  DeformAttnParams<D> p(c, heads, points, rng);
  p.offsets.weight = uniform({c, heads * points * 2}, rng, -0.5, 0.5);
  p.weights.weight = uniform({c, heads * points}, rng, -0.5, 0.5);
  p.value.bias = uniform({c}, rng, -0.1, 0.1);
  p.output.bias = uniform({c}, rng, -0.1, 0.1);
  return p;
}

inline void scale(std::initializer_list<Tensor<D>*> ts, double f) {
  for (auto* t : ts)
    for (auto& v : t->data()) v *= f;
}

inline GradCheckResult bilinear(std::uint64_t seed) {
  Rng rng(seed);
  auto grid = uniform({4, 5, 6}, rng);
  auto coords = uniform({7, 2}, rng, 0.2, 3.8);
  return check_gradients_detailed<D>([&] { return probe(bilinear_sample(grid, coords), seed); }, {grid, coords});
}

inline GradCheckResult gaussian_focal(std::uint64_t seed) {
  Rng rng(seed);
  auto logits = uniform({3, 4}, rng);
  std::vector<D> target(12);
  for (auto& t : target) t = rng.uniform() < 0.2 ? 1.0 : rng.uniform(0, 0.9);
  return check_gradients_detailed<D>([&] { return gaussian_focal_loss<D>(logits, target); }, {logits});
}

inline GradCheckResult sigmoid_focal(std::uint64_t seed) {
  Rng rng(seed);
  auto logits = uniform({3, 4}, rng);
  std::vector<D> onehot(12, 0.0);
  onehot[rng.index(12)] = 1.0;
  return check_gradients_detailed<D>([&] { return sigmoid_focal_loss<D>(logits, onehot, 2.0); }, {logits});
}

inline GradCheckResult attention(std::uint64_t seed) {
  Rng rng(seed);
  auto q = uniform({3, 4}, rng), k = uniform({6, 4}, rng), v = uniform({6, 4}, rng);
  const auto dense = check_gradients_detailed<D>([&] { return probe(attention_core(q, k, v, 2), seed); }, {q, k, v});
  const auto blocked =
      check_gradients_detailed<D>([&] { return probe(attention_core(q, k, v, 2, 2), seed); }, {q, k, v});
  return dense.max_rel_error >= blocked.max_rel_error ? dense : blocked;
}

inline GradCheckResult heatmap(std::uint64_t seed) {
  const auto s = small_spec();
  const std::vector<Box3D> boxes{{.cx = 2.f, .cy = -3.f, .w = 2.f, .l = 4.f}};
  const auto gt = build_gt_heatmap<D>(boxes, s, GridKind::hr);
  const auto gt_lr = build_gt_heatmap<D>(boxes, s, GridKind::lr);
  Rng rng(seed);
  HeatmapParams<D> p(8, rng);
  auto vq = init_vector_queries<D>(s.w_hr, s.h_hr, 8, seed + 100);
  scale({&vq.vx, &vq.vy}, 20);
  auto bev = uniform({4, 4, 8}, rng);
  return check_gradients_detailed<D>([&] { return heatmap_loss<D>(predict_heatmap(vq, bev, p, s), gt, gt_lr); },
                                     {vq.vx, vq.vy, bev, p.conv1.weight, p.mlp_x.layers[0].weight});
}

inline GradCheckResult compose(std::uint64_t seed, Combine mode) {
  Rng rng(seed);
  auto vq = init_vector_queries<D>(7, 6, 3, seed + 8, mode);
  scale({&vq.vx, &vq.vy}, 30);
  auto coords = random_coords(15, 7, 6, rng, true);
  return check_gradients_detailed<D>([&] { return probe(compose_features(vq, coords), seed); },
                                     {vq.vx, vq.vy, vq.pex, vq.pey, coords});
}

inline GradCheckResult deform_offsets_op(std::uint64_t seed) {
  Rng rng(seed);
  const auto vq = init_vector_queries<D>(6, 8, 4, seed);
  OffsetParams<D> p(4, 2, rng);
  p.fc2 = Linear<D>(4, 4, rng);
  // A nonzero bias keeps samples off cell centers, where bilinear
  // interpolation has kinks.
  p.fc2.bias = uniform({4}, rng);
  const auto sel = select_topk_directional(uniform({8, 6}, rng, 0, 1, false), 2);
  return check_gradients_detailed<D>(
      [&] { return probe(compose_features(vq, deform_offsets(vq, sel, &p, ScatterConfig{}).coords), seed); },
      {p.fc2.weight, p.fc2.bias, p.fc1.weight, vq.vx, vq.vy});
}

inline GradCheckResult prefuse(std::uint64_t seed) {
  const auto s = small_spec();
  Rng rng(seed);
  Linear<D> proj(8, 4, rng);
  auto vq = init_vector_queries<D>(s.w_hr, s.h_hr, 4, seed);
  auto bev = uniform({4, 4, 4}, rng);
  const auto coords = random_coords(12, 6, 8, rng);
  return check_gradients_detailed<D>(
      [&] {
        const auto hr = compose_sparse_hr(vq, coords, std::vector<VectorCell>(12, {Axis::y, 1}));
        return probe(prefuse_lr_hr(bev, hr, proj, s).feats, seed);
      },
      {bev, vq.vx, vq.vy, proj.weight});
}

inline GradCheckResult postfuse(std::uint64_t seed) {
  const auto s = small_spec();
  Rng rng(seed);
  const auto p = random_deform(4, 2, 2, rng);
  const auto vq = init_vector_queries<D>(8, 8, 4, seed);
  auto hr = random_sparse(vq, 1, rng, true);
  hr.coords.node().requires_grad = true;
  auto grid = uniform({4, 4, 4}, rng);
  return check_gradients_detailed<D>([&] { return probe(postfuse_lr_hr(hr, grid, s, p).feats, seed); },
                                     {hr.feats, grid, hr.coords, p.offsets.weight, p.output.weight});
}

inline GradCheckResult deformable(std::uint64_t seed) {
  Rng rng(seed);
  auto p = random_deform(4, 2, 2, rng);
  auto grid = uniform({4, 5, 4}, rng);
  auto q = uniform({3, 4}, rng);
  auto ref = random_coords(3, 5, 4, rng, true);
  return check_gradients_detailed<D>([&] { return probe(deformable_attention(q, ref, grid, p), seed); },
                                     {q, ref, grid, p.offsets.weight, p.weights.weight, p.value.weight,
                                      p.output.weight});
}

inline GradCheckResult sca(std::uint64_t seed) {
  const auto s = small_spec();
  const auto rig = make_surround_rig({.cameras = 2, .image_h = 8, .image_w = 8});
  Rng rng(seed);
  ScaParams<D> p(4, 2, 2, rng);
  p.attn = random_deform(4, 2, 2, rng);
  auto lr = uniform({16, 4}, rng);
  const auto vq = init_vector_queries<D>(8, 8, 4, seed);
  auto hr = random_sparse(vq, 1, rng, true);
  std::vector<Tensor<D>> feats{uniform({8, 8, 4}, rng), uniform({8, 8, 4}, rng)};
  return check_gradients_detailed<D>(
      [&] {
        const auto [b, h] = spatial_cross_attention(lr, hr, feats, rig, s, p);
        return add(probe(b, seed), probe(h.feats, seed + 1));
      },
      {lr, hr.feats, feats[0], feats[1], p.attn.offsets.weight, p.attn.value.weight, p.norm.gamma});
}

inline GradCheckResult gather(std::uint64_t seed, GatherMode mode) {
  Rng rng(seed);
  auto vq = init_vector_queries<D>(4, 3, 4, seed);
  scale({&vq.vx, &vq.vy, &vq.pex, &vq.pey}, 30);
  GatherParams<D> p(4, 2, rng);
  auto hr = random_sparse(vq, 2, rng, true);
  return check_gradients_detailed<D>(
      [&] {
        const auto [vx, vy] = gather_vector_queries(vq, hr, p, mode, true);
        return add(probe(vx, seed), probe(vy, seed + 7));
      },
      {vq.vx, vq.vy, vq.pex, vq.pey, hr.feats, p.attn.q.weight, p.attn.k.weight, p.norm.gamma});
}

inline GradCheckResult temporal_vector(std::uint64_t seed) {
  Rng rng(seed);
  auto cur = init_vector_queries<D>(4, 3, 4, seed);
  auto prev = init_vector_queries<D>(4, 3, 4, seed + 50);
  scale({&cur.vx, &cur.vy, &prev.vx, &prev.vy}, 30);
  MhaParams<D> p(4, 2, rng);
  return check_gradients_detailed<D>(
      [&] {
        const auto out = temporal_vector_fusion(cur, &prev, p);
        return add(probe(out.vx, seed), probe(out.vy, seed + 3));
      },
      {cur.vx, cur.vy, prev.vx, prev.vy, p.q.weight, p.v.weight});
}

inline GradCheckResult temporal_bev(std::uint64_t seed) {
  BevSpec s = small_spec();
  s.x_min = s.y_min = -4;
  s.x_max = s.y_max = 4;
  Rng rng(seed);
  auto rows = uniform({16, 4}, rng, -3, 3);
  auto prev = uniform({4, 4, 4}, rng, -3, 3);
  MhaParams<D> p(4, 2, rng);
  const auto cur_pose = EgoPose::from_xy_yaw(0.3, 0.1, 0.05);
  const EgoPose prev_pose;
  return check_gradients_detailed<D>(
      [&] { return probe(temporal_bev_fusion(rows, &prev, s, cur_pose, prev_pose, p), seed); },
      {rows, prev, p.k.weight, p.o.weight});
}

// Full model: camera features through the encoder, decoder, matching and
// detection loss, differentiated w.r.t. the vector queries.
inline GradCheckResult decoder_chain(std::uint64_t seed) {
  ModelConfig cfg;
  cfg.channels = 4;
  cfg.heads = cfg.points = 1;
  cfg.encoder_layers = cfg.decoder_layers = 2;
  cfg.bev = small_spec();
  cfg.bev.h_lr = cfg.bev.w_lr = 2;
  cfg.bev.h_hr = cfg.bev.w_hr = 4;
  cfg.scatter.k = 1;
  cfg.detach_refs = false;
  cfg.seed = seed;
  Model<D> m(cfg);
  Rng init(seed + 200);
  // Refinement heads start at zero; random ones exercise the path from each
  // layer's boxes into the next layer's reference points.
  for (auto& [name, t] : m.params().items())
    if (name.ends_with(".reg2.weight"))
      for (auto& v : t.data()) v = init.uniform(-0.5, 0.5);
  RigSpec rs;
  rs.image_h = rs.image_w = 4;
  const auto rig = make_surround_rig(rs);
  Rng rng(seed + 100);
  std::vector<Tensor<D>> feats;
  for (std::size_t i = 0; i < rs.cameras; ++i) feats.push_back(uniform({4, 4, cfg.channels}, rng, -1, 1, false));
  Box3D gt;
  gt.cx = 2.5f, gt.cy = -3.0f, gt.w = 1.8f, gt.l = 4.0f, gt.h = 1.5f, gt.yaw = 0.3f, gt.vx = 1.0f;
  std::vector<Tensor<D>> check;
  for (const auto& [name, t] : m.params().items())
    if (name == "hr.vx" || name == "hr.vy" || name.ends_with(".query_pos") || name.ends_with(".ref.weight"))
      check.push_back(t);
  const FrameInput<D> in{feats, rig, EgoPose{}};
  return check_gradients_detailed<D>([&] { return m.loss(m.forward(in, nullptr), {gt}).total; }, check, 1e-6);
}

}  // namespace gc

inline const std::vector<GradCheckEntry>& gradcheck_registry() {
  static const std::vector<GradCheckEntry> entries{
      {"bilinear", false, gc::bilinear},
      {"gaussian_focal", false, gc::gaussian_focal},
      {"sigmoid_focal", false, gc::sigmoid_focal},
      {"attention_core", false, gc::attention},
      {"heatmap", false, gc::heatmap},
      {"compose_add", false, [](std::uint64_t s) { return gc::compose(s, Combine::add); }},
      {"compose_mult", false, [](std::uint64_t s) { return gc::compose(s, Combine::multiply); }},
      {"deform_offsets", false, gc::deform_offsets_op},
      {"prefuse", false, gc::prefuse},
      {"postfuse", false, gc::postfuse},
      {"deformable_attention", false, gc::deformable},
      {"sca", false, gc::sca},
      {"gather_blocked", false, [](std::uint64_t s) { return gc::gather(s, GatherMode::blocked); }},
      {"gather_global", false, [](std::uint64_t s) { return gc::gather(s, GatherMode::global); }},
      {"temporal_vector", false, gc::temporal_vector},
      {"temporal_bev", false, gc::temporal_bev},
      {"decoder_chain", true, gc::decoder_chain},
  };
  return entries;
}

// A square whose backward pass is deliberately off by 50%. The suite must
// report it as failing.
inline GradCheckEntry corrupted_gradient_fixture() {
  return {"corrupted_square", false, [](std::uint64_t seed) {
            Rng rng(seed);
            auto x = gc::uniform({5}, rng);
            auto bad_square = [](const Tensor<double>& a) {
              Buffer<double> v(a.numel());
              for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.at(i) * a.at(i);
              return make_result<double>(
                  a.shape(), std::move(v), {a},
                  [](Node<double>& o) {
                    if (double* g = grad_sink(o, 0))
                      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += 3.0 * o.inputs[0]->value[i] * o.grad[i];
                  },
                  "bad_square");
            };
            return check_gradients_detailed<double>([&] { return gc::probe(bad_square(x), seed); }, {x});
          }};
}

// Comma-separated filter; an entry runs when its name contains any token.
// An empty filter selects everything.
inline std::vector<GradCheckEntry> filter_entries(const std::vector<GradCheckEntry>& all, const std::string& filter) {
  std::vector<std::string> tokens;
  std::size_t start = 0;
  while (start <= filter.size()) {
    const auto end = std::min(filter.find(',', start), filter.size());
    if (end > start) tokens.push_back(filter.substr(start, end - start));
    start = end + 1;
  }
  if (tokens.empty()) return all;
  std::vector<GradCheckEntry> out;
  for (const auto& e : all)
    if (std::any_of(tokens.begin(), tokens.end(), [&](const auto& t) { return e.name.find(t) != std::string::npos; }))
      out.push_back(e);
  if (out.empty()) throw ConfigError("gradcheck.filter '" + filter + "' matches no registered op");
  return out;
}

inline GradCheckReport run_gradcheck(const GradcheckConfig& cfg, const std::vector<GradCheckEntry>& entries) {
  GradCheckReport report;
  for (const auto& e : filter_entries(entries, cfg.filter)) {
    GradCheckOpReport op{e.name, e.chain ? cfg.chain_threshold : cfg.threshold};
    for (std::uint64_t seed = 0; seed < cfg.seeds; ++seed) {
      const auto r = e.run(seed);
      if (seed == 0 || !(r.max_rel_error <= op.max_rel_error)) {
        op.max_rel_error = r.max_rel_error;
        op.worst_seed = seed;
      }
      ++op.seeds;
    }
    op.passed = op.seeds > 0 && op.max_rel_error < op.threshold;
    report.ops.push_back(op);
  }
  return report;
}

inline GradCheckReport run_gradcheck(const GradcheckConfig& cfg) { return run_gradcheck(cfg, gradcheck_registry()); }

inline std::string gradcheck_report_text(const GradCheckReport& r) {
  std::string s = "op,max_rel_error,threshold,worst_seed,seeds,status\n";
  char buf[256];
  for (const auto& o : r.ops) {
    std::snprintf(buf, sizeof(buf), "%s,%.3e,%.0e,%llu,%zu,%s\n", o.name.c_str(), o.max_rel_error, o.threshold,
                  static_cast<unsigned long long>(o.worst_seed), o.seeds, o.passed ? "PASS" : "FAIL");
    s += buf;
  }
  return s;
}

}  // namespace vbev
