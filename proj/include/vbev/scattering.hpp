#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "vbev/box.hpp"
#include "vbev/geometry.hpp"
#include "vbev/vectorrep.hpp"

namespace vbev {

struct ScatterConfig {
  std::size_t k = 3;
  std::size_t delta = 2;
  double offset_scale = 3.0;
  bool offsets_on = true;
  bool prefusion_on = true;

  void validate() const {
    if (k < 1) throw std::invalid_argument("ScatterConfig: k must be >= 1");
    if (delta < 1) throw std::invalid_argument("ScatterConfig: delta must be >= 1");
    if (!(offset_scale > 0)) throw std::invalid_argument("ScatterConfig: offset_scale must be > 0");
  }
};

template <typename T>
struct Heatmap {
  Tensor<T> logits;         // h_hr x w_hr, h + upsample(h')
  Tensor<T> probs;          // sigmoid(logits)
  Tensor<T> logits_h;       // h_hr x w_hr
  Tensor<T> logits_hprime;  // h_lr x w_lr
};

// The heatmap branch: factorized term from the two vector MLPs plus a small
// conv stack over the LR BEV.
template <typename T>
struct HeatmapParams {
  Mlp<T> mlp_x, mlp_y;
  Linear<T> conv1;  // 3x3 conv, C*9 -> C/4
  Linear<T> conv2;  // 1x1 conv, C/4 -> 1

  HeatmapParams() = default;
  HeatmapParams(std::size_t c, Rng& rng)
      : mlp_x({c, c, c, c}, rng),
        mlp_y({c, c, c, c}, rng),
        conv1(9 * c, std::max<std::size_t>(1, c / 4), rng),
        conv2(std::max<std::size_t>(1, c / 4), 1, rng) {
    // Start near p = 0.1 so the many negatives do not swamp the first steps.
    conv2.bias.data()[0] = T(-2.19);
  }

  void register_params(ParamSet<T>& ps, const std::string& prefix) const {
    mlp_x.register_params(ps, prefix + ".mlp_x");
    mlp_y.register_params(ps, prefix + ".mlp_y");
    conv1.register_params(ps, prefix + ".conv1");
    conv2.register_params(ps, prefix + ".conv2");
  }
};

template <typename T>
struct OffsetParams {
  Linear<T> fc1;
  Linear<T> fc2;  // zero-initialized so training starts undeformed

  OffsetParams() = default;
  OffsetParams(std::size_t c, std::size_t delta, Rng& rng) : fc1(c, c, rng), fc2(Linear<T>::zero(c, 2 * delta)) {}

  Tensor<T> operator()(const Tensor<T>& x) const { return fc2(relu(fc1(x))); }

  void register_params(ParamSet<T>& ps, const std::string& prefix) const {
    fc1.register_params(ps, prefix + ".fc1");
    fc2.register_params(ps, prefix + ".fc2");
  }
};

namespace detail {

// Row indices for a 3x3 same-padded neighbourhood of every cell of an h x w
// grid; -1 marks padding.
inline std::vector<std::int64_t> im2col3x3(std::size_t h, std::size_t w) {
  std::vector<std::int64_t> idx;
  idx.reserve(h * w * 9);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      for (int di = -1; di <= 1; ++di)
        for (int dj = -1; dj <= 1; ++dj) {
          const auto r = std::int64_t(i) + di, c = std::int64_t(j) + dj;
          const bool inside = r >= 0 && c >= 0 && r < std::int64_t(h) && c < std::int64_t(w);
          idx.push_back(inside ? r * std::int64_t(w) + c : -1);
        }
  return idx;
}

// LR-cell coordinates of every HR cell center, row-major over the HR grid.
template <typename T>
std::vector<Vec2<T>> hr_centers_in_lr(const BevSpec& s) {
  const auto k = hr_to_lr_scale(s);
  std::vector<Vec2<T>> pts;
  pts.reserve(s.h_hr * s.w_hr);
  for (std::size_t i = 0; i < s.h_hr; ++i)
    for (std::size_t j = 0; j < s.w_hr; ++j) pts.push_back({T((j + 0.5) * k[0]), T((i + 0.5) * k[1])});
  return pts;
}

}  // namespace detail

// bev_lr: h_lr x w_lr x C.
template <typename T>
Heatmap<T> predict_heatmap(const VectorQueryPair<T>& vq, const Tensor<T>& bev_lr, const HeatmapParams<T>& p,
                           const BevSpec& spec) {
  vq.validate();
  if (bev_lr.rank() != 3 || bev_lr.dim(2) != vq.channels() || bev_lr.dim(0) != spec.h_lr ||
      bev_lr.dim(1) != spec.w_lr)
    throw ShapeError("predict_heatmap: bev_lr " + shape_str(bev_lr.shape()) + " vs C=" +
                     std::to_string(vq.channels()));
  if (vq.w_hr() != spec.w_hr || vq.h_hr() != spec.h_hr) throw ShapeError("predict_heatmap: HR extent mismatch");
  if (p.conv1.in() != 9 * vq.channels()) throw ShapeError("predict_heatmap: conv channel mismatch");

  Heatmap<T> hm;
  hm.logits_h = matmul(p.mlp_y(vq.vy), transpose(p.mlp_x(vq.vx)));

  const std::size_t hl = spec.h_lr, wl = spec.w_lr, c = vq.channels();
  const auto flat = reshape(bev_lr, {hl * wl, c});
  const auto idx = detail::im2col3x3(hl, wl);
  const auto cols = reshape(gather_rows<T>(flat, idx), {hl * wl, 9 * c});
  hm.logits_hprime = reshape(p.conv2(relu(p.conv1(cols))), {hl, wl});

  const auto up = bilinear_sample(reshape(hm.logits_hprime, {hl, wl, 1}), detail::hr_centers_in_lr<T>(spec));
  hm.logits = add(hm.logits_h, reshape(up, {spec.h_hr, spec.w_hr}));
  hm.probs = sigmoid(hm.logits);
  return hm;
}

// Gaussian focal loss on the fused map plus the LR conv map.
template <typename T>
Tensor<T> heatmap_loss(const Heatmap<T>& hm, std::span<const T> gt, std::span<const T> gt_lr) {
  return add(gaussian_focal_loss(hm.logits, gt), gaussian_focal_loss(hm.logits_hprime, gt_lr));
}

template <typename T>
struct TopkSelection {
  std::vector<Vec2<T>> coords;  // HR cell centers
  std::vector<VectorCell> groups;

  std::size_t size() const { return coords.size(); }
};

// For each column the k most confident rows (owned by that V^X cell), then
// for each row the k most confident columns (owned by that V^Y cell). Ties go
// to the smaller index.
template <typename T>
TopkSelection<T> select_topk_directional(const Tensor<T>& probs, std::size_t k) {
  detail::require_2d(probs, "select_topk_directional");
  const std::size_t h = probs.dim(0), w = probs.dim(1);
  if (k < 1 || k > std::min(h, w)) throw std::invalid_argument("select_topk_directional: k out of range");
  const T* p = probs.ptr();
  TopkSelection<T> out;
  out.coords.reserve((w + h) * k);
  out.groups.reserve((w + h) * k);
  std::vector<std::uint32_t> order;

  auto pick = [&](std::size_t len, auto value) {
    order.resize(len);
    std::iota(order.begin(), order.end(), 0u);
    std::partial_sort(order.begin(), order.begin() + std::ptrdiff_t(k), order.end(), [&](auto a, auto b) {
      const T va = value(a), vb = value(b);
      return va > vb || (va == vb && a < b);
    });
  };
  for (std::size_t x = 0; x < w; ++x) {
    pick(h, [&](std::size_t y) { return p[y * w + x]; });
    for (std::size_t r = 0; r < k; ++r) {
      out.coords.push_back({T(x + 0.5), T(order[r] + 0.5)});
      out.groups.push_back({Axis::x, std::uint32_t(x)});
    }
  }
  for (std::size_t y = 0; y < h; ++y) {
    pick(w, [&](std::size_t x) { return p[y * w + x]; });
    for (std::size_t r = 0; r < k; ++r) {
      out.coords.push_back({T(order[r] + 0.5), T(y + 0.5)});
      out.groups.push_back({Axis::y, std::uint32_t(y)});
    }
  }
  return out;
}

template <typename T>
struct DeformedProposals {
  Tensor<T> coords;  // (N*delta) x 2, entry i*delta+j derives from proposal i
  std::vector<VectorCell> groups;

  std::size_t size() const { return groups.size(); }
};

// Moves every proposal by delta learned offsets predicted from its composed
// feature. Without an offset network the proposals are simply repeated.
template <typename T>
DeformedProposals<T> deform_offsets(const VectorQueryPair<T>& vq, const TopkSelection<T>& topk,
                                    const OffsetParams<T>* p, const ScatterConfig& cfg) {
  cfg.validate();
  const std::size_t n = topk.size(), d = cfg.delta;
  DeformedProposals<T> out;
  out.groups.reserve(n * d);
  std::vector<Vec2<T>> rep;
  rep.reserve(n * d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      rep.push_back(topk.coords[i]);
      out.groups.push_back(topk.groups[i]);
    }
  auto base = coords_tensor(rep);
  if (!cfg.offsets_on || p == nullptr || n == 0) {
    out.coords = base;
    return out;
  }
  if (p->fc2.out() != 2 * d) throw ShapeError("deform_offsets: offset head does not produce 2*delta values");
  const auto feats = compose_features(vq, coords_tensor(topk.coords));
  const auto off = reshape(scale(tanh((*p)(feats)), T(cfg.offset_scale)), {n * d, 2});
  const std::vector<T> lo{T(0), T(0)}, hi{T(vq.w_hr()), T(vq.h_hr())};
  out.coords = clamp_cols<T>(add(base, off), lo, hi);
  return out;
}

// Concatenates the LR BEV sampled at each sparse position with the HR
// feature and projects 2C -> C.
template <typename T>
SparseHrSet<T> prefuse_lr_hr(const Tensor<T>& bev_lr, const SparseHrSet<T>& hr, const Linear<T>& proj,
                             const BevSpec& spec) {
  if (hr.size() == 0) return hr;
  const auto b_sp = bilinear_sample(bev_lr, hr_to_lr_coords<T>(spec, hr.coords));
  return {hr.coords, proj(concat_cols<T>({b_sp, hr.feats})), hr.group_of};
}

// CenterNet-style target: one Gaussian per box at its center cell, radius
// scaling with the footprint, overlaps combined by max.
template <typename T>
std::vector<T> build_gt_heatmap(const std::vector<Box3D>& boxes, const BevSpec& spec, GridKind grid) {
  const std::size_t h = spec.height(grid), w = spec.width(grid);
  std::vector<T> map(h * w, T(0));
  const double cell = std::min(spec.x_range() / double(w), spec.y_range() / double(h));
  for (const auto& b : boxes) {
    const auto c = world_to_cell(spec, grid, {double(b.cx), double(b.cy)});
    if (c[0] < 0 || c[1] < 0 || c[0] >= double(w) || c[1] >= double(h)) continue;
    const auto ci = std::int64_t(std::floor(c[1])), cj = std::int64_t(std::floor(c[0]));
    const auto r = std::max<std::int64_t>(1, std::llround(0.5 * std::max(b.w, b.l) / cell));
    const double sigma = double(2 * r + 1) / 6.0;
    for (std::int64_t di = -r; di <= r; ++di)
      for (std::int64_t dj = -r; dj <= r; ++dj) {
        const auto i = ci + di, j = cj + dj;
        if (i < 0 || j < 0 || i >= std::int64_t(h) || j >= std::int64_t(w)) continue;
        const T v = T(std::exp(-double(di * di + dj * dj) / (2 * sigma * sigma)));
        T& dst = map[std::size_t(i) * w + std::size_t(j)];
        dst = std::max(dst, v);
      }
  }
  return map;
}

}  // namespace vbev
