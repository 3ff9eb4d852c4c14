#pragma once

#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vbev/geometry.hpp"
#include "vbev/vectorrep.hpp"

namespace vbev {

enum class GatherMode { blocked, global };

inline const char* to_string(GatherMode m) { return m == GatherMode::blocked ? "blocked" : "global"; }

template <typename T>
struct DeformAttnParams {
  std::size_t heads = 1, points = 1;
  Linear<T> offsets;  // C -> heads*points*2, in value-grid cells
  Linear<T> weights;  // C -> heads*points, softmax over points
  Linear<T> value;    // C -> C
  Linear<T> output;   // C -> C

  DeformAttnParams() = default;
  DeformAttnParams(std::size_t c, std::size_t heads_, std::size_t points_, Rng& rng)
      : heads(heads_),
        points(points_),
        offsets(Linear<T>::zero(c, heads_ * points_ * 2)),
        weights(Linear<T>::zero(c, heads_ * points_)),
        value(c, c, rng),
        output(c, c, rng) {
    if (heads == 0 || points == 0 || c % heads != 0)
      throw std::invalid_argument("DeformAttnParams: channels must divide into heads");
    // Each head starts looking in its own direction, further out per point.
    auto b = offsets.bias.data();
    for (std::size_t h = 0; h < heads; ++h) {
      const double a = 2.0 * std::numbers::pi * double(h) / double(heads);
      for (std::size_t p = 0; p < points; ++p) {
        b[(h * points + p) * 2] = T(std::cos(a) * 0.5 * double(p + 1));
        b[(h * points + p) * 2 + 1] = T(std::sin(a) * 0.5 * double(p + 1));
      }
    }
  }

  std::size_t channels() const { return value.in(); }

  void register_params(ParamSet<T>& ps, const std::string& prefix) const {
    offsets.register_params(ps, prefix + ".offsets");
    weights.register_params(ps, prefix + ".weights");
    value.register_params(ps, prefix + ".value");
    output.register_params(ps, prefix + ".output");
  }
};

namespace detail {

template <typename T>
Tensor<T> project_grid(const Linear<T>& proj, const Tensor<T>& grid) {
  const std::size_t h = grid.dim(0), w = grid.dim(1);
  return reshape(proj(reshape(grid, {h * w, grid.dim(2)})), {h, w, proj.out()});
}

// rows: (N*heads) x C, row n*heads + h holding head h's weighted sample of
// the unprojected features. Applies head h's slice of the projection to it
// and returns N x C.
template <typename T>
Tensor<T> project_per_head(const Tensor<T>& rows, const Linear<T>& proj, std::size_t heads) {
  const std::size_t n = rows.dim(0) / heads, c = proj.out(), d = c / heads;
  const auto bias = reshape(proj.bias, {1, c});
  std::vector<Tensor<T>> parts;
  std::vector<std::int64_t> idx(n);
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < n; ++i) idx[i] = std::int64_t(i * heads + h);
    parts.push_back(linear(gather_rows<T>(rows, idx), slice_cols(proj.weight, h * d, (h + 1) * d),
                           reshape(slice_cols(bias, h * d, (h + 1) * d), {d})));
  }
  return concat_cols<T>(parts);
}

// Softmax over the points of each head: N x (heads*points) -> same shape.
template <typename T>
Tensor<T> point_softmax(const Tensor<T>& logits, std::size_t heads, std::size_t points) {
  const std::size_t n = logits.dim(0);
  return reshape(softmax(reshape(logits, {n * heads, points}), 1), {n, heads * points});
}

inline std::vector<std::int64_t> repeat_index(std::size_t n, std::size_t times) {
  std::vector<std::int64_t> idx(n * times);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = std::int64_t(i / times);
  return idx;
}

}  // namespace detail

// Deformable attention over a value grid (H x W x C). Queries are N x C and
// ref is N x 2 in value-grid cell units.
template <typename T>
Tensor<T> deformable_attention(const Tensor<T>& queries, const Tensor<T>& ref, const Tensor<T>& value_grid,
                               const DeformAttnParams<T>& p) {
  detail::require_2d(queries, "deformable_attention");
  if (queries.dim(1) != p.channels() || value_grid.rank() != 3 || value_grid.dim(2) != p.channels() ||
      ref.rank() != 2 || ref.dim(0) != queries.dim(0) || ref.dim(1) != 2)
    throw ShapeError("deformable_attention: queries " + shape_str(queries.shape()) + " ref " +
                     shape_str(ref.shape()) + " value " + shape_str(value_grid.shape()));
  const std::size_t n = queries.dim(0), hp = p.heads * p.points;
  if (n == 0) return Tensor<T>::zeros({0, p.channels()});
  const auto base = gather_rows<T>(ref, detail::repeat_index(n, hp));
  const auto locs = add(base, reshape(p.offsets(queries), {n * hp, 2}));
  const auto w = detail::point_softmax(p.weights(queries), p.heads, p.points);
  const auto v = detail::project_grid(p.value, value_grid);
  return p.output(deform_sample(v, locs, w, p.heads, p.points));
}

// ---------------------------------------------------------------------------
// Spatial cross-attention into the camera feature maps.

template <typename T>
struct ScaParams {
  DeformAttnParams<T> attn;
  LayerNorm<T> norm;

  ScaParams() = default;
  ScaParams(std::size_t c, std::size_t heads, std::size_t points, Rng& rng) : attn(c, heads, points, rng), norm(c) {}

  void register_params(ParamSet<T>& ps, const std::string& prefix) const {
    attn.register_params(ps, prefix + ".attn");
    norm.register_params(ps, prefix + ".norm");
  }
};

// One BEV-plane query: its position in cell units of a given grid.
struct PillarQuery {
  Vec2<double> cell;
  GridKind grid;
};

template <typename T>
struct ScaAggregate {
  Tensor<T> out;                  // N x C, after the output projection; zero rows where unhit
  std::vector<std::size_t> hits;  // visible (camera, level) samples per query
};

// Averages deformable attention over every (camera, pillar level) at which a
// query projects into the image. Reference pixels are fixed geometry and
// carry no gradient.
template <typename T>
ScaAggregate<T> sca_aggregate(const Tensor<T>& queries, const std::vector<PillarQuery>& where,
                              const std::vector<Tensor<T>>& cam_feats, const CameraRig& rig, const BevSpec& spec,
                              const DeformAttnParams<T>& p) {
  const std::size_t n = queries.dim(0), c = p.channels(), hp = p.heads * p.points;
  if (where.size() != n) throw ShapeError("sca_aggregate: one position per query required");
  if (cam_feats.size() != rig.cameras.size()) throw ShapeError("sca_aggregate: one feature map per camera");
  ScaAggregate<T> res;
  res.hits.assign(n, 0);
  if (n == 0) {
    res.out = Tensor<T>::zeros({0, c});
    return res;
  }

  const auto offsets = reshape(p.offsets(queries), {n, hp * 2});
  const auto weights = detail::point_softmax(p.weights(queries), p.heads, p.points);

  std::vector<Tensor<T>> per_cam;
  for (std::size_t ci = 0; ci < rig.cameras.size(); ++ci) {
    const auto& cam = rig.cameras[ci];
    const auto& feat = cam_feats[ci];
    if (feat.rank() != 3 || feat.dim(2) != c) throw ShapeError("sca_aggregate: camera feature channels");
    const double sx = double(feat.dim(1)) / double(cam.image_w), sy = double(feat.dim(0)) / double(cam.image_h);
    std::vector<std::int64_t> job_query;
    std::vector<T> refs;
    for (std::size_t q = 0; q < n; ++q) {
      const auto xy = cell_to_world(spec, where[q].grid, where[q].cell);
      for (double z : spec.z_levels) {
        const auto pr = project_point(cam, Eigen::Vector3d(xy[0], xy[1], z));
        if (!pr.visible) continue;
        job_query.push_back(std::int64_t(q));
        for (std::size_t k = 0; k < hp; ++k) {
          refs.push_back(T(pr.uv[0] * sx));
          refs.push_back(T(pr.uv[1] * sy));
        }
        ++res.hits[q];
      }
    }
    if (job_query.empty()) continue;
    const std::size_t jobs = job_query.size();
    const auto off = reshape(gather_rows<T>(offsets, job_query), {jobs * hp, 2});
    const auto locs = add_const<T>(off, refs);
    const auto w = gather_rows<T>(weights, job_query);
    const std::size_t fh = feat.dim(0), fw = feat.dim(1);
    const auto px = touched_pixels(locs, fh, fw);
    // The value projection is linear and each head's point weights sum to
    // one, so it can run either on the touched pixels or on the per-head
    // weighted samples of raw features. Pick the cheaper one (multiply-adds).
    const std::size_t taps = 4 * jobs * hp;
    const bool per_pixel = px.size() * c * c + taps * (c / p.heads) <= jobs * c * c + taps * c;
    const auto sampled = per_pixel
                             ? deform_sample_touched(p.value(gather_rows<T>(reshape(feat, {fh * fw, c}), px)), px, fh,
                                                     fw, locs, w, p.heads, p.points)
                             : detail::project_per_head(
                                   deform_sample(feat, locs, reshape(w, {jobs * p.heads, p.points}), 1, p.points),
                                   p.value, p.heads);
    per_cam.push_back(index_add_rows<T>(sampled, job_query, n));
  }

  std::vector<T> inv(n), mask(n);
  for (std::size_t q = 0; q < n; ++q) {
    inv[q] = res.hits[q] ? T(1) / T(res.hits[q]) : T(0);
    mask[q] = res.hits[q] ? T(1) : T(0);
  }
  if (per_cam.empty()) {
    res.out = Tensor<T>::zeros({n, c});
    return res;
  }
  const auto mean = scale_rows<T>(add_all(per_cam), inv);
  res.out = scale_rows<T>(p.output(mean), mask);
  return res;
}

// Residual and layer norm on hit rows; unhit rows pass through untouched.
template <typename T>
Tensor<T> masked_residual_norm(const Tensor<T>& x, const Tensor<T>& update, const std::vector<std::size_t>& hits,
                               const LayerNorm<T>& norm) {
  std::vector<T> on(hits.size()), off(hits.size());
  for (std::size_t i = 0; i < hits.size(); ++i) {
    on[i] = hits[i] ? T(1) : T(0);
    off[i] = T(1) - on[i];
  }
  return add(scale_rows<T>(norm(add(x, update)), on), scale_rows<T>(x, off));
}

// LR BEV queries (h_lr*w_lr x C, row-major) and sparse HR queries share one
// attention module. Returns the updated LR grid rows and sparse set.
template <typename T>
std::pair<Tensor<T>, SparseHrSet<T>> spatial_cross_attention(const Tensor<T>& lr_queries, const SparseHrSet<T>& hr,
                                                             const std::vector<Tensor<T>>& cam_feats,
                                                             const CameraRig& rig, const BevSpec& spec,
                                                             const ScaParams<T>& p) {
  const std::size_t n_lr = lr_queries.dim(0);
  if (n_lr != spec.h_lr * spec.w_lr) throw ShapeError("spatial_cross_attention: LR query count");
  std::vector<PillarQuery> where;
  where.reserve(n_lr + hr.size());
  for (std::size_t i = 0; i < spec.h_lr; ++i)
    for (std::size_t j = 0; j < spec.w_lr; ++j) where.push_back({{j + 0.5, i + 0.5}, GridKind::lr});
  for (std::size_t i = 0; i < hr.size(); ++i)
    where.push_back({{double(hr.coords.at(i, 0)), double(hr.coords.at(i, 1))}, GridKind::hr});

  const auto q = hr.size() ? concat_rows<T>({lr_queries, hr.feats}) : lr_queries;
  const auto agg = sca_aggregate(q, where, cam_feats, rig, spec, p.attn);
  const auto out = masked_residual_norm(q, agg.out, agg.hits, p.norm);
  SparseHrSet<T> hr_out{hr.coords, hr.size() ? slice_rows(out, n_lr, n_lr + hr.size()) : hr.feats, hr.group_of};
  return {hr.size() ? slice_rows(out, 0, n_lr) : out, std::move(hr_out)};
}

// Sparse HR queries attend back into the LR grid around their own position,
// with a skip connection.
template <typename T>
SparseHrSet<T> postfuse_lr_hr(const SparseHrSet<T>& hr_sca, const Tensor<T>& bev_sca_grid, const BevSpec& spec,
                              const DeformAttnParams<T>& p) {
  if (hr_sca.size() == 0) return hr_sca;
  const auto ref = hr_to_lr_coords<T>(spec, hr_sca.coords);
  return {hr_sca.coords, add(deformable_attention(hr_sca.feats, ref, bev_sca_grid, p), hr_sca.feats),
          hr_sca.group_of};
}

// ---------------------------------------------------------------------------
// Dense multi-head attention blocks.

template <typename T>
struct MhaParams {
  std::size_t heads = 1;
  Linear<T> q, k, v, o;

  MhaParams() = default;
  MhaParams(std::size_t c, std::size_t heads_, Rng& rng) : heads(heads_), q(c, c, rng), k(c, c, rng), v(c, c, rng), o(c, c, rng) {
    if (heads == 0 || c % heads != 0) throw std::invalid_argument("MhaParams: channels must divide into heads");
  }

  static MhaParams identity(std::size_t c, std::size_t heads) {
    MhaParams p;
    p.heads = heads;
    p.q = Linear<T>::identity(c);
    p.k = Linear<T>::identity(c);
    p.v = Linear<T>::identity(c);
    p.o = Linear<T>::identity(c);
    return p;
  }

  Tensor<T> operator()(const Tensor<T>& query, const Tensor<T>& key, const Tensor<T>& value,
                       std::size_t group = 0) const {
    return o(attention_core(q(query), k(key), v(value), heads, group));
  }

  void register_params(ParamSet<T>& ps, const std::string& prefix) const {
    q.register_params(ps, prefix + ".q");
    k.register_params(ps, prefix + ".k");
    v.register_params(ps, prefix + ".v");
    o.register_params(ps, prefix + ".o");
  }
};

template <typename T>
struct GatherParams {
  MhaParams<T> attn;
  LayerNorm<T> norm;

  GatherParams() = default;
  GatherParams(std::size_t c, std::size_t heads, Rng& rng) : attn(c, heads, rng), norm(c) {}

  void register_params(ParamSet<T>& ps, const std::string& prefix) const {
    attn.register_params(ps, prefix + ".attn");
    norm.register_params(ps, prefix + ".norm");
  }
};

// Throws unless entries are grouped as: V^X cell 0..w-1 with `per_cell`
// contiguous entries each, then V^Y cells 0..h-1 likewise. With `exact_cells`
// false only the X-then-Y partition is required.
inline void check_group_structure(const std::vector<VectorCell>& groups, std::size_t w, std::size_t h,
                                  std::size_t per_cell, bool exact_cells = true) {
  if (per_cell == 0 || groups.size() != (w + h) * per_cell)
    throw ContractError("gather: sparse entry count " + std::to_string(groups.size()) +
                        " is not a positive multiple of " + std::to_string(w + h));
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const std::size_t cell = i / per_cell;
    const VectorCell want = cell < w ? VectorCell{Axis::x, std::uint32_t(cell)}
                                     : VectorCell{Axis::y, std::uint32_t(cell - w)};
    const bool ok = exact_cells ? groups[i] == want : groups[i].axis == want.axis;
    if (!ok) throw ContractError("gather: sparse entry " + std::to_string(i) + " in wrong group");
  }
}

// Attention part of gathering, before residual and norm: (w+h) x C rows,
// V^X cells first.
template <typename T>
Tensor<T> gather_attend(const VectorQueryPair<T>& vq, const SparseHrSet<T>& hr, const MhaParams<T>& p, GatherMode mode,
                        bool pe_on) {
  const std::size_t w = vq.w_hr(), h = vq.h_hr();
  const std::size_t per_cell = (w + h) ? hr.size() / (w + h) : 0;
  check_group_structure(hr.group_of, w, h, per_cell, mode == GatherMode::blocked);
  auto q = concat_rows<T>({vq.vx, vq.vy});
  auto k = hr.feats;
  if (pe_on) {
    q = add(q, concat_rows<T>({vq.pex, vq.pey}));
    // Each entry is keyed by the embedding of the axis its vector collapses.
    const auto pe = sample_pe(vq, hr.coords);
    const std::size_t nx = w * per_cell;
    k = add(k, concat_rows<T>({slice_rows(pe.pe_y, 0, nx), slice_rows(pe.pe_x, nx, hr.size())}));
  }
  return p(q, k, hr.feats, mode == GatherMode::blocked ? per_cell : 0);
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> gather_vector_queries(const VectorQueryPair<T>& vq, const SparseHrSet<T>& hr,
                                                      const GatherParams<T>& p, GatherMode mode, bool pe_on) {
  const std::size_t w = vq.w_hr(), h = vq.h_hr();
  const auto out = p.norm(add(concat_rows<T>({vq.vx, vq.vy}), gather_attend(vq, hr, p.attn, mode, pe_on)));
  return {slice_rows(out, 0, w), slice_rows(out, w, w + h)};
}

// ---------------------------------------------------------------------------
// Temporal fusion. Each current cell attends over the pair {previous copy,
// current copy} at its own position, and the result is averaged with the
// current query. Without a previous frame the pair shrinks to the cell itself.

template <typename T>
Tensor<T> temporal_pair_fusion(const Tensor<T>& cur, const std::optional<Tensor<T>>& prev, const MhaParams<T>& p) {
  if (prev && prev->shape() != cur.shape())
    throw ShapeError("temporal fusion: previous " + shape_str(prev->shape()) + " vs current " + shape_str(cur.shape()));
  Tensor<T> keys = cur;
  std::size_t group = 1;
  if (prev) {
    const std::size_t n = cur.dim(0);
    std::vector<std::int64_t> idx(2 * n);
    for (std::size_t i = 0; i < n; ++i) {
      idx[2 * i] = std::int64_t(i);
      idx[2 * i + 1] = std::int64_t(n + i);
    }
    keys = gather_rows<T>(concat_rows<T>({*prev, cur}), idx);
    group = 2;
  }
  return scale(add(p(cur, keys, keys, group), cur), T(0.5));
}

template <typename T>
VectorQueryPair<T> temporal_vector_fusion(const VectorQueryPair<T>& vq, const VectorQueryPair<T>* prev,
                                          const MhaParams<T>& p) {
  if (prev && (prev->w_hr() != vq.w_hr() || prev->h_hr() != vq.h_hr()))
    throw ShapeError("temporal_vector_fusion: vector extent mismatch");
  const std::size_t w = vq.w_hr(), h = vq.h_hr();
  std::optional<Tensor<T>> before;
  if (prev) before = concat_rows<T>({prev->vx, prev->vy});
  const auto fused = temporal_pair_fusion(concat_rows<T>({vq.vx, vq.vy}), before, p);
  VectorQueryPair<T> out = vq;
  out.vx = slice_rows(fused, 0, w);
  out.vy = slice_rows(fused, w, w + h);
  return out;
}

// Resamples the previous LR BEV grid (h x w x C) into the current ego frame.
// Cells that map outside the old grid take the border value.
template <typename T>
Tensor<T> warp_bev(const Tensor<T>& prev_grid, const BevSpec& spec, const EgoPose& current, const EgoPose& previous) {
  const Eigen::Matrix4d rel = relative_transform(current, previous);
  std::vector<Vec2<T>> pts;
  pts.reserve(spec.h_lr * spec.w_lr);
  for (std::size_t i = 0; i < spec.h_lr; ++i)
    for (std::size_t j = 0; j < spec.w_lr; ++j) {
      const auto xy = cell_to_world(spec, GridKind::lr, {j + 0.5, i + 0.5});
      const Eigen::Vector4d p = rel * Eigen::Vector4d(xy[0], xy[1], 0.0, 1.0);
      const auto c = world_to_cell(spec, GridKind::lr, {p.x(), p.y()});
      pts.push_back({T(c[0]), T(c[1])});
    }
  return reshape(bilinear_sample(prev_grid, pts), {spec.h_lr, spec.w_lr, prev_grid.dim(2)});
}

// bev rows are h_lr*w_lr x C; prev_grid (if any) is the previous frame's
// h_lr x w_lr x C grid, not yet aligned to the current ego pose.
template <typename T>
Tensor<T> temporal_bev_fusion(const Tensor<T>& bev, const Tensor<T>* prev_grid, const BevSpec& spec,
                              const EgoPose& current, const EgoPose& previous, const MhaParams<T>& p) {
  std::optional<Tensor<T>> warped;
  if (prev_grid) warped = reshape(warp_bev(*prev_grid, spec, current, previous), {bev.dim(0), bev.dim(1)});
  return temporal_pair_fusion(bev, warped, p);
}

}  // namespace vbev
