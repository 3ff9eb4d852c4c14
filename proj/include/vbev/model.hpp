#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "vbev/attention.hpp"
#include "vbev/box.hpp"
#include "vbev/scattering.hpp"

namespace vbev {

struct ModelConfig {
  std::size_t channels = 32;
  std::size_t encoder_layers = 2;
  std::size_t decoder_layers = 2;
  std::size_t heads = 4;
  std::size_t points = 2;
  std::size_t num_classes = 3;
  BevSpec bev;
  ScatterConfig scatter;
  Combine combine = Combine::add;
  GatherMode gather_mode = GatherMode::blocked;

  // Components that can be switched off. Without the spatial vector path
  // (vector_on) the remaining vector toggles have nothing to act on.
  bool vector_on = true;
  bool heatmap_on = true;
  bool temporal_on = true;
  bool bev_temporal_on = true;
  bool vector_decoding_on = true;
  bool intermediate_on = true;
  bool pe_on = true;
  // Stop gradients through each decoder layer's reference points. Training
  // default; the gradient suite turns it off to check the full chain.
  bool detach_refs = true;

  double lambda_cls = 2.0;
  double lambda_box = 0.25;
  double lambda_hm = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    bev.validate();
    scatter.validate();
    if (channels == 0 || heads == 0 || channels % heads != 0)
      throw std::invalid_argument("ModelConfig: channels must be a positive multiple of heads");
    if (channels % 4 != 0) throw std::invalid_argument("ModelConfig: channels must be divisible by 4");
    if (points == 0) throw std::invalid_argument("ModelConfig: points must be >= 1");
    if (encoder_layers == 0 || decoder_layers == 0) throw std::invalid_argument("ModelConfig: need >= 1 layer");
    if (num_classes == 0 || num_classes > 3) throw std::invalid_argument("ModelConfig: num_classes must be 1..3");
    if (vector_on && scatter.k > std::min(bev.h_hr, bev.w_hr))
      throw std::invalid_argument("ModelConfig: k exceeds the HR extent");
  }

  bool uses_vectors() const { return vector_on; }
  bool uses_heatmap_loss() const { return vector_on && heatmap_on; }
  bool uses_vector_temporal() const { return vector_on && temporal_on; }
  bool uses_vector_decoding() const { return vector_on && vector_decoding_on; }
  bool uses_intermediate() const { return uses_vector_decoding() && intermediate_on && encoder_layers > 1; }
  bool uses_offsets() const { return vector_on && scatter.offsets_on; }
  bool uses_fusion() const { return vector_on && scatter.prefusion_on; }
  bool uses_pe() const { return vector_on && pe_on; }

  std::size_t decoder_queries() const { return bev.h_hr + bev.w_hr; }
};

// The reference configuration with every vector-path component disabled:
// temporal self-attention and SCA over the LR BEV only.
inline ModelConfig baseline_config(ModelConfig c) {
  c.vector_on = false;
  c.heatmap_on = false;
  c.temporal_on = false;
  c.vector_decoding_on = false;
  c.intermediate_on = false;
  c.pe_on = false;
  c.scatter.offsets_on = false;
  c.scatter.prefusion_on = false;
  return c;
}

// ---------------------------------------------------------------------------
// Boxes in regression space.

constexpr std::size_t kBoxParams = 10;
// cx, cy, cz, log w, log l, log h, sin, cos, vx, vy
constexpr std::array<double, kBoxParams> kBoxCodeWeights{1, 1, 1, 1, 1, 1, 1, 1, 0.2, 0.2};

inline std::array<double, kBoxParams> encode_box(const Box3D& b) {
  return {b.cx, b.cy, b.cz, std::log(double(b.w)), std::log(double(b.l)), std::log(double(b.h)),
          std::sin(double(b.yaw)), std::cos(double(b.yaw)), b.vx, b.vy};
}

inline Box3D decode_box(const std::array<double, kBoxParams>& p, int cls = 0) {
  Box3D b;
  b.cx = float(p[0]);
  b.cy = float(p[1]);
  b.cz = float(p[2]);
  b.w = float(std::exp(p[3]));
  b.l = float(std::exp(p[4]));
  b.h = float(std::exp(p[5]));
  b.yaw = float(std::atan2(p[6], p[7]));
  b.vx = float(p[8]);
  b.vy = float(p[9]);
  b.cls = cls;
  return b;
}

template <typename T>
struct Detection {
  Tensor<T> logits;  // Q x num_classes
  Tensor<T> boxes;   // Q x 10, centers in meters
};

// ---------------------------------------------------------------------------
// Hungarian matching.

// Minimum-cost assignment of every row to a distinct column (rows <= cols).
// cost is row-major rows x cols. Returns the column chosen for each row.
inline std::vector<std::size_t> solve_assignment(const std::vector<double>& cost, std::size_t rows, std::size_t cols) {
  if (rows > cols) throw std::invalid_argument("solve_assignment: more rows than columns");
  if (cost.size() != rows * cols) throw std::invalid_argument("solve_assignment: cost size");
  for (double c : cost)
    if (!std::isfinite(c)) throw NumericError("solve_assignment: non-finite cost");
  if (rows == 0) return {};
  // Potentials formulation with 1-based sentinels (Kuhn-Munkres, O(rows^2 cols)).
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(rows + 1, 0), v(cols + 1, 0);
  std::vector<std::size_t> match(cols + 1, 0), way(cols + 1, 0);
  for (std::size_t i = 1; i <= rows; ++i) {
    match[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(cols + 1, inf);
    std::vector<char> used(cols + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = match[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= cols; ++j) {
        if (used[j]) continue;
        const double cur = cost[(i0 - 1) * cols + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= cols; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<std::size_t> out(rows);
  for (std::size_t j = 1; j <= cols; ++j)
    if (match[j]) out[match[j] - 1] = j - 1;
  return out;
}

template <typename T>
double box_l1(const T* pred, const std::array<double, kBoxParams>& target) {
  double s = 0;
  for (std::size_t k = 0; k < kBoxParams; ++k) s += kBoxCodeWeights[k] * std::abs(double(pred[k]) - target[k]);
  return s;
}

struct Assignment {
  std::vector<std::size_t> pred_of_gt;  // matched query per ground-truth box
  std::vector<std::int64_t> gt_of_pred; // -1 for background
};

template <typename T>
Assignment hungarian_match(const Detection<T>& det, const std::vector<Box3D>& gt, double lambda_cls,
                           double lambda_box) {
  const std::size_t q = det.logits.dim(0), nc = det.logits.dim(1);
  Assignment a;
  a.gt_of_pred.assign(q, -1);
  if (gt.empty()) return a;
  if (gt.size() > q) throw ContractError("hungarian_match: more ground-truth boxes than queries");
  std::vector<double> cost(gt.size() * q);
  for (std::size_t g = 0; g < gt.size(); ++g) {
    const auto target = encode_box(gt[g]);
    const auto cls = std::size_t(gt[g].cls);
    if (cls >= nc) throw InvalidTarget("hungarian_match: class id out of range");
    for (std::size_t i = 0; i < q; ++i) {
      const double p = 1.0 / (1.0 + std::exp(-double(det.logits.ptr()[i * nc + cls])));
      cost[g * q + i] = -lambda_cls * p + lambda_box * box_l1(det.boxes.ptr() + i * kBoxParams, target);
    }
  }
  a.pred_of_gt = solve_assignment(cost, gt.size(), q);
  for (std::size_t g = 0; g < gt.size(); ++g) a.gt_of_pred[a.pred_of_gt[g]] = std::int64_t(g);
  return a;
}

template <typename T>
struct DetLoss {
  Tensor<T> cls;
  Tensor<T> box;
};

// Sigmoid focal classification over all queries and classes plus weighted L1
// on matched boxes, both normalized by max(1, #gt).
template <typename T>
DetLoss<T> detection_loss(const Detection<T>& det, const std::vector<Box3D>& gt, const Assignment& a) {
  const std::size_t q = det.logits.dim(0), nc = det.logits.dim(1);
  const T norm = T(std::max<std::size_t>(1, gt.size()));
  std::vector<T> target(q * nc, T(0));
  for (std::size_t g = 0; g < gt.size(); ++g) target[a.pred_of_gt[g] * nc + std::size_t(gt[g].cls)] = T(1);
  DetLoss<T> out;
  out.cls = sigmoid_focal_loss<T>(det.logits, target, norm);
  if (gt.empty()) {
    out.box = Tensor<T>::scalar(T(0));
    return out;
  }
  std::vector<std::int64_t> idx(a.pred_of_gt.begin(), a.pred_of_gt.end());
  std::vector<T> tgt, w;
  for (const auto& b : gt) {
    const auto e = encode_box(b);
    for (std::size_t k = 0; k < kBoxParams; ++k) {
      tgt.push_back(T(-e[k]));
      w.push_back(T(kBoxCodeWeights[k]));
    }
  }
  const auto diff = add_const<T>(gather_rows<T>(det.boxes, idx), tgt);
  out.box = scale(sum(mul_const<T>(abs(diff), w)), T(1) / norm);
  return out;
}

// ---------------------------------------------------------------------------
// Encoder.

template <typename T>
struct EncoderLayer {
  std::optional<MhaParams<T>> bev_temporal;
  std::optional<MhaParams<T>> vec_temporal;
  std::optional<HeatmapParams<T>> heatmap;
  std::optional<OffsetParams<T>> offsets;
  std::optional<Linear<T>> prefuse;
  ScaParams<T> sca;
  std::optional<DeformAttnParams<T>> postfuse;
  std::optional<GatherParams<T>> gather;
  FeedForward<T> ffn_bev;
  std::optional<FeedForward<T>> ffn_vec;

  EncoderLayer(const ModelConfig& cfg, Rng& rng) {
    const std::size_t c = cfg.channels;
    if (cfg.bev_temporal_on) bev_temporal.emplace(c, cfg.heads, rng);
    if (cfg.uses_vector_temporal()) vec_temporal.emplace(c, cfg.heads, rng);
    if (cfg.uses_vectors()) heatmap.emplace(c, rng);
    if (cfg.uses_offsets()) offsets.emplace(c, cfg.scatter.delta, rng);
    if (cfg.uses_fusion()) prefuse.emplace(2 * c, c, rng);
    sca = ScaParams<T>(c, cfg.heads, cfg.points, rng);
    if (cfg.uses_fusion()) postfuse.emplace(c, cfg.heads, cfg.points, rng);
    if (cfg.uses_vectors()) gather.emplace(c, cfg.heads, rng);
    ffn_bev = FeedForward<T>(c, 2 * c, rng);
    if (cfg.uses_vectors()) ffn_vec.emplace(c, 2 * c, rng);
  }

  void register_params(ParamSet<T>& ps, const std::string& pre) const {
    if (bev_temporal) bev_temporal->register_params(ps, pre + ".bev_temporal");
    if (vec_temporal) vec_temporal->register_params(ps, pre + ".hr.vec_temporal");
    if (heatmap) heatmap->register_params(ps, pre + ".hr.heatmap");
    if (offsets) offsets->register_params(ps, pre + ".hr.offsets");
    if (prefuse) prefuse->register_params(ps, pre + ".hr.prefuse");
    sca.register_params(ps, pre + ".sca");
    if (postfuse) postfuse->register_params(ps, pre + ".hr.postfuse");
    if (gather) gather->register_params(ps, pre + ".hr.gather");
    ffn_bev.register_params(ps, pre + ".ffn_bev");
    if (ffn_vec) ffn_vec->register_params(ps, pre + ".hr.ffn_vec");
  }
};

template <typename T>
struct EncoderState {
  Tensor<T> bev;                         // h_lr*w_lr x C
  std::optional<VectorQueryPair<T>> vq;  // present when the vector path is on
};

// What the next frame needs from this one.
template <typename T>
struct PrevFrame {
  Tensor<T> bev_grid;  // h_lr x w_lr x C
  std::optional<VectorQueryPair<T>> vq;
  EgoPose ego;
};

template <typename T>
struct FrameInput {
  const std::vector<Tensor<T>>& cam_feats;
  const CameraRig& rig;
  EgoPose ego;
};

template <typename T>
struct LayerTrace {
  std::optional<Heatmap<T>> heatmap;
  std::size_t sparse_queries = 0;
};

template <typename T>
Tensor<T> bev_grid(const Tensor<T>& rows, const BevSpec& s) {
  return reshape(rows, {s.h_lr, s.w_lr, rows.dim(1)});
}

template <typename T>
std::pair<EncoderState<T>, LayerTrace<T>> encoder_layer_forward(const EncoderLayer<T>& layer, EncoderState<T> st,
                                                                const PrevFrame<T>* prev, const FrameInput<T>& in,
                                                                const ModelConfig& cfg) {
  const BevSpec& s = cfg.bev;
  LayerTrace<T> trace;
  if (layer.bev_temporal)
    st.bev = temporal_bev_fusion(st.bev, prev ? &prev->bev_grid : nullptr, s, in.ego, prev ? prev->ego : in.ego,
                                 *layer.bev_temporal);
  if (layer.vec_temporal)
    *st.vq = temporal_vector_fusion(*st.vq, prev && prev->vq ? &*prev->vq : nullptr, *layer.vec_temporal);

  SparseHrSet<T> hr{Tensor<T>::zeros({0, 2}), Tensor<T>::zeros({0, cfg.channels}), {}};
  if (st.vq) {
    const auto grid = bev_grid(st.bev, s);
    trace.heatmap = predict_heatmap(*st.vq, grid, *layer.heatmap, s);
    const auto topk = select_topk_directional(trace.heatmap->probs, cfg.scatter.k);
    const auto def = deform_offsets(*st.vq, topk, layer.offsets ? &*layer.offsets : nullptr, cfg.scatter);
    hr = compose_sparse_hr(*st.vq, def.coords, def.groups);
    if (layer.prefuse) hr = prefuse_lr_hr(grid, hr, *layer.prefuse, s);
    trace.sparse_queries = hr.size();
  }

  auto [bev, hr_sca] = spatial_cross_attention(st.bev, hr, in.cam_feats, in.rig, s, layer.sca);
  st.bev = layer.ffn_bev(bev);

  if (st.vq) {
    if (layer.postfuse) hr_sca = postfuse_lr_hr(hr_sca, bev_grid(bev, s), s, *layer.postfuse);
    auto [vx, vy] = gather_vector_queries(*st.vq, hr_sca, *layer.gather, cfg.gather_mode, cfg.uses_pe());
    const std::size_t w = s.w_hr;
    const auto both = (*layer.ffn_vec)(concat_rows<T>({vx, vy}));
    st.vq->vx = slice_rows(both, 0, w);
    st.vq->vy = slice_rows(both, w, both.dim(0));
  }
  return {std::move(st), std::move(trace)};
}

// ---------------------------------------------------------------------------
// Decoder.

template <typename T>
struct DecoderLayer {
  MhaParams<T> self_attn;
  LayerNorm<T> norm1;
  DeformAttnParams<T> cross;
  LayerNorm<T> norm2;
  FeedForward<T> ffn;
  Linear<T> cls;
  Linear<T> reg1;
  Linear<T> reg2;  // zero-initialized: a fresh layer refines nothing

  DecoderLayer(const ModelConfig& cfg, Rng& rng)
      : self_attn(cfg.channels, cfg.heads, rng),
        norm1(cfg.channels),
        cross(cfg.channels, cfg.heads, cfg.points, rng),
        norm2(cfg.channels),
        ffn(cfg.channels, 2 * cfg.channels, rng),
        cls(cfg.channels, cfg.num_classes, rng),
        reg1(cfg.channels, cfg.channels, rng),
        reg2(Linear<T>::zero(cfg.channels, kBoxParams)) {
    // Prior of ~1% foreground keeps the focal loss stable at the start.
    for (auto& b : cls.bias.data()) b = T(-4.6);
  }

  void register_params(ParamSet<T>& ps, const std::string& pre) const {
    self_attn.register_params(ps, pre + ".self_attn");
    norm1.register_params(ps, pre + ".norm1");
    cross.register_params(ps, pre + ".cross");
    norm2.register_params(ps, pre + ".norm2");
    ffn.register_params(ps, pre + ".ffn");
    cls.register_params(ps, pre + ".cls");
    reg1.register_params(ps, pre + ".reg1");
    reg2.register_params(ps, pre + ".reg2");
  }
};

template <typename T>
struct Decoder {
  std::vector<DecoderLayer<T>> layers;
  Tensor<T> query_pos;                 // Q x C
  std::optional<Tensor<T>> query_embed;  // Q x C, when queries do not come from the vectors
  Linear<T> ref;                       // C -> 2, reference point logits

  Decoder(const ModelConfig& cfg, Rng& rng) {
    const std::size_t q = cfg.decoder_queries(), c = cfg.channels;
    query_pos = normal_tensor<T>({q, c}, 1.0, rng);
    // Separate stream, so the toggle leaves every other parameter unchanged.
    Rng embed_rng = rng.fork(1);
    if (!cfg.uses_vector_decoding()) query_embed = normal_tensor<T>({q, c}, 1.0, embed_rng);
    ref = Linear<T>(c, 2, rng);
    for (std::size_t i = 0; i < cfg.decoder_layers; ++i) layers.emplace_back(cfg, rng);
  }

  void register_params(ParamSet<T>& ps, const std::string& pre) const {
    ps.add(pre + ".query_pos", query_pos);
    if (query_embed) ps.add(pre + ".query_embed", *query_embed);
    ref.register_params(ps, pre + ".ref");
    for (std::size_t i = 0; i < layers.size(); ++i) layers[i].register_params(ps, pre + ".layer" + std::to_string(i));
  }
};

// Runs every decoder layer; each refines the box centers of the previous one
// in logit space. Returns one detection set per layer.
template <typename T>
std::vector<Detection<T>> decoder_forward(const Decoder<T>& dec, const Tensor<T>& bev_rows, const Tensor<T>& queries,
                                          const ModelConfig& cfg) {
  const BevSpec& s = cfg.bev;
  const std::size_t q = queries.dim(0);
  if (q != dec.query_pos.dim(0)) throw ShapeError("decoder_forward: query count " + std::to_string(q));
  const auto grid = bev_grid(bev_rows, s);
  std::vector<T> to_lr(2 * q), rng_scale(2 * q), rng_min(2 * q);
  for (std::size_t i = 0; i < q; ++i) {
    to_lr[2 * i] = T(s.w_lr);
    to_lr[2 * i + 1] = T(s.h_lr);
    rng_scale[2 * i] = T(s.x_range());
    rng_scale[2 * i + 1] = T(s.y_range());
    rng_min[2 * i] = T(s.x_min);
    rng_min[2 * i + 1] = T(s.y_min);
  }

  std::vector<Detection<T>> out;
  Tensor<T> x = queries;
  // Queries come in line order: one per HR column, then one per HR row. Each
  // reference starts on its line and the learned part moves it from there.
  const auto logit = [](double p) { return std::log(p / (1 - p)); };
  std::vector<T> anchor(2 * q, T(0));
  for (std::size_t i = 0; i < s.w_hr; ++i) anchor[2 * i] = T(logit((i + 0.5) / double(s.w_hr)));
  for (std::size_t j = 0; j < s.h_hr; ++j) anchor[2 * (s.w_hr + j) + 1] = T(logit((j + 0.5) / double(s.h_hr)));
  Tensor<T> ref_logit = add_const<T>(dec.ref(dec.query_pos), anchor);
  for (std::size_t li = 0; li < dec.layers.size(); ++li) {
    const auto& L = dec.layers[li];
    const auto xp = add(x, dec.query_pos);
    x = L.norm1(add(x, L.self_attn(xp, xp, x)));
    const auto ref_cells = mul_const<T>(sigmoid(ref_logit), to_lr);
    x = L.norm2(add(x, deformable_attention(add(x, dec.query_pos), ref_cells, grid, L.cross)));
    x = L.ffn(x);

    const auto delta = L.reg2(relu(L.reg1(x)));
    const auto center_logit = add(slice_cols(delta, 0, 2), ref_logit);
    const auto center_m = add_const<T>(mul_const<T>(sigmoid(center_logit), rng_scale), rng_min);
    out.push_back({L.cls(x), concat_cols<T>({center_m, slice_cols(delta, 2, kBoxParams)})});
    ref_logit = cfg.detach_refs ? detach(center_logit) : center_logit;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Full model.

template <typename T>
struct ForwardResult {
  EncoderState<T> state;                      // after the last encoder layer
  std::vector<LayerTrace<T>> traces;          // one per encoder layer
  std::vector<Detection<T>> dets;             // one per decoder layer
  std::vector<Detection<T>> intermediate;     // final decoder output per earlier encoder layer
};

template <typename T>
struct LossBreakdown {
  Tensor<T> total;
  double cls = 0, box = 0, hm = 0;
  std::size_t det_sets = 0, heatmaps = 0;
};

template <typename T>
class Model {
 public:
  explicit Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(cfg_.seed);
    const std::size_t c = cfg_.channels;
    bev_queries_ = normal_tensor<T>({cfg_.bev.h_lr * cfg_.bev.w_lr, c}, 1.0, rng);
    if (cfg_.uses_vectors())
      vq_ = init_vector_queries<T>(cfg_.bev.w_hr, cfg_.bev.h_hr, c, rng.next(), cfg_.combine);
    for (std::size_t i = 0; i < cfg_.encoder_layers; ++i) encoder_.emplace_back(cfg_, rng);
    decoder_.emplace(cfg_, rng);

    params_.add("bev_queries", bev_queries_);
    if (vq_) {
      params_.add("hr.vx", vq_->vx);
      params_.add("hr.vy", vq_->vy);
      params_.add("hr.pex", vq_->pex);
      params_.add("hr.pey", vq_->pey);
    }
    for (std::size_t i = 0; i < encoder_.size(); ++i) encoder_[i].register_params(params_, "enc" + std::to_string(i));
    decoder_->register_params(params_, "dec");
  }

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return cfg_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }
  const std::vector<EncoderLayer<T>>& encoder() const { return encoder_; }
  const Decoder<T>& decoder() const { return *decoder_; }

  // Encoder only: returns the final state and per-layer traces, plus the
  // state after each layer when `keep_states` is set.
  std::pair<EncoderState<T>, std::vector<LayerTrace<T>>> encode(const FrameInput<T>& in, const PrevFrame<T>* prev,
                                                                std::vector<EncoderState<T>>* keep_states = nullptr) const {
    EncoderState<T> st{bev_queries_, vq_};
    std::vector<LayerTrace<T>> traces;
    for (const auto& layer : encoder_) {
      auto [next, trace] = encoder_layer_forward(layer, std::move(st), prev, in, cfg_);
      st = std::move(next);
      traces.push_back(std::move(trace));
      if (keep_states) keep_states->push_back(st);
    }
    return {std::move(st), std::move(traces)};
  }

  Tensor<T> decoder_queries(const EncoderState<T>& st) const {
    if (cfg_.uses_vector_decoding()) return concat_rows<T>({st.vq->vx, st.vq->vy});
    return *decoder_->query_embed;
  }

  ForwardResult<T> forward(const FrameInput<T>& in, const PrevFrame<T>* prev) const {
    std::vector<EncoderState<T>> states;
    auto [st, traces] = encode(in, prev, cfg_.uses_intermediate() ? &states : nullptr);
    ForwardResult<T> r;
    r.dets = decoder_forward(*decoder_, st.bev, decoder_queries(st), cfg_);
    if (cfg_.uses_intermediate())
      for (std::size_t i = 0; i + 1 < states.size(); ++i)
        r.intermediate.push_back(decoder_forward(*decoder_, states[i].bev, decoder_queries(states[i]), cfg_).back());
    r.state = std::move(st);
    r.traces = std::move(traces);
    return r;
  }

  PrevFrame<T> to_prev(const ForwardResult<T>& r, const EgoPose& ego) const {
    PrevFrame<T> p{detach(bev_grid(r.state.bev, cfg_.bev)), std::nullopt, ego};
    if (r.state.vq) {
      auto vq = *r.state.vq;
      vq.vx = detach(vq.vx);
      vq.vy = detach(vq.vy);
      p.vq = vq;
    }
    return p;
  }

  LossBreakdown<T> loss(const ForwardResult<T>& r, const std::vector<Box3D>& gt) const {
    LossBreakdown<T> out;
    std::vector<Tensor<T>> terms;
    auto add_set = [&](const Detection<T>& d) {
      const auto a = hungarian_match(d, gt, cfg_.lambda_cls, cfg_.lambda_box);
      const auto l = detection_loss(d, gt, a);
      terms.push_back(scale(l.cls, T(cfg_.lambda_cls)));
      terms.push_back(scale(l.box, T(cfg_.lambda_box)));
      out.cls += double(l.cls.item());
      out.box += double(l.box.item());
      ++out.det_sets;
    };
    for (const auto& d : r.dets) add_set(d);
    for (const auto& d : r.intermediate) add_set(d);
    if (cfg_.uses_heatmap_loss()) {
      const auto gt_hr = build_gt_heatmap<T>(gt, cfg_.bev, GridKind::hr);
      const auto gt_lr = build_gt_heatmap<T>(gt, cfg_.bev, GridKind::lr);
      for (const auto& t : r.traces) {
        const auto l = heatmap_loss<T>(*t.heatmap, gt_hr, gt_lr);
        terms.push_back(scale(l, T(cfg_.lambda_hm)));
        out.hm += double(l.item());
        ++out.heatmaps;
      }
    }
    out.total = add_all(terms);
    return out;
  }

 private:
  ModelConfig cfg_;
  ParamSet<T> params_;
  Tensor<T> bev_queries_;
  std::optional<VectorQueryPair<T>> vq_;
  std::vector<EncoderLayer<T>> encoder_;
  std::optional<Decoder<T>> decoder_;
};

// Scored boxes from the last decoder layer: best class per query.
struct ScoredBox {
  Box3D box;
  double score = 0;
};

template <typename T>
std::vector<ScoredBox> decode_detections(const Detection<T>& det) {
  const std::size_t q = det.logits.dim(0), nc = det.logits.dim(1);
  std::vector<ScoredBox> out;
  out.reserve(q);
  for (std::size_t i = 0; i < q; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < nc; ++c)
      if (det.logits.ptr()[i * nc + c] > det.logits.ptr()[i * nc + best]) best = c;
    std::array<double, kBoxParams> p{};
    for (std::size_t k = 0; k < kBoxParams; ++k) p[k] = double(det.boxes.ptr()[i * kBoxParams + k]);
    out.push_back({decode_box(p, int(best)), 1.0 / (1.0 + std::exp(-double(det.logits.ptr()[i * nc + best])))});
  }
  return out;
}

}  // namespace vbev
