#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "vbev/harness/config.hpp"

namespace vbev {

// Training stopped on a non-finite value; `step` is the failing step and
// `checkpoint` holds the parameters from before it.
class NumericFailure : public std::runtime_error {
 public:
  NumericFailure(const std::string& what, std::size_t step, std::string checkpoint)
      : std::runtime_error(what), step_(step), checkpoint_(std::move(checkpoint)) {}
  std::size_t step() const { return step_; }
  const std::string& checkpoint() const { return checkpoint_; }

 private:
  std::size_t step_;
  std::string checkpoint_;
};

// Adam with decoupled weight decay on matrices (rank >= 2 tensors).
template <typename T>
class AdamW {
 public:
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  explicit AdamW(std::vector<Tensor<T>> params) : params_(std::move(params)) {
    for (const auto& p : params_) {
      m_.emplace_back(p.numel(), T(0));
      v_.emplace_back(p.numel(), T(0));
    }
  }

  // Global L2 norm of all gradients (missing gradients count as zero).
  double grad_norm() const {
    double s = 0;
    for (const auto& p : params_)
      if (p.has_grad())
        for (T g : p.grad()) s += double(g) * double(g);
    return std::sqrt(s);
  }

  // Clips to `clip`, applies one update, and returns the pre-clip norm.
  double step(double lr, double weight_decay, double clip) {
    const double norm = grad_norm();
    if (!std::isfinite(norm)) throw NumericError("AdamW: non-finite gradient norm");
    const double scale = norm > clip ? clip / norm : 1.0;
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1, double(t_)), bc2 = 1.0 - std::pow(beta2, double(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      if (!p.has_grad()) continue;
      auto w = p.data();
      const auto g = p.grad();
      const double decay = p.rank() >= 2 ? weight_decay : 0.0;
      for (std::size_t j = 0; j < w.size(); ++j) {
        const double gj = double(g[j]) * scale;
        const double m = beta1 * double(m_[i][j]) + (1 - beta1) * gj;
        const double v = beta2 * double(v_[i][j]) + (1 - beta2) * gj * gj;
        m_[i][j] = T(m);
        v_[i][j] = T(v);
        const double upd = (m / bc1) / (std::sqrt(v / bc2) + eps) + decay * double(w[j]);
        w[j] = T(double(w[j]) - lr * upd);
      }
    }
    return norm;
  }

  std::size_t steps_taken() const { return t_; }
  std::vector<Buffer<T>>& first_moments() { return m_; }
  std::vector<Buffer<T>>& second_moments() { return v_; }
  const std::vector<Buffer<T>>& first_moments() const { return m_; }
  const std::vector<Buffer<T>>& second_moments() const { return v_; }
  void set_steps_taken(std::size_t t) { t_ = t; }

 private:
  std::vector<Tensor<T>> params_;
  std::vector<Buffer<T>> m_, v_;
  std::size_t t_ = 0;
};

inline double learning_rate(const TrainConfig& c, std::size_t step) {
  double lr = c.lr;
  if (c.warmup > 0 && step < c.warmup) return lr * double(step + 1) / double(c.warmup);
  if (c.cosine && c.steps > c.warmup) {
    const double p = double(step - c.warmup) / double(c.steps - c.warmup);
    lr *= 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(1.0, p)));
  }
  return lr;
}

// ---------------------------------------------------------------------------
// Checkpoints: "VBEVCKPT" u32 version u32 sizeof(T) u64 step, config snapshot,
// then every parameter (name, shape, values) followed by its Adam moments.

inline constexpr char kCheckpointMagic[8] = {'V', 'B', 'E', 'V', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void save_checkpoint(const std::string& path, const RunConfig& cfg, const ParamSet<T>& params, const AdamW<T>& opt,
                     std::size_t step) {
  detail::ByteWriter w;
  w.raw(kCheckpointMagic, 8);
  w.put(kCheckpointVersion);
  w.put(std::uint32_t(sizeof(T)));
  w.put(std::uint64_t(step));
  const auto snap = config_snapshot(cfg);
  w.put(std::uint32_t(snap.size()));
  w.raw(snap.data(), snap.size());
  w.put(std::uint32_t(params.items().size()));
  for (std::size_t i = 0; i < params.items().size(); ++i) {
    const auto& [name, t] = params.items()[i];
    w.put(std::uint32_t(name.size()));
    w.raw(name.data(), name.size());
    w.put(std::uint32_t(t.rank()));
    for (auto d : t.shape()) w.put(std::uint32_t(d));
    for (T v : t.data()) w.put(v);
    for (T v : opt.first_moments()[i]) w.put(v);
    for (T v : opt.second_moments()[i]) w.put(v);
  }
  const auto tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write checkpoint " + path);
    f.write(w.bytes().data(), std::streamsize(w.bytes().size()));
    if (!f) throw std::runtime_error("write failed for checkpoint " + path);
  }
  std::filesystem::rename(tmp, path);
}

struct CheckpointHeader {
  RunConfig config;
  std::size_t step = 0;
  std::uint32_t scalar_bytes = 8;
};

namespace detail {

inline std::string read_string(ByteReader& r) {
  const auto n = r.get<std::uint32_t>();
  r.need(n);
  std::string s(r.cursor(), n);
  r.skip(n);
  return s;
}

inline ByteReader open_checkpoint(const std::string& path, CheckpointHeader& h) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DatasetError("cannot open checkpoint " + path, 0);
  ByteReader r(std::vector<char>((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>()));
  r.need(8);
  if (std::memcmp(r.cursor(), kCheckpointMagic, 8) != 0) throw DatasetError("not a checkpoint: " + path, 0);
  r.skip(8);
  if (r.get<std::uint32_t>() != kCheckpointVersion) throw DatasetError("unsupported checkpoint version", 8);
  h.scalar_bytes = r.get<std::uint32_t>();
  h.step = std::size_t(r.get<std::uint64_t>());
  h.config = config_from_snapshot(read_string(r));
  return r;
}

}  // namespace detail

inline CheckpointHeader read_checkpoint_header(const std::string& path) {
  CheckpointHeader h;
  detail::open_checkpoint(path, h);
  return h;
}

// Loads values and optimizer state into an already constructed model whose
// parameter layout must match the file exactly.
template <typename T>
std::size_t load_checkpoint(const std::string& path, ParamSet<T>& params, AdamW<T>* opt) {
  CheckpointHeader h;
  auto r = detail::open_checkpoint(path, h);
  if (h.scalar_bytes != sizeof(T))
    throw ConfigError("checkpoint precision (" + std::to_string(8 * h.scalar_bytes) + "-bit) differs from requested");
  const auto n = r.get<std::uint32_t>();
  if (n != params.items().size()) throw DatasetError("checkpoint parameter count mismatch", r.pos());
  for (std::size_t i = 0; i < n; ++i) {
    auto& [name, t] = params.items()[i];
    const auto at = r.pos();
    if (detail::read_string(r) != name) throw DatasetError("checkpoint parameter name mismatch for " + name, at);
    Shape shape(r.get<std::uint32_t>());
    for (auto& d : shape) d = r.get<std::uint32_t>();
    if (shape != t.shape()) throw DatasetError("checkpoint shape mismatch for " + name, at);
    for (auto& v : t.data()) v = r.get<T>();
    Buffer<T> m(t.numel()), s(t.numel());
    for (auto& v : m) v = r.get<T>();
    for (auto& v : s) v = r.get<T>();
    if (opt) {
      opt->first_moments()[i] = std::move(m);
      opt->second_moments()[i] = std::move(s);
    }
  }
  if (!r.done()) throw DatasetError("trailing bytes in checkpoint", r.pos());
  if (opt) opt->set_steps_taken(h.step);
  return h.step;
}

// ---------------------------------------------------------------------------

inline std::vector<Sequence> load_dataset_dir(const std::string& dir) {
  if (dir.empty()) throw ConfigError("no dataset directory given");
  if (!std::filesystem::is_directory(dir)) throw ConfigError("dataset directory not found: " + dir);
  std::vector<std::string> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.path().extension() == ".vbds") files.push_back(e.path().string());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ConfigError("no .vbds files in " + dir);
  std::vector<Sequence> out;
  for (const auto& f : files) out.push_back(read_dataset(f));
  return out;
}

inline std::string scene_file_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "scene_%05zu.vbds", i);
  return buf;
}

// Scene i of a generated set uses its own seed derived from gen.seed, so
// a set with more scenes extends a smaller one.
inline std::vector<Sequence> generate_dataset(const RunConfig& cfg) {
  std::vector<Sequence> out;
  for (std::size_t i = 0; i < cfg.gen.scenes; ++i)
    out.push_back(generate_scene(detail::mix_seed(cfg.gen.seed, i), cfg.gen.boxes, cfg.scene, cfg.rig));
  return out;
}

inline void write_dataset_dir(const std::vector<Sequence>& data, const std::string& dir) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < data.size(); ++i) write_dataset(data[i], dir + "/" + scene_file_name(i));
}

template <typename T>
std::vector<Tensor<T>> cast_features(const std::vector<Tensor<float>>& feats) {
  std::vector<Tensor<T>> out;
  for (const auto& f : feats) {
    if constexpr (std::is_same_v<T, float>) {
      out.push_back(f);
    } else {
      Buffer<T> b(f.data().begin(), f.data().end());
      out.push_back(Tensor<T>::from_buffer(f.shape(), std::move(b)));
    }
  }
  return out;
}

// Runs every frame but the last without gradients to build the temporal
// state, then the last frame with gradients.
template <typename T>
ForwardResult<T> forward_sequence(const Model<T>& model, const Sequence& seq) {
  if (seq.samples.empty()) throw ContractError("forward_sequence: empty sequence");
  std::optional<PrevFrame<T>> prev;
  const auto& cfg = model.config();
  const bool temporal = cfg.bev_temporal_on || cfg.uses_vector_temporal();
  if (temporal) {
    NoGradGuard no_grad;
    for (std::size_t t = 0; t + 1 < seq.samples.size(); ++t) {
      const auto& s = seq.samples[t];
      const auto feats = cast_features<T>(s.cam_feats);
      const FrameInput<T> in{feats, seq.rig, s.ego.pose()};
      const auto r = model.forward(in, prev ? &*prev : nullptr);
      prev = model.to_prev(r, in.ego);
    }
  }
  const auto& last = seq.samples.back();
  const auto feats = cast_features<T>(last.cam_feats);
  const FrameInput<T> in{feats, seq.rig, last.ego.pose()};
  return model.forward(in, prev ? &*prev : nullptr);
}

struct StepLog {
  std::size_t step = 0;
  double total = 0, cls = 0, box = 0, hm = 0, grad_norm = 0, lr = 0;
};

inline std::string csv_header() { return "step,total,cls,box,hm,grad_norm,lr"; }

inline std::string csv_row(const StepLog& s) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g", s.step, s.total, s.cls, s.box, s.hm,
                s.grad_norm, s.lr);
  return buf;
}

// Deterministic scene order: a seeded permutation per epoch, so any step can
// be reproduced without replaying earlier ones.
inline std::size_t scene_for(std::uint64_t seed, std::size_t n_scenes, std::size_t slot) {
  const std::size_t epoch = slot / n_scenes, pos = slot % n_scenes;
  std::vector<std::size_t> order(n_scenes);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 eng(detail::mix_seed(seed, epoch));
  for (std::size_t i = n_scenes; i > 1; --i) std::swap(order[i - 1], order[eng() % i]);
  return order[pos];
}

template <typename T>
class Trainer {
 public:
  Trainer(RunConfig cfg, const std::vector<Sequence>& data)
      : cfg_(std::move(cfg)), data_(data), model_(cfg_.model), opt_(model_.params().tensors()) {
    if (data_.empty()) throw ConfigError("training needs at least one sequence");
  }

  Model<T>& model() { return model_; }
  AdamW<T>& optimizer() { return opt_; }
  const RunConfig& config() const { return cfg_; }
  std::size_t step() const { return step_; }

  void resume(const std::string& path) { step_ = load_checkpoint(path, model_.params(), &opt_); }
  void save(const std::string& path) const { save_checkpoint(path, cfg_, model_.params(), opt_, step_); }

  StepLog step_once() {
    StepLog log;
    log.step = step_;
    log.lr = learning_rate(cfg_.train, step_);
    model_.params().zero_grad();
    std::vector<Tensor<T>> totals;
    const std::size_t b = cfg_.train.batch;
    for (std::size_t i = 0; i < b; ++i) {
      const auto& seq = data_[scene_for(cfg_.model.seed, data_.size(), step_ * b + i)];
      const auto r = forward_sequence(model_, seq);
      const auto l = model_.loss(r, boxes_in_ego(seq.samples.back()));
      totals.push_back(l.total);
      log.cls += l.cls / double(b);
      log.box += l.box / double(b);
      log.hm += l.hm / double(b);
    }
    const auto total = scale(add_all(totals), T(1) / T(b));
    log.total = double(total.item());
    if (!std::isfinite(log.total)) throw NumericError("non-finite loss");
    backward(total);
    log.grad_norm = opt_.step(log.lr, cfg_.train.weight_decay, cfg_.train.clip);
    ++step_;
    return log;
  }

 private:
  RunConfig cfg_;
  const std::vector<Sequence>& data_;
  Model<T> model_;
  AdamW<T> opt_;
  std::size_t step_ = 0;
};

struct TrainSummary {
  std::vector<StepLog> log;
  std::string checkpoint;
};

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << text;
}

// Full training run into cfg.out: config.txt, train_log.csv, final.ckpt.
template <typename T>
TrainSummary train_run(const RunConfig& cfg, const std::vector<Sequence>& data) {
  std::filesystem::create_directories(cfg.out);
  write_text(cfg.out + "/config.txt", config_snapshot(cfg));
  Trainer<T> tr(cfg, data);
  if (!cfg.train.resume.empty()) tr.resume(cfg.train.resume);

  const std::string log_path = cfg.out + "/train_log.csv";
  std::ofstream csv(log_path, std::ios::trunc);
  csv << csv_header() << "\n";
  TrainSummary out;
  while (tr.step() < cfg.train.steps) {
    StepLog s;
    try {
      s = tr.step_once();
    } catch (const NumericError& e) {
      // Parameters are only touched after a finite loss and gradient, so the
      // model still holds the last good state.
      const auto ck = cfg.out + "/last_good.ckpt";
      tr.save(ck);
      throw NumericFailure(std::string("numeric failure at step ") + std::to_string(tr.step()) + ": " + e.what(),
                           tr.step(), ck);
    }
    csv << csv_row(s) << "\n";
    out.log.push_back(s);
    if (cfg.train.checkpoint_every && tr.step() % cfg.train.checkpoint_every == 0)
      tr.save(cfg.out + "/step_" + std::to_string(tr.step()) + ".ckpt");
  }
  csv.flush();
  out.checkpoint = cfg.out + "/final.ckpt";
  tr.save(out.checkpoint);
  return out;
}

}  // namespace vbev
