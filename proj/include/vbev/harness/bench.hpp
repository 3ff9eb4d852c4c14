#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <memory>
#include <new>
#include <string>
#include <vector>

#include "vbev/harness/config.hpp"

namespace vbev {

struct BenchRecord {
  std::size_t n = 0;
  std::string mode;
  std::size_t queries = 0;
  double time_s = 0;
  std::int64_t peak_bytes = 0;
  bool oom = false;
};

inline std::string bench_csv_header() { return "n,mode,queries,time_s,peak_bytes"; }

inline std::string bench_csv_row(const BenchRecord& r) {
  char buf[160];
  if (r.oom)
    std::snprintf(buf, sizeof(buf), "%zu,%s,%zu,nan,-1", r.n, r.mode.c_str(), r.queries);
  else
    std::snprintf(buf, sizeof(buf), "%zu,%s,%zu,%.9g,%lld", r.n, r.mode.c_str(), r.queries, r.time_s,
                  static_cast<long long>(r.peak_bytes));
  return buf;
}

// Full grid: dense n x n BEV queries, no vector path. Vector: a fixed
// base x base LR grid plus length-n vectors and the sparse HR path.
inline ModelConfig bench_model_config(const ModelConfig& base, const std::string& mode, std::size_t n,
                                      std::size_t base_lr) {
  ModelConfig c = base;
  if (mode == "full") {
    c = baseline_config(c);
    c.bev.h_lr = c.bev.w_lr = n;
    c.bev.h_hr = c.bev.w_hr = n;
  } else if (mode == "vector") {
    c.vector_on = true;
    c.bev.h_lr = c.bev.w_lr = base_lr;
    c.bev.h_hr = c.bev.w_hr = n;
  } else {
    throw ConfigError("unknown bench mode '" + mode + "'");
  }
  return c;
}

inline std::size_t expected_queries(const ModelConfig& c, const std::string& mode) {
  if (mode == "full") return c.bev.h_lr * c.bev.w_lr;
  return c.bev.h_lr * c.bev.w_lr + (c.bev.w_hr + c.bev.h_hr) * c.scatter.k * c.scatter.delta;
}

// One benchmark point: a float model and its camera features, ready to run the
// encoder forward (inference, single frame).
class BenchCase {
 public:
  BenchCase(const ModelConfig& base, const RigSpec& rig_spec, const BenchConfig& bc, const std::string& mode,
            std::size_t n)
      : cfg_(bench_model_config(base, mode, n, bc.base_lr)), rig_(make_surround_rig(rig_spec)), bc_(bc) {
    rec_.n = n;
    rec_.mode = mode;
    rec_.queries = expected_queries(cfg_, mode);
    Rng rng(cfg_.seed + 17);
    for (std::size_t c = 0; c < rig_.cameras.size(); ++c)
      feats_.push_back(normal_tensor<float>({rig_spec.image_h, rig_spec.image_w, cfg_.channels}, 1.0, rng));
  }

  // Builds the model, runs the warmup and records the transient peak.
  // Returns false if the memory limit was hit.
  bool prepare() {
    return guarded([&] {
      model_ = std::make_unique<Model<float>>(cfg_);
      for (std::size_t i = 0; i < bc_.warmup; ++i) run();
      PeakScope scope;
      run();
      rec_.peak_bytes = scope.transient_peak();
    });
  }

  // Times one forward and keeps the sample. Returns false on OOM.
  bool time_once() {
    return guarded([&] {
      const auto t0 = std::chrono::steady_clock::now();
      run();
      times_.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    });
  }

  BenchRecord finish() {
    model_.reset();
    if (rec_.oom || times_.empty()) {
      rec_.oom = true;
      return rec_;
    }
    std::sort(times_.begin(), times_.end());
    const std::size_t m = times_.size();
    rec_.time_s = m % 2 ? times_[m / 2] : 0.5 * (times_[m / 2 - 1] + times_[m / 2]);
    return rec_;
  }

  bool oom() const { return rec_.oom; }

 private:
  void run() {
    NoGradGuard no_grad;
    const FrameInput<float> in{feats_, rig_, EgoPose{}};
    const auto [st, traces] = model_->encode(in, nullptr);
    const std::size_t counted = st.bev.dim(0) + traces.front().sparse_queries;
    if (counted != rec_.queries)
      throw ContractError("bench: counted " + std::to_string(counted) + " queries, expected " +
                          std::to_string(rec_.queries));
  }

  template <typename F>
  bool guarded(F&& f) {
    if (bc_.memory_limit_mb) AllocStats::set_limit(AllocStats::current() + (std::int64_t(bc_.memory_limit_mb) << 20));
    try {
      f();
    } catch (const std::bad_alloc&) {
      rec_.oom = true;
      model_.reset();
    }
    AllocStats::clear_limit();
    return !rec_.oom;
  }

  ModelConfig cfg_;
  CameraRig rig_;
  BenchConfig bc_;
  BenchRecord rec_;
  std::vector<Tensor<float>> feats_;
  std::unique_ptr<Model<float>> model_;
  std::vector<double> times_;
};

// `warmup` untimed runs, then the median of `repeats` timed with a monotonic
// clock. The peak is the transient high-water mark of tensor storage across
// one forward.
inline BenchRecord bench_point(const ModelConfig& base, const RigSpec& rig_spec, const BenchConfig& bc,
                               const std::string& mode, std::size_t n) {
  BenchCase c(base, rig_spec, bc, mode, n);
  bool ok = c.prepare();
  for (std::size_t i = 0; ok && i < bc.repeats; ++i) ok = c.time_once();
  return c.finish();
}

// Timed runs are interleaved round-robin across all points, so slow phases of
// a shared machine spread over the whole sweep instead of skewing one point.
inline std::vector<BenchRecord> bench_scaling(const ModelConfig& base, const RigSpec& rig, const BenchConfig& bc) {
  if (bc.sweep.size() < 2) throw ConfigError("bench.sweep needs at least two resolutions");
  if (bc.repeats < 5) throw ConfigError("bench.repeats must be >= 5");
  std::vector<BenchCase> cases;
  for (std::size_t n : bc.sweep)
    for (const auto& mode : bc.modes) cases.emplace_back(base, rig, bc, mode, n);
  for (auto& c : cases) c.prepare();
  for (std::size_t i = 0; i < bc.repeats; ++i)
    for (auto& c : cases)
      if (!c.oom()) c.time_once();
  std::vector<BenchRecord> out;
  for (auto& c : cases) out.push_back(c.finish());
  return out;
}

// Least-squares slope of log(y) against log(x).
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("loglog_slope: need >= 2 paired points");
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) mx += std::log(x[i]), my += std::log(y[i]);
  mx /= double(x.size());
  my /= double(y.size());
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

struct ScalingFit {
  double query_slope = std::numeric_limits<double>::quiet_NaN();
  double time_slope = std::numeric_limits<double>::quiet_NaN();
};

inline ScalingFit fit_scaling(const std::vector<BenchRecord>& recs, const std::string& mode) {
  std::vector<double> n, q, t;
  for (const auto& r : recs)
    if (r.mode == mode && !r.oom) n.push_back(double(r.n)), q.push_back(double(r.queries)), t.push_back(r.time_s);
  ScalingFit f;
  if (n.size() >= 2) {
    f.query_slope = loglog_slope(n, q);
    f.time_slope = loglog_slope(n, t);
  }
  return f;
}

}  // namespace vbev
