#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "vbev/harness/train.hpp"

namespace vbev {

struct FrameDetections {
  std::vector<ScoredBox> preds;
  std::vector<Box3D> gt;
};

struct DetectionMetrics {
  std::vector<double> thresholds;  // meters, already scaled to the BEV range
  std::vector<double> ap;          // per threshold, mean over classes with ground truth
  double map_cd = 0;
  double mate = std::numeric_limits<double>::quiet_NaN();  // mean matched center error at the 2 m threshold
};

// The reference thresholds {0.5, 1, 2, 4} m belong to a 51.2 m half range.
inline std::vector<double> center_thresholds(const BevSpec& s) {
  const double half = 0.5 * std::max(s.x_range(), s.y_range());
  std::vector<double> t;
  for (double d : {0.5, 1.0, 2.0, 4.0}) t.push_back(d * half / 51.2);
  return t;
}

// Area under the precision-recall curve after making precision monotone
// (each recall level takes the best precision at that or higher recall).
inline double pr_area(const std::vector<char>& tp_sorted, std::size_t n_gt) {
  if (n_gt == 0) return 0.0;
  std::vector<double> prec, rec;
  std::size_t tp = 0;
  for (std::size_t i = 0; i < tp_sorted.size(); ++i) {
    tp += tp_sorted[i] ? 1 : 0;
    prec.push_back(double(tp) / double(i + 1));
    rec.push_back(double(tp) / double(n_gt));
  }
  for (std::size_t i = prec.size(); i-- > 1;) prec[i - 1] = std::max(prec[i - 1], prec[i]);
  double area = 0, last_r = 0;
  for (std::size_t i = 0; i < prec.size(); ++i) {
    area += (rec[i] - last_r) * prec[i];
    last_r = rec[i];
  }
  return area;
}

namespace detail {

struct MatchOutcome {
  std::vector<char> tp;           // per prediction, in confidence order
  std::vector<double> distances;  // for true positives
  std::size_t n_gt = 0;
};

// Greedy by confidence: each prediction takes the nearest unmatched
// ground-truth box of its class within `thr`.
inline MatchOutcome match_class(const std::vector<FrameDetections>& frames, int cls, double thr) {
  struct Ref {
    std::size_t frame, idx;
    double score;
  };
  std::vector<Ref> preds;
  MatchOutcome out;
  std::vector<std::vector<char>> used(frames.size());
  for (std::size_t f = 0; f < frames.size(); ++f) {
    for (std::size_t i = 0; i < frames[f].preds.size(); ++i)
      if (frames[f].preds[i].box.cls == cls) preds.push_back({f, i, frames[f].preds[i].score});
    used[f].assign(frames[f].gt.size(), 0);
    for (const auto& g : frames[f].gt) out.n_gt += g.cls == cls;
  }
  std::stable_sort(preds.begin(), preds.end(), [](const Ref& a, const Ref& b) { return a.score > b.score; });
  for (const auto& p : preds) {
    const auto& pb = frames[p.frame].preds[p.idx].box;
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_g = 0;
    for (std::size_t g = 0; g < frames[p.frame].gt.size(); ++g) {
      const auto& gb = frames[p.frame].gt[g];
      if (gb.cls != cls || used[p.frame][g]) continue;
      const double d = std::hypot(double(pb.cx) - gb.cx, double(pb.cy) - gb.cy);
      if (d < best) best = d, best_g = g;
    }
    const bool hit = best <= thr;
    if (hit) {
      used[p.frame][best_g] = 1;
      out.distances.push_back(best);
    }
    out.tp.push_back(hit);
  }
  return out;
}

}  // namespace detail

inline DetectionMetrics compute_detection_metrics(const std::vector<FrameDetections>& frames, const BevSpec& spec,
                                                  std::size_t num_classes) {
  DetectionMetrics m;
  m.thresholds = center_thresholds(spec);
  std::vector<int> classes;
  for (std::size_t c = 0; c < num_classes; ++c) {
    bool present = false;
    for (const auto& f : frames)
      for (const auto& g : f.gt) present = present || g.cls == int(c);
    if (present) classes.push_back(int(c));
  }
  std::vector<double> tp_dist;
  for (std::size_t ti = 0; ti < m.thresholds.size(); ++ti) {
    double sum = 0;
    for (int c : classes) {
      const auto r = detail::match_class(frames, c, m.thresholds[ti]);
      sum += pr_area(r.tp, r.n_gt);
      if (ti == 2) tp_dist.insert(tp_dist.end(), r.distances.begin(), r.distances.end());
    }
    m.ap.push_back(classes.empty() ? 0.0 : sum / double(classes.size()));
  }
  m.map_cd = std::accumulate(m.ap.begin(), m.ap.end(), 0.0) / double(m.ap.size());
  if (!tp_dist.empty()) m.mate = std::accumulate(tp_dist.begin(), tp_dist.end(), 0.0) / double(tp_dist.size());
  return m;
}

// Detections of the last decoder layer on the last frame of every sequence.
template <typename T>
std::vector<FrameDetections> predict_dataset(const Model<T>& model, const std::vector<Sequence>& data) {
  NoGradGuard no_grad;
  std::vector<FrameDetections> out;
  for (const auto& seq : data) {
    const auto r = forward_sequence(model, seq);
    out.push_back({decode_detections(r.dets.back()), boxes_in_ego(seq.samples.back())});
  }
  return out;
}

template <typename T>
DetectionMetrics evaluate_model(const Model<T>& model, const std::vector<Sequence>& data) {
  return compute_detection_metrics(predict_dataset(model, data), model.config().bev, model.config().num_classes);
}

template <typename T>
DetectionMetrics evaluate_checkpoint(const std::string& checkpoint, const std::vector<Sequence>& data) {
  const auto h = read_checkpoint_header(checkpoint);
  Model<T> model(h.config.model);
  load_checkpoint<T>(checkpoint, model.params(), nullptr);
  return evaluate_model(model, data);
}

inline std::string metrics_csv(const DetectionMetrics& m) {
  std::string s = "metric,value\n";
  char buf[128];
  std::snprintf(buf, sizeof(buf), "mAP_cd,%.6f\n", m.map_cd);
  s += buf;
  for (std::size_t i = 0; i < m.thresholds.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "AP@%.4gm,%.6f\n", m.thresholds[i], m.ap[i]);
    s += buf;
  }
  std::snprintf(buf, sizeof(buf), "mATE,%.6f\n", m.mate);
  s += buf;
  return s;
}

}  // namespace vbev
