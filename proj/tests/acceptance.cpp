// Acceptance checks, one line per criterion. `--only N` runs a single one,
// which is how ctest drives them.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

#include "oracles.hpp"
#include "vbev/harness.hpp"

using namespace vbev;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

class Stopwatch {
 public:
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count(); }

 private:
  std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

fs::path work_root;

std::string work_dir(const std::string& name) {
  const auto d = work_root / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d.string();
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

template <typename T>
bool params_bitwise_equal(const ParamSet<T>& a, const ParamSet<T>& b) {
  if (a.items().size() != b.items().size()) return false;
  for (std::size_t i = 0; i < a.items().size(); ++i)
    if (a.items()[i].first != b.items()[i].first || a.items()[i].second.to_vector() != b.items()[i].second.to_vector())
      return false;
  return true;
}

RunConfig smoke_config(const std::string& out, std::size_t steps) {
  RunConfig c;
  c.gen.seed = 11;
  c.gen.scenes = 4;
  c.gen.boxes = 3;
  c.train.steps = steps;
  c.train.warmup = 2;
  c.out = out;
  c.resolve();
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

Outcome factorization_oracle() {
  Stopwatch sw;
  Rng rng(1);
  double worst = 0;
  std::size_t points = 0;
  for (int set = 0; set < 100; ++set) {
    const std::size_t w = 4 + rng.index(29), h = 4 + rng.index(29), c = 1 + rng.index(8);
    for (Combine mode : {Combine::add, Combine::multiply}) {
      auto vq = init_vector_queries<double>(w, h, c, 1000 + set, mode);
      for (auto* t : {&vq.vx, &vq.vy})
        for (auto& v : t->data()) v *= 50;
      std::vector<Vec2<double>> pts;
      for (int i = 0; i < 64; ++i) pts.push_back({rng.uniform(-1, double(w) + 1), rng.uniform(-1, double(h) + 1)});
      const auto coords = coords_tensor(pts);
      const auto feats = compose_features(vq, coords);
      const auto vx = vq.vx.to_vector(), vy = vq.vy.to_vector();
      for (std::size_t i = 0; i < pts.size(); ++i) {
        const auto ref = oracle::dense_factorized_sample(vx, vy, w, h, c, mode == Combine::multiply, pts[i][0],
                                                         pts[i][1]);
        for (std::size_t k = 0; k < c; ++k) worst = std::max(worst, std::abs(feats.at(i, k) - ref[k]));
        ++points;
      }
    }
  }
  const double t = sw.seconds();
  return {worst <= 1e-12 && t < 10,
          fmt("100 sets, %zu points, add+mult, max abs err %.2e, %.2f s", points, worst, t)};
}

Outcome linear_structure() {
  Stopwatch sw;
  // Exact sparse query count on assorted shapes.
  bool counts_ok = true;
  std::string counts;
  for (auto [w, h, k, delta] : {std::array<std::size_t, 4>{8, 8, 1, 1}, {12, 8, 2, 2}, {16, 10, 3, 2}, {9, 14, 4, 3}}) {
    ModelConfig mc;
    mc.channels = 8;
    mc.heads = 2;
    mc.encoder_layers = 1;
    mc.bev.h_lr = mc.bev.w_lr = 4;
    mc.bev.w_hr = w;
    mc.bev.h_hr = h;
    mc.scatter.k = k;
    mc.scatter.delta = delta;
    RigSpec rs;
    rs.image_h = rs.image_w = 8;
    const auto rig = make_surround_rig(rs);
    Rng rng(w * 100 + h);
    std::vector<Tensor<float>> feats;
    for (std::size_t i = 0; i < rs.cameras; ++i) feats.push_back(normal_tensor<float>({8, 8, 8}, 1.0, rng));
    const Model<float> m(mc);
    NoGradGuard ng;
    const auto [st, traces] = m.encode({feats, rig, EgoPose{}}, nullptr);
    const auto got = traces.front().sparse_queries, want = (w + h) * k * delta;
    counts_ok = counts_ok && got == want;
    counts += fmt(" %zu=%zu", got, want);
  }

  RunConfig cfg;
  cfg.bench.sweep = {32, 64, 128, 256};
  cfg.bench.base_lr = 8;
  // Single-core timings jitter by tens of percent; more repeats steady the median.
  cfg.bench.repeats = 21;
  cfg.bench.warmup = 3;
  const auto recs = bench_scaling(cfg.model, cfg.rig, cfg.bench);
  const auto vec = fit_scaling(recs, "vector"), full = fit_scaling(recs, "full");
  std::string csv = bench_csv_header() + "\n";
  for (const auto& r : recs) csv += bench_csv_row(r) + "\n";
  std::ofstream(work_dir("bench") + "/bench.csv") << csv;
  auto in = [](double v, double lo, double hi) { return v >= lo && v <= hi; };
  const double t = sw.seconds();
  const bool ok = counts_ok && in(vec.query_slope, 0.8, 1.2) && in(vec.time_slope, 0.8, 1.2) &&
                  in(full.query_slope, 1.8, 2.2) && in(full.time_slope, 1.8, 2.2) && t < 300;
  return {ok, fmt("sparse counts%s; vector slopes q %.3f t %.3f; full slopes q %.3f t %.3f; %.1f s", counts.c_str(),
                  vec.query_slope, vec.time_slope, full.query_slope, full.time_slope, t)};
}

Outcome vector_vs_full() {
  RunConfig cfg;
  cfg.bench.base_lr = 20;
  const auto full = bench_point(cfg.model, cfg.rig, cfg.bench, "full", 45);
  const auto vec = bench_point(cfg.model, cfg.rig, cfg.bench, "vector", 45);
  const double dt = 1.0 - vec.time_s / full.time_s;
  const double dm = 1.0 - double(vec.peak_bytes) / double(full.peak_bytes);
  return {!full.oom && !vec.oom && dt >= 0.3 && dm >= 0.3,
          fmt("full 45x45: %.4f s %lld B; LR 20x20 + vectors 45: %.4f s %lld B; time -%.1f%%, peak -%.1f%%",
              full.time_s, (long long)full.peak_bytes, vec.time_s, (long long)vec.peak_bytes, 100 * dt, 100 * dm)};
}

Outcome gradient_suite() {
  Stopwatch sw;
  GradcheckConfig g;
  g.seeds = 20;
  const auto report = run_gradcheck(g);
  std::ofstream(work_dir("gradcheck") + "/gradcheck.csv") << gradcheck_report_text(report);
  std::string worst;
  double w = 0;
  for (const auto& op : report.ops)
    if (op.max_rel_error >= w) w = op.max_rel_error, worst = op.name;
  // The negative control must be caught by the same machinery.
  auto entries = gradcheck_registry();
  entries.push_back(corrupted_gradient_fixture());
  g.seeds = 2;
  g.filter = "corrupted";
  const bool control_caught = !run_gradcheck(g, entries).passed();
  const double t = sw.seconds();
  return {report.passed() && control_caught && t < 600,
          fmt("%zu ops x 20 seeds in double, worst %s %.2e, negative control %s, %.1f s", report.ops.size(),
              worst.c_str(), w, control_caught ? "caught" : "MISSED", t)};
}

Outcome topk_oracle() {
  Rng rng(2024);
  std::size_t mismatches = 0, picks = 0;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> v(256);
    // Coarse values force ties, which must resolve to the lower index.
    for (auto& x : v) x = std::round(rng.uniform(0, 1) * 8) / 8;
    const std::size_t k = 1 + std::size_t(trial % 4);
    const auto sel = select_topk_directional(Tensor<double>::from({16, 16}, std::span<const double>(v)), k);
    const auto ref = oracle::sort_topk(v, 16, 16, k);
    if (sel.size() != ref.size()) return {false, fmt("trial %d: %zu picks, oracle %zu", trial, sel.size(), ref.size())};
    for (std::size_t i = 0; i < ref.size(); ++i, ++picks)
      mismatches += sel.groups[i].axis != ref[i].axis || sel.groups[i].index != ref[i].owner ||
                    sel.coords[i][0] != ref[i].x + 0.5 || sel.coords[i][1] != ref[i].y + 0.5;
  }
  return {mismatches == 0, fmt("50 maps 16x16, k 1..4, %zu picks, %zu mismatches", picks, mismatches)};
}

Outcome gathering_locality() {
  std::size_t violations = 0, checks = 0, leaks_global = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const std::size_t w = 6, h = 5, c = 8;
    const auto vq = init_vector_queries<double>(w, h, c, seed);
    GatherParams<double> p(c, 2, rng);
    const auto hr = gc::random_sparse(vq, 3, rng, false);
    for (auto mode : {GatherMode::blocked, GatherMode::global}) {
      const auto [vx0, vy0] = gather_vector_queries(vq, hr, p, mode, true);
      const VectorCell target{seed % 2 ? Axis::x : Axis::y, std::uint32_t(seed % 5)};
      auto feats = hr.feats.to_vector();
      for (std::size_t i = 0; i < hr.size(); ++i)
        if (hr.group_of[i] == target)
          for (std::size_t k = 0; k < c; ++k) feats[i * c + k] += rng.uniform(-1, 1);
      const SparseHrSet<double> moved{hr.coords, Tensor<double>::from(hr.feats.shape(), std::span<const double>(feats)),
                                      hr.group_of};
      const auto [vx1, vy1] = gather_vector_queries(vq, moved, p, mode, true);
      std::size_t changed_elsewhere = 0, changed_target = 0;
      for (auto [axis, a, b] : {std::tuple{Axis::x, &vx0, &vx1}, std::tuple{Axis::y, &vy0, &vy1}})
        for (std::size_t r = 0; r < a->dim(0); ++r) {
          bool diff = false;
          for (std::size_t k = 0; k < c; ++k) diff = diff || a->at(r, k) != b->at(r, k);
          const bool is_target = axis == target.axis && r == target.index;
          (is_target ? changed_target : changed_elsewhere) += diff;
        }
      if (mode == GatherMode::blocked) {
        violations += changed_elsewhere != 0 || changed_target != 1;
        ++checks;
      } else {
        leaks_global += changed_elsewhere > 0;
      }
    }
  }
  return {violations == 0 && leaks_global > 0,
          fmt("blocked: %zu/%zu perturbations confined to the owning cell; global mode leaks in %zu/20 (control)",
              checks - violations, checks, leaks_global)};
}

struct TrainedRun {
  DetectionMetrics metrics;
  std::vector<StepLog> log;
  double seconds = 0;
};

TrainedRun train_and_eval(RunConfig cfg, const std::vector<Sequence>& data) {
  Stopwatch sw;
  const auto s = train_run<double>(cfg, data);
  TrainedRun r;
  r.seconds = sw.seconds();
  r.log = s.log;
  Model<double> m(cfg.model);
  load_checkpoint<double>(s.checkpoint, m.params(), nullptr);
  r.metrics = evaluate_model(m, data);
  std::ofstream(cfg.out + "/metrics.csv") << metrics_csv(r.metrics);
  return r;
}

Outcome end_to_end() {
  RunConfig cfg;
  cfg.gen.seed = 0;
  cfg.gen.scenes = 32;
  cfg.gen.boxes = 3;
  cfg.train.steps = 2000;
  cfg.out = work_dir("e2e_full");
  cfg.resolve();
  cfg.validate();
  const auto data = generate_dataset(cfg);

  const auto full = train_and_eval(cfg, data);
  auto base_cfg = cfg;
  base_cfg.model = baseline_config(cfg.model);
  base_cfg.out = work_dir("e2e_baseline");
  const auto base = train_and_eval(base_cfg, data);

  // Per-step losses swing with the scene drawn, so the end of training is
  // the mean over the final epoch.
  const double at10 = full.log.at(10).total;
  double tail = 0;
  const std::size_t n_tail = std::min<std::size_t>(data.size(), full.log.size());
  for (std::size_t i = full.log.size() - n_tail; i < full.log.size(); ++i) tail += full.log[i].total;
  tail /= double(n_tail);
  const double ap2 = full.metrics.ap.at(2);
  const bool ok = tail < 0.25 * at10 && ap2 >= 0.6 && full.metrics.map_cd >= base.metrics.map_cd &&
                  full.seconds < 1800;
  return {ok, fmt("loss %.3f at step 10 -> %.3f (%.1f%%); AP@%.3gm %.3f; mAP_cd full %.3f vs baseline %.3f; "
                  "mATE %.3f m; train %.0f s (baseline %.0f s)",
                  at10, tail, 100 * tail / at10, full.metrics.thresholds[2], ap2, full.metrics.map_cd,
                  base.metrics.map_cd, full.metrics.mate, full.seconds, base.seconds)};
}

Outcome ablations() {
  const auto base = smoke_config(work_dir("ablation"), 3);
  const auto data = generate_dataset(base);
  struct Variant {
    std::string name;
    std::vector<std::string> sets;
  };
  const std::vector<Variant> variants{
      {"full", {}},
      {"heatmap_off", {"heatmap_on=false"}},
      {"vector_off", {"vector_on=false"}},
      {"temporal_off", {"temporal_on=false"}},
      {"mult", {"combine=mult"}},
      {"k2", {"k=2"}},
      {"k4", {"k=4"}},
      {"offsets_off", {"offsets_on=false"}},
      {"fusion_off", {"fusion_on=false"}},
      {"pe_off", {"pe_on=false"}},
  };
  std::vector<std::pair<std::size_t, std::string>> sig;
  std::string detail;
  for (const auto& v : variants) {
    auto cfg = base;
    for (const auto& s : v.sets) {
      const auto [k, val] = split_setting(s, v.name);
      apply_setting(cfg, k, val);
    }
    cfg.resolve();
    cfg.validate();
    Trainer<double> tr(cfg, data);
    std::string trace;
    for (std::size_t i = 0; i < cfg.train.steps; ++i) trace += csv_row(tr.step_once()) + ";";
    sig.emplace_back(tr.model().params().count(), trace);
    detail += fmt(" %s:%zu", v.name.c_str(), sig.back().first);
  }
  std::size_t clashes = 0;
  for (std::size_t i = 0; i < sig.size(); ++i)
    for (std::size_t j = i + 1; j < sig.size(); ++j) clashes += sig[i] == sig[j];
  return {clashes == 0, fmt("%zu variants on 4 scenes, %zu indistinguishable pairs; params%s", variants.size(), clashes,
                            detail.c_str())};
}

Outcome determinism() {
  // Dataset bytes survive a write/read cycle.
  auto cfg = smoke_config(work_dir("det_data"), 6);
  const auto data = generate_dataset(cfg);
  write_dataset_dir(data, cfg.out);
  const auto back = load_dataset_dir(cfg.out);
  bool data_ok = back.size() == data.size();
  for (std::size_t i = 0; data_ok && i < data.size(); ++i)
    data_ok = bitwise_equal(data[i], back[i]) && serialize_sequence(back[i]) == serialize_sequence(data[i]);
  const auto regen = generate_dataset(cfg);
  for (std::size_t i = 0; data_ok && i < data.size(); ++i) data_ok = bitwise_equal(data[i], regen[i]);

  // Resume in double continues bit for bit.
  cfg.out = work_dir("det_resume");
  Trainer<double> straight(cfg, data);
  std::vector<std::string> rows;
  for (int i = 0; i < 6; ++i) rows.push_back(csv_row(straight.step_once()));
  {
    Trainer<double> first(cfg, data);
    for (int i = 0; i < 3; ++i) first.step_once();
    first.save(cfg.out + "/mid.ckpt");
  }
  Trainer<double> second(cfg, data);
  second.resume(cfg.out + "/mid.ckpt");
  bool resume_ok = true;
  for (int i = 3; i < 6; ++i) resume_ok = resume_ok && csv_row(second.step_once()) == rows[i];
  resume_ok = resume_ok && params_bitwise_equal(straight.model().params(), second.model().params());

  // Two seeded runs log identical CSV files.
  auto c1 = cfg, c2 = cfg;
  c1.out = work_dir("det_run1");
  c2.out = work_dir("det_run2");
  train_run<double>(c1, data);
  train_run<double>(c2, data);
  const auto l1 = slurp(c1.out + "/train_log.csv");
  const bool csv_ok = !l1.empty() && l1 == slurp(c2.out + "/train_log.csv");
  return {data_ok && resume_ok && csv_ok, fmt("dataset round trip %s, resume %s, seeded CSV %s",
                                              data_ok ? "bitwise" : "DIFFERS", resume_ok ? "bitwise" : "DIFFERS",
                                              csv_ok ? "identical" : "DIFFERS")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  int only = 0;
  std::string root = (fs::temp_directory_path() / "vbev_acceptance").string();
  app.add_option("--only", only, "run a single criterion (1-9)")->check(CLI::Range(1, 9));
  app.add_option("--work", root, "scratch directory");
  CLI11_PARSE(app, argc, argv);
  work_root = root;

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"factorization oracle", factorization_oracle},
      {"linear structure", linear_structure},
      {"vector mode vs full grid", vector_vs_full},
      {"gradient suite", gradient_suite},
      {"top-k vs sort oracle", topk_oracle},
      {"blocked gathering locality", gathering_locality},
      {"end-to-end training", end_to_end},
      {"ablation toggles", ablations},
      {"determinism and persistence", determinism},
  };
  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (only && std::size_t(only) != i + 1) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s %zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
    all = all && o.pass;
  }
  return all ? 0 : 1;
}
