#pragma once

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vbev/model.hpp"
#include "vbev/synthdata.hpp"

namespace vbev {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class TrainPrecision { f64, f32 };

inline std::string to_string(TrainPrecision p) { return p == TrainPrecision::f64 ? "double" : "float"; }
inline std::string combine_name(Combine c) { return c == Combine::add ? "add" : "mult"; }

struct TrainConfig {
  std::size_t steps = 2000;
  double lr = 1e-3;
  std::size_t warmup = 50;
  bool cosine = true;
  std::size_t batch = 1;
  double weight_decay = 1e-4;
  double clip = 10.0;
  std::string dataset;
  std::string resume;
  std::size_t checkpoint_every = 0;
  TrainPrecision precision = TrainPrecision::f64;
};

struct EvalConfig {
  std::string checkpoint;
  std::string dataset;
};

struct BenchConfig {
  std::vector<std::size_t> sweep{32, 64, 128, 256};
  std::vector<std::string> modes{"full", "vector"};
  std::size_t repeats = 5;
  std::size_t warmup = 2;
  std::size_t base_lr = 8;
  std::size_t memory_limit_mb = 0;  // 0 = unlimited
};

struct GradcheckConfig {
  std::string filter;
  std::size_t seeds = 20;
  double threshold = 1e-4;
  double chain_threshold = 1e-3;
};

struct GenConfig {
  std::uint64_t seed = 0;
  std::size_t scenes = 32;
  std::size_t boxes = 3;
};

struct RunConfig {
  ModelConfig model;
  SceneSpec scene;
  RigSpec rig;
  TrainConfig train;
  EvalConfig eval;
  BenchConfig bench;
  GradcheckConfig gradcheck;
  GenConfig gen;
  std::string out = "run";

  // Fields shared between sections follow the model.
  void resolve() {
    scene.bev = model.bev;
    scene.channels = model.channels;
    scene.num_classes = model.num_classes;
  }
  void validate() const {
    try {
      model.validate();
      scene.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    if (train.batch == 0) throw ConfigError("train.batch must be >= 1");
    if (!(train.lr >= 0)) throw ConfigError("train.lr must be >= 0");
    if (!(train.clip > 0)) throw ConfigError("train.clip must be > 0");
    if (bench.repeats < 5) throw ConfigError("bench.repeats must be >= 5");
    if (bench.sweep.empty()) throw ConfigError("bench.sweep is empty");
    for (const auto& m : bench.modes)
      if (m != "full" && m != "vector") throw ConfigError("bench.modes: unknown mode '" + m + "'");
    if (gradcheck.seeds == 0) throw ConfigError("gradcheck.seeds must be >= 1");
    if (rig.cameras == 0) throw ConfigError("rig.cameras must be >= 1");
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

template <typename U>
U parse_number(const std::string& key, const std::string& v) {
  U out{};
  const auto* end = v.data() + v.size();
  const auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw ConfigError("bad value for " + key + ": '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ConfigError("bad boolean for " + key + ": '" + v + "'");
}

template <typename U>
std::string format_number(U v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

template <typename U>
std::vector<U> parse_list(const std::string& key, const std::string& v, std::function<U(const std::string&)> item) {
  std::vector<U> out;
  std::stringstream ss(v);
  std::string part;
  while (std::getline(ss, part, ',')) {
    part = trim(part);
    if (part.empty()) throw ConfigError("empty list entry in " + key);
    out.push_back(item(part));
  }
  return out;
}

}  // namespace detail

struct ConfigKey {
  std::string name;
  std::string doc;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

// Every accepted key. Anything else is a ConfigError.
inline const std::vector<ConfigKey>& config_keys() {
  using detail::format_number;
  using detail::parse_bool;
  using detail::parse_number;
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    auto size_key = [&](std::string name, std::string doc, auto field) {
      k.push_back({name, doc,
                   [field, name](RunConfig& c, const std::string& v) { field(c) = parse_number<std::size_t>(name, v); },
                   [field](const RunConfig& c) { return format_number(field(const_cast<RunConfig&>(c))); }});
    };
    auto real_key = [&](std::string name, std::string doc, auto field) {
      k.push_back({name, doc,
                   [field, name](RunConfig& c, const std::string& v) { field(c) = parse_number<double>(name, v); },
                   [field](const RunConfig& c) { return format_number(field(const_cast<RunConfig&>(c))); }});
    };
    auto bool_key = [&](std::string name, std::string doc, auto field) {
      k.push_back({name, doc, [field, name](RunConfig& c, const std::string& v) { field(c) = parse_bool(name, v); },
                   [field](const RunConfig& c) { return std::string(field(const_cast<RunConfig&>(c)) ? "true" : "false"); }});
    };
    auto text_key = [&](std::string name, std::string doc, auto field) {
      k.push_back({name, doc, [field](RunConfig& c, const std::string& v) { field(c) = v; },
                   [field](const RunConfig& c) { return field(const_cast<RunConfig&>(c)); }});
    };

    // Model.
    size_key("channels", "feature width C (also the camera feature width)", [](RunConfig& c) -> auto& { return c.model.channels; });
    size_key("encoder_layers", "encoder layers L_e", [](RunConfig& c) -> auto& { return c.model.encoder_layers; });
    size_key("decoder_layers", "decoder layers L_d", [](RunConfig& c) -> auto& { return c.model.decoder_layers; });
    size_key("heads", "attention heads", [](RunConfig& c) -> auto& { return c.model.heads; });
    size_key("points", "sampling points per head in deformable attention", [](RunConfig& c) -> auto& { return c.model.points; });
    size_key("num_classes", "object classes (1..3)", [](RunConfig& c) -> auto& { return c.model.num_classes; });
    k.push_back({"lr_size", "low-resolution BEV grid side h_lr = w_lr",
                 [](RunConfig& c, const std::string& v) { c.model.bev.h_lr = c.model.bev.w_lr = parse_number<std::size_t>("lr_size", v); },
                 [](const RunConfig& c) {
                   if (c.model.bev.h_lr != c.model.bev.w_lr) throw ConfigError("non-square LR grid has no flat key");
                   return format_number(c.model.bev.h_lr);
                 }});
    k.push_back({"hr_size", "high-resolution grid side = vector length h_hr = w_hr",
                 [](RunConfig& c, const std::string& v) { c.model.bev.h_hr = c.model.bev.w_hr = parse_number<std::size_t>("hr_size", v); },
                 [](const RunConfig& c) {
                   if (c.model.bev.h_hr != c.model.bev.w_hr) throw ConfigError("non-square HR grid has no flat key");
                   return format_number(c.model.bev.h_hr);
                 }});
    k.push_back({"range", "BEV half extent in meters (grid covers [-range, range]^2)",
                 [](RunConfig& c, const std::string& v) {
                   const double r = parse_number<double>("range", v);
                   if (!(r > 0)) throw ConfigError("range must be > 0");
                   c.model.bev.x_min = c.model.bev.y_min = -r;
                   c.model.bev.x_max = c.model.bev.y_max = r;
                 },
                 [](const RunConfig& c) {
                   const auto& b = c.model.bev;
                   if (b.x_min != -b.x_max || b.y_min != -b.y_max || b.x_max != b.y_max)
                     throw ConfigError("asymmetric BEV range has no flat key");
                   return format_number(b.x_max);
                 }});
    k.push_back({"pillar_levels", "pillar heights per BEV cell, evenly spaced over [-1, 3] m",
                 [](RunConfig& c, const std::string& v) {
                   const auto n = parse_number<std::size_t>("pillar_levels", v);
                   if (n == 0) throw ConfigError("pillar_levels must be >= 1");
                   c.model.bev.z_levels = even_levels(n);
                 },
                 [](const RunConfig& c) { return format_number(c.model.bev.z_levels.size()); }});
    size_key("k", "top-k proposals per vector cell", [](RunConfig& c) -> auto& { return c.model.scatter.k; });
    size_key("delta", "learned offsets per proposal", [](RunConfig& c) -> auto& { return c.model.scatter.delta; });
    real_key("offset_scale", "offset range in HR cells (tanh-bounded)", [](RunConfig& c) -> auto& { return c.model.scatter.offset_scale; });
    k.push_back({"combine", "vector composition: add | mult",
                 [](RunConfig& c, const std::string& v) {
                   if (v == "add") c.model.combine = Combine::add;
                   else if (v == "mult" || v == "multiply") c.model.combine = Combine::multiply;
                   else throw ConfigError("combine must be add or mult, got '" + v + "'");
                 },
                 [](const RunConfig& c) { return combine_name(c.model.combine); }});
    k.push_back({"gather_mode", "gathering attention: blocked | global",
                 [](RunConfig& c, const std::string& v) {
                   if (v == "blocked") c.model.gather_mode = GatherMode::blocked;
                   else if (v == "global") c.model.gather_mode = GatherMode::global;
                   else throw ConfigError("gather_mode must be blocked or global, got '" + v + "'");
                 },
                 [](const RunConfig& c) { return to_string(c.model.gather_mode); }});
    bool_key("vector_on", "spatial vector path (scattering, HR queries, gathering)", [](RunConfig& c) -> auto& { return c.model.vector_on; });
    bool_key("heatmap_on", "heatmap supervision", [](RunConfig& c) -> auto& { return c.model.heatmap_on; });
    bool_key("temporal_on", "temporal fusion of vector queries", [](RunConfig& c) -> auto& { return c.model.temporal_on; });
    bool_key("bev_temporal_on", "temporal self-attention on the LR BEV", [](RunConfig& c) -> auto& { return c.model.bev_temporal_on; });
    bool_key("vector_decoding_on", "vector queries as decoder queries", [](RunConfig& c) -> auto& { return c.model.vector_decoding_on; });
    bool_key("intermediate_on", "decoder supervision of intermediate encoder layers", [](RunConfig& c) -> auto& { return c.model.intermediate_on; });
    bool_key("detach_refs", "stop gradients through decoder reference points between layers", [](RunConfig& c) -> auto& { return c.model.detach_refs; });
    bool_key("pe_on", "positional embeddings in gathering", [](RunConfig& c) -> auto& { return c.model.pe_on; });
    bool_key("offsets_on", "learned offsets after top-k", [](RunConfig& c) -> auto& { return c.model.scatter.offsets_on; });
    bool_key("fusion_on", "LR-HR pre- and post-fusion", [](RunConfig& c) -> auto& { return c.model.scatter.prefusion_on; });
    k.push_back({"baseline", "true switches every vector-path toggle off (applied before the others)",
                 [](RunConfig& c, const std::string& v) {
                   if (parse_bool("baseline", v)) c.model = baseline_config(c.model);
                 },
                 [](const RunConfig&) { return std::string("false"); }});
    real_key("lambda_cls", "classification loss weight", [](RunConfig& c) -> auto& { return c.model.lambda_cls; });
    real_key("lambda_box", "box L1 loss weight", [](RunConfig& c) -> auto& { return c.model.lambda_box; });
    real_key("lambda_hm", "heatmap loss weight", [](RunConfig& c) -> auto& { return c.model.lambda_hm; });
    k.push_back({"seed", "model initialization and data order seed",
                 [](RunConfig& c, const std::string& v) { c.model.seed = parse_number<std::uint64_t>("seed", v); },
                 [](const RunConfig& c) { return format_number(c.model.seed); }});

    // Scene generation and rig.
    size_key("scene.timesteps", "frames per sequence", [](RunConfig& c) -> auto& { return c.scene.timesteps; });
    real_key("scene.dt", "seconds between frames", [](RunConfig& c) -> auto& { return c.scene.dt; });
    real_key("scene.noise_std", "camera feature noise floor", [](RunConfig& c) -> auto& { return c.scene.noise_std; });
    size_key("rig.cameras", "cameras evenly spaced in yaw", [](RunConfig& c) -> auto& { return c.rig.cameras; });
    k.push_back({"rig.image_size", "camera feature map side",
                 [](RunConfig& c, const std::string& v) { c.rig.image_h = c.rig.image_w = parse_number<std::size_t>("rig.image_size", v); },
                 [](const RunConfig& c) { return format_number(c.rig.image_h); }});
    real_key("rig.fov_deg", "horizontal field of view per camera", [](RunConfig& c) -> auto& { return c.rig.fov_deg; });
    k.push_back({"gen.seed", "dataset seed",
                 [](RunConfig& c, const std::string& v) { c.gen.seed = parse_number<std::uint64_t>("gen.seed", v); },
                 [](const RunConfig& c) { return format_number(c.gen.seed); }});
    size_key("gen.scenes", "sequences to generate", [](RunConfig& c) -> auto& { return c.gen.scenes; });
    size_key("gen.boxes", "boxes per sequence", [](RunConfig& c) -> auto& { return c.gen.boxes; });

    // Train.
    size_key("train.steps", "optimizer steps", [](RunConfig& c) -> auto& { return c.train.steps; });
    real_key("train.lr", "peak learning rate", [](RunConfig& c) -> auto& { return c.train.lr; });
    size_key("train.warmup", "linear warmup steps", [](RunConfig& c) -> auto& { return c.train.warmup; });
    bool_key("train.cosine", "cosine decay to zero after warmup", [](RunConfig& c) -> auto& { return c.train.cosine; });
    size_key("train.batch", "sequences per step", [](RunConfig& c) -> auto& { return c.train.batch; });
    real_key("train.weight_decay", "decoupled weight decay on matrices", [](RunConfig& c) -> auto& { return c.train.weight_decay; });
    real_key("train.clip", "global gradient-norm clip", [](RunConfig& c) -> auto& { return c.train.clip; });
    text_key("train.dataset", "directory of .vbds sequences", [](RunConfig& c) -> auto& { return c.train.dataset; });
    text_key("train.resume", "checkpoint to continue from", [](RunConfig& c) -> auto& { return c.train.resume; });
    size_key("train.checkpoint_every", "periodic checkpoint interval (0 = final only)", [](RunConfig& c) -> auto& { return c.train.checkpoint_every; });
    k.push_back({"train.precision", "double | float",
                 [](RunConfig& c, const std::string& v) {
                   if (v == "double" || v == "f64") c.train.precision = TrainPrecision::f64;
                   else if (v == "float" || v == "f32") c.train.precision = TrainPrecision::f32;
                   else throw ConfigError("train.precision must be double or float, got '" + v + "'");
                 },
                 [](const RunConfig& c) { return to_string(c.train.precision); }});

    // Eval.
    text_key("eval.checkpoint", "checkpoint to evaluate", [](RunConfig& c) -> auto& { return c.eval.checkpoint; });
    text_key("eval.dataset", "directory of .vbds sequences", [](RunConfig& c) -> auto& { return c.eval.dataset; });

    // Bench.
    k.push_back({"bench.sweep", "comma-separated resolutions n",
                 [](RunConfig& c, const std::string& v) {
                   c.bench.sweep = detail::parse_list<std::size_t>("bench.sweep", v, [](const std::string& s) {
                     return parse_number<std::size_t>("bench.sweep", s);
                   });
                 },
                 [](const RunConfig& c) {
                   std::string s;
                   for (std::size_t i = 0; i < c.bench.sweep.size(); ++i) s += (i ? "," : "") + format_number(c.bench.sweep[i]);
                   return s;
                 }});
    k.push_back({"bench.modes", "comma-separated subset of full,vector",
                 [](RunConfig& c, const std::string& v) {
                   c.bench.modes = detail::parse_list<std::string>("bench.modes", v, [](const std::string& s) { return s; });
                 },
                 [](const RunConfig& c) {
                   std::string s;
                   for (std::size_t i = 0; i < c.bench.modes.size(); ++i) s += (i ? "," : "") + c.bench.modes[i];
                   return s;
                 }});
    size_key("bench.repeats", "timed repeats per point (>= 5)", [](RunConfig& c) -> auto& { return c.bench.repeats; });
    size_key("bench.warmup", "untimed warmup runs", [](RunConfig& c) -> auto& { return c.bench.warmup; });
    size_key("bench.base_lr", "LR grid side in vector mode", [](RunConfig& c) -> auto& { return c.bench.base_lr; });
    size_key("bench.memory_limit_mb", "allocation cap per point; exceeding it records an OOM row (0 = none)", [](RunConfig& c) -> auto& { return c.bench.memory_limit_mb; });

    // Gradcheck.
    text_key("gradcheck.filter", "substring filter on op names (empty = all)", [](RunConfig& c) -> auto& { return c.gradcheck.filter; });
    size_key("gradcheck.seeds", "seeds per op", [](RunConfig& c) -> auto& { return c.gradcheck.seeds; });
    real_key("gradcheck.threshold", "max relative error per op", [](RunConfig& c) -> auto& { return c.gradcheck.threshold; });
    real_key("gradcheck.chain_threshold", "max relative error for the end-to-end decoder chain", [](RunConfig& c) -> auto& { return c.gradcheck.chain_threshold; });

    text_key("out", "run directory for snapshots, logs and checkpoints", [](RunConfig& c) -> auto& { return c.out; });
    return k;
  }();
  return keys;
}

inline void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& k : config_keys())
    if (k.name == key) {
      k.set(cfg, value);
      return;
    }
  throw ConfigError("unknown config key '" + key + "'");
}

// "key=value" or "key = value"; '#' starts a comment.
inline std::pair<std::string, std::string> split_setting(const std::string& line, const std::string& where) {
  const auto eq = line.find('=');
  if (eq == std::string::npos) throw ConfigError(where + ": expected key=value, got '" + line + "'");
  auto key = detail::trim(line.substr(0, eq)), value = detail::trim(line.substr(eq + 1));
  if (key.empty()) throw ConfigError(where + ": empty key");
  return {key, value};
}

inline void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin = "config") {
  std::stringstream ss(text);
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::pair<std::string, std::string>> entries;
  while (std::getline(ss, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    entries.push_back(split_setting(line, origin + ":" + std::to_string(lineno)));
  }
  // The baseline shortcut goes first so explicit toggles can refine it.
  std::stable_partition(entries.begin(), entries.end(), [](const auto& e) { return e.first == "baseline"; });
  for (const auto& [k, v] : entries) apply_setting(cfg, k, v);
}

inline RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {}) {
  RunConfig cfg;
  if (!path.empty()) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot read config file " + path);
    std::stringstream buf;
    buf << f.rdbuf();
    apply_config_text(cfg, buf.str(), path);
  }
  std::string text;
  for (const auto& o : overrides) {
    split_setting(o, "--set");
    text += o + "\n";
  }
  apply_config_text(cfg, text, "--set");
  cfg.resolve();
  cfg.validate();
  return cfg;
}

// Resolved configuration, one documented key per line, loadable again.
inline std::string config_snapshot(const RunConfig& cfg) {
  std::string s;
  for (const auto& k : config_keys()) {
    if (k.name == "baseline") continue;
    s += k.name + " = " + k.get(cfg) + "\n";
  }
  return s;
}

inline RunConfig config_from_snapshot(const std::string& text) {
  RunConfig cfg;
  apply_config_text(cfg, text, "snapshot");
  cfg.resolve();
  cfg.validate();
  return cfg;
}

}  // namespace vbev
