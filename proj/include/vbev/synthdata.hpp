#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "vbev/box.hpp"
#include "vbev/geometry.hpp"
#include "vbev/numerics.hpp"

namespace vbev {

class SceneGenError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DatasetError : public std::runtime_error {
 public:
  DatasetError(const std::string& what, std::uint64_t offset)
      : std::runtime_error(what + " at byte " + std::to_string(offset)), offset_(offset) {}
  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

struct ClassShape {
  float w, l, h;
};

// Nominal footprints for the three synthetic classes: car, pedestrian, cyclist.
inline constexpr ClassShape kClassShapes[3] = {{1.9f, 4.3f, 1.6f}, {0.7f, 0.7f, 1.8f}, {0.8f, 1.8f, 1.5f}};

struct SceneSpec {
  BevSpec bev;
  std::size_t timesteps = 2;
  double dt = 0.5;
  double max_box_speed = 5.0;
  double max_ego_speed = 3.0;
  std::size_t num_classes = 3;
  std::size_t channels = 32;  // camera feature channels
  double noise_std = 0.02;
  double edge_margin = 2.0;    // keeps every box inside the BEV range over the sequence
  double ego_clearance = 2.0;  // free space between the ego origin and any footprint
  std::size_t max_attempts = 1000;

  void validate() const {
    bev.validate();
    if (timesteps == 0) throw std::invalid_argument("SceneSpec: timesteps must be >= 1");
    if (!(dt > 0)) throw std::invalid_argument("SceneSpec: dt must be > 0");
    if (num_classes == 0 || num_classes > 3) throw std::invalid_argument("SceneSpec: num_classes must be 1..3");
    if (channels < 2) throw std::invalid_argument("SceneSpec: need at least 2 channels");
    if (!(noise_std >= 0)) throw std::invalid_argument("SceneSpec: negative noise");
  }
};

struct EgoState {
  float x = 0, y = 0, yaw = 0;

  EgoPose pose() const { return EgoPose::from_xy_yaw(x, y, yaw); }
  bool operator==(const EgoState&) const = default;
};

struct SceneSample {
  std::uint32_t t = 0;
  EgoState ego;
  std::vector<Box3D> boxes;  // world frame
  std::vector<Tensor<float>> cam_feats;
};

struct Sequence {
  std::uint64_t seed = 0;
  CameraRig rig;
  std::vector<SceneSample> samples;
};

// World-frame box expressed in the ego frame of `ego`; velocity is rotated,
// not made relative.
inline Box3D to_ego_frame(const Box3D& b, const EgoState& ego) {
  const double c = std::cos(double(ego.yaw)), s = std::sin(double(ego.yaw));
  const double dx = double(b.cx) - ego.x, dy = double(b.cy) - ego.y;
  Box3D out = b;
  out.cx = float(c * dx + s * dy);
  out.cy = float(-s * dx + c * dy);
  out.yaw = float(std::remainder(double(b.yaw) - ego.yaw, 2 * std::numbers::pi));
  out.vx = float(c * b.vx + s * b.vy);
  out.vy = float(-s * b.vx + c * b.vy);
  return out;
}

inline std::vector<Box3D> boxes_in_ego(const SceneSample& s) {
  std::vector<Box3D> out;
  out.reserve(s.boxes.size());
  for (const auto& b : s.boxes) out.push_back(to_ego_frame(b, s.ego));
  return out;
}

// Footprint corners, counter-clockwise.
inline std::array<Vec2<double>, 4> footprint(const Box3D& b) {
  const double c = std::cos(double(b.yaw)), s = std::sin(double(b.yaw));
  const double hl = 0.5 * b.l, hw = 0.5 * b.w;
  std::array<Vec2<double>, 4> out;
  const double sx[4] = {1, -1, -1, 1}, sy[4] = {1, 1, -1, -1};
  for (int i = 0; i < 4; ++i)
    out[i] = {b.cx + c * sx[i] * hl - s * sy[i] * hw, b.cy + s * sx[i] * hl + c * sy[i] * hw};
  return out;
}

// Separating-axis test on the two rotated footprints, each grown by `gap`/2.
inline bool footprints_overlap(const Box3D& a, const Box3D& b, double gap = 0.0) {
  Box3D ga = a, gb = b;
  ga.w += float(gap / 2), ga.l += float(gap / 2);
  gb.w += float(gap / 2), gb.l += float(gap / 2);
  const auto pa = footprint(ga), pb = footprint(gb);
  for (const auto* poly : {&pa, &pb})
    for (int i = 0; i < 4; ++i) {
      const auto& p = (*poly)[i];
      const auto& q = (*poly)[(i + 1) % 4];
      const double nx = q[1] - p[1], ny = p[0] - q[0];
      double amin = 1e300, amax = -1e300, bmin = 1e300, bmax = -1e300;
      for (const auto& v : pa) {
        const double d = nx * v[0] + ny * v[1];
        amin = std::min(amin, d), amax = std::max(amax, d);
      }
      for (const auto& v : pb) {
        const double d = nx * v[0] + ny * v[1];
        bmin = std::min(bmin, d), bmax = std::max(bmax, d);
      }
      if (amax <= bmin || bmax <= amin) return false;
    }
  return true;
}

namespace detail {

// Dyadic grids keep center + velocity * dt exact in single precision.
inline float quantize(double v, double step) { return float(std::trunc(v / step) * step); }
constexpr double kPositionStep = 1.0 / 256;
constexpr double kVelocityStep = 1.0 / 64;

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9E3779B97F4A7C15ull * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// Entry point and exit distance of a ray through an oriented box, or a
// negative entry when the ray misses.
inline double ray_box_entry(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir, const Box3D& b) {
  const double c = std::cos(double(b.yaw)), s = std::sin(double(b.yaw));
  const Eigen::Vector3d o0 = origin - Eigen::Vector3d(b.cx, b.cy, b.cz);
  const Eigen::Vector3d o(c * o0.x() + s * o0.y(), -s * o0.x() + c * o0.y(), o0.z());
  const Eigen::Vector3d d(c * dir.x() + s * dir.y(), -s * dir.x() + c * dir.y(), dir.z());
  const double half[3] = {0.5 * b.l, 0.5 * b.w, 0.5 * b.h};
  double t0 = 0.0, t1 = 1e300;
  for (int k = 0; k < 3; ++k) {
    if (std::abs(d[k]) < 1e-15) {
      if (std::abs(o[k]) > half[k]) return -1.0;
      continue;
    }
    double ta = (-half[k] - o[k]) / d[k], tb = (half[k] - o[k]) / d[k];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return -1.0;
  }
  return t0 > 0.0 ? t0 : -1.0;
}

}  // namespace detail

// Channel signature of a surface hit: first half keyed by class (Walsh
// rows, mutually orthogonal), second half a soft one-hot over depth bins that
// stands in for the monocular depth cue a real backbone provides.
inline std::vector<float> feature_pattern(std::size_t channels, int cls, double depth) {
  std::vector<float> out(channels, 0.0f);
  const std::size_t half = channels / 2, bins = channels - half;
  for (std::size_t j = 0; j < half; ++j)
    out[j] = (std::popcount(unsigned(cls + 1) & unsigned(j)) % 2) ? -1.0f : 1.0f;
  const double lo = 1.0, hi = 24.0, step = bins > 1 ? (hi - lo) / double(bins - 1) : hi - lo;
  for (std::size_t j = 0; j < bins; ++j) {
    const double z = (depth - (lo + double(j) * step)) / step;
    out[half + j] = float(std::exp(-0.5 * z * z));
  }
  return out;
}

struct RenderOutput {
  std::vector<Tensor<float>> feats;          // per camera, H x W x C
  std::vector<std::vector<std::int32_t>> owner;  // per camera pixel: index of the visible box or -1
};

// Casts one ray per pixel; the nearest box wins (exact depth ordering). The
// signature fades with the angle from the box center; every pixel carries the
// seeded noise floor.
inline RenderOutput render_camera_features_detailed(const SceneSample& sample, const CameraRig& rig,
                                                    std::size_t channels, double noise_std,
                                                    std::uint64_t noise_seed) {
  rig.validate();
  const auto boxes = boxes_in_ego(sample);
  RenderOutput out;
  for (std::size_t ci = 0; ci < rig.cameras.size(); ++ci) {
    const Camera& cam = rig.cameras[ci];
    const std::size_t h = cam.image_h, w = cam.image_w;
    Buffer<float> buf(h * w * channels);
    std::vector<std::int32_t> owner(h * w, -1);
    Rng rng(detail::mix_seed(noise_seed, sample.t * 1000003ull + ci));
    for (auto& v : buf) v = float(rng.normal(0.0, noise_std));

    const Eigen::Vector3d origin = cam.from_camera(Eigen::Vector3d::Zero());
    const Eigen::Matrix3d kinv = cam.intrinsics.inverse();
    const Eigen::Matrix3d rt = cam.extrinsics.topLeftCorner<3, 3>().transpose();
    for (std::size_t v = 0; v < h; ++v)
      for (std::size_t u = 0; u < w; ++u) {
        const Eigen::Vector3d dc = kinv * Eigen::Vector3d(u + 0.5, v + 0.5, 1.0);
        const Eigen::Vector3d dir = (rt * dc).normalized();
        double best = 1e300;
        std::int32_t hit = -1;
        for (std::size_t bi = 0; bi < boxes.size(); ++bi) {
          const double t = detail::ray_box_entry(origin, dir, boxes[bi]);
          if (t > 0.0 && t < best) best = t, hit = std::int32_t(bi);
        }
        if (hit < 0) continue;
        owner[v * w + u] = hit;
        const Box3D& b = boxes[std::size_t(hit)];
        const Eigen::Vector3d to_center = Eigen::Vector3d(b.cx, b.cy, b.cz) - origin;
        const double dist = to_center.norm();
        const double angle = std::acos(std::clamp(dir.dot(to_center) / dist, -1.0, 1.0));
        const double radius = std::atan(0.5 * std::hypot(double(b.w), double(b.l), double(b.h)) / dist);
        const double a = std::exp(-0.5 * (angle / radius) * (angle / radius));
        const double depth = cam.to_camera(origin + best * dir).z();
        const auto pat = feature_pattern(channels, b.cls, depth);
        float* px = buf.data() + (v * w + u) * channels;
        for (std::size_t k = 0; k < channels; ++k) px[k] += float(a) * pat[k];
      }
    out.feats.push_back(Tensor<float>::from_buffer({h, w, channels}, std::move(buf)));
    out.owner.push_back(std::move(owner));
  }
  return out;
}

inline std::vector<Tensor<float>> render_camera_features(const SceneSample& sample, const CameraRig& rig,
                                                         std::size_t channels, double noise_std,
                                                         std::uint64_t noise_seed) {
  return render_camera_features_detailed(sample, rig, channels, noise_std, noise_seed).feats;
}

// Seeded scene: ego moving at constant velocity along its heading, boxes on
// straight constant-velocity tracks that stay separated and inside the BEV
// range for every timestep.
inline Sequence generate_scene(std::uint64_t seed, std::size_t n_boxes, const SceneSpec& spec,
                               const RigSpec& rig_spec) {
  spec.validate();
  Sequence seq;
  seq.seed = seed;
  seq.rig = make_surround_rig(rig_spec);
  Rng rng(seed);
  const float dt = float(spec.dt);

  std::vector<EgoState> ego(spec.timesteps);
  {
    const double heading = rng.uniform(-std::numbers::pi, std::numbers::pi);
    const double speed = rng.uniform(0.0, spec.max_ego_speed);
    const float evx = detail::quantize(speed * std::cos(heading), detail::kVelocityStep);
    const float evy = detail::quantize(speed * std::sin(heading), detail::kVelocityStep);
    ego[0].yaw = float(heading);
    for (std::size_t t = 1; t < spec.timesteps; ++t)
      ego[t] = {ego[t - 1].x + evx * dt, ego[t - 1].y + evy * dt, ego[0].yaw};
  }

  auto track = [&](const Box3D& b0, std::size_t t) {
    Box3D b = b0;
    for (std::size_t i = 0; i < t; ++i) b.cx += b.vx * dt, b.cy += b.vy * dt;
    return b;
  };
  auto admissible = [&](const Box3D& b0, const std::vector<Box3D>& placed) {
    for (std::size_t t = 0; t < spec.timesteps; ++t) {
      const Box3D e = to_ego_frame(track(b0, t), ego[t]);
      const double reach = 0.5 * std::hypot(double(e.w), double(e.l));
      const auto& s = spec.bev;
      if (e.cx - reach < s.x_min + spec.edge_margin || e.cx + reach > s.x_max - spec.edge_margin ||
          e.cy - reach < s.y_min + spec.edge_margin || e.cy + reach > s.y_max - spec.edge_margin)
        return false;
      if (std::hypot(double(e.cx), double(e.cy)) < reach + spec.ego_clearance) return false;
      for (const auto& o : placed)
        if (footprints_overlap(track(b0, t), track(o, t), 0.1)) return false;
    }
    return true;
  };

  std::vector<Box3D> boxes;
  const auto& s = spec.bev;
  for (std::size_t i = 0; i < n_boxes; ++i) {
    bool ok = false;
    for (std::size_t attempt = 0; attempt < spec.max_attempts && !ok; ++attempt) {
      Box3D b;
      b.cls = std::int32_t(rng.index(spec.num_classes));
      const auto& shape = kClassShapes[b.cls];
      b.w = float(shape.w * rng.uniform(0.9, 1.1));
      b.l = float(shape.l * rng.uniform(0.9, 1.1));
      b.h = float(shape.h * rng.uniform(0.9, 1.1));
      const double ex = rng.uniform(s.x_min, s.x_max), ey = rng.uniform(s.y_min, s.y_max);
      const double c = std::cos(double(ego[0].yaw)), sn = std::sin(double(ego[0].yaw));
      b.cx = detail::quantize(ego[0].x + c * ex - sn * ey, detail::kPositionStep);
      b.cy = detail::quantize(ego[0].y + sn * ex + c * ey, detail::kPositionStep);
      b.cz = 0.5f * b.h;
      b.yaw = float(rng.uniform(-std::numbers::pi, std::numbers::pi));
      const double speed = rng.uniform(0.0, spec.max_box_speed);
      b.vx = detail::quantize(speed * std::cos(double(b.yaw)), detail::kVelocityStep);
      b.vy = detail::quantize(speed * std::sin(double(b.yaw)), detail::kVelocityStep);
      ok = admissible(b, boxes);
      if (ok) boxes.push_back(b);
    }
    if (!ok)
      throw SceneGenError("generate_scene: could not place box " + std::to_string(i) + " of " +
                          std::to_string(n_boxes) + " within " + std::to_string(spec.max_attempts) + " attempts");
  }

  const std::uint64_t noise_seed = detail::mix_seed(seed, 0xFEED);
  for (std::size_t t = 0; t < spec.timesteps; ++t) {
    SceneSample smp;
    smp.t = std::uint32_t(t);
    smp.ego = ego[t];
    for (const auto& b : boxes) smp.boxes.push_back(track(b, t));
    smp.cam_feats = render_camera_features(smp, seq.rig, spec.channels, spec.noise_std, noise_seed);
    seq.samples.push_back(std::move(smp));
  }
  return seq;
}

// ---------------------------------------------------------------------------
// Binary container. All integers and floats little-endian.
//
//   "VBEVDSET" u32 version u64 seed u32 cameras u32 samples
//   per camera: u32 h, u32 w, f64[9] intrinsics, f64[16] extrinsics (row-major)
//   per sample: u32 t, f32 ego x y yaw, u32 boxes,
//               per box f32 cx cy cz w l h yaw vx vy, i32 cls
//               per camera: u32 rank, u32 dims[rank], f32 payload

inline constexpr char kDatasetMagic[8] = {'V', 'B', 'E', 'V', 'D', 'S', 'E', 'T'};
inline constexpr std::uint32_t kDatasetVersion = 1;

namespace detail {

class ByteWriter {
 public:
  template <typename U>
  void put(U v) {
    using Bits = std::conditional_t<sizeof(U) == 4, std::uint32_t, std::uint64_t>;
    static_assert(sizeof(U) == 4 || sizeof(U) == 8);
    const auto bits = std::bit_cast<Bits>(v);
    for (std::size_t i = 0; i < sizeof(U); ++i) bytes_.push_back(char((bits >> (8 * i)) & 0xFF));
  }
  void raw(const char* p, std::size_t n) { bytes_.insert(bytes_.end(), p, p + n); }
  const std::vector<char>& bytes() const { return bytes_; }

 private:
  std::vector<char> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<char> bytes) : bytes_(std::move(bytes)) {}

  template <typename U>
  U get() {
    using Bits = std::conditional_t<sizeof(U) == 4, std::uint32_t, std::uint64_t>;
    need(sizeof(U));
    Bits bits = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) bits |= Bits(std::uint8_t(bytes_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return std::bit_cast<U>(bits);
  }
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw DatasetError("truncated dataset", pos_);
  }
  const char* cursor() const { return bytes_.data() + pos_; }
  void skip(std::size_t n) { pos_ += n; }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<char> serialize_sequence(const Sequence& seq) {
  detail::ByteWriter w;
  w.raw(kDatasetMagic, 8);
  w.put(kDatasetVersion);
  w.put(seq.seed);
  w.put(std::uint32_t(seq.rig.cameras.size()));
  w.put(std::uint32_t(seq.samples.size()));
  for (const auto& c : seq.rig.cameras) {
    w.put(std::uint32_t(c.image_h));
    w.put(std::uint32_t(c.image_w));
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) w.put(c.intrinsics(i, j));
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) w.put(c.extrinsics(i, j));
  }
  for (const auto& s : seq.samples) {
    if (s.cam_feats.size() != seq.rig.cameras.size())
      throw ContractError("serialize_sequence: camera feature count differs from rig");
    w.put(s.t);
    w.put(s.ego.x);
    w.put(s.ego.y);
    w.put(s.ego.yaw);
    w.put(std::uint32_t(s.boxes.size()));
    for (const auto& b : s.boxes) {
      for (float v : {b.cx, b.cy, b.cz, b.w, b.l, b.h, b.yaw, b.vx, b.vy}) w.put(v);
      w.put(b.cls);
    }
    for (const auto& f : s.cam_feats) {
      w.put(std::uint32_t(f.rank()));
      for (std::size_t d : f.shape()) w.put(std::uint32_t(d));
      for (float v : f.data()) w.put(v);
    }
  }
  return w.bytes();
}

inline Sequence deserialize_sequence(std::vector<char> bytes) {
  detail::ByteReader r(std::move(bytes));
  r.need(8);
  if (std::memcmp(r.cursor(), kDatasetMagic, 8) != 0) throw DatasetError("bad magic", 0);
  r.skip(8);
  const auto version_at = r.pos();
  if (const auto v = r.get<std::uint32_t>(); v != kDatasetVersion)
    throw DatasetError("unsupported version " + std::to_string(v), version_at);
  Sequence seq;
  seq.seed = r.get<std::uint64_t>();
  const auto n_cams = r.get<std::uint32_t>();
  const auto n_samples = r.get<std::uint32_t>();
  for (std::uint32_t c = 0; c < n_cams; ++c) {
    Camera cam;
    cam.image_h = r.get<std::uint32_t>();
    cam.image_w = r.get<std::uint32_t>();
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) cam.intrinsics(i, j) = r.get<double>();
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) cam.extrinsics(i, j) = r.get<double>();
    seq.rig.cameras.push_back(cam);
  }
  for (std::uint32_t si = 0; si < n_samples; ++si) {
    SceneSample s;
    s.t = r.get<std::uint32_t>();
    s.ego.x = r.get<float>();
    s.ego.y = r.get<float>();
    s.ego.yaw = r.get<float>();
    const auto n_boxes = r.get<std::uint32_t>();
    r.need(std::size_t(n_boxes) * 40);
    for (std::uint32_t bi = 0; bi < n_boxes; ++bi) {
      Box3D b;
      for (float* v : {&b.cx, &b.cy, &b.cz, &b.w, &b.l, &b.h, &b.yaw, &b.vx, &b.vy}) *v = r.get<float>();
      b.cls = r.get<std::int32_t>();
      s.boxes.push_back(b);
    }
    for (std::uint32_t c = 0; c < n_cams; ++c) {
      const auto rank_at = r.pos();
      const auto rank = r.get<std::uint32_t>();
      if (rank != 3) throw DatasetError("camera tensor rank " + std::to_string(rank), rank_at);
      Shape shape;
      std::uint64_t n = 1;
      for (std::uint32_t k = 0; k < rank; ++k) {
        shape.push_back(r.get<std::uint32_t>());
        n *= shape.back();
      }
      r.need(n * 4);
      Buffer<float> buf(n);
      for (auto& v : buf) v = r.get<float>();
      s.cam_feats.push_back(Tensor<float>::from_buffer(std::move(shape), std::move(buf)));
    }
    seq.samples.push_back(std::move(s));
  }
  if (!r.done()) throw DatasetError("trailing bytes", r.pos());
  return seq;
}

inline void write_dataset(const Sequence& seq, const std::string& path) {
  const auto bytes = serialize_sequence(seq);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("write_dataset: cannot open " + path);
  f.write(bytes.data(), std::streamsize(bytes.size()));
  if (!f) throw std::runtime_error("write_dataset: write failed for " + path);
}

inline Sequence read_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DatasetError("cannot open " + path, 0);
  std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize_sequence(std::move(bytes));
}

inline bool bitwise_equal(const Sequence& a, const Sequence& b) {
  if (a.seed != b.seed || a.rig.cameras.size() != b.rig.cameras.size() || a.samples.size() != b.samples.size())
    return false;
  for (std::size_t c = 0; c < a.rig.cameras.size(); ++c) {
    const auto &x = a.rig.cameras[c], &y = b.rig.cameras[c];
    if (x.image_h != y.image_h || x.image_w != y.image_w) return false;
    if (std::memcmp(x.intrinsics.data(), y.intrinsics.data(), sizeof(double) * 9) != 0) return false;
    if (std::memcmp(x.extrinsics.data(), y.extrinsics.data(), sizeof(double) * 16) != 0) return false;
  }
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    const auto &x = a.samples[i], &y = b.samples[i];
    if (x.t != y.t || std::memcmp(&x.ego, &y.ego, sizeof(EgoState)) != 0 || x.boxes.size() != y.boxes.size() ||
        x.cam_feats.size() != y.cam_feats.size())
      return false;
    if (!x.boxes.empty() && std::memcmp(x.boxes.data(), y.boxes.data(), x.boxes.size() * sizeof(Box3D)) != 0)
      return false;
    for (std::size_t c = 0; c < x.cam_feats.size(); ++c) {
      if (x.cam_feats[c].shape() != y.cam_feats[c].shape()) return false;
      if (std::memcmp(x.cam_feats[c].ptr(), y.cam_feats[c].ptr(), x.cam_feats[c].numel() * sizeof(float)) != 0)
        return false;
    }
  }
  return true;
}

}  // namespace vbev
