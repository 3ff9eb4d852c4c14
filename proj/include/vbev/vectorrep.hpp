#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vbev/numerics.hpp"

namespace vbev {

enum class Combine { add, multiply };

inline const char* to_string(Combine c) { return c == Combine::add ? "add" : "multiply"; }

enum class Axis : std::uint8_t { x, y };

// The vector cell that produced a sparse HR entry.
struct VectorCell {
  Axis axis;
  std::uint32_t index;
  bool operator==(const VectorCell&) const = default;
};

// Factorized HR BEV: one feature vector per HR column (vx) and per HR row
// (vy), each with a learnable positional embedding.
template <typename T>
struct VectorQueryPair {
  Tensor<T> vx;   // w_hr x C
  Tensor<T> vy;   // h_hr x C
  Tensor<T> pex;  // w_hr x C
  Tensor<T> pey;  // h_hr x C
  Combine combine = Combine::add;

  std::size_t w_hr() const { return vx.dim(0); }
  std::size_t h_hr() const { return vy.dim(0); }
  std::size_t channels() const { return vx.dim(1); }

  std::size_t parameter_count() const { return vx.numel() + vy.numel() + pex.numel() + pey.numel(); }

  void validate() const {
    if (vx.rank() != 2 || vy.rank() != 2 || pex.shape() != vx.shape() || pey.shape() != vy.shape() ||
        vx.dim(1) != vy.dim(1)) {
      throw ShapeError("VectorQueryPair: inconsistent shapes vx" + shape_str(vx.shape()) + " vy" +
                       shape_str(vy.shape()) + " pex" + shape_str(pex.shape()) + " pey" + shape_str(pey.shape()));
    }
  }
};

template <typename T>
VectorQueryPair<T> init_vector_queries(std::size_t w_hr, std::size_t h_hr, std::size_t channels,
                                       std::uint64_t seed, Combine combine = Combine::add) {
  if (w_hr == 0 || h_hr == 0 || channels == 0) throw std::invalid_argument("init_vector_queries: empty extent");
  Rng rng(seed);
  VectorQueryPair<T> vq;
  vq.vx = normal_tensor<T>({w_hr, channels}, 0.02, rng);
  vq.vy = normal_tensor<T>({h_hr, channels}, 0.02, rng);
  vq.pex = normal_tensor<T>({w_hr, channels}, 0.02, rng);
  vq.pey = normal_tensor<T>({h_hr, channels}, 0.02, rng);
  vq.combine = combine;
  return vq;
}

// Sparse HR BEV queries: coordinates in HR cell units and their features.
// Entries owned by V^X cells come first, then those owned by V^Y cells.
template <typename T>
struct SparseHrSet {
  Tensor<T> coords;  // N x 2 (x, y)
  Tensor<T> feats;   // N x C
  std::vector<VectorCell> group_of;

  std::size_t size() const { return group_of.size(); }
};

namespace detail {

// Samples a 1-D vector (L x C) at fractional positions by viewing it as a
// 1 x L grid sampled along its row.
template <typename T>
Tensor<T> sample_vector(const Tensor<T>& vec, const Tensor<T>& positions_col) {
  const auto grid = reshape(vec, {1, vec.dim(0), vec.dim(1)});
  std::vector<T> half(positions_col.dim(0), T(0.5));
  const auto ys = Tensor<T>::from({positions_col.dim(0), 1}, std::span<const T>(half));
  return bilinear_sample(grid, concat_cols<T>({positions_col, ys}));
}

}  // namespace detail

// Builds sparse HR features at `coords` (N x 2, HR cell units):
//   b = combine(sample(vx, x), sample(vy, y)).
template <typename T>
Tensor<T> compose_features(const VectorQueryPair<T>& vq, const Tensor<T>& coords) {
  if (coords.dim(0) == 0) return Tensor<T>::zeros({0, vq.channels()});
  const auto sx = detail::sample_vector(vq.vx, slice_cols(coords, 0, 1));
  const auto sy = detail::sample_vector(vq.vy, slice_cols(coords, 1, 2));
  return vq.combine == Combine::add ? add(sx, sy) : mul(sx, sy);
}

template <typename T>
SparseHrSet<T> compose_sparse_hr(const VectorQueryPair<T>& vq, const Tensor<T>& coords,
                                 std::vector<VectorCell> groups) {
  if (groups.size() != coords.dim(0)) throw ShapeError("compose_sparse_hr: group count mismatch");
  return {coords, compose_features(vq, coords), std::move(groups)};
}

template <typename T>
struct PeSamples {
  Tensor<T> pe_x;  // N x C
  Tensor<T> pe_y;  // N x C
};

template <typename T>
PeSamples<T> sample_pe(const VectorQueryPair<T>& vq, const Tensor<T>& coords) {
  if (coords.dim(0) == 0) {
    return {Tensor<T>::zeros({0, vq.channels()}), Tensor<T>::zeros({0, vq.channels()})};
  }
  return {detail::sample_vector(vq.pex, slice_cols(coords, 0, 1)),
          detail::sample_vector(vq.pey, slice_cols(coords, 1, 2))};
}

}  // namespace vbev
