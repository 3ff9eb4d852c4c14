#pragma once

#include <array>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "vbev/numerics/ops.hpp"

namespace vbev {

template <typename T>
using Vec2 = std::array<T, 2>;

// Coordinates are in cell units with cell (i, j) centered at (j + 0.5, i + 0.5).
// Positions outside the grid clamp to the border cells.
template <typename T>
struct BilinearTap {
  std::size_t x0, x1, y0, y1;
  T fx, fy;
  bool live_x, live_y;  // false where the coordinate was clamped

  static BilinearTap at(T x, T y, std::size_t h, std::size_t w) {
    if (!std::isfinite(x) || !std::isfinite(y)) {
      throw InvalidCoordinate("non-finite sampling coordinate");
    }
    BilinearTap t{};
    axis(x - T(0.5), w, t.x0, t.x1, t.fx, t.live_x);
    axis(y - T(0.5), h, t.y0, t.y1, t.fy, t.live_y);
    return t;
  }

  T weight(int corner) const {
    const T wx = (corner & 1) ? fx : T(1) - fx;
    const T wy = (corner & 2) ? fy : T(1) - fy;
    return wx * wy;
  }
  std::size_t index(int corner, std::size_t w) const {
    return ((corner & 2) ? y1 : y0) * w + ((corner & 1) ? x1 : x0);
  }

 private:
  static void axis(T p, std::size_t extent, std::size_t& i0, std::size_t& i1, T& f, bool& live) {
    const T hi = T(extent - 1);
    live = p > T(0) && p < hi;
    p = std::clamp(p, T(0), hi);
    const T fl = std::floor(p);
    i0 = static_cast<std::size_t>(fl);
    if (i0 >= extent - 1) {
      i0 = i1 = extent - 1;
      f = T(0);
    } else {
      i1 = i0 + 1;
      f = p - fl;
    }
  }
};

template <typename T>
Tensor<T> coords_tensor(const std::vector<Vec2<T>>& pts, bool requires_grad = false) {
  Buffer<T> v(pts.size() * 2);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    v[2 * i] = pts[i][0];
    v[2 * i + 1] = pts[i][1];
  }
  return Tensor<T>::from_buffer({pts.size(), 2}, std::move(v), requires_grad);
}

// grid: H x W x C, coords: N x 2 (x, y). Returns N x C, differentiable with
// respect to both the grid and the coordinates.
template <typename T>
Tensor<T> bilinear_sample(const Tensor<T>& grid, const Tensor<T>& coords) {
  detail::require(grid.rank() == 3, "bilinear_sample: grid must be H x W x C, got " +
                                        shape_str(grid.shape()));
  detail::require(grid.dim(0) >= 1 && grid.dim(1) >= 1, "bilinear_sample: empty grid");
  detail::require(coords.rank() == 2 && coords.dim(1) == 2,
                  "bilinear_sample: coords must be N x 2, got " + shape_str(coords.shape()));
  const std::size_t h = grid.dim(0), w = grid.dim(1), c = grid.dim(2), n = coords.dim(0);
  Buffer<T> out(n * c, T(0));
  std::vector<BilinearTap<T>> taps;
  taps.reserve(n);
  const T* gv = grid.ptr();
  for (std::size_t i = 0; i < n; ++i) {
    const auto tap = BilinearTap<T>::at(coords.ptr()[2 * i], coords.ptr()[2 * i + 1], h, w);
    T* o = out.data() + i * c;
    for (int k = 0; k < 4; ++k) {
      const T wk = tap.weight(k);
      if (wk == T(0)) continue;
      const T* src = gv + tap.index(k, w) * c;
      for (std::size_t j = 0; j < c; ++j) o[j] += wk * src[j];
    }
    taps.push_back(tap);
  }
  return make_result<T>(
      {n, c}, std::move(out), {grid, coords},
      [taps = std::move(taps), w, c](Node<T>& o) {
        const T* g = o.grad.data();
        if (T* gg = grad_sink(o, 0)) {
          for (std::size_t i = 0; i < taps.size(); ++i) {
            for (int k = 0; k < 4; ++k) {
              const T wk = taps[i].weight(k);
              if (wk == T(0)) continue;
              T* dst = gg + taps[i].index(k, w) * c;
              for (std::size_t j = 0; j < c; ++j) dst[j] += wk * g[i * c + j];
            }
          }
        }
        if (T* gc = grad_sink(o, 1)) {
          const T* gv2 = o.inputs[0]->value.data();
          for (std::size_t i = 0; i < taps.size(); ++i) {
            const auto& t = taps[i];
            if (!t.live_x && !t.live_y) continue;
            const T* v00 = gv2 + t.index(0, w) * c;
            const T* v01 = gv2 + t.index(1, w) * c;
            const T* v10 = gv2 + t.index(2, w) * c;
            const T* v11 = gv2 + t.index(3, w) * c;
            T dx = 0, dy = 0;
            for (std::size_t j = 0; j < c; ++j) {
              const T gj = g[i * c + j];
              dx += gj * ((T(1) - t.fy) * (v01[j] - v00[j]) + t.fy * (v11[j] - v10[j]));
              dy += gj * ((T(1) - t.fx) * (v10[j] - v00[j]) + t.fx * (v11[j] - v01[j]));
            }
            if (t.live_x) gc[2 * i] += dx;
            if (t.live_y) gc[2 * i + 1] += dy;
          }
        }
      },
      "bilinear_sample");
}

template <typename T>
Tensor<T> bilinear_sample(const Tensor<T>& grid, const std::vector<Vec2<T>>& pts) {
  return bilinear_sample(grid, coords_tensor(pts));
}

// Multi-head weighted sampling, the inner kernel of deformable attention.
//   value:   H x W x C, head h owns channels [h*C/heads, (h+1)*C/heads)
//   locs:    (N*heads*points) x 2 sampling positions in cell units
//   weights: N*heads*points entries (any shape with that count)
// out[n, head h channels] = sum_p weights[n,h,p] * sample(value_h, locs[n,h,p]).
namespace detail {

// Shared kernel. Pixel (y, x) of the H x W value map lives in row
// row_of[y * w + x] of `value` (rows x C), or row y * w + x when row_of is
// empty.
template <typename T>
Tensor<T> deform_sample_rows(const Tensor<T>& value, std::size_t h, std::size_t w,
                             std::shared_ptr<const std::vector<std::size_t>> row_of, const Tensor<T>& locs,
                             const Tensor<T>& weights, std::size_t heads, std::size_t points) {
  const std::size_t c = value.dim(value.rank() - 1);
  require(heads >= 1 && c % heads == 0, "deform_sample: channels not divisible by heads");
  require(locs.rank() == 2 && locs.dim(1) == 2, "deform_sample: locs must be M x 2");
  const std::size_t m = locs.dim(0);
  require(m % (heads * points) == 0, "deform_sample: loc count not a multiple of heads*points");
  require(weights.numel() == m, "deform_sample: weight count mismatch");
  const std::size_t n = m / (heads * points), d = c / heads;
  const auto row = [map = row_of.get()](std::size_t pix) { return map ? (*map)[pix] : pix; };
  Buffer<T> out(n * c, T(0));
  std::vector<BilinearTap<T>> taps;
  taps.reserve(m);
  const T* vv = value.ptr();
  const T* lv = locs.ptr();
  const T* wv = weights.ptr();
  for (std::size_t q = 0; q < n; ++q) {
    for (std::size_t hd = 0; hd < heads; ++hd) {
      T* o = out.data() + q * c + hd * d;
      for (std::size_t p = 0; p < points; ++p) {
        const std::size_t s = (q * heads + hd) * points + p;
        const auto tap = BilinearTap<T>::at(lv[2 * s], lv[2 * s + 1], h, w);
        taps.push_back(tap);
        const T aw = wv[s];
        for (int k = 0; k < 4; ++k) {
          const T wk = tap.weight(k) * aw;
          if (wk == T(0)) continue;
          const T* src = vv + row(tap.index(k, w)) * c + hd * d;
          for (std::size_t j = 0; j < d; ++j) o[j] += wk * src[j];
        }
      }
    }
  }
  return make_result<T>(
      {n, c}, std::move(out), {value, locs, weights},
      [taps = std::move(taps), row_of, row, n, heads, points, w, c, d](Node<T>& o) {
        const T* g = o.grad.data();
        const T* vv2 = o.inputs[0]->value.data();
        const T* wv2 = o.inputs[2]->value.data();
        T* gval = grad_sink(o, 0);
        T* gloc = grad_sink(o, 1);
        T* gw = grad_sink(o, 2);
        for (std::size_t q = 0; q < n; ++q) {
          for (std::size_t hd = 0; hd < heads; ++hd) {
            const T* go = g + q * c + hd * d;
            for (std::size_t p = 0; p < points; ++p) {
              const std::size_t s = (q * heads + hd) * points + p;
              const auto& t = taps[s];
              const T aw = wv2[s];
              if (gval) {
                for (int k = 0; k < 4; ++k) {
                  const T wk = t.weight(k) * aw;
                  if (wk == T(0)) continue;
                  T* dst = gval + row(t.index(k, w)) * c + hd * d;
                  for (std::size_t j = 0; j < d; ++j) dst[j] += wk * go[j];
                }
              }
              if (gw || gloc) {
                const T* v00 = vv2 + row(t.index(0, w)) * c + hd * d;
                const T* v01 = vv2 + row(t.index(1, w)) * c + hd * d;
                const T* v10 = vv2 + row(t.index(2, w)) * c + hd * d;
                const T* v11 = vv2 + row(t.index(3, w)) * c + hd * d;
                T sample_dot = 0, dx = 0, dy = 0;
                const T w00 = t.weight(0), w01 = t.weight(1), w10 = t.weight(2), w11 = t.weight(3);
                for (std::size_t j = 0; j < d; ++j) {
                  const T gj = go[j];
                  sample_dot += gj * (w00 * v00[j] + w01 * v01[j] + w10 * v10[j] + w11 * v11[j]);
                  dx += gj * ((T(1) - t.fy) * (v01[j] - v00[j]) + t.fy * (v11[j] - v10[j]));
                  dy += gj * ((T(1) - t.fx) * (v10[j] - v00[j]) + t.fx * (v11[j] - v01[j]));
                }
                if (gw) gw[s] += sample_dot;
                if (gloc) {
                  if (t.live_x) gloc[2 * s] += aw * dx;
                  if (t.live_y) gloc[2 * s + 1] += aw * dy;
                }
              }
            }
          }
        }
      },
      "deform_sample");
}

}  // namespace detail

template <typename T>
Tensor<T> deform_sample(const Tensor<T>& value, const Tensor<T>& locs, const Tensor<T>& weights,
                        std::size_t heads, std::size_t points) {
  detail::require(value.rank() == 3, "deform_sample: value must be H x W x C");
  return detail::deform_sample_rows(value, value.dim(0), value.dim(1), nullptr, locs, weights, heads, points);
}

// Pixels touched by bilinear taps at `locs` (all four corners, since the
// coordinate gradient reads them even at zero weight), in ascending order.
template <typename T>
std::vector<std::int64_t> touched_pixels(const Tensor<T>& locs, std::size_t h, std::size_t w) {
  std::vector<char> hit(h * w, 0);
  for (std::size_t s = 0; s < locs.dim(0); ++s) {
    const auto t = BilinearTap<T>::at(locs.ptr()[2 * s], locs.ptr()[2 * s + 1], h, w);
    for (int k = 0; k < 4; ++k) hit[t.index(k, w)] = 1;
  }
  std::vector<std::int64_t> px;
  for (std::size_t i = 0; i < hit.size(); ++i)
    if (hit[i]) px.push_back(std::int64_t(i));
  return px;
}

// Same result as deform_sample(value_of(grid), ...) for a per-pixel map
// value_of, given only the rows of value_of at touched_pixels(locs).
template <typename T>
Tensor<T> deform_sample_touched(const Tensor<T>& rows, const std::vector<std::int64_t>& pixels, std::size_t h,
                                std::size_t w, const Tensor<T>& locs, const Tensor<T>& weights, std::size_t heads,
                                std::size_t points) {
  detail::require(rows.rank() == 2 && rows.dim(0) == pixels.size(), "deform_sample_touched: one row per pixel");
  auto row_of = std::make_shared<std::vector<std::size_t>>(h * w, std::size_t(-1));
  for (std::size_t i = 0; i < pixels.size(); ++i) (*row_of)[std::size_t(pixels[i])] = i;
  return detail::deform_sample_rows<T>(rows, h, w, std::move(row_of), locs, weights, heads, points);
}

}  // namespace vbev
