#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "vbev/numerics/tensor.hpp"

namespace vbev {

namespace detail {

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

template <typename T>
void require_same(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
}

template <typename T>
void require_2d(const Tensor<T>& a, const char* op) {
  require(a.rank() == 2, std::string(op) + ": expected a 2-D tensor, got " + shape_str(a.shape()));
}

template <typename T, typename F, typename D>
Tensor<T> unary(const Tensor<T>& a, F f, D dfdx, const char* op) {
  Buffer<T> out(a.numel());
  const T* x = a.ptr();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
  return make_result<T>(
      a.shape(), std::move(out), {a},
      [dfdx](Node<T>& o) {
        T* gx = grad_sink(o, 0);
        if (!gx) return;
        const T* xv = o.inputs[0]->value.data();
        const T* yv = o.value.data();
        const T* g = o.grad.data();
        for (std::size_t i = 0; i < o.value.size(); ++i) gx[i] += g[i] * dfdx(xv[i], yv[i]);
      },
      op);
}

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using CMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using MMap = Eigen::Map<RowMat<T>>;

// out (n x m) += a (n x k) * b (k x m)
template <typename T>
void gemm_nn(const T* a, const T* b, T* out, std::size_t n, std::size_t k, std::size_t m) {
  if (n && k && m) MMap<T>(out, n, m).noalias() += CMap<T>(a, n, k) * CMap<T>(b, k, m);
}

// out (n x k) += g (n x m) * b^T, with b (k x m)
template <typename T>
void gemm_nt(const T* g, const T* b, T* out, std::size_t n, std::size_t k, std::size_t m) {
  if (n && k && m) MMap<T>(out, n, k).noalias() += CMap<T>(g, n, m) * CMap<T>(b, k, m).transpose();
}

// out (k x m) += a^T * g, with a (n x k), g (n x m)
template <typename T>
void gemm_tn(const T* a, const T* g, T* out, std::size_t n, std::size_t k, std::size_t m) {
  if (n && k && m) MMap<T>(out, k, m).noalias() += CMap<T>(a, n, k).transpose() * CMap<T>(g, n, m);
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same(a, b, "add");
  Buffer<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.ptr()[i] + b.ptr()[i];
  return make_result<T>(
      a.shape(), std::move(out), {a, b},
      [](Node<T>& o) {
        for (std::size_t k = 0; k < 2; ++k) {
          if (T* g = grad_sink(o, k)) {
            for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
          }
        }
      },
      "add");
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same(a, b, "sub");
  Buffer<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.ptr()[i] - b.ptr()[i];
  return make_result<T>(
      a.shape(), std::move(out), {a, b},
      [](Node<T>& o) {
        if (T* g = grad_sink(o, 0))
          for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
        if (T* g = grad_sink(o, 1))
          for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] -= o.grad[i];
      },
      "sub");
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same(a, b, "mul");
  Buffer<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.ptr()[i] * b.ptr()[i];
  return make_result<T>(
      a.shape(), std::move(out), {a, b},
      [](Node<T>& o) {
        const T* av = o.inputs[0]->value.data();
        const T* bv = o.inputs[1]->value.data();
        if (T* g = grad_sink(o, 0))
          for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * bv[i];
        if (T* g = grad_sink(o, 1))
          for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * av[i];
      },
      "mul");
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  return detail::unary<T>(
      a, [s](T x) { return x * s; }, [s](T, T) { return s; }, "scale");
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  return detail::unary<T>(
      a, [s](T x) { return x + s; }, [](T, T) { return T(1); }, "add_scalar");
}

// Elementwise product with a constant (non-differentiable) factor of equal size.
template <typename T>
Tensor<T> mul_const(const Tensor<T>& a, std::span<const T> factor) {
  detail::require(factor.size() == a.numel(), "mul_const: size mismatch");
  Buffer<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.ptr()[i] * factor[i];
  Buffer<T> f(factor.begin(), factor.end());
  return make_result<T>(
      a.shape(), std::move(out), {a},
      [f = std::move(f)](Node<T>& o) {
        if (T* g = grad_sink(o, 0))
          for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * f[i];
      },
      "mul_const");
}

template <typename T>
Tensor<T> add_const(const Tensor<T>& a, std::span<const T> offset) {
  detail::require(offset.size() == a.numel(), "add_const: size mismatch");
  Buffer<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.ptr()[i] + offset[i];
  return make_result<T>(
      a.shape(), std::move(out), {a},
      [](Node<T>& o) {
        if (T* g = grad_sink(o, 0))
          for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
      },
      "add_const");
}

// Multiplies row r of a 2-D tensor by factors[r].
template <typename T>
Tensor<T> scale_rows(const Tensor<T>& a, std::span<const T> factors) {
  detail::require_2d(a, "scale_rows");
  const std::size_t n = a.dim(0), c = a.dim(1);
  detail::require(factors.size() == n, "scale_rows: factor count mismatch");
  Buffer<T> f(factors.begin(), factors.end());
  Buffer<T> out(a.numel());
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] = a.ptr()[r * c + j] * f[r];
  return make_result<T>(
      a.shape(), std::move(out), {a},
      [f = std::move(f), n, c](Node<T>& o) {
        if (T* g = grad_sink(o, 0))
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < c; ++j) g[r * c + j] += o.grad[r * c + j] * f[r];
      },
      "scale_rows");
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return detail::unary<T>(
      a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); },
      "relu");
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return detail::unary<T>(
      a,
      [](T x) {
        if (x >= 0) return T(1) / (T(1) + std::exp(-x));
        const T e = std::exp(x);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); }, "sigmoid");
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& a) {
  return detail::unary<T>(
      a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; }, "tanh");
}

template <typename T>
Tensor<T> abs(const Tensor<T>& a) {
  return detail::unary<T>(
      a, [](T x) { return std::abs(x); },
      [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); }, "abs");
}

template <typename T>
Tensor<T> square(const Tensor<T>& a) {
  return detail::unary<T>(
      a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; }, "square");
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  detail::require(numel_of(shape) == a.numel(),
                  "reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  Buffer<T> out(a.data().begin(), a.data().end());
  return make_result<T>(
      std::move(shape), std::move(out), {a},
      [](Node<T>& o) {
        if (T* g = grad_sink(o, 0))
          for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
      },
      "reshape");
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_2d(a, "matmul");
  detail::require_2d(b, "matmul");
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  detail::require(b.dim(0) == k, "matmul: inner extent mismatch " + shape_str(a.shape()) + " * " +
                                     shape_str(b.shape()));
  Buffer<T> out(n * m, T(0));
  detail::gemm_nn(a.ptr(), b.ptr(), out.data(), n, k, m);
  return make_result<T>(
      {n, m}, std::move(out), {a, b},
      [n, k, m](Node<T>& o) {
        const T* av = o.inputs[0]->value.data();
        const T* bv = o.inputs[1]->value.data();
        if (T* ga = grad_sink(o, 0)) detail::gemm_nt(o.grad.data(), bv, ga, n, k, m);
        if (T* gb = grad_sink(o, 1)) detail::gemm_tn(av, o.grad.data(), gb, n, k, m);
      },
      "matmul");
}

// y = x W + b, x: N x Cin, W: Cin x Cout, b: Cout.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  detail::require_2d(x, "linear");
  detail::require_2d(w, "linear");
  const std::size_t n = x.dim(0), k = x.dim(1), m = w.dim(1);
  detail::require(w.dim(0) == k, "linear: input has " + std::to_string(k) +
                                     " channels, weight is " + shape_str(w.shape()));
  detail::require(b.numel() == m, "linear: bias size " + std::to_string(b.numel()) +
                                      " != " + std::to_string(m));
  Buffer<T> out(n * m);
  for (std::size_t i = 0; i < n; ++i) std::copy(b.ptr(), b.ptr() + m, out.data() + i * m);
  detail::gemm_nn(x.ptr(), w.ptr(), out.data(), n, k, m);
  return make_result<T>(
      {n, m}, std::move(out), {x, w, b},
      [n, k, m](Node<T>& o) {
        const T* xv = o.inputs[0]->value.data();
        const T* wv = o.inputs[1]->value.data();
        const T* g = o.grad.data();
        if (T* gx = grad_sink(o, 0)) detail::gemm_nt(g, wv, gx, n, k, m);
        if (T* gw = grad_sink(o, 1)) detail::gemm_tn(xv, g, gw, n, k, m);
        if (T* gb = grad_sink(o, 2))
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) gb[j] += g[i * m + j];
      },
      "linear");
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  detail::require_2d(a, "transpose");
  const std::size_t n = a.dim(0), m = a.dim(1);
  Buffer<T> out(n * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[j * n + i] = a.ptr()[i * m + j];
  return make_result<T>(
      {m, n}, std::move(out), {a},
      [n, m](Node<T>& o) {
        if (T* g = grad_sink(o, 0))
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) g[i * m + j] += o.grad[j * n + i];
      },
      "transpose");
}

// Softmax along `axis`, stabilized by max subtraction.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  detail::require(axis < x.rank(), "softmax: axis out of range");
  std::size_t outer = 1, inner = 1;
  const std::size_t len = x.dim(axis);
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  Buffer<T> out(x.numel());
  const T* xv = x.ptr();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T mx = xv[base];
      for (std::size_t k = 1; k < len; ++k) mx = std::max(mx, xv[base + k * inner]);
      T s = 0;
      for (std::size_t k = 0; k < len; ++k) {
        const T e = std::exp(xv[base + k * inner] - mx);
        out[base + k * inner] = e;
        s += e;
      }
      for (std::size_t k = 0; k < len; ++k) out[base + k * inner] /= s;
    }
  }
  return make_result<T>(
      x.shape(), std::move(out), {x},
      [outer, inner, len](Node<T>& o) {
        T* gx = grad_sink(o, 0);
        if (!gx) return;
        const T* y = o.value.data();
        const T* g = o.grad.data();
        for (std::size_t a = 0; a < outer; ++a) {
          for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = a * len * inner + in;
            T dot = 0;
            for (std::size_t k = 0; k < len; ++k) dot += g[base + k * inner] * y[base + k * inner];
            for (std::size_t k = 0; k < len; ++k) {
              const std::size_t i = base + k * inner;
              gx[i] += y[i] * (g[i] - dot);
            }
          }
        }
      },
      "softmax");
}

// Row-wise layer normalization with learnable gain and bias.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5)) {
  detail::require_2d(x, "layer_norm");
  const std::size_t n = x.dim(0), c = x.dim(1);
  detail::require(gamma.numel() == c && beta.numel() == c, "layer_norm: parameter size mismatch");
  Buffer<T> out(n * c);
  Buffer<T> xhat(n * c);
  Buffer<T> inv_std(n);
  const T* xv = x.ptr();
  for (std::size_t r = 0; r < n; ++r) {
    const T* row = xv + r * c;
    T mean = 0;
    for (std::size_t j = 0; j < c; ++j) mean += row[j];
    mean /= T(c);
    T var = 0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= T(c);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < c; ++j) {
      xhat[r * c + j] = (row[j] - mean) * is;
      out[r * c + j] = xhat[r * c + j] * gamma.ptr()[j] + beta.ptr()[j];
    }
  }
  return make_result<T>(
      x.shape(), std::move(out), {x, gamma, beta},
      [n, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& o) {
        const T* g = o.grad.data();
        const T* gam = o.inputs[1]->value.data();
        if (T* gg = grad_sink(o, 1))
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < c; ++j) gg[j] += g[r * c + j] * xhat[r * c + j];
        if (T* gb = grad_sink(o, 2))
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < c; ++j) gb[j] += g[r * c + j];
        if (T* gx = grad_sink(o, 0)) {
          for (std::size_t r = 0; r < n; ++r) {
            T s1 = 0, s2 = 0;
            for (std::size_t j = 0; j < c; ++j) {
              const T dxh = g[r * c + j] * gam[j];
              s1 += dxh;
              s2 += dxh * xhat[r * c + j];
            }
            for (std::size_t j = 0; j < c; ++j) {
              const T dxh = g[r * c + j] * gam[j];
              gx[r * c + j] += inv_std[r] * (dxh - s1 / T(c) - xhat[r * c + j] * s2 / T(c));
            }
          }
        }
      },
      "layer_norm");
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  detail::require(!parts.empty(), "concat_rows: no inputs");
  const std::size_t c = parts.front().dim(1);
  std::size_t n = 0;
  for (const auto& p : parts) {
    detail::require_2d(p, "concat_rows");
    detail::require(p.dim(1) == c, "concat_rows: column mismatch");
    n += p.dim(0);
  }
  Buffer<T> out;
  out.reserve(n * c);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return make_result<T>(
      {n, c}, std::move(out), parts,
      [](Node<T>& o) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < o.inputs.size(); ++k) {
          const std::size_t len = o.inputs[k]->value.size();
          if (T* g = grad_sink(o, k))
            for (std::size_t i = 0; i < len; ++i) g[i] += o.grad[off + i];
          off += len;
        }
      },
      "concat_rows");
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  detail::require(!parts.empty(), "concat_cols: no inputs");
  const std::size_t n = parts.front().dim(0);
  std::size_t c = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    detail::require_2d(p, "concat_cols");
    detail::require(p.dim(0) == n, "concat_cols: row mismatch");
    widths.push_back(p.dim(1));
    c += p.dim(1);
  }
  Buffer<T> out(n * c);
  std::size_t col = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const T* src = parts[k].ptr();
    for (std::size_t r = 0; r < n; ++r)
      std::copy(src + r * widths[k], src + (r + 1) * widths[k], out.data() + r * c + col);
    col += widths[k];
  }
  return make_result<T>(
      {n, c}, std::move(out), parts,
      [n, c, widths](Node<T>& o) {
        std::size_t col0 = 0;
        for (std::size_t k = 0; k < widths.size(); ++k) {
          if (T* g = grad_sink(o, k))
            for (std::size_t r = 0; r < n; ++r)
              for (std::size_t j = 0; j < widths[k]; ++j)
                g[r * widths[k] + j] += o.grad[r * c + col0 + j];
          col0 += widths[k];
        }
      },
      "concat_cols");
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& a, std::size_t begin, std::size_t end) {
  detail::require_2d(a, "slice_rows");
  detail::require(begin <= end && end <= a.dim(0), "slice_rows: range out of bounds");
  const std::size_t c = a.dim(1);
  Buffer<T> out(a.ptr() + begin * c, a.ptr() + end * c);
  return make_result<T>(
      {end - begin, c}, std::move(out), {a},
      [begin, c](Node<T>& o) {
        if (T* g = grad_sink(o, 0))
          for (std::size_t i = 0; i < o.grad.size(); ++i) g[begin * c + i] += o.grad[i];
      },
      "slice_rows");
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& a, std::size_t begin, std::size_t end) {
  detail::require_2d(a, "slice_cols");
  detail::require(begin <= end && end <= a.dim(1), "slice_cols: range out of bounds");
  const std::size_t n = a.dim(0), c = a.dim(1), w = end - begin;
  Buffer<T> out(n * w);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < w; ++j) out[r * w + j] = a.ptr()[r * c + begin + j];
  return make_result<T>(
      {n, w}, std::move(out), {a},
      [n, c, w, begin](Node<T>& o) {
        if (T* g = grad_sink(o, 0))
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < w; ++j) g[r * c + begin + j] += o.grad[r * w + j];
      },
      "slice_cols");
}

// out[i] = a[idx[i]]; idx == -1 yields a zero row.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& a, std::span<const std::int64_t> idx) {
  detail::require_2d(a, "gather_rows");
  const std::size_t n = a.dim(0), c = a.dim(1);
  for (auto i : idx) detail::require(i >= -1 && i < static_cast<std::int64_t>(n), "gather_rows: index");
  std::vector<std::int64_t> ix(idx.begin(), idx.end());
  const std::size_t m = ix.size();
  Buffer<T> out(m * c, T(0));
  for (std::size_t r = 0; r < m; ++r)
    if (ix[r] >= 0) std::copy(a.ptr() + ix[r] * c, a.ptr() + (ix[r] + 1) * c, out.data() + r * c);
  return make_result<T>(
      {m, c}, std::move(out), {a},
      [ix = std::move(ix), c](Node<T>& o) {
        if (T* g = grad_sink(o, 0))
          for (std::size_t r = 0; r < ix.size(); ++r)
            if (ix[r] >= 0)
              for (std::size_t j = 0; j < c; ++j) g[ix[r] * c + j] += o.grad[r * c + j];
      },
      "gather_rows");
}

// out (rows x C) with out[idx[i]] += src[i].
template <typename T>
Tensor<T> index_add_rows(const Tensor<T>& src, std::span<const std::int64_t> idx, std::size_t rows) {
  detail::require_2d(src, "index_add_rows");
  detail::require(idx.size() == src.dim(0), "index_add_rows: index count mismatch");
  const std::size_t c = src.dim(1);
  std::vector<std::int64_t> ix(idx.begin(), idx.end());
  Buffer<T> out(rows * c, T(0));
  for (std::size_t r = 0; r < ix.size(); ++r) {
    detail::require(ix[r] >= 0 && static_cast<std::size_t>(ix[r]) < rows, "index_add_rows: index");
    for (std::size_t j = 0; j < c; ++j) out[ix[r] * c + j] += src.ptr()[r * c + j];
  }
  return make_result<T>(
      {rows, c}, std::move(out), {src},
      [ix = std::move(ix), c](Node<T>& o) {
        if (T* g = grad_sink(o, 0))
          for (std::size_t r = 0; r < ix.size(); ++r)
            for (std::size_t j = 0; j < c; ++j) g[r * c + j] += o.grad[ix[r] * c + j];
      },
      "index_add_rows");
}

// Clamps column j of a 2-D tensor into [lo[j], hi[j]]; gradient passes only
// for entries strictly inside the interval.
template <typename T>
Tensor<T> clamp_cols(const Tensor<T>& a, std::span<const T> lo, std::span<const T> hi) {
  detail::require_2d(a, "clamp_cols");
  const std::size_t n = a.dim(0), c = a.dim(1);
  detail::require(lo.size() == c && hi.size() == c, "clamp_cols: bound size mismatch");
  Buffer<T> out(n * c);
  std::vector<std::uint8_t> pass(n * c);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < c; ++j) {
      const T v = a.ptr()[r * c + j];
      out[r * c + j] = std::clamp(v, lo[j], hi[j]);
      pass[r * c + j] = v > lo[j] && v < hi[j];
    }
  }
  return make_result<T>(
      a.shape(), std::move(out), {a},
      [pass = std::move(pass)](Node<T>& o) {
        if (T* g = grad_sink(o, 0))
          for (std::size_t i = 0; i < pass.size(); ++i)
            if (pass[i]) g[i] += o.grad[i];
      },
      "clamp_cols");
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T s = 0;
  for (T v : a.data()) s += v;
  Buffer<T> out{s};
  return make_result<T>(
      {1}, std::move(out), {a},
      [](Node<T>& o) {
        if (T* g = grad_sink(o, 0)) {
          const T gv = o.grad[0];
          for (std::size_t i = 0; i < o.inputs[0]->value.size(); ++i) g[i] += gv;
        }
      },
      "sum");
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / T(a.numel()));
}

// Sum of scalar tensors; undefined entries are skipped.
template <typename T>
Tensor<T> add_all(const std::vector<Tensor<T>>& terms) {
  Tensor<T> acc;
  for (const auto& t : terms) {
    if (!t.defined()) continue;
    acc = acc.defined() ? add(acc, t) : t;
  }
  return acc.defined() ? acc : Tensor<T>::scalar(T(0));
}

}  // namespace vbev
