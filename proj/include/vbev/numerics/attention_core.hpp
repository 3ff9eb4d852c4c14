#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "vbev/numerics/ops.hpp"

namespace vbev {

// Scaled dot-product attention over already-projected Q (Nq x C), K and V
// (Nk x C) with `heads` heads of C/heads channels each.
//
// With group == 0 every query attends to every key. With group == g > 0 the
// keys are partitioned into Nq contiguous blocks of g rows and query i sees
// only block i.
template <typename T>
Tensor<T> attention_core(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                         std::size_t heads, std::size_t group = 0) {
  detail::require_2d(q, "attention_core");
  detail::require_2d(k, "attention_core");
  detail::require_same(k, v, "attention_core");
  const std::size_t nq = q.dim(0), nk = k.dim(0), c = q.dim(1);
  detail::require(k.dim(1) == c, "attention_core: channel mismatch");
  detail::require(heads >= 1 && c % heads == 0, "attention_core: channels not divisible by heads");
  if (group > 0) {
    detail::require(nk == nq * group, "attention_core: blocked mode needs Nk == Nq * group");
  }
  const std::size_t d = c / heads;
  const std::size_t span = group > 0 ? group : nk;
  const T inv_sqrt_d = T(1) / std::sqrt(T(d));

  Buffer<T> probs(nq * heads * span);
  Buffer<T> out(nq * c, T(0));
  const T* qv = q.ptr();
  const T* kv = k.ptr();
  const T* vv = v.ptr();
  for (std::size_t i = 0; i < nq; ++i) {
    const std::size_t k0 = group > 0 ? i * group : 0;
    for (std::size_t hd = 0; hd < heads; ++hd) {
      T* p = probs.data() + (i * heads + hd) * span;
      const T* qi = qv + i * c + hd * d;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < span; ++j) {
        const T* kj = kv + (k0 + j) * c + hd * d;
        T s = 0;
        for (std::size_t t = 0; t < d; ++t) s += qi[t] * kj[t];
        p[j] = s * inv_sqrt_d;
        mx = std::max(mx, p[j]);
      }
      T z = 0;
      for (std::size_t j = 0; j < span; ++j) {
        p[j] = std::exp(p[j] - mx);
        z += p[j];
      }
      T* oi = out.data() + i * c + hd * d;
      for (std::size_t j = 0; j < span; ++j) {
        p[j] /= z;
        const T* vj = vv + (k0 + j) * c + hd * d;
        for (std::size_t t = 0; t < d; ++t) oi[t] += p[j] * vj[t];
      }
    }
  }
  return make_result<T>(
      {nq, c}, std::move(out), {q, k, v},
      [probs = std::move(probs), nq, c, heads, d, span, group, inv_sqrt_d](Node<T>& o) {
        const T* g = o.grad.data();
        const T* qv2 = o.inputs[0]->value.data();
        const T* kv2 = o.inputs[1]->value.data();
        const T* vv2 = o.inputs[2]->value.data();
        T* gq = grad_sink(o, 0);
        T* gk = grad_sink(o, 1);
        T* gv = grad_sink(o, 2);
        std::vector<T> ds(span);
        for (std::size_t i = 0; i < nq; ++i) {
          const std::size_t k0 = group > 0 ? i * group : 0;
          for (std::size_t hd = 0; hd < heads; ++hd) {
            const T* p = probs.data() + (i * heads + hd) * span;
            const T* gi = g + i * c + hd * d;
            T dot = 0;
            for (std::size_t j = 0; j < span; ++j) {
              const T* vj = vv2 + (k0 + j) * c + hd * d;
              T da = 0;
              for (std::size_t t = 0; t < d; ++t) da += gi[t] * vj[t];
              ds[j] = da;
              dot += p[j] * da;
              if (gv) {
                T* gvj = gv + (k0 + j) * c + hd * d;
                for (std::size_t t = 0; t < d; ++t) gvj[t] += p[j] * gi[t];
              }
            }
            const T* qi = qv2 + i * c + hd * d;
            for (std::size_t j = 0; j < span; ++j) {
              const T dsj = p[j] * (ds[j] - dot) * inv_sqrt_d;
              if (dsj == T(0)) continue;
              const T* kj = kv2 + (k0 + j) * c + hd * d;
              if (gq) {
                T* gqi = gq + i * c + hd * d;
                for (std::size_t t = 0; t < d; ++t) gqi[t] += dsj * kj[t];
              }
              if (gk) {
                T* gkj = gk + (k0 + j) * c + hd * d;
                for (std::size_t t = 0; t < d; ++t) gkj[t] += dsj * qi[t];
              }
            }
          }
        }
      },
      "attention_core");
}

}  // namespace vbev
