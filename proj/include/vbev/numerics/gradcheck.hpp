#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "vbev/numerics/tensor.hpp"

namespace vbev {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t entries = 0;
};

// Compares reverse-mode gradients of a scalar computation against central
// differences. Relative error per entry is
//   |analytic - numeric| / max(1, |analytic|, |numeric|).
template <typename T>
GradCheckResult check_gradients_detailed(const std::function<Tensor<T>()>& f,
                                         std::vector<Tensor<T>> params, double eps = 1e-5) {
  for (auto& p : params) {
    p.node().requires_grad = true;
    p.zero_grad();
  }
  const Tensor<T> out = f();
  if (out.numel() != 1) {
    throw ContractError("check_gradients: computation is not scalar, shape " + shape_str(out.shape()));
  }
  backward(out);
  std::vector<std::vector<T>> analytic;
  for (auto& p : params) {
    analytic.emplace_back(p.numel(), T(0));
    if (p.has_grad()) std::copy(p.grad().begin(), p.grad().end(), analytic.back().begin());
  }

  GradCheckResult res;
  NoGradGuard no_grad;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto values = params[pi].data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const T orig = values[i];
      values[i] = orig + T(eps);
      const double up = static_cast<double>(f().item());
      values[i] = orig - T(eps);
      const double down = static_cast<double>(f().item());
      values[i] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = static_cast<double>(analytic[pi][i]);
      const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      if (!(err <= res.max_rel_error) || res.entries == 0) {
        res.max_rel_error = std::isnan(err) ? std::numeric_limits<double>::infinity() : err;
        res.worst_param = pi;
        res.worst_index = i;
        res.analytic = a;
        res.numeric = numeric;
      }
      ++res.entries;
    }
  }
  for (auto& p : params) p.zero_grad();
  return res;
}

template <typename T>
double check_gradients(const std::function<Tensor<T>()>& f, std::vector<Tensor<T>> params,
                       double eps = 1e-5) {
  return check_gradients_detailed<T>(f, std::move(params), eps).max_rel_error;
}

}  // namespace vbev
