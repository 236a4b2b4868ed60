#pragma once

#include <functional>
#include <vector>

#include "normaug/tensor.hpp"

namespace naug {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
  std::size_t coordinates = 0;
};

// Compares tape gradients of the scalar `f` against central differences
// (f(x+h) - f(x-h)) / 2h for every coordinate of every tensor in `params`.
// Error per coordinate is |g_ad - g_fd| / max(1, |g_ad|, |g_fd|).
// Existing gradients on `params` are cleared.
GradCheckResult grad_check(const std::function<Tensor()> &f, std::vector<Tensor> params, double h = 1e-5);

// Single-input form: `x` must require a gradient.
double grad_check(const std::function<Tensor(const Tensor &)> &f, const Tensor &x, double h = 1e-5);

}  // namespace naug
