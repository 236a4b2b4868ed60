#include "normaug/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace naug {

GradCheckResult grad_check(const std::function<Tensor()> &f, std::vector<Tensor> params, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("grad_check: step size must be positive");
  for (auto &p : params) {
    if (!p.requires_grad()) throw std::invalid_argument("grad_check: parameter does not require grad");
    p.zero_grad();
  }
  Tensor loss = f();
  loss.backward();
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (auto &p : params) analytic.emplace_back(p.grad().begin(), p.grad().end());

  GradCheckResult result;
  NoGradGuard no_grad;
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto values = params[t].mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double original = values[i];
      values[i] = original + h;
      const double up = f().item();
      values[i] = original - h;
      const double down = f().item();
      values[i] = original;
      const double numeric = (up - down) / (2.0 * h);
      const double ad = analytic[t][i];
      const double err = std::abs(ad - numeric) / std::max({1.0, std::abs(ad), std::abs(numeric)});
      if (err > result.max_rel_error || result.coordinates == 0) {
        result.max_rel_error = err;
        result.worst_tensor = t;
        result.worst_index = i;
      }
      ++result.coordinates;
    }
  }
  for (auto &p : params) p.zero_grad();
  return result;
}

double grad_check(const std::function<Tensor(const Tensor &)> &f, const Tensor &x, double h) {
  return grad_check([&] { return f(x); }, {x}, h).max_rel_error;
}

}  // namespace naug
