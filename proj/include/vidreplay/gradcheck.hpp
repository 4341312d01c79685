#pragma once

// Central finite-difference oracle. Only forward values are used here, so it
// stays independent of the reverse-mode implementation it is checking.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "vidreplay/optim.hpp"
#include "vidreplay/tensor.hpp"

namespace vidreplay::testing {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// loss_fn builds a scalar loss from the current values of `leaves`.
inline GradCheckResult grad_check(std::vector<Tensor> leaves, const std::function<Tensor()>& loss_fn,
                                  double eps = 1e-5, double floor = 1e-6) {
  for (auto& l : leaves) l.node()->grad.assign(l.size(), 0.0);
  backward(loss_fn());
  std::vector<std::vector<double>> analytic;
  for (auto& l : leaves) analytic.emplace_back(l.grad().begin(), l.grad().end());

  GradCheckResult result;
  NoGradGuard no_grad;
  for (std::size_t k = 0; k < leaves.size(); ++k) {
    auto values = leaves[k].mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double up = loss_fn().item();
      values[i] = saved - eps;
      const double down = loss_fn().item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      result.max_rel_error = std::max(result.max_rel_error, relative_error(analytic[k][i], numeric, floor));
      ++result.checked;
    }
  }
  return result;
}

inline GradCheckResult grad_check(const ParamStore& params, const std::function<Tensor()>& loss_fn,
                                  double eps = 1e-5, double floor = 1e-6) {
  std::vector<Tensor> leaves;
  for (const auto& p : params) leaves.push_back(p.tensor);
  return grad_check(std::move(leaves), loss_fn, eps, floor);
}

}  // namespace vidreplay::testing
