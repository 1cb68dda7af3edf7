#pragma once

// Central finite-difference check of reverse-mode gradients.

#include <cmath>
#include <functional>
#include <vector>

#include "grok/autograd.hpp"

namespace grok {

struct GradCheckResult {
  double relative_error = 0.0;  // ‖g_ad − g_fd‖ / (‖g_ad‖ + ‖g_fd‖)
  double max_abs_error = 0.0;
  std::size_t entries = 0;
};

/// `loss` must rebuild the scalar from the current values of `inputs` on
/// every call. Inputs are perturbed in place and restored.
inline GradCheckResult gradient_check(const std::function<ad::Tensor()>& loss,
                                      std::vector<ad::Tensor> inputs, double step = 1e-5) {
  for (auto& t : inputs) t.zero_grad();
  ad::backward(loss());
  double diff2 = 0.0, ad2 = 0.0, fd2 = 0.0;
  GradCheckResult r;
  for (auto& t : inputs) {
    const Matrix analytic = t.grad().empty() ? Matrix(t.rows(), t.cols()) : t.grad();
    Matrix& v = t.mutable_value();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double saved = v[i];
      v[i] = saved + step;
      const double up = loss().item();
      v[i] = saved - step;
      const double down = loss().item();
      v[i] = saved;
      const double fd = (up - down) / (2.0 * step);
      const double e = analytic[i] - fd;
      diff2 += e * e;
      ad2 += analytic[i] * analytic[i];
      fd2 += fd * fd;
      r.max_abs_error = std::max(r.max_abs_error, std::abs(e));
      ++r.entries;
    }
  }
  const double denom = std::sqrt(ad2) + std::sqrt(fd2);
  r.relative_error = denom > 0.0 ? std::sqrt(diff2) / denom : 0.0;
  return r;
}

}  // namespace grok
