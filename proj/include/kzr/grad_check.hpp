#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "kzr/tensor.hpp"

namespace kzr {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t entries_checked = 0;
};

struct GradCheckOptions {
  // Perturbation is epsilon * max(1, |x|).
  double epsilon = 1e-5;
  // Relative error is |a - n| / max(|a|, |n|, denominator_floor); the floor
  // keeps entries whose true gradient is zero from dividing noise by noise.
  double denominator_floor = 1e-6;
};

/// Compares the reverse-mode gradient of a scalar loss against central
/// differences (f(x+h) - f(x-h)) / 2h for every entry of every parameter.
/// `loss_fn` must rebuild the graph from the current parameter values on
/// each call and be deterministic.
template <typename T>
GradCheckResult grad_check(const std::function<Tensor<T>()>& loss_fn,
                           std::vector<Tensor<T>> params, GradCheckOptions opts = {}) {
  if (!(opts.epsilon > 0)) throw std::invalid_argument("grad_check: epsilon must be positive");
  auto eval = [&](const char* where) {
    T v;
    {
      NoGradGuard guard;
      v = loss_fn().item();
    }
    if (!std::isfinite(static_cast<double>(v))) {
      throw NumericError(std::string("grad_check: non-finite loss at ") + where);
    }
    return static_cast<double>(v);
  };

  for (auto& p : params) p.zero_grad();
  Tensor<T> loss = loss_fn();
  if (!std::isfinite(static_cast<double>(loss.item()))) {
    throw NumericError("grad_check: non-finite loss at the unperturbed point");
  }
  loss.backward();

  GradCheckResult result;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    std::vector<T> analytic(p.grad().begin(), p.grad().end());
    analytic.resize(p.size(), T(0));
    auto values = p.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const T x0 = values[i];
      const T h = static_cast<T>(opts.epsilon) * std::max(T(1), std::abs(x0));
      values[i] = x0 + h;
      const T xp = values[i];
      const double fp = eval("+h");
      values[i] = x0 - h;
      const T xm = values[i];
      const double fm = eval("-h");
      values[i] = x0;
      const double numeric = (fp - fm) / static_cast<double>(xp - xm);
      const double a = static_cast<double>(analytic[i]);
      const double denom =
          std::max({std::abs(a), std::abs(numeric), opts.denominator_floor});
      const double rel = std::abs(a - numeric) / denom;
      ++result.entries_checked;
      if (rel > result.max_relative_error) {
        result.max_relative_error = rel;
        result.worst_param = pi;
        result.worst_index = i;
        result.worst_analytic = a;
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace kzr
