#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "kzr/tensor.hpp"

namespace kzr {

struct TrainConfig {
  double rho = 0.95;
  double epsilon = 1e-8;
  std::size_t batch_size = 8;
  double clip_norm = 100.0;
  std::size_t patience_epochs = 15;
  std::size_t max_epochs = 200;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(rho > 0.0 && rho < 1.0)) throw std::invalid_argument("train: rho must be in (0, 1)");
    if (!(epsilon > 0.0)) throw std::invalid_argument("train: epsilon must be positive");
    if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
    if (!(clip_norm > 0.0)) throw std::invalid_argument("train: clip_norm must be positive");
    if (patience_epochs < 1) throw std::invalid_argument("train: patience_epochs must be >= 1");
  }
};

/// One AdaDelta update of a parameter block:
///   E[g^2]  <- rho E[g^2] + (1 - rho) g^2
///   dx      <- -sqrt(E[dx^2] + eps) / sqrt(E[g^2] + eps) * g
///   E[dx^2] <- rho E[dx^2] + (1 - rho) dx^2
///   x       <- x + dx
template <typename T>
void adadelta_step(std::span<T> params, std::span<const T> grads, std::span<T> mean_sq_grad,
                   std::span<T> mean_sq_delta, double rho, double epsilon) {
  if (grads.size() != params.size() || mean_sq_grad.size() != params.size() ||
      mean_sq_delta.size() != params.size()) {
    throw DimensionError("adadelta_step: parameter, gradient and accumulator sizes differ");
  }
  const T r = static_cast<T>(rho);
  const T eps = static_cast<T>(epsilon);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!std::isfinite(static_cast<double>(grads[i]))) {
      throw NumericError("adadelta_step: non-finite gradient at entry " + std::to_string(i));
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const T g = grads[i];
    mean_sq_grad[i] = r * mean_sq_grad[i] + (T(1) - r) * g * g;
    const T dx = -std::sqrt(mean_sq_delta[i] + eps) / std::sqrt(mean_sq_grad[i] + eps) * g;
    mean_sq_delta[i] = r * mean_sq_delta[i] + (T(1) - r) * dx * dx;
    params[i] += dx;
  }
}

/// Rescales all gradients by clip_norm / ||g|| when the global L2 norm
/// exceeds clip_norm. Returns the norm before clipping.
template <typename T>
double clip_gradients(const std::vector<std::span<T>>& grads, double clip_norm) {
  if (!(clip_norm > 0.0)) throw std::invalid_argument("clip_gradients: clip_norm must be positive");
  double sq = 0.0;
  for (const auto& g : grads)
    for (T v : g) sq += static_cast<double>(v) * static_cast<double>(v);
  const double norm = std::sqrt(sq);
  if (norm > clip_norm) {
    const T factor = static_cast<T>(clip_norm / norm);
    for (const auto& g : grads)
      for (T& v : g) v *= factor;
  }
  return norm;
}

/// Zero-initialized AdaDelta accumulators, one block per parameter.
template <typename T>
struct AdaDeltaState {
  std::vector<std::vector<T>> mean_sq_grad;
  std::vector<std::vector<T>> mean_sq_delta;

  template <typename Store>
  static AdaDeltaState for_params(const Store& store) {
    AdaDeltaState s;
    for (const auto& t : store.tensors()) {
      s.mean_sq_grad.emplace_back(t.size(), T(0));
      s.mean_sq_delta.emplace_back(t.size(), T(0));
    }
    return s;
  }
};

}  // namespace kzr
