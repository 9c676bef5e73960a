#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "kzr/tensor.hpp"

namespace kzr {

/// Seeded generator with portable uniform draws (std distributions are
/// implementation-defined, these are not).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi].
  std::int64_t integer(std::int64_t lo, std::int64_t hi) {
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(engine_() % span);
  }

  template <typename It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::int64_t>(last - first);
    for (std::int64_t i = n - 1; i > 0; --i) std::swap(first[i], first[integer(0, i)]);
  }

 private:
  std::mt19937_64 engine_;
};

/// Ordered set of named trainable leaves. Registration order is the
/// canonical order for checkpoints and optimizer state.
template <typename T>
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;
  ParameterStore(ParameterStore&&) noexcept = default;
  ParameterStore& operator=(ParameterStore&&) noexcept = default;

  Tensor<T> add(const std::string& name, Shape shape) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    index_[name] = tensors_.size();
    names_.push_back(name);
    tensors_.emplace_back(std::move(shape), T(0), true);
    return tensors_.back();
  }

  /// Registers a parameter drawn from U(-bound, bound).
  Tensor<T> add_uniform(const std::string& name, Shape shape, double bound, Rng& rng) {
    Tensor<T> t = add(name, std::move(shape));
    for (auto& v : t.mutable_data()) v = static_cast<T>(rng.uniform(-bound, bound));
    return t;
  }

  Tensor<T> add_constant(const std::string& name, Shape shape, T value) {
    Tensor<T> t = add(name, std::move(shape));
    for (auto& v : t.mutable_data()) v = value;
    return t;
  }

  std::size_t size() const { return tensors_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  const Tensor<T>& operator[](std::size_t i) const { return tensors_[i]; }
  Tensor<T>& operator[](std::size_t i) { return tensors_[i]; }
  const std::vector<Tensor<T>>& tensors() const { return tensors_; }

  const Tensor<T>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return tensors_[it->second];
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.size();
    return n;
  }

  void zero_grad() {
    for (auto& t : tensors_) t.zero_grad();
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor<T>> tensors_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace kzr
