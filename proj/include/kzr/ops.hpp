#pragma once

// Differentiable tensor operations.
//
// Spatial tensors are row-major H x W x C. Matrices are rank-2 [rows x cols];
// vectors that take part in matrix products are carried as [1 x n] rows.

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "kzr/detail/gemm.hpp"
#include "kzr/tensor.hpp"

namespace kzr {

namespace detail {

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

template <typename T>
void require_rank(const Tensor<T>& a, std::size_t r, const char* op) {
  if (a.rank() != r) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " +
                         shape_str(a.shape()));
  }
}

template <typename T>
std::vector<T>& grad_of(Node<T>& n) {
  return n.ensure_grad();
}

template <typename T, typename Fwd, typename Bwd>
Tensor<T> unary_map(const Tensor<T>& a, Fwd fwd, Bwd dydx_from_y) {
  const auto x = a.data();
  std::vector<T> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = fwd(x[i]);
  return make_result<T>(a.shape(), std::move(y), {a.node()}, [dydx_from_y](Node<T>& self) {
    auto& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& g = grad_of(in);
    const auto& yv = *self.value;
    const auto& xv = *in.value;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * dydx_from_y(xv[i], yv[i]);
  });
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  const auto x = a.data();
  const auto y = b.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return detail::make_result<T>(a.shape(), std::move(out), {a.node(), b.node()},
                                [](detail::Node<T>& self) {
                                  for (auto& in : self.inputs) {
                                    if (!in->requires_grad) continue;
                                    auto& g = detail::grad_of(*in);
                                    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                                  }
                                });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  const auto x = a.data();
  const auto y = b.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return detail::make_result<T>(a.shape(), std::move(out), {a.node(), b.node()},
                                [](detail::Node<T>& self) {
                                  const T sign[2] = {T(1), T(-1)};
                                  for (std::size_t k = 0; k < 2; ++k) {
                                    auto& in = *self.inputs[k];
                                    if (!in.requires_grad) continue;
                                    auto& g = detail::grad_of(in);
                                    for (std::size_t i = 0; i < g.size(); ++i)
                                      g[i] += sign[k] * self.grad[i];
                                  }
                                });
}

/// Elementwise product.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  const auto x = a.data();
  const auto y = b.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return detail::make_result<T>(a.shape(), std::move(out), {a.node(), b.node()},
                                [](detail::Node<T>& self) {
                                  auto& a_in = *self.inputs[0];
                                  auto& b_in = *self.inputs[1];
                                  if (a_in.requires_grad) {
                                    auto& g = detail::grad_of(a_in);
                                    for (std::size_t i = 0; i < g.size(); ++i)
                                      g[i] += self.grad[i] * (*b_in.value)[i];
                                  }
                                  if (b_in.requires_grad) {
                                    auto& g = detail::grad_of(b_in);
                                    for (std::size_t i = 0; i < g.size(); ++i)
                                      g[i] += self.grad[i] * (*a_in.value)[i];
                                  }
                                });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  return detail::unary_map(
      a, [s](T x) { return s * x; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  return detail::unary_map(
      a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& a) {
  return detail::unary_map(
      a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return detail::unary_map(
      a,
      [](T x) {
        if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
        const T e = std::exp(x);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

/// Rectifier; the derivative at exactly zero is taken as zero.
template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return detail::unary_map(
      a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

/// Sum of all entries, shape [1].
template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T s = T(0);
  for (T v : a.data()) s += v;
  return detail::make_result<T>(Shape{1}, std::vector<T>{s}, {a.node()}, [](detail::Node<T>& self) {
    auto& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& g = detail::grad_of(in);
    for (auto& v : g) v += self.grad[0];
  });
}

/// Same values, new shape. Shares the value buffer with the input.
template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.size()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(shape));
  }
  return detail::make_result<T>(std::move(shape), a.node()->value, {a.node()},
                                [](detail::Node<T>& self) {
                                  auto& in = *self.inputs[0];
                                  if (!in.requires_grad) return;
                                  auto& g = detail::grad_of(in);
                                  for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                                });
}

/// a [m x k] times b [k x n].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n, T(0));
  detail::gemm_nn(m, n, k, a.data().data(), b.data().data(), out.data());
  return detail::make_result<T>(Shape{m, n}, std::move(out), {a.node(), b.node()},
                                [m, k, n](detail::Node<T>& self) {
                                  auto& a_in = *self.inputs[0];
                                  auto& b_in = *self.inputs[1];
                                  if (a_in.requires_grad) {
                                    detail::gemm_nt(m, k, n, self.grad.data(), b_in.value->data(),
                                                    detail::grad_of(a_in).data());
                                  }
                                  if (b_in.requires_grad) {
                                    detail::gemm_tn(k, n, m, a_in.value->data(), self.grad.data(),
                                                    detail::grad_of(b_in).data());
                                  }
                                });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  detail::require_rank(a, 2, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<T> out(a.size());
  detail::transpose(r, c, a.data().data(), out.data());
  return detail::make_result<T>(Shape{c, r}, std::move(out), {a.node()},
                                [r, c](detail::Node<T>& self) {
                                  auto& in = *self.inputs[0];
                                  if (!in.requires_grad) return;
                                  auto& g = detail::grad_of(in);
                                  for (std::size_t i = 0; i < r; ++i)
                                    for (std::size_t j = 0; j < c; ++j)
                                      g[i * c + j] += self.grad[j * r + i];
                                });
}

/// Adds `bias` (n entries, any shape) along the last axis of `a`.
template <typename T>
Tensor<T> add_bias(const Tensor<T>& a, const Tensor<T>& bias) {
  const std::size_t n = a.shape().back();
  if (bias.size() != n) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) +
                         " does not match last axis of " + shape_str(a.shape()));
  }
  const auto x = a.data();
  const auto b = bias.data();
  std::vector<T> out(x.size());
  const std::size_t rows = x.size() / n;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = x[r * n + j] + b[j];
  return detail::make_result<T>(a.shape(), std::move(out), {a.node(), bias.node()},
                                [rows, n](detail::Node<T>& self) {
                                  auto& a_in = *self.inputs[0];
                                  auto& b_in = *self.inputs[1];
                                  if (a_in.requires_grad) {
                                    auto& g = detail::grad_of(a_in);
                                    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                                  }
                                  if (b_in.requires_grad) {
                                    auto& g = detail::grad_of(b_in);
                                    for (std::size_t r = 0; r < rows; ++r)
                                      for (std::size_t j = 0; j < n; ++j)
                                        g[j] += self.grad[r * n + j];
                                  }
                                });
}

/// Concatenates along the last axis. All leading extents must agree.
template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_channels: no inputs");
  const Shape& first = parts.front().shape();
  const Shape lead(first.begin(), first.end() - 1);
  const std::size_t rows = shape_numel(lead);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size() || !std::equal(lead.begin(), lead.end(), s.begin())) {
      throw DimensionError("concat_channels: leading extents differ: " + shape_str(first) +
                           " vs " + shape_str(s));
    }
    widths.push_back(s.back());
    total += s.back();
  }
  std::vector<T> out(rows * total);
  std::size_t offset = 0;
  std::vector<std::shared_ptr<detail::Node<T>>> inputs;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto src = parts[k].data();
    const std::size_t w = widths[k];
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(src.data() + r * w, w, out.data() + r * total + offset);
    offset += w;
    inputs.push_back(parts[k].node());
  }
  Shape shape = lead;
  shape.push_back(total);
  return detail::make_result<T>(std::move(shape), std::move(out), std::move(inputs),
                                [rows, total, widths](detail::Node<T>& self) {
                                  std::size_t off = 0;
                                  for (std::size_t k = 0; k < widths.size(); ++k) {
                                    auto& in = *self.inputs[k];
                                    const std::size_t w = widths[k];
                                    if (in.requires_grad) {
                                      auto& g = detail::grad_of(in);
                                      for (std::size_t r = 0; r < rows; ++r)
                                        for (std::size_t j = 0; j < w; ++j)
                                          g[r * w + j] += self.grad[r * total + off + j];
                                    }
                                    off += w;
                                  }
                                });
}

/// Columns [begin, begin + len) of the last axis.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& a, std::size_t begin, std::size_t len) {
  const std::size_t n = a.shape().back();
  if (len == 0 || begin + len > n) {
    throw DimensionError("slice_channels: range [" + std::to_string(begin) + ", " +
                         std::to_string(begin + len) + ") outside " + shape_str(a.shape()));
  }
  const std::size_t rows = a.size() / n;
  const auto x = a.data();
  std::vector<T> out(rows * len);
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(x.data() + r * n + begin, len, out.data() + r * len);
  Shape shape = a.shape();
  shape.back() = len;
  return detail::make_result<T>(std::move(shape), std::move(out), {a.node()},
                                [rows, n, begin, len](detail::Node<T>& self) {
                                  auto& in = *self.inputs[0];
                                  if (!in.requires_grad) return;
                                  auto& g = detail::grad_of(in);
                                  for (std::size_t r = 0; r < rows; ++r)
                                    for (std::size_t j = 0; j < len; ++j)
                                      g[r * n + begin + j] += self.grad[r * len + j];
                                });
}

/// Softmax over every entry of `a`, stabilized by subtracting the maximum.
template <typename T>
Tensor<T> softmax_flat(const Tensor<T>& a) {
  const auto x = a.data();
  T mx = -std::numeric_limits<T>::infinity();
  for (T v : x) mx = std::max(mx, v);
  std::vector<T> y(x.size());
  T z = T(0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = std::exp(x[i] - mx);
    z += y[i];
  }
  for (auto& v : y) v /= z;
  return detail::make_result<T>(a.shape(), std::move(y), {a.node()}, [](detail::Node<T>& self) {
    auto& in = *self.inputs[0];
    if (!in.requires_grad) return;
    const auto& yv = *self.value;
    T dot = T(0);
    for (std::size_t i = 0; i < yv.size(); ++i) dot += self.grad[i] * yv[i];
    auto& g = detail::grad_of(in);
    for (std::size_t i = 0; i < yv.size(); ++i) g[i] += yv[i] * (self.grad[i] - dot);
  });
}

/// -log softmax(logits)[target], computed from the log-sum-exp.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::size_t target) {
  const auto x = logits.data();
  if (target >= x.size()) {
    throw DimensionError("cross_entropy: target " + std::to_string(target) + " outside " +
                         shape_str(logits.shape()));
  }
  T mx = -std::numeric_limits<T>::infinity();
  for (T v : x) mx = std::max(mx, v);
  T z = T(0);
  for (T v : x) z += std::exp(v - mx);
  const T lse = mx + std::log(z);
  const T loss = lse - x[target];
  return detail::make_result<T>(Shape{1}, std::vector<T>{loss}, {logits.node()},
                                [target, lse](detail::Node<T>& self) {
                                  auto& in = *self.inputs[0];
                                  if (!in.requires_grad) return;
                                  auto& g = detail::grad_of(in);
                                  const auto& xv = *in.value;
                                  const T up = self.grad[0];
                                  for (std::size_t i = 0; i < xv.size(); ++i)
                                    g[i] += up * std::exp(xv[i] - lse);
                                  g[target] -= up;
                                });
}

/// Row `index` of `table` [rows x n], shape [1 x n].
template <typename T>
Tensor<T> embedding_lookup(const Tensor<T>& table, std::size_t index) {
  detail::require_rank(table, 2, "embedding_lookup");
  if (index >= table.dim(0)) {
    throw DimensionError("embedding_lookup: index " + std::to_string(index) + " outside " +
                         shape_str(table.shape()));
  }
  const std::size_t n = table.dim(1);
  std::vector<T> out(table.data().begin() + index * n, table.data().begin() + (index + 1) * n);
  return detail::make_result<T>(Shape{1, n}, std::move(out), {table.node()},
                                [index, n](detail::Node<T>& self) {
                                  auto& in = *self.inputs[0];
                                  if (!in.requires_grad) return;
                                  auto& g = detail::grad_of(in);
                                  for (std::size_t j = 0; j < n; ++j) g[index * n + j] += self.grad[j];
                                });
}

/// 2-D cross-correlation (no kernel flip) of an H x W x Cin input with a
/// kh x kw x Cin x Cout kernel. Zero padding on all four sides.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, std::size_t stride = 1,
                 std::size_t padding = 0) {
  detail::require_rank(input, 3, "conv2d input");
  detail::require_rank(kernel, 4, "conv2d kernel");
  if (stride == 0) throw DimensionError("conv2d: stride must be >= 1");
  const std::size_t h = input.dim(0), w = input.dim(1), cin = input.dim(2);
  const std::size_t kh = kernel.dim(0), kw = kernel.dim(1), cout = kernel.dim(3);
  if (kernel.dim(2) != cin) {
    throw DimensionError("conv2d: kernel " + shape_str(kernel.shape()) +
                         " does not match input channels of " + shape_str(input.shape()));
  }
  if (kh > h + 2 * padding || kw > w + 2 * padding) {
    throw DimensionError("conv2d: kernel " + shape_str(kernel.shape()) +
                         " larger than padded input " + shape_str(input.shape()) + " (padding " +
                         std::to_string(padding) + ")");
  }
  const std::size_t ho = (h + 2 * padding - kh) / stride + 1;
  const std::size_t wo = (w + 2 * padding - kw) / stride + 1;
  const std::size_t p = ho * wo;
  const std::size_t kk = kh * kw * cin;

  // Channel-major copy of the input, then the column matrix cols[kk x p].
  std::vector<T> in_chw(cin * h * w);
  detail::transpose(h * w, cin, input.data().data(), in_chw.data());
  auto cols = std::make_shared<std::vector<T>>(kk * p, T(0));
  const bool identity_cols = kh == 1 && kw == 1 && stride == 1 && padding == 0;
  if (identity_cols) {
    *cols = std::move(in_chw);
  } else {
    for (std::size_t ky = 0; ky < kh; ++ky)
      for (std::size_t kx = 0; kx < kw; ++kx)
        for (std::size_t ci = 0; ci < cin; ++ci) {
          T* row = cols->data() + ((ky * kw + kx) * cin + ci) * p;
          const T* src = in_chw.data() + ci * h * w;
          for (std::size_t oy = 0; oy < ho; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                      static_cast<std::ptrdiff_t>(padding);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t ox = 0; ox < wo; ++ox) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                        static_cast<std::ptrdiff_t>(padding);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
              row[oy * wo + ox] = src[iy * w + ix];
            }
          }
        }
  }

  std::vector<T> kt(cout * kk);
  detail::transpose(kk, cout, kernel.data().data(), kt.data());
  std::vector<T> out_t(cout * p, T(0));
  detail::gemm_nn(cout, p, kk, kt.data(), cols->data(), out_t.data());
  std::vector<T> out(p * cout);
  detail::transpose(cout, p, out_t.data(), out.data());

  return detail::make_result<T>(
      Shape{ho, wo, cout}, std::move(out), {input.node(), kernel.node()},
      [=](detail::Node<T>& self) {
        auto& in_node = *self.inputs[0];
        auto& k_node = *self.inputs[1];
        std::vector<T> gout_t(cout * p);
        detail::transpose(p, cout, self.grad.data(), gout_t.data());
        if (k_node.requires_grad) {
          std::vector<T> gk_t(cout * kk, T(0));
          detail::gemm_nt(cout, kk, p, gout_t.data(), cols->data(), gk_t.data());
          auto& gk = detail::grad_of(k_node);
          for (std::size_t i = 0; i < kk; ++i)
            for (std::size_t o = 0; o < cout; ++o) gk[i * cout + o] += gk_t[o * kk + i];
        }
        if (in_node.requires_grad) {
          std::vector<T> kt_b(cout * kk);
          detail::transpose(kk, cout, k_node.value->data(), kt_b.data());
          std::vector<T> gcols(kk * p, T(0));
          detail::gemm_tn(kk, p, cout, kt_b.data(), gout_t.data(), gcols.data());
          std::vector<T> gin_chw(cin * h * w, T(0));
          if (identity_cols) {
            gin_chw = std::move(gcols);
          } else {
            for (std::size_t ky = 0; ky < kh; ++ky)
              for (std::size_t kx = 0; kx < kw; ++kx)
                for (std::size_t ci = 0; ci < cin; ++ci) {
                  const T* row = gcols.data() + ((ky * kw + kx) * cin + ci) * p;
                  T* dst = gin_chw.data() + ci * h * w;
                  for (std::size_t oy = 0; oy < ho; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                              static_cast<std::ptrdiff_t>(padding);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                    for (std::size_t ox = 0; ox < wo; ++ox) {
                      const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                                static_cast<std::ptrdiff_t>(padding);
                      if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                      dst[iy * w + ix] += row[oy * wo + ox];
                    }
                  }
                }
          }
          auto& gin = detail::grad_of(in_node);
          std::vector<T> gin_hwc(h * w * cin);
          detail::transpose(cin, h * w, gin_chw.data(), gin_hwc.data());
          for (std::size_t i = 0; i < gin.size(); ++i) gin[i] += gin_hwc[i];
        }
      });
}

enum class PoolKind { kMax, kAverage };

/// Windowed pooling over each channel of an H x W x C input, no padding.
/// Max pooling routes the gradient to the first maximum in row-major scan
/// order of the window.
template <typename T>
Tensor<T> pool2d(const Tensor<T>& input, PoolKind kind, std::size_t window, std::size_t stride) {
  detail::require_rank(input, 3, "pool2d");
  const std::size_t h = input.dim(0), w = input.dim(1), c = input.dim(2);
  if (window == 0 || stride == 0) throw DimensionError("pool2d: window and stride must be >= 1");
  if (window > h || window > w) {
    throw DimensionError("pool2d: window " + std::to_string(window) + " exceeds input " +
                         shape_str(input.shape()));
  }
  const std::size_t ho = (h - window) / stride + 1;
  const std::size_t wo = (w - window) / stride + 1;
  const auto x = input.data();
  std::vector<T> out(ho * wo * c);
  auto argmax = std::make_shared<std::vector<std::size_t>>();
  if (kind == PoolKind::kMax) argmax->resize(out.size());
  const T inv_area = T(1) / static_cast<T>(window * window);

  for (std::size_t oy = 0; oy < ho; ++oy)
    for (std::size_t ox = 0; ox < wo; ++ox)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t o = (oy * wo + ox) * c + ch;
        if (kind == PoolKind::kMax) {
          std::size_t best = ((oy * stride) * w + ox * stride) * c + ch;
          for (std::size_t dy = 0; dy < window; ++dy)
            for (std::size_t dx = 0; dx < window; ++dx) {
              const std::size_t i = ((oy * stride + dy) * w + ox * stride + dx) * c + ch;
              if (x[i] > x[best]) best = i;
            }
          out[o] = x[best];
          (*argmax)[o] = best;
        } else {
          T s = T(0);
          for (std::size_t dy = 0; dy < window; ++dy)
            for (std::size_t dx = 0; dx < window; ++dx)
              s += x[((oy * stride + dy) * w + ox * stride + dx) * c + ch];
          out[o] = s * inv_area;
        }
      }

  return detail::make_result<T>(
      Shape{ho, wo, c}, std::move(out), {input.node()}, [=](detail::Node<T>& self) {
        auto& in = *self.inputs[0];
        if (!in.requires_grad) return;
        auto& g = detail::grad_of(in);
        if (kind == PoolKind::kMax) {
          for (std::size_t o = 0; o < self.grad.size(); ++o) g[(*argmax)[o]] += self.grad[o];
          return;
        }
        for (std::size_t oy = 0; oy < ho; ++oy)
          for (std::size_t ox = 0; ox < wo; ++ox)
            for (std::size_t ch = 0; ch < c; ++ch) {
              const T v = self.grad[(oy * wo + ox) * c + ch] * inv_area;
              for (std::size_t dy = 0; dy < window; ++dy)
                for (std::size_t dx = 0; dx < window; ++dx)
                  g[((oy * stride + dy) * w + ox * stride + dx) * c + ch] += v;
            }
      });
}

}  // namespace kzr
