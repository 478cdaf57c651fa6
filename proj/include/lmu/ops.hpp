#pragma once

#include <cmath>
#include <cstdint>

#include "lmu/flops.hpp"
#include "lmu/tensor.hpp"

namespace lmu {

// ---------------------------------------------------------------------------
// Dense kernels. Summation order is fixed (inner index ascending) so results
// are bit-reproducible across runs and thread counts.
// ---------------------------------------------------------------------------

// C[i,j] = sum_l A[i,l] * B[l,j]; costs 2*m*k*p FLOPs.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  const std::int64_t m = a.dim(0), k = a.dim(1), p = b.dim(1);
  Tensor<T> c(Shape{m, p});
  const T* pa = a.data();
  const T* pb = b.data();
  T* pc = c.data();
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t l = 0; l < k; ++l) {
      const T ail = pa[i * k + l];
      const T* brow = pb + l * p;
      T* crow = pc + i * p;
      for (std::int64_t j = 0; j < p; ++j) crow[j] += ail * brow[j];
    }
  }
  flop_counter().add_real(2 * m * k * p);
  return c;
}

// C = A * B^T for row-major B given as [p x k]; costs 2*m*k*p FLOPs.
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
    throw ShapeError("matmul_nt: incompatible shapes " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()) + "^T");
  const std::int64_t m = a.dim(0), k = a.dim(1), p = b.dim(0);
  Tensor<T> c(Shape{m, p});
  for (std::int64_t i = 0; i < m; ++i) {
    const T* arow = a.data() + i * k;
    for (std::int64_t j = 0; j < p; ++j) {
      const T* brow = b.data() + j * k;
      T acc = T(0);
      for (std::int64_t l = 0; l < k; ++l) acc += arow[l] * brow[l];
      c(i, j) = acc;
    }
  }
  flop_counter().add_real(2 * m * k * p);
  return c;
}

// Row-wise softmax with max subtraction. Per row of length c this counts
// c subtractions, c additions for the normalizer, and c divisions; the exp
// evaluations are not FLOPs under the counting conventions.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& a) {
  if (a.rank() != 2) throw ShapeError("softmax_rows: expected rank-2, got " + shape_str(a.shape()));
  const std::int64_t r = a.dim(0), c = a.dim(1);
  Tensor<T> out(a.shape());
  for (std::int64_t i = 0; i < r; ++i) {
    const T* x = a.data() + i * c;
    T* y = out.data() + i * c;
    T mx = x[0];
    for (std::int64_t j = 1; j < c; ++j) mx = std::max(mx, x[j]);
    T sum = T(0);
    for (std::int64_t j = 0; j < c; ++j) {
      y[j] = std::exp(x[j] - mx);
      sum += y[j];
    }
    for (std::int64_t j = 0; j < c; ++j) y[j] /= sum;
  }
  flop_counter().add_real(r * (3 * c - 1));
  return out;
}

// Exact gelu: x * Phi(x) with the Gaussian CDF in erf form (not the tanh
// approximation). Counted as one multiply per element.
template <typename T>
inline T gelu_scalar(T x) {
  const T phi = T(0.5) * (T(1) + std::erf(x * T(0.70710678118654752440)));
  return x * phi;
}

// d/dx gelu(x) = Phi(x) + x * phi(x).
template <typename T>
inline T gelu_grad_scalar(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x * T(0.70710678118654752440)));
  const T pdf = T(0.39894228040143267794) * std::exp(T(-0.5) * x * x);
  return cdf + x * pdf;
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  Tensor<T> out(a.shape());
  for (std::int64_t i = 0; i < a.size(); ++i) out[i] = gelu_scalar(a[i]);
  flop_counter().add_real(a.size());
  return out;
}

// Standardizes the last axis to mean 0 / variance 1 (eps-stabilized), then
// applies gain and bias.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  const std::int64_t d = x.dim(x.rank() - 1);
  if (gain.size() != d || bias.size() != d)
    throw ShapeError("layer_norm: gain/bias length must match last axis " + std::to_string(d));
  const std::int64_t rows = x.size() / d;
  Tensor<T> out(x.shape());
  for (std::int64_t i = 0; i < rows; ++i) {
    const T* xi = x.data() + i * d;
    T* yi = out.data() + i * d;
    T mean = T(0);
    for (std::int64_t j = 0; j < d; ++j) mean += xi[j];
    mean /= T(d);
    T var = T(0);
    for (std::int64_t j = 0; j < d; ++j) {
      const T c = xi[j] - mean;
      var += c * c;
    }
    var /= T(d);
    const T inv = T(1) / std::sqrt(var + eps);
    for (std::int64_t j = 0; j < d; ++j) yi[j] = (xi[j] - mean) * inv * gain[j] + bias[j];
  }
  // mean: d+1, variance: 3d+1, normalize: 4d per row.
  flop_counter().add_real(rows * (8 * d + 2));
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "add");
  Tensor<T> out(a.shape());
  for (std::int64_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  flop_counter().add_real(a.size());
  return out;
}

// Adds a length-d bias to every length-d row of x.
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  const std::int64_t d = x.dim(x.rank() - 1);
  if (bias.size() != d) throw ShapeError("add_bias: bias length must match last axis");
  Tensor<T> out(x.shape());
  const std::int64_t rows = x.size() / d;
  for (std::int64_t i = 0; i < rows; ++i)
    for (std::int64_t j = 0; j < d; ++j) out[i * d + j] = x[i * d + j] + bias[j];
  flop_counter().add_real(x.size());
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  Tensor<T> out(a.shape());
  for (std::int64_t i = 0; i < a.size(); ++i) out[i] = a[i] * s;
  flop_counter().add_real(a.size());
  return out;
}

}  // namespace lmu
