#pragma once

#include <cmath>
#include <cstdint>

#include "lmu/lmu.hpp"
#include "lmu/ops.hpp"

namespace lmu {

// ---------------------------------------------------------------------------
// Per-layer parameter groups
// ---------------------------------------------------------------------------

// Implicit self-attention over the memory matrix: Q/K/V projections L1..L3
// (q' x q, no biases) and the output row p (q'). 3qq' + q' parameters.
template <typename T>
struct ImplicitAttentionParams {
  Tensor<T> L1, L2, L3;  // q' x q
  Tensor<T> p;           // q'

  std::int64_t q() const { return L1.dim(1); }
  std::int64_t q_prime() const { return L1.dim(0); }
  std::int64_t param_count() const { return 3 * q() * q_prime() + q_prime(); }

  template <typename Rng>
  static ImplicitAttentionParams init(std::int64_t q, std::int64_t q_prime, Rng& rng, double stddev) {
    ImplicitAttentionParams p;
    p.L1 = Tensor<T>::randn(Shape{q_prime, q}, rng, stddev);
    p.L2 = Tensor<T>::randn(Shape{q_prime, q}, rng, stddev);
    p.L3 = Tensor<T>::randn(Shape{q_prime, q}, rng, stddev);
    p.p = Tensor<T>::randn(Shape{q_prime}, rng, stddev);
    return p;
  }
};

// y(x) = gelu(x W1 + b1) W2 + b2. 2dd' weights plus d' + d biases.
template <typename T>
struct FfnParams {
  Tensor<T> W1;  // d x d'
  Tensor<T> b1;  // d'
  Tensor<T> W2;  // d' x d
  Tensor<T> b2;  // d

  std::int64_t d() const { return W1.dim(0); }
  std::int64_t d_prime() const { return W1.dim(1); }
  std::int64_t param_count() const { return 2 * d() * d_prime() + d_prime() + d(); }

  template <typename Rng>
  static FfnParams init(std::int64_t d, std::int64_t d_prime, Rng& rng, double stddev) {
    FfnParams p;
    p.W1 = Tensor<T>::randn(Shape{d, d_prime}, rng, stddev);
    p.b1 = Tensor<T>(Shape{d_prime});
    p.W2 = Tensor<T>::randn(Shape{d_prime, d}, rng, stddev);
    p.b2 = Tensor<T>(Shape{d});
    return p;
  }
};

// Single-head causal self-attention across positions, with an output
// projection so the block maps R^d to R^d. 4d^2 parameters.
template <typename T>
struct GlobalAttentionParams {
  Tensor<T> Wq, Wk, Wv, Wo;  // d x d

  std::int64_t d() const { return Wq.dim(0); }
  std::int64_t param_count() const { return 4 * d() * d(); }

  template <typename Rng>
  static GlobalAttentionParams init(std::int64_t d, Rng& rng, double stddev) {
    GlobalAttentionParams p;
    p.Wq = Tensor<T>::randn(Shape{d, d}, rng, stddev);
    p.Wk = Tensor<T>::randn(Shape{d, d}, rng, stddev);
    p.Wv = Tensor<T>::randn(Shape{d, d}, rng, stddev);
    p.Wo = Tensor<T>::randn(Shape{d, d}, rng, stddev);
    return p;
  }
};

// ---------------------------------------------------------------------------
// Reduced-order path: fold L into the impulse response, H~ = L H (q' x n).
// Convolving with H~ is mathematically equivalent to convolving with H and
// applying L afterwards.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reduce_impulse(const Tensor<T>& l, const ImpulseResponse<T>& imp) {
  if (l.rank() != 2 || l.dim(1) != imp.order())
    throw ShapeError("reduce_impulse: L must be [q' x " + std::to_string(imp.order()) +
                     "], got " + shape_str(l.shape()));
  return matmul(l, imp.H);
}

// ---------------------------------------------------------------------------
// Implicit self-attention at a single timestep. M is the q x d memory matrix;
// Q = gelu(L1 M), K = gelu(L2 M), V = gelu(L3 M) are q' x d, the attention
// matrix is softmax(Q K^T) over rows (no temperature, as defined), and the
// output is m = p M' in R^d.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> implicit_attention_step(const Tensor<T>& m_mat, const ImplicitAttentionParams<T>& params) {
  if (m_mat.rank() != 2 || m_mat.dim(0) != params.q())
    throw ShapeError("implicit_attention_step: memory must be [q x d], got " +
                     shape_str(m_mat.shape()));
  const Tensor<T> q = gelu(matmul(params.L1, m_mat));
  const Tensor<T> k = gelu(matmul(params.L2, m_mat));
  const Tensor<T> v = gelu(matmul(params.L3, m_mat));
  const Tensor<T> att = softmax_rows(matmul_nt(q, k));
  const Tensor<T> m_prime = matmul(att, v);
  const std::int64_t qp = params.q_prime(), d = m_mat.dim(1);
  Tensor<T> out(Shape{d});
  for (std::int64_t j = 0; j < qp; ++j)
    for (std::int64_t c = 0; c < d; ++c) out[c] += params.p[j] * m_prime(j, c);
  flop_counter().add_real(2 * qp * d);
  return out;
}

// Whole-sequence implicit attention through the reduced path: three q'-row
// convolutions produce Q/K/V for every timestep without materializing the
// full q x d memory. Output row t equals implicit_attention_step applied to
// the memory at t.
template <typename T>
Tensor<T> implicit_attention_sequence(const Tensor<T>& x, const ImplicitAttentionParams<T>& params,
                                      const ImpulseResponse<T>& imp) {
  const std::int64_t n = x.dim(0), d = x.dim(1), qp = params.q_prime();
  const Tensor<T> h1 = reduce_impulse(params.L1, imp);
  const Tensor<T> h2 = reduce_impulse(params.L2, imp);
  const Tensor<T> h3 = reduce_impulse(params.L3, imp);
  const Tensor<T> q3 = gelu(ConvKernel<T>::prepare(h1).apply(x));  // n x q' x d
  const Tensor<T> k3 = gelu(ConvKernel<T>::prepare(h2).apply(x));
  const Tensor<T> v3 = gelu(ConvKernel<T>::prepare(h3).apply(x));

  Tensor<T> out(Shape{n, d});
  Tensor<T> qt(Shape{qp, d}), kt(Shape{qp, d}), vt(Shape{qp, d});
  for (std::int64_t t = 0; t < n; ++t) {
    std::copy(q3.data() + t * qp * d, q3.data() + (t + 1) * qp * d, qt.data());
    std::copy(k3.data() + t * qp * d, k3.data() + (t + 1) * qp * d, kt.data());
    std::copy(v3.data() + t * qp * d, v3.data() + (t + 1) * qp * d, vt.data());
    const Tensor<T> att = softmax_rows(matmul_nt(qt, kt));
    const Tensor<T> m_prime = matmul(att, vt);
    T* orow = out.data() + t * d;
    for (std::int64_t j = 0; j < qp; ++j)
      for (std::int64_t c = 0; c < d; ++c) orow[c] += params.p[j] * m_prime(j, c);
  }
  flop_counter().add_real(n * 2 * qp * d);
  return out;
}

// ---------------------------------------------------------------------------
// Feedforward network: y = gelu(x W1 + b1) W2 + b2, applied row-wise.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> ffn(const Tensor<T>& x, const FfnParams<T>& params) {
  if (x.dim(x.rank() - 1) != params.d())
    throw ShapeError("ffn: last axis must be d = " + std::to_string(params.d()));
  const Tensor<T> h = gelu(add_bias(matmul(x, params.W1), params.b1));
  return add_bias(matmul(h, params.W2), params.b2);
}

// ---------------------------------------------------------------------------
// Global causal self-attention: scaled dot-product attention where position t
// attends to positions <= t, followed by the output projection. Scores are
// materialized only over the causal prefix.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> global_causal_attention(const Tensor<T>& x, const GlobalAttentionParams<T>& params) {
  if (x.rank() != 2 || x.dim(1) != params.d())
    throw ShapeError("global_causal_attention: input must be [n x d], d = " +
                     std::to_string(params.d()));
  const std::int64_t n = x.dim(0), d = x.dim(1);
  const Tensor<T> q = matmul(x, params.Wq);
  const Tensor<T> k = matmul(x, params.Wk);
  const Tensor<T> v = matmul(x, params.Wv);
  const T inv_sqrt_d = T(1) / std::sqrt(T(d));

  // The n x n score matrix is materialized (the O(n^2) memory term); only
  // the causal prefix of each row is computed and normalized.
  Tensor<T> scores(Shape{n, n});
  std::int64_t flops = 0;
  for (std::int64_t t = 0; t < n; ++t) {
    const std::int64_t span = t + 1;
    const T* qt = q.data() + t * d;
    T* row = scores.data() + t * n;
    T mx = T(0);
    for (std::int64_t s = 0; s < span; ++s) {
      const T* ks = k.data() + s * d;
      T acc = T(0);
      for (std::int64_t c = 0; c < d; ++c) acc += qt[c] * ks[c];
      acc *= inv_sqrt_d;
      row[s] = acc;
      mx = (s == 0) ? acc : std::max(mx, acc);
    }
    T sum = T(0);
    for (std::int64_t s = 0; s < span; ++s) {
      row[s] = std::exp(row[s] - mx);
      sum += row[s];
    }
    const T inv = T(1) / sum;
    for (std::int64_t s = 0; s < span; ++s) row[s] *= inv;
    // dots: (2d+1)*span; softmax: 2*span + 1; normalize: span
    flops += span * (2 * d + 4) + 1;
  }

  Tensor<T> ctx(Shape{n, d});
  for (std::int64_t t = 0; t < n; ++t) {
    const std::int64_t span = t + 1;
    const T* row = scores.data() + t * n;
    T* out_t = ctx.data() + t * d;
    for (std::int64_t s = 0; s < span; ++s) {
      const T w = row[s];
      const T* vs = v.data() + s * d;
      for (std::int64_t c = 0; c < d; ++c) out_t[c] += w * vs[c];
    }
    flops += span * 2 * d;
  }
  flop_counter().add_real(flops);
  return matmul(ctx, params.Wo);
}

}  // namespace lmu
