#pragma once

#include <cmath>
#include <cstdint>
#include <iostream>
#include <memory>
#include <vector>

#include "lmu/fft.hpp"
#include "lmu/ops.hpp"

namespace lmu {

// ---------------------------------------------------------------------------
// Configuration and system matrices
// ---------------------------------------------------------------------------

struct LmuConfig {
  double theta = 1.0;  // sliding-window length, in tokens
  std::int64_t q = 1;  // number of Legendre basis states
  std::int64_t q_prime = 1;

  static std::int64_t default_q_prime(std::int64_t q) {
    return std::max<std::int64_t>(1, std::llround(static_cast<double>(q) / 10.0));
  }

  static LmuConfig make(double theta, std::int64_t q) {
    return LmuConfig{theta, q, default_q_prime(q)};
  }
  static LmuConfig make(double theta, std::int64_t q, std::int64_t q_prime) {
    return LmuConfig{theta, q, q_prime};
  }

  void validate() const {
    if (q < 1) throw ConfigError("LmuConfig: q must be >= 1, got " + std::to_string(q));
    if (theta < 1.0)
      throw ConfigError("LmuConfig: theta must be >= 1, got " + std::to_string(theta));
    if (q_prime < 1 || q_prime > q)
      throw ConfigError("LmuConfig: q_prime must be in [1, q], got " + std::to_string(q_prime));
  }
};

template <typename T>
struct ContinuousSystem {
  double theta = 1.0;
  Tensor<T> A;  // q x q
  Tensor<T> B;  // q
  std::int64_t order() const { return A.dim(0); }
};

// A[i][j] = (2i+1)/theta * (-1 if i<j else (-1)^(i-j+1)),
// B[i]    = (2i+1)(-1)^i / theta.
template <typename T = double>
ContinuousSystem<T> build_continuous(const LmuConfig& cfg) {
  if (cfg.q < 1) throw ConfigError("build_continuous: q must be >= 1");
  if (cfg.theta <= 0.0) throw ConfigError("build_continuous: theta must be positive");
  const std::int64_t q = cfg.q;
  ContinuousSystem<T> sys;
  sys.theta = cfg.theta;
  sys.A = Tensor<T>(Shape{q, q});
  sys.B = Tensor<T>(Shape{q});
  for (std::int64_t i = 0; i < q; ++i) {
    const double row = (2.0 * static_cast<double>(i) + 1.0) / cfg.theta;
    for (std::int64_t j = 0; j < q; ++j) {
      double sign;
      if (i < j)
        sign = -1.0;
      else
        sign = ((i - j + 1) % 2 == 0) ? 1.0 : -1.0;
      sys.A(i, j) = static_cast<T>(row * sign);
    }
    sys.B[i] = static_cast<T>(row * ((i % 2 == 0) ? 1.0 : -1.0));
  }
  return sys;
}

// ---------------------------------------------------------------------------
// Matrix exponential: scaling-and-squaring with a truncated Taylor series
// (series tail below 1e-14). Throws if more than 30 squarings are needed.
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
T one_norm(const Tensor<T>& a) {
  const std::int64_t n = a.dim(0);
  T best = T(0);
  for (std::int64_t j = 0; j < n; ++j) {
    T col = T(0);
    for (std::int64_t i = 0; i < n; ++i) col += std::abs(a(i, j));
    best = std::max(best, col);
  }
  return best;
}

}  // namespace detail

template <typename T>
Tensor<T> expm(const Tensor<T>& a) {
  if (a.rank() != 2 || a.dim(0) != a.dim(1))
    throw ShapeError("expm: square matrix required, got " + shape_str(a.shape()));
  FlopPause pause;
  const std::int64_t n = a.dim(0);
  const T norm = detail::one_norm(a);
  int squarings = 0;
  T s = T(1);
  while (norm * s > T(0.5)) {
    s /= T(2);
    if (++squarings > 30) throw NumericError("expm: scaling exceeded 30 squarings");
  }
  Tensor<T> m = scale(a, s);
  Tensor<T> sum = Tensor<T>::identity(n);
  Tensor<T> term = Tensor<T>::identity(n);
  for (int k = 1; k <= 64; ++k) {
    term = scale(matmul(term, m), T(1) / T(k));
    for (std::int64_t i = 0; i < sum.size(); ++i) sum[i] += term[i];
    if (detail::one_norm(term) < T(1e-14)) break;
  }
  for (int k = 0; k < squarings; ++k) sum = matmul(sum, sum);
  return sum;
}

// ---------------------------------------------------------------------------
// Zero-order hold discretization
// ---------------------------------------------------------------------------

template <typename T>
struct DiscreteSystem {
  Tensor<T> A_bar;  // q x q
  Tensor<T> B_bar;  // q
  std::int64_t order() const { return A_bar.dim(0); }
};

namespace detail {

// Gelfand estimate of the spectral radius: ||A^k||_F^(1/k) with k chosen
// large relative to theta so that slow single-step decay still shows.
template <typename T>
double spectral_radius_estimate(const Tensor<T>& a, double theta) {
  FlopPause pause;
  int doublings = 6;
  while ((std::int64_t(1) << doublings) < static_cast<std::int64_t>(32.0 * theta)) ++doublings;
  Tensor<T> g = a;
  for (int k = 0; k < doublings; ++k) g = matmul(g, g);
  double fro = 0.0;
  for (std::int64_t i = 0; i < g.size(); ++i) fro += static_cast<double>(g[i]) * static_cast<double>(g[i]);
  fro = std::sqrt(fro);
  if (fro == 0.0) return 0.0;
  return std::pow(fro, 1.0 / std::pow(2.0, doublings));
}

}  // namespace detail

// (A_bar, B_bar) = (e^A, A^-1 (e^A - I) B), computed from the augmented
// exponential exp([[A, B], [0, 0]]) so A is never inverted. Also valid for
// singular A (e.g. the a = 0 scalar system).
template <typename T>
DiscreteSystem<T> discretize_zoh(const ContinuousSystem<T>& sys) {
  const std::int64_t q = sys.order();
  Tensor<T> aug(Shape{q + 1, q + 1});
  for (std::int64_t i = 0; i < q; ++i) {
    for (std::int64_t j = 0; j < q; ++j) aug(i, j) = sys.A(i, j);
    aug(i, q) = sys.B[i];
  }
  const Tensor<T> e = expm(aug);
  DiscreteSystem<T> out;
  out.A_bar = Tensor<T>(Shape{q, q});
  out.B_bar = Tensor<T>(Shape{q});
  for (std::int64_t i = 0; i < q; ++i) {
    for (std::int64_t j = 0; j < q; ++j) out.A_bar(i, j) = e(i, j);
    out.B_bar[i] = e(i, q);
  }
  const double rho = detail::spectral_radius_estimate(out.A_bar, sys.theta);
  if (rho > 1.0 + 1e-9)
    throw NumericError("discretize_zoh: A_bar spectral radius estimate " + std::to_string(rho) +
                       " >= 1");
  return out;
}

// ---------------------------------------------------------------------------
// Impulse response H = [B_bar, A_bar B_bar, A_bar^2 B_bar, ...] (q x n)
// ---------------------------------------------------------------------------

template <typename T>
struct ImpulseResponse {
  Tensor<T> H;  // q x n

  std::int64_t order() const { return H.dim(0); }
  std::int64_t length() const { return H.dim(1); }

  // FFT spectra for the convolution backend, built once on first use.
  const ConvKernel<T>& kernel() const {
    if (!kernel_cache_) kernel_cache_ = std::make_shared<ConvKernel<T>>(ConvKernel<T>::prepare(H));
    return *kernel_cache_;
  }

 private:
  mutable std::shared_ptr<ConvKernel<T>> kernel_cache_;
};

template <typename T>
ImpulseResponse<T> impulse_response(const DiscreteSystem<T>& sys, std::int64_t n) {
  if (n < 1) throw ConfigError("impulse_response: n must be >= 1");
  FlopPause pause;
  const std::int64_t q = sys.order();
  ImpulseResponse<T> out;
  out.H = Tensor<T>(Shape{q, n});
  std::vector<T> col(static_cast<std::size_t>(q));
  std::vector<T> next(static_cast<std::size_t>(q));
  for (std::int64_t i = 0; i < q; ++i) {
    col[static_cast<std::size_t>(i)] = sys.B_bar[i];
    out.H(i, 0) = sys.B_bar[i];
  }
  for (std::int64_t t = 1; t < n; ++t) {
    for (std::int64_t i = 0; i < q; ++i) {
      T acc = T(0);
      for (std::int64_t l = 0; l < q; ++l) acc += sys.A_bar(i, l) * col[static_cast<std::size_t>(l)];
      next[static_cast<std::size_t>(i)] = acc;
    }
    col.swap(next);
    for (std::int64_t i = 0; i < q; ++i) out.H(i, t) = col[static_cast<std::size_t>(i)];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Backends. All three map X [n x d] to the memory sequence [n x q x d];
// channel j of the memory depends only on channel j of the input.
// ---------------------------------------------------------------------------

// Streaming scan of m_t = A_bar m_{t-1} + B_bar x_t (m_0 = 0). The visitor
// receives (t, state) with state laid out [q x d]. Costs 2d(q^2+q) per token.
template <typename T, typename Visitor>
void state_space_scan(const DiscreteSystem<T>& sys, const Tensor<T>& x, Visitor&& visit) {
  if (x.rank() != 2) throw ShapeError("state_space_scan: input must be [n x d]");
  const std::int64_t n = x.dim(0), d = x.dim(1), q = sys.order();
  std::vector<T> state(static_cast<std::size_t>(q * d), T(0));
  std::vector<T> tmp(static_cast<std::size_t>(q * d));
  for (std::int64_t t = 0; t < n; ++t) {
    for (auto& v : tmp) v = T(0);
    for (std::int64_t i = 0; i < q; ++i) {
      T* trow = tmp.data() + i * d;
      for (std::int64_t l = 0; l < q; ++l) {
        const T a = sys.A_bar(i, l);
        const T* srow = state.data() + l * d;
        for (std::int64_t c = 0; c < d; ++c) trow[c] += a * srow[c];
      }
    }
    const T* xrow = x.data() + t * d;
    for (std::int64_t i = 0; i < q; ++i) {
      const T b = sys.B_bar[i];
      T* srow = state.data() + i * d;
      const T* trow = tmp.data() + i * d;
      for (std::int64_t c = 0; c < d; ++c) srow[c] = trow[c] + b * xrow[c];
    }
    visit(t, state);
  }
  flop_counter().add_real(n * d * (2 * q * q + 2 * q));
}

template <typename T>
Tensor<T> run_state_space(const DiscreteSystem<T>& sys, const Tensor<T>& x) {
  const std::int64_t n = x.dim(0), d = x.dim(1), q = sys.order();
  Tensor<T> out(Shape{n, q, d});
  state_space_scan(sys, x, [&](std::int64_t t, const std::vector<T>& state) {
    std::copy(state.begin(), state.end(), out.data() + t * q * d);
  });
  return out;
}

// ---------------------------------------------------------------------------
// O(q) structured multiply by the LMU A matrix. Splitting at the diagonal,
// the lower band collapses to an alternating-sign prefix sum and the upper
// band to a suffix sum:
//   (A v)_i = (2i+1)/theta * [ (-1)^(i+1) P_i - S_{i+1} ],
//   P_i = sum_{j<=i} (-1)^j v_j,  S_i = sum_{j>=i} v_j.
// ---------------------------------------------------------------------------

namespace detail {

// coeff[i] = (2i+1)(-1)^(i+1)/theta, the row factor with the prefix sign
// folded in; sign_i = (-1)^(i+1) applies to the suffix term.
template <typename T>
std::vector<T> fast_a_coeffs(std::int64_t q, double theta) {
  std::vector<T> c(static_cast<std::size_t>(q));
  for (std::int64_t i = 0; i < q; ++i) {
    const double mag = (2.0 * static_cast<double>(i) + 1.0) / theta;
    c[static_cast<std::size_t>(i)] = static_cast<T>((i % 2 == 0) ? -mag : mag);
  }
  return c;
}

// work must hold 2q entries (prefix and suffix sums). Counts 4q-2 FLOPs.
template <typename T>
void fast_matvec_a(const T* v, std::int64_t q, const T* coeff, T* out, T* work) {
  T* prefix = work;
  T* suffix = work + q;
  prefix[0] = v[0];
  for (std::int64_t i = 1; i < q; ++i)
    prefix[i] = (i % 2 == 0) ? prefix[i - 1] + v[i] : prefix[i - 1] - v[i];
  suffix[q - 1] = v[q - 1];
  for (std::int64_t i = q - 2; i >= 0; --i) suffix[i] = suffix[i + 1] + v[i];
  for (std::int64_t i = 0; i < q; ++i) {
    const T s_next = (i + 1 < q) ? suffix[i + 1] : T(0);
    // (-1)^(i+1) P_i - S = (-1)^(i+1) [P_i - (-1)^(i+1) S]
    const T inner = (i % 2 == 0) ? prefix[i] + s_next : prefix[i] - s_next;
    out[i] = coeff[i] * inner;
  }
  flop_counter().add_real(4 * q - 2);
}

}  // namespace detail

template <typename T>
Tensor<T> fast_matvec_A(const Tensor<T>& v, double theta) {
  if (v.rank() != 1) throw ShapeError("fast_matvec_A: vector expected");
  const std::int64_t q = v.size();
  const auto coeff = detail::fast_a_coeffs<T>(q, theta);
  Tensor<T> out(Shape{q});
  std::vector<T> work(static_cast<std::size_t>(2 * q));
  detail::fast_matvec_a(v.data(), q, coeff.data(), out.data(), work.data());
  return out;
}

// ---------------------------------------------------------------------------
// Explicit Runge-Kutta backend (r in {1, 2, 4}), integrating
// dm/dt = A m + B x with a one-token step and the input held constant over
// the step. Uses the O(q) structured multiply; approximates (but does not
// reproduce) the ZOH dynamics, and is less stable for large q.
// ---------------------------------------------------------------------------

inline constexpr std::int64_t kRkStabilityCap = 64;

template <typename T>
Tensor<T> run_rk(const ContinuousSystem<T>& sys, const Tensor<T>& x, int r = 4) {
  if (r != 1 && r != 2 && r != 4) throw ConfigError("run_rk: order must be 1, 2 or 4");
  if (x.rank() != 2) throw ShapeError("run_rk: input must be [n x d]");
  const std::int64_t n = x.dim(0), d = x.dim(1), q = sys.order();
  if (q > kRkStabilityCap)
    std::cerr << "[lmu] warning: RK backend with q = " << q << " exceeds the stability cap ("
              << kRkStabilityCap << "); states may overflow\n";
  const auto coeff = detail::fast_a_coeffs<T>(q, sys.theta);
  Tensor<T> out(Shape{n, q, d});
  const std::size_t sq = static_cast<std::size_t>(q);
  std::vector<T> m(sq), bx(sq), k1(sq), k2(sq), k3(sq), k4(sq), arg(sq), work(2 * sq);

  auto deriv = [&](const std::vector<T>& state, std::vector<T>& k) {
    detail::fast_matvec_a(state.data(), q, coeff.data(), k.data(), work.data());
    for (std::int64_t i = 0; i < q; ++i) k[static_cast<std::size_t>(i)] += bx[static_cast<std::size_t>(i)];
    flop_counter().add_real(q);
  };

  for (std::int64_t c = 0; c < d; ++c) {
    std::fill(m.begin(), m.end(), T(0));
    for (std::int64_t t = 0; t < n; ++t) {
      const T xv = x(t, c);
      for (std::int64_t i = 0; i < q; ++i) bx[static_cast<std::size_t>(i)] = sys.B[i] * xv;
      flop_counter().add_real(q);
      if (r == 1) {
        deriv(m, k1);
        for (std::int64_t i = 0; i < q; ++i) m[static_cast<std::size_t>(i)] += k1[static_cast<std::size_t>(i)];
        flop_counter().add_real(q);
      } else if (r == 2) {
        deriv(m, k1);
        for (std::int64_t i = 0; i < q; ++i)
          arg[static_cast<std::size_t>(i)] = m[static_cast<std::size_t>(i)] + T(0.5) * k1[static_cast<std::size_t>(i)];
        deriv(arg, k2);
        for (std::int64_t i = 0; i < q; ++i) m[static_cast<std::size_t>(i)] += k2[static_cast<std::size_t>(i)];
        flop_counter().add_real(3 * q);
      } else {
        deriv(m, k1);
        for (std::int64_t i = 0; i < q; ++i)
          arg[static_cast<std::size_t>(i)] = m[static_cast<std::size_t>(i)] + T(0.5) * k1[static_cast<std::size_t>(i)];
        deriv(arg, k2);
        for (std::int64_t i = 0; i < q; ++i)
          arg[static_cast<std::size_t>(i)] = m[static_cast<std::size_t>(i)] + T(0.5) * k2[static_cast<std::size_t>(i)];
        deriv(arg, k3);
        for (std::int64_t i = 0; i < q; ++i)
          arg[static_cast<std::size_t>(i)] = m[static_cast<std::size_t>(i)] + k3[static_cast<std::size_t>(i)];
        deriv(arg, k4);
        for (std::int64_t i = 0; i < q; ++i) {
          const std::size_t si = static_cast<std::size_t>(i);
          m[si] += (k1[si] + T(2) * (k2[si] + k3[si]) + k4[si]) * (T(1) / T(6));
        }
        flop_counter().add_real(11 * q);
      }
      T peak = T(0);
      for (std::int64_t i = 0; i < q; ++i) {
        out(t, i, c) = m[static_cast<std::size_t>(i)];
        peak = std::max(peak, std::abs(m[static_cast<std::size_t>(i)]));
      }
      if (peak > T(1e6))
        throw NumericError("run_rk: state magnitude " + std::to_string(static_cast<double>(peak)) +
                           " exceeds 1e6 at t = " + std::to_string(t) + " (q too large for RK)");
    }
  }
  return out;
}

// FFT-parallel backend: causal convolution of every channel with every row
// of the impulse response. Equals run_state_space up to roundoff.
template <typename T>
Tensor<T> run_fft_conv(const ImpulseResponse<T>& imp, const Tensor<T>& x) {
  if (x.rank() != 2) throw ShapeError("run_fft_conv: input must be [n x d]");
  if (x.dim(0) != imp.length())
    throw ShapeError("run_fft_conv: sequence length " + std::to_string(x.dim(0)) +
                     " does not match impulse response length " + std::to_string(imp.length()));
  return imp.kernel().apply(x);
}

// ---------------------------------------------------------------------------
// Window decoding. The memory state approximates the last theta tokens as
// coefficients over Legendre polynomials; evaluating
//   sum_i m_i P_i(2 lag/theta - 1)
// reconstructs the input lag tokens ago.
// ---------------------------------------------------------------------------

inline std::vector<double> legendre_all(std::int64_t q, double x) {
  std::vector<double> p(static_cast<std::size_t>(q));
  if (q >= 1) p[0] = 1.0;
  if (q >= 2) p[1] = x;
  for (std::int64_t i = 2; i < q; ++i)
    p[static_cast<std::size_t>(i)] =
        ((2.0 * static_cast<double>(i) - 1.0) * x * p[static_cast<std::size_t>(i - 1)] -
         (static_cast<double>(i) - 1.0) * p[static_cast<std::size_t>(i - 2)]) /
        static_cast<double>(i);
  return p;
}

template <typename T>
double decode_window(const T* m, std::int64_t q, double theta, double lag) {
  const auto p = legendre_all(q, 2.0 * lag / theta - 1.0);
  double acc = 0.0;
  for (std::int64_t i = 0; i < q; ++i) acc += static_cast<double>(m[i]) * p[static_cast<std::size_t>(i)];
  return acc;
}

}  // namespace lmu
