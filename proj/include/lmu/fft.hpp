#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <memory>
#include <numbers>
#include <vector>

#include "lmu/flops.hpp"
#include "lmu/tensor.hpp"

namespace lmu {

// ---------------------------------------------------------------------------
// Radix-2 Cooley-Tukey FFT with operation counting. Each butterfly performs
// one complex multiply and two complex adds, so a length-n transform costs
// n/2 complex multiplies and n complex adds per stage: 5n log2(n) FLOPs under
// the c_m = 6 / c_a = 2 conventions. Twiddle generation is setup, not FLOPs.
// ---------------------------------------------------------------------------

inline bool is_pow2(std::int64_t n) { return n > 0 && (n & (n - 1)) == 0; }

namespace detail {

// Plain four-multiply complex product; std::complex's operator* routes
// through the C99 NaN-recovery helper, which dominates small transforms.
template <typename T>
inline std::complex<T> cmul(const std::complex<T>& a, const std::complex<T>& b) {
  return {a.real() * b.real() - a.imag() * b.imag(), a.real() * b.imag() + a.imag() * b.real()};
}

}  // namespace detail

inline int log2_exact(std::int64_t n) {
  int l = 0;
  while ((std::int64_t(1) << l) < n) ++l;
  return l;
}

// Interleaved (re, im) pairs; radix-2 transforms require power-of-two length.
template <typename T = double>
class ComplexVector {
 public:
  ComplexVector() = default;
  explicit ComplexVector(std::int64_t n) : v_(static_cast<std::size_t>(n)) {}
  explicit ComplexVector(std::vector<std::complex<T>> v) : v_(std::move(v)) {}

  static ComplexVector from_real(const std::vector<T>& x) {
    ComplexVector out(static_cast<std::int64_t>(x.size()));
    for (std::size_t i = 0; i < x.size(); ++i) out.v_[i] = std::complex<T>(x[i], T(0));
    return out;
  }

  std::int64_t size() const { return static_cast<std::int64_t>(v_.size()); }
  std::complex<T>& operator[](std::int64_t i) { return v_[static_cast<std::size_t>(i)]; }
  const std::complex<T>& operator[](std::int64_t i) const {
    return v_[static_cast<std::size_t>(i)];
  }
  std::complex<T>* data() { return v_.data(); }
  const std::complex<T>* data() const { return v_.data(); }

 private:
  std::vector<std::complex<T>> v_;
};

namespace detail {

template <typename T>
void bit_reverse_permute(std::complex<T>* a, std::int64_t n) {
  for (std::int64_t i = 1, j = 0; i < n; ++i) {
    std::int64_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
}

// Per-size twiddle tables: butterfly factors exp(-2 pi i j / len) for every
// stage, plus the pack/unpack factors of the real transforms. Cached per
// thread so concurrent transforms never share mutable state.
template <typename T>
struct Twiddles {
  std::int64_t m = 0;
  std::vector<std::complex<T>> stages;  // stage len: len/2 entries at offset len/2 - 1
  std::vector<std::complex<T>> unpack_u;  // -i * w_{2m}^k
  std::vector<std::complex<T>> unpack_v;  // conj(w_{2m}^k)

  explicit Twiddles(std::int64_t size) : m(size) {
    stages.resize(static_cast<std::size_t>(std::max<std::int64_t>(m - 1, 0)));
    for (std::int64_t len = 2; len <= m; len <<= 1) {
      const T ang = T(-2) * std::numbers::pi_v<T> / T(len);
      std::complex<T>* dst = stages.data() + (len / 2 - 1);
      for (std::int64_t j = 0; j < len / 2; ++j)
        dst[j] = {std::cos(ang * T(j)), std::sin(ang * T(j))};
    }
    const std::int64_t half = m / 2;
    unpack_u.resize(static_cast<std::size_t>(std::max<std::int64_t>(half, 1)));
    unpack_v.resize(unpack_u.size());
    for (std::int64_t k = 1; k < half; ++k) {
      const T ang = T(-2) * std::numbers::pi_v<T> * T(k) / T(2 * m);
      unpack_u[static_cast<std::size_t>(k)] = {std::sin(ang), -std::cos(ang)};
      unpack_v[static_cast<std::size_t>(k)] = {std::cos(ang), -std::sin(ang)};
    }
  }
};

template <typename T>
const Twiddles<T>& twiddles_for(std::int64_t m) {
  thread_local std::vector<std::unique_ptr<Twiddles<T>>> cache;
  for (const auto& t : cache)
    if (t->m == m) return *t;
  cache.push_back(std::make_unique<Twiddles<T>>(m));
  return *cache.back();
}

// In-place butterflies; inverse uses conjugated twiddles and applies no
// normalization. Counted: per stage n/2 complex multiplies, n complex adds.
template <typename T>
void fft_butterflies(std::complex<T>* a, std::int64_t n, bool inverse) {
  bit_reverse_permute(a, n);
  const Twiddles<T>& tw = twiddles_for<T>(n);
  for (std::int64_t len = 2; len <= n; len <<= 1) {
    const std::complex<T>* w = tw.stages.data() + (len / 2 - 1);
    for (std::int64_t i = 0; i < n; i += len) {
      std::complex<T>* lo = a + i;
      std::complex<T>* hi = a + i + len / 2;
      if (inverse) {
        for (std::int64_t j = 0; j < len / 2; ++j) {
          const std::complex<T> u = lo[j];
          const std::complex<T> v = cmul(hi[j], std::conj(w[j]));
          lo[j] = u + v;
          hi[j] = u - v;
        }
      } else {
        for (std::int64_t j = 0; j < len / 2; ++j) {
          const std::complex<T> u = lo[j];
          const std::complex<T> v = cmul(hi[j], w[j]);
          lo[j] = u + v;
          hi[j] = u - v;
        }
      }
    }
    flop_counter().add_complex_mul(n / 2);
    flop_counter().add_complex_add(n);
  }
}

inline void check_fft_length(std::int64_t n, const char* what) {
  if (!is_pow2(n))
    throw ShapeError(std::string(what) + ": length must be a power of two, got " +
                     std::to_string(n));
}

}  // namespace detail

// Forward DFT. Instrumented cost is exactly 5n log2(n).
template <typename T>
ComplexVector<T> fft(const ComplexVector<T>& in) {
  detail::check_fft_length(in.size(), "fft");
  ComplexVector<T> out = in;
  detail::fft_butterflies(out.data(), out.size(), false);
  return out;
}

// Inverse DFT with 1/n normalization (the scaling pass adds 2n real FLOPs).
template <typename T>
ComplexVector<T> ifft(const ComplexVector<T>& in) {
  detail::check_fft_length(in.size(), "ifft");
  ComplexVector<T> out = in;
  const std::int64_t n = out.size();
  detail::fft_butterflies(out.data(), n, true);
  const T inv = T(1) / T(n);
  for (std::int64_t i = 0; i < n; ++i) out[i] *= inv;
  flop_counter().add_real(2 * n);
  return out;
}

namespace detail {

template <typename T>
std::vector<std::complex<T>>& rfft_scratch(std::int64_t m) {
  thread_local std::vector<std::complex<T>> z;
  if (static_cast<std::int64_t>(z.size()) < m) z.resize(static_cast<std::size_t>(m));
  return z;
}

// Real-input forward transform via one half-length complex FFT. For real
// x[0..N-1] (N = 2M) returns bins 0..M scaled by 2; the factor is folded into
// precomputed kernel spectra so no scaling pass is spent here.
template <typename T>
void rfft_scaled(const T* x, std::int64_t big_n, std::complex<T>* out) {
  const std::int64_t m = big_n / 2;
  auto& z = rfft_scratch<T>(m);
  for (std::int64_t k = 0; k < m; ++k) z[static_cast<std::size_t>(k)] = {x[2 * k], x[2 * k + 1]};
  fft_butterflies(z.data(), m, false);

  const Twiddles<T>& tw = twiddles_for<T>(m);
  out[0] = {T(2) * (z[0].real() + z[0].imag()), T(0)};
  out[m] = {T(2) * (z[0].real() - z[0].imag()), T(0)};
  std::int64_t pairs = 0;
  for (std::int64_t k = 1; k < m - k; ++k) {
    const std::complex<T> zk = z[static_cast<std::size_t>(k)];
    const std::complex<T> zmk = std::conj(z[static_cast<std::size_t>(m - k)]);
    const std::complex<T> s = zk + zmk;
    const std::complex<T> d = zk - zmk;
    // u_k = -i * exp(-2*pi*i*k/N)
    const std::complex<T> t = cmul(tw.unpack_u[static_cast<std::size_t>(k)], d);
    out[k] = s + t;
    out[m - k] = std::conj(s - t);
    ++pairs;
  }
  if (m >= 2) out[m / 2] = T(2) * std::conj(z[static_cast<std::size_t>(m / 2)]);
  // Edges: 2 adds + 2 muls; center bin: 2 muls; per pair: 4 real, 1 cmul, 2 cadd.
  flop_counter().add_real(6 + 4 * pairs);
  flop_counter().add_complex_mul(pairs);
  flop_counter().add_complex_add(2 * pairs);
}

// Inverse of rfft_scaled from bins 0..M to N = 2M reals, unnormalized: the
// output equals 4M * idft when fed unscaled spectra, so kernel spectra carry
// a 1/(4M) factor to make causal_conv exact end to end.
template <typename T>
void irfft_folded(const std::complex<T>* spec, std::int64_t big_n, T* out) {
  const std::int64_t m = big_n / 2;
  auto& z = rfft_scratch<T>(m);
  const Twiddles<T>& tw = twiddles_for<T>(m);
  z[0] = {spec[0].real() + spec[m].real(), spec[0].real() - spec[m].real()};
  std::int64_t pairs = 0;
  for (std::int64_t k = 1; k < m - k; ++k) {
    const std::complex<T> pk = spec[k];
    const std::complex<T> pmk = std::conj(spec[m - k]);
    const std::complex<T> s = pk + pmk;
    const std::complex<T> d = pk - pmk;
    // conj(w_N^k)
    const std::complex<T> o = cmul(tw.unpack_v[static_cast<std::size_t>(k)], d);
    z[static_cast<std::size_t>(k)] = {s.real() - o.imag(), s.imag() + o.real()};
    z[static_cast<std::size_t>(m - k)] = {s.real() + o.imag(), -s.imag() + o.real()};
    ++pairs;
  }
  if (m >= 2) {
    const std::complex<T> pc = spec[m / 2];
    z[static_cast<std::size_t>(m / 2)] = {T(2) * pc.real(), T(-2) * pc.imag()};
  }
  flop_counter().add_real(4 + 4 * pairs);
  flop_counter().add_complex_mul(pairs);
  flop_counter().add_complex_add(2 * pairs);

  fft_butterflies(z.data(), m, true);
  for (std::int64_t j = 0; j < m; ++j) {
    out[2 * j] = z[static_cast<std::size_t>(j)].real();
    out[2 * j + 1] = z[static_cast<std::size_t>(j)].imag();
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Causal convolution of a [n x d] input with a fixed [rows x n] kernel bank
// through real transforms of length 2n (n a power of two), or the next power
// of two >= 2n-1 otherwise. Kernel spectra are precomputed once per kernel
// (setup, uncounted); the per-call cost is one forward transform per channel,
// rows*(nfft/2+1) pointwise complex multiplies, and one inverse transform per
// (row, channel) pair.
// ---------------------------------------------------------------------------

inline std::int64_t next_pow2(std::int64_t n) {
  std::int64_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

template <typename T>
class ConvKernel {
 public:
  ConvKernel() = default;

  static ConvKernel prepare(const Tensor<T>& kernel) {
    if (kernel.rank() != 2)
      throw ShapeError("ConvKernel: kernel must be [rows x n], got " + shape_str(kernel.shape()));
    FlopPause pause;
    ConvKernel k;
    k.n_ = kernel.dim(1);
    k.rows_ = kernel.dim(0);
    k.nfft_ = std::max<std::int64_t>(2, next_pow2(2 * k.n_ - 1));
    const std::int64_t bins = k.nfft_ / 2 + 1;
    k.spectra_.resize(static_cast<std::size_t>(k.rows_ * bins));
    k.rev_spectra_.resize(k.spectra_.size());
    std::vector<T> padded(static_cast<std::size_t>(k.nfft_), T(0));
    std::vector<std::complex<T>> spec(static_cast<std::size_t>(bins));
    // rfft_scaled carries a factor 2 and irfft_folded a factor 2*(nfft/2), so
    // the spectra absorb 1/(2*nfft) to make apply() exact.
    const T alpha = T(1) / (T(2) * T(k.nfft_) * T(2));
    for (std::int64_t i = 0; i < k.rows_; ++i) {
      for (std::int64_t t = 0; t < k.n_; ++t) padded[static_cast<std::size_t>(t)] = kernel(i, t);
      detail::rfft_scaled(padded.data(), k.nfft_, spec.data());
      for (std::int64_t b = 0; b < bins; ++b)
        k.spectra_[static_cast<std::size_t>(i * bins + b)] = spec[static_cast<std::size_t>(b)] * alpha;
      for (std::int64_t t = 0; t < k.n_; ++t)
        padded[static_cast<std::size_t>(t)] = kernel(i, k.n_ - 1 - t);
      detail::rfft_scaled(padded.data(), k.nfft_, spec.data());
      for (std::int64_t b = 0; b < bins; ++b)
        k.rev_spectra_[static_cast<std::size_t>(i * bins + b)] = spec[static_cast<std::size_t>(b)] * alpha;
    }
    return k;
  }

  std::int64_t n() const { return n_; }
  std::int64_t rows() const { return rows_; }
  std::int64_t fft_length() const { return nfft_; }
  bool empty() const { return n_ == 0; }

  // out[t, i, c] = sum_{j<=t} kernel[i, t-j] * x[j, c]
  Tensor<T> apply(const Tensor<T>& x) const {
    if (x.rank() != 2 || x.dim(0) != n_)
      throw ShapeError("causal_conv: input must be [" + std::to_string(n_) + " x d], got " +
                       shape_str(x.shape()));
    const std::int64_t n = n_, d = x.dim(1), bins = nfft_ / 2 + 1;
    Tensor<T> out(Shape{n, rows_, d});
    std::vector<T> buf(static_cast<std::size_t>(nfft_), T(0));
    std::vector<std::complex<T>> xspec(static_cast<std::size_t>(bins));
    std::vector<std::complex<T>> prod(static_cast<std::size_t>(bins));
    std::vector<T> y(static_cast<std::size_t>(nfft_));
    for (std::int64_t c = 0; c < d; ++c) {
      for (std::int64_t t = 0; t < n; ++t) buf[static_cast<std::size_t>(t)] = x(t, c);
      detail::rfft_scaled(buf.data(), nfft_, xspec.data());
      for (std::int64_t i = 0; i < rows_; ++i) {
        const std::complex<T>* ks = spectra_.data() + i * bins;
        for (std::int64_t b = 0; b < bins; ++b)
          prod[static_cast<std::size_t>(b)] = detail::cmul(xspec[static_cast<std::size_t>(b)], ks[b]);
        flop_counter().add_complex_mul(bins);
        detail::irfft_folded(prod.data(), nfft_, y.data());
        for (std::int64_t t = 0; t < n; ++t) out(t, i, c) = y[static_cast<std::size_t>(t)];
      }
    }
    return out;
  }

  // Adjoint of apply with respect to the input: given dY [n x rows x d],
  // returns dX [n x d] with dX[j,c] = sum_{t,i} kernel[i, t-j] * dY[t,i,c].
  Tensor<T> input_grad(const Tensor<T>& dy) const {
    if (dy.rank() != 3 || dy.dim(0) != n_ || dy.dim(1) != rows_)
      throw ShapeError("causal_conv grad: expected [n x rows x d], got " + shape_str(dy.shape()));
    const std::int64_t n = n_, d = dy.dim(2), bins = nfft_ / 2 + 1;
    Tensor<T> dx(Shape{n, d});
    std::vector<T> buf(static_cast<std::size_t>(nfft_), T(0));
    std::vector<std::complex<T>> gspec(static_cast<std::size_t>(bins));
    std::vector<std::complex<T>> acc(static_cast<std::size_t>(bins));
    std::vector<T> w(static_cast<std::size_t>(nfft_));
    for (std::int64_t c = 0; c < d; ++c) {
      for (auto& a : acc) a = std::complex<T>(T(0), T(0));
      for (std::int64_t i = 0; i < rows_; ++i) {
        for (std::int64_t t = 0; t < n; ++t) buf[static_cast<std::size_t>(t)] = dy(t, i, c);
        detail::rfft_scaled(buf.data(), nfft_, gspec.data());
        const std::complex<T>* ks = rev_spectra_.data() + i * bins;
        for (std::int64_t b = 0; b < bins; ++b)
          acc[static_cast<std::size_t>(b)] += detail::cmul(gspec[static_cast<std::size_t>(b)], ks[b]);
        flop_counter().add_complex_mul(bins);
        flop_counter().add_complex_add(bins);
      }
      detail::irfft_folded(acc.data(), nfft_, w.data());
      // correlation with row i equals conv with the reversed row, offset n-1
      for (std::int64_t j = 0; j < n; ++j) dx(j, c) = w[static_cast<std::size_t>(n - 1 + j)];
    }
    return dx;
  }

 private:
  std::int64_t n_ = 0;
  std::int64_t rows_ = 0;
  std::int64_t nfft_ = 0;
  std::vector<std::complex<T>> spectra_;
  std::vector<std::complex<T>> rev_spectra_;
};

template <typename T>
Tensor<T> causal_conv(const Tensor<T>& x, const ConvKernel<T>& kernel) {
  return kernel.apply(x);
}

}  // namespace lmu
