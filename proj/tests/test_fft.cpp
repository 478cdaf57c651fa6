#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <random>

#include "lmu/fft.hpp"
#include "test_util.hpp"

using namespace lmu;

namespace {

ComplexVector<double> random_complex(std::int64_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist;
  ComplexVector<double> v(n);
  for (std::int64_t i = 0; i < n; ++i) v[i] = {dist(rng), dist(rng)};
  return v;
}

double max_abs_diff(const ComplexVector<double>& a, const ComplexVector<double>& b) {
  double m = 0;
  for (std::int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// O(n^2) reference DFT.
ComplexVector<double> dft_oracle(const ComplexVector<double>& in) {
  const std::int64_t n = in.size();
  ComplexVector<double> out(n);
  for (std::int64_t k = 0; k < n; ++k) {
    std::complex<double> acc = 0;
    for (std::int64_t j = 0; j < n; ++j)
      acc += in[j] * std::polar(1.0, -2.0 * std::numbers::pi * double(j * k) / double(n));
    out[k] = acc;
  }
  return out;
}

// Direct O(n^2) causal convolution oracle.
template <typename T>
Tensor<T> conv_oracle(const Tensor<T>& x, const Tensor<T>& kernel) {
  const std::int64_t n = x.dim(0), d = x.dim(1), rows = kernel.dim(0);
  Tensor<T> out(Shape{n, rows, d});
  for (std::int64_t t = 0; t < n; ++t)
    for (std::int64_t i = 0; i < rows; ++i)
      for (std::int64_t c = 0; c < d; ++c) {
        T acc = T(0);
        for (std::int64_t j = 0; j <= t; ++j) acc += kernel(i, t - j) * x(j, c);
        out(t, i, c) = acc;
      }
  return out;
}

}  // namespace

TEST(Fft, DeltaTransformsToOnes) {
  ComplexVector<double> v(4);
  v[0] = {1, 0};
  const auto f = fft(v);
  for (std::int64_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(f[i].real(), 1.0, 1e-15);
    EXPECT_NEAR(f[i].imag(), 0.0, 1e-15);
  }
}

TEST(Fft, MatchesDftOracle) {
  const auto v = random_complex(32, 1);
  EXPECT_LT(max_abs_diff(fft(v), dft_oracle(v)), 1e-11);
}

TEST(Fft, RoundTripUpTo32768) {
  for (std::int64_t n : {64L, 1024L, 32768L}) {
    const auto v = random_complex(n, 100 + n);
    const auto back = ifft(fft(v));
    double ref = 0;
    for (std::int64_t i = 0; i < n; ++i) ref = std::max(ref, std::abs(v[i]));
    EXPECT_LT(max_abs_diff(back, v) / ref, 1e-12) << "n = " << n;
  }
}

TEST(Fft, IfftThenFftIsIdentity) {
  const auto v = random_complex(256, 5);
  const auto back = fft(ifft(v));
  EXPECT_LT(max_abs_diff(back, v), 1e-12);
}

TEST(Fft, NonPowerOfTwoLengthRejected) {
  ComplexVector<double> v(12);
  EXPECT_THROW(fft(v), ShapeError);
  EXPECT_THROW(ifft(v), ShapeError);
}

TEST(Fft, ForwardCostIsExactly5NLog2N) {
  for (std::int64_t n : {64L, 1024L, 4096L}) {
    auto v = random_complex(n, 7);
    FlopScope scope;
    fft(v);
    const auto log2n = static_cast<std::int64_t>(std::lround(std::log2(double(n))));
    EXPECT_EQ(scope.total(), 5 * n * log2n) << "n = " << n;
  }
}

TEST(Fft, CostRecurrenceHolds) {
  // C(n) = 2 C(n/2) + (n/2)(c_m + 2 c_a) with c_m = 6, c_a = 2, i.e.
  // C(2n) = 2 C(n) + 10n; closed form 5 n log2 n.
  auto cost = [](std::int64_t n) {
    auto v = random_complex(n, 9);
    FlopScope scope;
    fft(v);
    return scope.total();
  };
  for (std::int64_t n : {128L, 512L, 2048L}) EXPECT_EQ(cost(2 * n), 2 * cost(n) + 10 * n);
}

TEST(Fft, ConvolutionTheorem) {
  // ifft(fft(a) . fft(b)) equals direct convolution after zero-padding.
  std::mt19937_64 rng(11);
  std::normal_distribution<double> dist;
  const std::int64_t n = 512;
  std::vector<double> a(n), b(n);
  for (auto& x : a) x = dist(rng);
  for (auto& x : b) x = dist(rng);
  ComplexVector<double> fa(2 * n), fb(2 * n);
  for (std::int64_t i = 0; i < n; ++i) {
    fa[i] = {a[static_cast<std::size_t>(i)], 0};
    fb[i] = {b[static_cast<std::size_t>(i)], 0};
  }
  auto ffa = fft(fa);
  auto ffb = fft(fb);
  ComplexVector<double> prod(2 * n);
  for (std::int64_t i = 0; i < 2 * n; ++i) prod[i] = ffa[i] * ffb[i];
  const auto conv = ifft(prod);

  double max_diff = 0, ref = 0;
  for (std::int64_t t = 0; t < 2 * n - 1; ++t) {
    double direct = 0;
    for (std::int64_t j = std::max<std::int64_t>(0, t - n + 1); j <= std::min(t, n - 1); ++j)
      direct += a[static_cast<std::size_t>(j)] * b[static_cast<std::size_t>(t - j)];
    max_diff = std::max(max_diff, std::abs(conv[t].real() - direct));
    ref = std::max(ref, std::abs(direct));
  }
  EXPECT_LT(max_diff / ref, 1e-10);
}

TEST(CausalConv, MatchesDirectOracle) {
  const auto x = lmu::testing::random_tensor<double>(Shape{64, 3}, 21);
  const auto kernel = lmu::testing::random_tensor<double>(Shape{5, 64}, 22);
  const auto fast = ConvKernel<double>::prepare(kernel).apply(x);
  const auto direct = conv_oracle(x, kernel);
  EXPECT_LT(lmu::testing::rel_max_diff(fast, direct), 1e-12);
}

TEST(CausalConv, NonPowerOfTwoLengthsWork) {
  // pads to the next power of two >= 2n-1
  const auto x = lmu::testing::random_tensor<double>(Shape{48, 2}, 23);
  const auto kernel = lmu::testing::random_tensor<double>(Shape{3, 48}, 24);
  const auto fast = ConvKernel<double>::prepare(kernel).apply(x);
  const auto direct = conv_oracle(x, kernel);
  EXPECT_LT(lmu::testing::rel_max_diff(fast, direct), 1e-12);
}

TEST(CausalConv, InputGradIsAdjoint) {
  // <K*x, y> = <x, K^T y> for random x, y.
  const std::int64_t n = 32, d = 2, rows = 4;
  const auto x = lmu::testing::random_tensor<double>(Shape{n, d}, 31);
  const auto y = lmu::testing::random_tensor<double>(Shape{n, rows, d}, 32);
  const auto kernel = lmu::testing::random_tensor<double>(Shape{rows, n}, 33);
  const auto k = ConvKernel<double>::prepare(kernel);
  const auto kx = k.apply(x);
  const auto kty = k.input_grad(y);
  double lhs = 0, rhs = 0;
  for (std::int64_t i = 0; i < kx.size(); ++i) lhs += kx[i] * y[i];
  for (std::int64_t i = 0; i < x.size(); ++i) rhs += x[i] * kty[i];
  EXPECT_NEAR(lhs, rhs, 1e-9 * std::abs(lhs));
}

TEST(CausalConv, PerTokenCostWithinTenPercentOfAnalytic) {
  // d[(q+1) * 5(log2 n + 1) + 6q] per token, +10% accounting slack.
  for (std::int64_t n : {64L, 256L, 1024L}) {
    const std::int64_t d = 3, q = 8;
    const auto x = lmu::testing::random_tensor<double>(Shape{n, d}, 40 + n);
    const auto kernel = lmu::testing::random_tensor<double>(Shape{q, n}, 41 + n);
    const auto k = ConvKernel<double>::prepare(kernel);
    FlopScope scope;
    k.apply(x);
    const double measured = static_cast<double>(scope.total()) / static_cast<double>(n);
    const double log2n = std::log2(static_cast<double>(n));
    const double analytic = d * (5.0 * (log2n + 1.0) * (q + 1.0) + 6.0 * q);
    EXPECT_GE(measured, analytic * 0.999) << "n = " << n;
    EXPECT_LE(measured, analytic * 1.10) << "n = " << n;
  }
}
