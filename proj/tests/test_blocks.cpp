#include <gtest/gtest.h>

#include <cmath>

#include "lmu/blocks.hpp"
#include "test_util.hpp"

using namespace lmu;
using lmu::testing::random_tensor;
using lmu::testing::rel_max_diff;

namespace {

ImpulseResponse<double> make_impulse(double theta, std::int64_t q, std::int64_t n) {
  return impulse_response(discretize_zoh(build_continuous<double>(LmuConfig::make(theta, q))), n);
}

ImplicitAttentionParams<double> make_attn(std::int64_t q, std::int64_t q_prime, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return ImplicitAttentionParams<double>::init(q, q_prime, rng, 0.3);
}

// Direct path: materialize the full memory, apply the step at every t.
Tensor<double> direct_path(const Tensor<double>& x, const ImplicitAttentionParams<double>& params,
                           const ImpulseResponse<double>& imp) {
  const auto mem = run_fft_conv(imp, x);
  const std::int64_t n = x.dim(0), d = x.dim(1), q = imp.order();
  Tensor<double> out(Shape{n, d});
  Tensor<double> m_t(Shape{q, d});
  for (std::int64_t t = 0; t < n; ++t) {
    std::copy(mem.data() + t * q * d, mem.data() + (t + 1) * q * d, m_t.data());
    const auto row = implicit_attention_step(m_t, params);
    std::copy(row.data(), row.data() + d, out.data() + t * d);
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// reduce_impulse
// ---------------------------------------------------------------------------

TEST(ReduceImpulse, IdentityKeepsH) {
  const auto imp = make_impulse(16.0, 6, 32);
  const auto reduced = reduce_impulse(Tensor<double>::identity(6), imp);
  EXPECT_LT(rel_max_diff(reduced, imp.H), 1e-15);
}

TEST(ReduceImpulse, OutputShape) {
  const auto imp = make_impulse(16.0, 10, 32);
  const auto l = random_tensor<double>(Shape{3, 10}, 1);
  const auto reduced = reduce_impulse(l, imp);
  EXPECT_EQ(reduced.shape(), (Shape{3, 32}));
  EXPECT_THROW(reduce_impulse(random_tensor<double>(Shape{3, 9}, 2), imp), ShapeError);
}

TEST(ReduceImpulse, ConvolutionCommutesWithReduction) {
  // (X * (L H)) == L (X * H): linearity of convolution.
  const auto imp = make_impulse(32.0, 12, 64);
  const auto l = random_tensor<double>(Shape{4, 12}, 3);
  const auto x = random_tensor<double>(Shape{64, 3}, 4);
  const auto reduced_conv = ConvKernel<double>::prepare(reduce_impulse(l, imp)).apply(x);
  const auto full_conv = run_fft_conv(imp, x);  // n x 12 x 3
  Tensor<double> expected(Shape{64, 4, 3});
  for (std::int64_t t = 0; t < 64; ++t)
    for (std::int64_t i = 0; i < 4; ++i)
      for (std::int64_t c = 0; c < 3; ++c) {
        double acc = 0;
        for (std::int64_t s = 0; s < 12; ++s) acc += l(i, s) * full_conv(t, s, c);
        expected(t, i, c) = acc;
      }
  EXPECT_LT(rel_max_diff(reduced_conv, expected), 1e-10);
}

// ---------------------------------------------------------------------------
// implicit_attention_step
// ---------------------------------------------------------------------------

TEST(ImplicitAttentionStep, ZeroMemoryGivesZero) {
  const auto params = make_attn(8, 3, 5);
  const auto out = implicit_attention_step(Tensor<double>(Shape{8, 4}), params);
  for (std::int64_t i = 0; i < out.size(); ++i) EXPECT_EQ(out[i], 0.0);
}

TEST(ImplicitAttentionStep, SingleRowAttentionIsIdentity) {
  // q' = 1: softmax of the 1x1 score matrix is [[1]], so m = p0 * gelu(L3 M).
  const auto params = make_attn(6, 1, 6);
  const auto m = random_tensor<double>(Shape{6, 5}, 7);
  const auto out = implicit_attention_step(m, params);
  const auto v = gelu(matmul(params.L3, m));
  for (std::int64_t c = 0; c < 5; ++c) EXPECT_NEAR(out[c], params.p[0] * v(0, c), 1e-14);
}

TEST(ImplicitAttentionStep, TableTwoFlopRows) {
  // QK^T = 2dq'^2 exactly; softmax + M' stays within 2dq'^2 + dq' + q'^2;
  // m = pM' = 2dq'.
  const std::int64_t q_prime = 4, d = 8;
  const auto qm = random_tensor<double>(Shape{q_prime, d}, 8);
  const auto km = random_tensor<double>(Shape{q_prime, d}, 9);
  const auto vm = random_tensor<double>(Shape{q_prime, d}, 10);
  {
    FlopScope scope;
    matmul_nt(qm, km);
    EXPECT_EQ(scope.total(), 2 * d * q_prime * q_prime);
  }
  {
    const auto scores = matmul_nt(qm, km);
    FlopScope scope;
    matmul(softmax_rows(scores), vm);
    EXPECT_LE(scope.total(), 2 * d * q_prime * q_prime + d * q_prime + q_prime * q_prime);
  }
  {
    const auto pvec = random_tensor<double>(Shape{1, q_prime}, 11);
    const auto mp = random_tensor<double>(Shape{q_prime, d}, 12);
    FlopScope scope;
    matmul(pvec, mp);
    EXPECT_EQ(scope.total(), 2 * d * q_prime);
  }
}

// ---------------------------------------------------------------------------
// implicit_attention_sequence (reduced path)
// ---------------------------------------------------------------------------

TEST(ImplicitAttentionSequence, ZeroInputGivesZero) {
  const auto imp = make_impulse(32.0, 10, 64);
  const auto params = make_attn(10, 2, 13);
  const auto out = implicit_attention_sequence(Tensor<double>(Shape{64, 4}), params, imp);
  for (std::int64_t i = 0; i < out.size(); ++i) EXPECT_EQ(out[i], 0.0);
}

TEST(ImplicitAttentionSequence, EquivalentToDirectPath) {
  // q = 40, q' = 4, n = 128, d = 8: reduced path equals materializing M and
  // applying the per-step attention, to 1e-10 relative.
  const auto imp = make_impulse(64.0, 40, 128);
  const auto params = make_attn(40, 4, 14);
  const auto x = random_tensor<double>(Shape{128, 8}, 15);
  const auto reduced = implicit_attention_sequence(x, params, imp);
  const auto direct = direct_path(x, params, imp);
  EXPECT_LT(rel_max_diff(reduced, direct), 1e-10);
}

TEST(ImplicitAttentionSequence, Causality) {
  const auto imp = make_impulse(32.0, 12, 64);
  const auto params = make_attn(12, 3, 16);
  auto x = random_tensor<double>(Shape{64, 4}, 17);
  const auto base = implicit_attention_sequence(x, params, imp);
  const std::int64_t t0 = 40;
  x(t0, 2) += 1.5;
  const auto bumped = implicit_attention_sequence(x, params, imp);
  for (std::int64_t t = 0; t < t0; ++t)
    for (std::int64_t c = 0; c < 4; ++c) EXPECT_NEAR(bumped(t, c), base(t, c), 1e-11);
  double later = 0;
  for (std::int64_t t = t0; t < 64; ++t)
    for (std::int64_t c = 0; c < 4; ++c) later = std::max(later, std::abs(bumped(t, c) - base(t, c)));
  EXPECT_GT(later, 1e-6);
}

TEST(ImplicitAttentionSequence, ChannelPermutationEquivariance) {
  const auto imp = make_impulse(32.0, 10, 32);
  const auto params = make_attn(10, 2, 18);
  const auto x = random_tensor<double>(Shape{32, 5}, 19);
  const std::vector<std::int64_t> perm = {3, 0, 4, 1, 2};
  Tensor<double> xp(Shape{32, 5});
  for (std::int64_t t = 0; t < 32; ++t)
    for (std::int64_t c = 0; c < 5; ++c) xp(t, c) = x(t, perm[static_cast<std::size_t>(c)]);
  const auto base = implicit_attention_sequence(x, params, imp);
  const auto permuted = implicit_attention_sequence(xp, params, imp);
  for (std::int64_t t = 0; t < 32; ++t)
    for (std::int64_t c = 0; c < 5; ++c)
      EXPECT_NEAR(permuted(t, c), base(t, perm[static_cast<std::size_t>(c)]), 1e-11);
}

TEST(ImplicitAttentionSequence, ParameterCount) {
  const auto params = make_attn(40, 4, 20);
  EXPECT_EQ(params.param_count(), 3 * 40 * 4 + 4);
}

// ---------------------------------------------------------------------------
// FFN
// ---------------------------------------------------------------------------

TEST(Ffn, ZeroParamsGiveZero) {
  FfnParams<double> params;
  params.W1 = Tensor<double>(Shape{4, 16});
  params.b1 = Tensor<double>(Shape{16});
  params.W2 = Tensor<double>(Shape{16, 4});
  params.b2 = Tensor<double>(Shape{4});
  const auto out = ffn(random_tensor<double>(Shape{8, 4}, 21), params);
  for (std::int64_t i = 0; i < out.size(); ++i) EXPECT_EQ(out[i], 0.0);
}

TEST(Ffn, ScalarGeluReference) {
  FfnParams<double> params;
  params.W1 = Tensor<double>(Shape{1, 1}, {1.0});
  params.b1 = Tensor<double>(Shape{1});
  params.W2 = Tensor<double>(Shape{1, 1}, {1.0});
  params.b2 = Tensor<double>(Shape{1});
  const auto out = ffn(Tensor<double>(Shape{1, 1}, {1.0}), params);
  EXPECT_NEAR(out[0], 0.841345, 1e-5);
}

TEST(Ffn, PerTokenCostNearFourDDprime) {
  const std::int64_t n = 32, d = 8, dp = 32;
  std::mt19937_64 rng(22);
  const auto params = FfnParams<double>::init(d, dp, rng, 0.1);
  const auto x = random_tensor<double>(Shape{n, d}, 23);
  FlopScope scope;
  ffn(x, params);
  const auto per_token = scope.total() / n;
  EXPECT_GE(per_token, 4 * d * dp);
  EXPECT_LE(per_token, 4 * d * dp + 2 * (d + dp));  // biases and the gelu multiply
}

// ---------------------------------------------------------------------------
// Global causal attention
// ---------------------------------------------------------------------------

TEST(GlobalAttention, SingleTokenIsProjectionOnly) {
  std::mt19937_64 rng(24);
  const auto params = GlobalAttentionParams<double>::init(3, rng, 0.4);
  const auto x = random_tensor<double>(Shape{1, 3}, 25);
  const auto out = global_causal_attention(x, params);
  const auto expected = matmul(matmul(x, params.Wv), params.Wo);
  EXPECT_LT(rel_max_diff(out, expected), 1e-13);
}

TEST(GlobalAttention, StrictCausality) {
  std::mt19937_64 rng(26);
  const auto params = GlobalAttentionParams<double>::init(4, rng, 0.4);
  auto x = random_tensor<double>(Shape{24, 4}, 27);
  const auto base = global_causal_attention(x, params);
  x(17, 1) += 2.0;
  const auto bumped = global_causal_attention(x, params);
  for (std::int64_t t = 0; t < 17; ++t)
    for (std::int64_t c = 0; c < 4; ++c) EXPECT_EQ(bumped(t, c), base(t, c));
}

TEST(GlobalAttention, ZeroQueryKeyGivesPrefixMeans) {
  // Wq = Wk = 0: uniform attention over the causal prefix, so the context at
  // t is the running mean of Wv x.
  std::mt19937_64 rng(28);
  auto params = GlobalAttentionParams<double>::init(3, rng, 0.4);
  params.Wq = Tensor<double>(Shape{3, 3});
  params.Wk = Tensor<double>(Shape{3, 3});
  const auto x = random_tensor<double>(Shape{12, 3}, 29);
  const auto out = global_causal_attention(x, params);
  const auto v = matmul(x, params.Wv);
  Tensor<double> means(Shape{12, 3});
  for (std::int64_t t = 0; t < 12; ++t)
    for (std::int64_t c = 0; c < 3; ++c) {
      double acc = 0;
      for (std::int64_t s = 0; s <= t; ++s) acc += v(s, c);
      means(t, c) = acc / static_cast<double>(t + 1);
    }
  const auto expected = matmul(means, params.Wo);
  EXPECT_LT(rel_max_diff(out, expected), 1e-12);
}

TEST(GlobalAttention, QuadraticCostGrowth) {
  std::mt19937_64 rng(30);
  const auto params = GlobalAttentionParams<double>::init(4, rng, 0.2);
  auto cost = [&](std::int64_t n) {
    const auto x = random_tensor<double>(Shape{n, 4}, 31);
    FlopScope scope;
    global_causal_attention(x, params);
    return static_cast<double>(scope.total());
  };
  // n^2 term dominates: quadrupling plus change when n doubles
  const double c1 = cost(128), c2 = cost(256);
  EXPECT_GT(c2 / c1, 3.0);
  EXPECT_LT(c2 / c1, 4.5);
}
