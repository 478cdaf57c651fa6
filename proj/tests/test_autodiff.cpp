#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "lmu/autodiff.hpp"
#include "lmu/lmu.hpp"
#include "test_util.hpp"

using namespace lmu;
using lmu::testing::random_tensor;

namespace {

// Central finite differences of a scalar function of one parameter tensor.
double max_rel_grad_err(Tensor<double>& param, const std::function<double()>& loss,
                        const std::vector<double>& analytic, double eps = 1e-6) {
  double max_diff = 0, max_fd = 0;
  for (std::int64_t i = 0; i < param.size(); ++i) {
    const double saved = param[i];
    param[i] = saved + eps;
    const double up = loss();
    param[i] = saved - eps;
    const double down = loss();
    param[i] = saved;
    const double fd = (up - down) / (2 * eps);
    max_fd = std::max(max_fd, std::abs(fd));
    max_diff = std::max(max_diff, std::abs(fd - analytic[static_cast<std::size_t>(i)]));
  }
  return max_diff / std::max(max_fd, 1e-10);
}

}  // namespace

TEST(Tape, QuadraticLossGradientIsTwoW) {
  // loss = sum w^2 implemented as matmul(w, w^T) for a row vector w.
  Tensor<double> w(Shape{1, 5}, {0.5, -1.5, 2.0, 0.0, 3.25});
  w.ensure_grad();
  Tape<double> tape;
  const auto vw = tape.param(w);
  const auto loss = tape.matmul_nt(vw, vw);  // [1x1] = sum w^2
  tape.backward(loss);
  for (std::int64_t i = 0; i < 5; ++i) EXPECT_DOUBLE_EQ(w.grad()[static_cast<std::size_t>(i)], 2.0 * w[i]);
}

TEST(Tape, LinearLossGradientIsCoefficients) {
  Tensor<double> w(Shape{1, 4}, {1.0, 2.0, 3.0, 4.0});
  const Tensor<double> c(Shape{1, 4}, {-1.0, 0.5, 7.0, 0.0});
  w.ensure_grad();
  Tape<double> tape;
  const auto vw = tape.param(w);
  const auto vc = tape.constant(c);
  const auto loss = tape.matmul_nt(vw, vc);  // c . w
  tape.backward(loss);
  for (std::int64_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(w.grad()[static_cast<std::size_t>(i)], c[i]);
}

TEST(Tape, BackwardWithoutNodesIsStateError) {
  Tape<double> tape;
  EXPECT_THROW(tape.backward(0), StateError);
}

TEST(Tape, BackwardOnNonScalarIsStateError) {
  Tape<double> tape;
  Tensor<double> w(Shape{2, 2});
  const auto v = tape.param(w);
  EXPECT_THROW(tape.backward(v), StateError);
}

namespace {

// Generic gradient check: loss(tape, param_var) must return a scalar VarId.
void expect_grad_matches_fd(
    Tensor<double>& param,
    const std::function<Tape<double>::VarId(Tape<double>&, Tape<double>::VarId)>& loss_fn,
    double tol = 1e-7) {
  param.ensure_grad();
  param.zero_grad();
  {
    Tape<double> tape;
    const auto v = tape.param(param);
    tape.backward(loss_fn(tape, v));
  }
  const std::vector<double> analytic = param.grad();
  auto eval = [&]() {
    Tape<double> tape;
    const auto v = tape.param(param);
    return tape.value(loss_fn(tape, v))[0];
  };
  EXPECT_LT(max_rel_grad_err(param, eval, analytic), tol);
}

}  // namespace

TEST(TapeOps, GeluGradient) {
  auto w = random_tensor<double>(Shape{1, 6}, 41);
  const auto ones = Tensor<double>::full(Shape{1, 6}, 1.0);
  expect_grad_matches_fd(w, [&](Tape<double>& t, Tape<double>::VarId v) {
    return t.matmul_nt(t.gelu(v), t.constant(ones));  // sum gelu(w)
  });
}

TEST(TapeOps, MatmulGradientBothSides) {
  auto a = random_tensor<double>(Shape{3, 4}, 42);
  auto b = random_tensor<double>(Shape{4, 2}, 43);
  const auto onesL = Tensor<double>::full(Shape{1, 3}, 1.0);
  const auto onesR = Tensor<double>::full(Shape{1, 2}, 1.0);
  // loss = ones^T (A B) ones
  expect_grad_matches_fd(a, [&](Tape<double>& t, Tape<double>::VarId v) {
    const auto prod = t.matmul(v, t.constant(b));
    return t.matmul_nt(t.matmul(t.constant(onesL), prod), t.constant(onesR));
  });
  expect_grad_matches_fd(b, [&](Tape<double>& t, Tape<double>::VarId v) {
    const auto prod = t.matmul(t.constant(a), v);
    return t.matmul_nt(t.matmul(t.constant(onesL), prod), t.constant(onesR));
  });
}

TEST(TapeOps, LayerNormGradient) {
  auto x = random_tensor<double>(Shape{3, 5}, 44);
  auto g = random_tensor<double>(Shape{5}, 45, 0.3);
  auto b = random_tensor<double>(Shape{5}, 46, 0.3);
  const auto ones = Tensor<double>::full(Shape{1, 5}, 1.0);
  const auto onesL = Tensor<double>::full(Shape{1, 3}, 1.0);
  auto build = [&](Tape<double>& t, Tape<double>::VarId vx, Tape<double>::VarId vg,
                   Tape<double>::VarId vb) {
    const auto normed = t.layer_norm(vx, vg, vb, 1e-5);
    const auto sq = t.gelu(normed);
    return t.matmul_nt(t.matmul(t.constant(onesL), sq), t.constant(ones));
  };
  expect_grad_matches_fd(x, [&](Tape<double>& t, Tape<double>::VarId v) {
    return build(t, v, t.constant(g), t.constant(b));
  }, 1e-6);
  expect_grad_matches_fd(g, [&](Tape<double>& t, Tape<double>::VarId v) {
    return build(t, t.constant(x), v, t.constant(b));
  }, 1e-6);
  expect_grad_matches_fd(b, [&](Tape<double>& t, Tape<double>::VarId v) {
    return build(t, t.constant(x), t.constant(g), v);
  }, 1e-6);
}

TEST(TapeOps, SoftmaxAndBatchedMatmulGradients) {
  auto q = random_tensor<double>(Shape{2, 3, 4}, 47);
  auto k = random_tensor<double>(Shape{2, 3, 4}, 48);
  auto v = random_tensor<double>(Shape{2, 3, 4}, 49);
  auto p = random_tensor<double>(Shape{3}, 50, 0.5);
  const auto ones = Tensor<double>::full(Shape{2, 4}, 1.0);
  auto build = [&](Tape<double>& t, Tape<double>::VarId vq, Tape<double>::VarId vk,
                   Tape<double>::VarId vv, Tape<double>::VarId vp) {
    const auto att = t.softmax_lastdim(t.bmm_nt(vq, vk));
    const auto mixed = t.bmm(att, vv);          // [2,3,4]
    const auto out = t.rowvec_bcast(vp, mixed);  // [2,4]
    // scalar: sum over everything via two contractions
    const auto flat = t.gelu(out);
    Tensor<double> ones_row(Shape{1, 2}, {1.0, 1.0});
    Tensor<double> ones_col(Shape{1, 4}, {1.0, 1.0, 1.0, 1.0});
    return t.matmul_nt(t.matmul(t.constant(ones_row), flat), t.constant(ones_col));
  };
  expect_grad_matches_fd(q, [&](Tape<double>& t, Tape<double>::VarId x) {
    return build(t, x, t.constant(k), t.constant(v), t.constant(p));
  }, 1e-6);
  expect_grad_matches_fd(k, [&](Tape<double>& t, Tape<double>::VarId x) {
    return build(t, t.constant(q), x, t.constant(v), t.constant(p));
  }, 1e-6);
  expect_grad_matches_fd(v, [&](Tape<double>& t, Tape<double>::VarId x) {
    return build(t, t.constant(q), t.constant(k), x, t.constant(p));
  }, 1e-6);
  expect_grad_matches_fd(p, [&](Tape<double>& t, Tape<double>::VarId x) {
    return build(t, t.constant(q), t.constant(k), t.constant(v), x);
  }, 1e-6);
}

TEST(TapeOps, LmatBcastGradient) {
  auto l = random_tensor<double>(Shape{2, 5}, 51);
  auto m = random_tensor<double>(Shape{3, 5, 4}, 52);
  const Tensor<double> onesB(Shape{1, 3}, {1, 1, 1});
  const Tensor<double> onesD(Shape{1, 4}, {1, 1, 1, 1});
  auto build = [&](Tape<double>& t, Tape<double>::VarId vl, Tape<double>::VarId vm) {
    const auto out = t.gelu(t.lmat_bcast(vl, vm));  // [3,2,4]
    Tensor<double> pvec(Shape{2}, {1.0, -0.5});
    const auto red = t.rowvec_bcast(t.constant(pvec), out);  // [3,4]
    return t.matmul_nt(t.matmul(t.constant(onesB), red), t.constant(onesD));
  };
  expect_grad_matches_fd(l, [&](Tape<double>& t, Tape<double>::VarId x) {
    return build(t, x, t.constant(m));
  }, 1e-6);
  expect_grad_matches_fd(m, [&](Tape<double>& t, Tape<double>::VarId x) {
    return build(t, t.constant(l), x);
  }, 1e-6);
}

TEST(TapeOps, CausalSoftmaxGradientAndMask) {
  auto s = random_tensor<double>(Shape{5, 5}, 53);
  const auto onesL = Tensor<double>::full(Shape{1, 5}, 1.0);
  expect_grad_matches_fd(s, [&](Tape<double>& t, Tape<double>::VarId v) {
    const auto att = t.causal_softmax(v);
    const auto g = t.gelu(att);
    return t.matmul_nt(t.matmul(t.constant(onesL), g), t.constant(onesL));
  }, 1e-6);
  // strict upper triangle carries zero probability and zero gradient
  Tape<double> tape;
  s.zero_grad();
  const auto v = tape.param(s);
  const auto att = tape.causal_softmax(v);
  for (std::int64_t t = 0; t < 5; ++t)
    for (std::int64_t j = t + 1; j < 5; ++j) EXPECT_EQ(tape.value(att)(t, j), 0.0);
}

TEST(TapeOps, CausalConvGradientMatchesFd) {
  const auto sys = discretize_zoh(build_continuous<double>(LmuConfig::make(16.0, 5)));
  const auto imp = impulse_response(sys, 16);
  auto x = random_tensor<double>(Shape{16, 2}, 54);
  const Tensor<double> onesQ(Shape{5}, std::vector<double>(5, 1.0));
  const auto onesT = Tensor<double>::full(Shape{1, 16}, 1.0);
  const Tensor<double> onesD(Shape{1, 2}, {1, 1});
  expect_grad_matches_fd(x, [&](Tape<double>& t, Tape<double>::VarId v) {
    const auto mem = t.causal_conv(v, &imp.kernel());  // [16,5,2]
    const auto act = t.gelu(mem);
    const auto red = t.rowvec_bcast(t.constant(onesQ), act);  // [16,2]
    return t.matmul_nt(t.matmul(t.constant(onesT), red), t.constant(onesD));
  }, 1e-6);
}

TEST(TapeOps, EmbedGradientScattersByTokenId) {
  Tensor<double> table(Shape{7, 3});
  for (std::int64_t i = 0; i < table.size(); ++i) table[i] = 0.01 * static_cast<double>(i);
  table.ensure_grad();
  const std::vector<std::int32_t> ids = {2, 5, 2, 0};
  Tape<double> tape;
  const auto vt = tape.param(table);
  const auto rows = tape.embed(ids, vt);
  const auto ones = Tensor<double>::full(Shape{1, 4}, 1.0);
  const Tensor<double> onesD(Shape{1, 3}, {1, 1, 1});
  const auto loss = tape.matmul_nt(tape.matmul(tape.constant(ones), rows), tape.constant(onesD));
  tape.backward(loss);
  // row 2 used twice, rows 0 and 5 once, the rest never
  for (std::int64_t j = 0; j < 3; ++j) {
    EXPECT_DOUBLE_EQ(table.grad()[static_cast<std::size_t>(2 * 3 + j)], 2.0);
    EXPECT_DOUBLE_EQ(table.grad()[static_cast<std::size_t>(5 * 3 + j)], 1.0);
    EXPECT_DOUBLE_EQ(table.grad()[static_cast<std::size_t>(0 * 3 + j)], 1.0);
    EXPECT_DOUBLE_EQ(table.grad()[static_cast<std::size_t>(1 * 3 + j)], 0.0);
  }
  EXPECT_THROW(tape.embed({9}, vt), InputError);
}

TEST(TapeOps, CrossEntropyGradientAndMasking) {
  auto logits = random_tensor<double>(Shape{4, 6}, 55);
  const std::vector<std::int32_t> targets = {1, 4, 0, 3};
  const std::vector<std::uint8_t> mask = {1, 1, 0, 1};
  expect_grad_matches_fd(logits, [&](Tape<double>& t, Tape<double>::VarId v) {
    return t.cross_entropy(v, targets, mask);
  }, 1e-7);
  // masked row contributes no gradient
  logits.zero_grad();
  Tape<double> tape;
  const auto v = tape.param(logits);
  tape.backward(tape.cross_entropy(v, targets, mask));
  for (std::int64_t j = 0; j < 6; ++j) EXPECT_EQ(logits.grad()[static_cast<std::size_t>(2 * 6 + j)], 0.0);
}

TEST(TapeOps, PerPositionLossesExposeMaskedZeros) {
  const Tensor<double> logits(Shape{3, 4});
  Tape<double> tape;
  std::vector<double> per_pos;
  const auto loss =
      tape.cross_entropy(tape.constant(logits), {0, 1, 2}, {1, 0, 1}, &per_pos);
  EXPECT_NEAR(tape.value(loss)[0], std::log(4.0), 1e-12);
  EXPECT_EQ(per_pos.size(), 3u);
  EXPECT_EQ(per_pos[1], 0.0);
  EXPECT_NEAR(per_pos[0], std::log(4.0), 1e-12);
}
