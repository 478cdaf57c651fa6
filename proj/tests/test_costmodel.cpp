#include <gtest/gtest.h>

#include <cmath>

#include "lmu/costmodel.hpp"

using namespace lmu;

TEST(PredictFlops, PublishedFormulaValues) {
  CostParams p;
  p.d = 1;
  p.q = 10;
  p.r = 4;
  EXPECT_DOUBLE_EQ(predict_flops("L_SS", p), 220.0);   // 2d(q^2 + q)
  EXPECT_DOUBLE_EQ(predict_flops("L_RK", p), 240.0);   // 6rdq
  p.n = 1024;
  p.q = 1;
  EXPECT_DOUBLE_EQ(predict_flops("L_FFT", p), 116.0);  // d(61q + 55) at n = 1024
  EXPECT_DOUBLE_EQ(predict_flops("C", p), 51200.0);    // 5 n log2 n
  EXPECT_THROW(predict_flops("nope", p), DomainError);
}

TEST(PredictFlops, Lfft1024EqualsLinearFormOverAllOrders) {
  // d [5(log2 n + 1)(q+1) + 6q] at n = 1024 collapses to d(61q + 55).
  for (std::int64_t q = 1; q <= 300; ++q) {
    CostParams p;
    p.n = 1024;
    p.d = 3;
    p.q = q;
    EXPECT_DOUBLE_EQ(predict_flops("L_FFT", p), 3.0 * (61.0 * static_cast<double>(q) + 55.0));
  }
}

TEST(PredictFlops, TableTwoRows) {
  CostParams p;
  p.d = 16;
  p.q_prime = 4;
  p.d_prime = 64;
  EXPECT_DOUBLE_EQ(predict_flops("qkt", p), 2.0 * 16 * 16);
  EXPECT_DOUBLE_EQ(predict_flops("mprime", p), 2.0 * 16 * 16 + 16 * 4);
  EXPECT_DOUBLE_EQ(predict_flops("m", p), 2.0 * 16 * 4);
  EXPECT_DOUBLE_EQ(predict_flops("ffn", p), 4.0 * 16 * 64);
  EXPECT_EQ(component_params("lmu_qkv", p), 3 * p.q * p.q_prime);
  EXPECT_EQ(component_params("m", p), p.q_prime);
  EXPECT_EQ(component_params("ffn", p), 2 * p.d * p.d_prime);
}

TEST(MeasureFlops, RequiresEnabledCounter) {
  flop_counter().disable();
  CostParams p;
  EXPECT_THROW(measure_flops("L_SS", p), StateError);
}

TEST(MeasureFlops, StateSpaceMatchesAnalyticExactly) {
  CostParams p;
  p.n = 128;
  p.d = 3;
  p.q = 12;
  FlopScope scope;
  EXPECT_DOUBLE_EQ(measure_flops("L_SS", p), predict_flops("L_SS", p));
}

TEST(MeasureFlops, FftTransformMatchesAnalyticExactly) {
  CostParams p;
  p.n = 1024;
  FlopScope scope;
  EXPECT_DOUBLE_EQ(measure_flops("C", p), 51200.0);
}

TEST(MeasureFlops, ReducedQkvPathWithinTenPercent) {
  CostParams p;
  p.n = 256;
  p.d = 8;
  p.q = 40;
  p.q_prime = 4;
  FlopScope scope;
  const double measured = measure_flops("lmu_qkv", p);
  const double analytic = predict_flops("lmu_qkv", p);
  EXPECT_GE(measured, analytic);
  EXPECT_LE(measured, analytic * 1.10);
}

TEST(CostReport, AllRatiosWithinTenPercent) {
  CostParams p;
  p.n = 256;
  p.d = 16;
  p.d_prime = 64;
  p.q = 40;
  p.q_prime = 4;
  p.r = 4;
  const auto report = build_cost_report<double>(p);
  ASSERT_EQ(report.layer_rows.size(), 5u);
  for (const auto& row : report.layer_rows) {
    EXPECT_GE(row.ratio, 0.9) << row.name;
    EXPECT_LE(row.ratio, 1.1) << row.name;
  }
  for (const auto& row : report.backend_rows) {
    if (row.name == "L_RK") continue;  // 6rdq is approximate by construction
    EXPECT_GE(row.ratio, 0.9) << row.name;
    EXPECT_LE(row.ratio, 1.1) << row.name;
  }
  EXPECT_NEAR(report.measured_total,
              report.layer_rows[0].measured + report.layer_rows[1].measured +
                  report.layer_rows[2].measured + report.layer_rows[3].measured +
                  report.layer_rows[4].measured,
              1e-9);
}

TEST(CostReport, RungeKuttaRowWithinBookkeeping) {
  CostParams p;
  p.n = 128;
  p.d = 2;
  p.q = 24;
  p.r = 4;
  FlopScope scope;
  const double measured = measure_flops("L_RK", p);
  const double analytic = predict_flops("L_RK", p);
  EXPECT_GE(measured, analytic);
  EXPECT_LE(measured, analytic + 10.0 * static_cast<double>(p.d * p.q));
}

TEST(ScalingSweep, SlopesMatchComplexityClasses) {
  // small version of the acceptance sweep
  const std::vector<std::int64_t> ns = {128, 256, 512, 1024, 2048};
  const auto report = scaling_sweep<double>({"attention", "ss", "fft"}, ns, 8, 16);
  ASSERT_EQ(report.compute_slopes.size(), 3u);
  for (const auto& [backend, slope] : report.compute_slopes) {
    if (backend == "attention") {
      EXPECT_GT(slope, 1.9) << backend;
      EXPECT_LT(slope, 2.05) << backend;
    } else if (backend == "ss") {
      EXPECT_NEAR(slope, 1.0, 1e-9) << backend;
    } else {
      EXPECT_GT(slope, 1.0) << backend;
      EXPECT_LT(slope, 1.15) << backend;
    }
  }
  // recurrent peak live values do not grow with n
  double first = -1;
  for (const auto& pt : report.points) {
    if (pt.backend != "ss") continue;
    if (first < 0) first = pt.peak_live;
    EXPECT_EQ(pt.peak_live, first);
  }
  EXPECT_THROW(scaling_sweep<double>({"bogus"}, ns, 8, 16), DomainError);
}
