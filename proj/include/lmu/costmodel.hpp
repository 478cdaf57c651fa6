#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "lmu/blocks.hpp"
#include "lmu/powerlaw.hpp"

namespace lmu {

// ---------------------------------------------------------------------------
// Analytic FLOP and parameter formulas, per layer and per token:
//   L_SS      = 2d(q^2 + q)                      state-space update
//   L_RK      = 6rdq                             Runge-Kutta update
//   L_FFT     = d[5(log2 n + 1)(q + 1) + 6q]     FFT convolution
//   C         = 5 n log2 n                       radix-2 FFT of length n
//   lmu_qkv   = 3d[5(q'+1)(log2 n + 1) + 6q'] + 6qq'   reduced Q/K/V path
//   qkt       = 2dq'^2
//   mprime    = 2dq'^2 + dq'
//   m         = 2dq'
//   ffn       = 4dd'
// ---------------------------------------------------------------------------

struct CostParams {
  std::int64_t n = 1024;
  std::int64_t d = 16;
  std::int64_t d_prime = 64;
  std::int64_t q = 40;
  std::int64_t q_prime = 4;
  int r = 4;
};

inline double predict_flops(const std::string& component, const CostParams& p) {
  const double n = static_cast<double>(p.n), d = static_cast<double>(p.d);
  const double dp = static_cast<double>(p.d_prime), q = static_cast<double>(p.q);
  const double qp = static_cast<double>(p.q_prime), r = static_cast<double>(p.r);
  const double log2n = std::log2(n);
  if (component == "L_SS") return 2.0 * d * (q * q + q);
  if (component == "L_RK") return 6.0 * r * d * q;
  if (component == "L_FFT") return d * (5.0 * (log2n + 1.0) * (q + 1.0) + 6.0 * q);
  if (component == "C") return 5.0 * n * log2n;
  if (component == "lmu_qkv")
    return 3.0 * d * (5.0 * (qp + 1.0) * (log2n + 1.0) + 6.0 * qp) + 6.0 * q * qp;
  if (component == "qkt") return 2.0 * d * qp * qp;
  if (component == "mprime") return 2.0 * d * qp * qp + d * qp;
  if (component == "m") return 2.0 * d * qp;
  if (component == "ffn") return 4.0 * d * dp;
  throw DomainError("predict_flops: unknown component '" + component + "'");
}

inline std::int64_t component_params(const std::string& component, const CostParams& p) {
  if (component == "lmu_qkv") return 3 * p.q * p.q_prime;
  if (component == "m") return p.q_prime;
  if (component == "ffn") return 2 * p.d * p.d_prime;
  if (component == "qkt" || component == "mprime" || component == "L_SS" || component == "L_RK" ||
      component == "L_FFT" || component == "C")
    return 0;
  throw DomainError("component_params: unknown component '" + component + "'");
}

// ---------------------------------------------------------------------------
// Instrumented measurements. The counter must already be enabled (StateError
// otherwise); inputs are built deterministically from a fixed seed with
// counting paused. Sequence components are normalized per token; the
// single-step components (qkt, mprime, m) and the raw transform C are
// per-token costs already.
// ---------------------------------------------------------------------------

template <typename T = double>
double measure_flops(const std::string& component, const CostParams& p) {
  if (!flop_counter().enabled())
    throw StateError("measure_flops: FlopCounter is not enabled");
  std::mt19937_64 rng(42);

  auto system = [&] {
    FlopPause pause;
    const auto cs = build_continuous<T>(LmuConfig::make(static_cast<double>(p.n), p.q, p.q_prime));
    return discretize_zoh(cs);
  };

  const std::int64_t start = flop_counter().total();
  if (component == "L_SS") {
    const auto sys = system();
    Tensor<T> x;
    {
      FlopPause pause;
      x = Tensor<T>::randn(Shape{p.n, p.d}, rng);
    }
    state_space_scan(sys, x, [](std::int64_t, const std::vector<T>&) {});
    return static_cast<double>(flop_counter().total() - start) / static_cast<double>(p.n);
  }
  if (component == "L_RK") {
    ContinuousSystem<T> cs;
    Tensor<T> x;
    {
      FlopPause pause;
      cs = build_continuous<T>(LmuConfig::make(static_cast<double>(p.n), p.q, p.q_prime));
      x = Tensor<T>::randn(Shape{p.n, p.d}, rng, 0.1);
    }
    run_rk(cs, x, p.r);
    return static_cast<double>(flop_counter().total() - start) / static_cast<double>(p.n);
  }
  if (component == "L_FFT") {
    const auto sys = system();
    ImpulseResponse<T> imp;
    Tensor<T> x;
    {
      FlopPause pause;
      imp = impulse_response(sys, p.n);
      imp.kernel();
      x = Tensor<T>::randn(Shape{p.n, p.d}, rng);
    }
    run_fft_conv(imp, x);
    return static_cast<double>(flop_counter().total() - start) / static_cast<double>(p.n);
  }
  if (component == "C") {
    ComplexVector<T> v(p.n);
    {
      FlopPause pause;
      std::normal_distribution<double> dist;
      for (std::int64_t i = 0; i < p.n; ++i)
        v[i] = {static_cast<T>(dist(rng)), static_cast<T>(dist(rng))};
    }
    fft(v);
    return static_cast<double>(flop_counter().total() - start);
  }
  if (component == "lmu_qkv") {
    const auto sys = system();
    ImpulseResponse<T> imp;
    Tensor<T> x, l1, l2, l3;
    {
      FlopPause pause;
      imp = impulse_response(sys, p.n);
      x = Tensor<T>::randn(Shape{p.n, p.d}, rng);
      l1 = Tensor<T>::randn(Shape{p.q_prime, p.q}, rng);
      l2 = Tensor<T>::randn(Shape{p.q_prime, p.q}, rng);
      l3 = Tensor<T>::randn(Shape{p.q_prime, p.q}, rng);
    }
    for (const Tensor<T>* l : {&l1, &l2, &l3}) {
      const Tensor<T> reduced = reduce_impulse(*l, imp);  // 2qq'n, amortized to 2qq'
      gelu(ConvKernel<T>::prepare(reduced).apply(x));
    }
    return static_cast<double>(flop_counter().total() - start) / static_cast<double>(p.n);
  }
  if (component == "qkt" || component == "mprime" || component == "m") {
    Tensor<T> qm, km, vm, scores, pvec;
    {
      FlopPause pause;
      qm = Tensor<T>::randn(Shape{p.q_prime, p.d}, rng);
      km = Tensor<T>::randn(Shape{p.q_prime, p.d}, rng);
      vm = Tensor<T>::randn(Shape{p.q_prime, p.d}, rng);
      scores = Tensor<T>::randn(Shape{p.q_prime, p.q_prime}, rng);
      pvec = Tensor<T>::randn(Shape{1, p.q_prime}, rng);
    }
    if (component == "qkt") {
      matmul_nt(qm, km);
    } else if (component == "mprime") {
      matmul(softmax_rows(scores), vm);
    } else {
      matmul(pvec, vm);
    }
    return static_cast<double>(flop_counter().total() - start);
  }
  if (component == "ffn") {
    FfnParams<T> params;
    Tensor<T> x;
    {
      FlopPause pause;
      params = FfnParams<T>::init(p.d, p.d_prime, rng, 0.02);
      x = Tensor<T>::randn(Shape{p.n, p.d}, rng);
    }
    ffn(x, params);
    return static_cast<double>(flop_counter().total() - start) / static_cast<double>(p.n);
  }
  throw DomainError("measure_flops: unknown component '" + component + "'");
}

// ---------------------------------------------------------------------------
// Cost report: analytic vs measured per layer component, plus the backend
// alternatives for the LMU itself.
// ---------------------------------------------------------------------------

struct CostRow {
  std::string name;
  std::int64_t params = 0;
  double analytic = 0.0;
  double measured = 0.0;
  double ratio = 0.0;
};

struct CostReport {
  CostParams cfg;
  std::vector<CostRow> layer_rows;    // lmu_qkv, qkt, mprime, m, ffn
  std::vector<CostRow> backend_rows;  // L_SS, L_RK, L_FFT, C
  double analytic_total = 0.0;
  double measured_total = 0.0;
};

template <typename T = double>
CostReport build_cost_report(const CostParams& p) {
  CostReport report;
  report.cfg = p;
  FlopScope scope;
  auto row = [&](const std::string& name) {
    CostRow r;
    r.name = name;
    r.params = component_params(name, p);
    r.analytic = predict_flops(name, p);
    r.measured = measure_flops<T>(name, p);
    r.ratio = r.measured / r.analytic;
    return r;
  };
  for (const char* name : {"lmu_qkv", "qkt", "mprime", "m", "ffn"}) {
    report.layer_rows.push_back(row(name));
    report.analytic_total += report.layer_rows.back().analytic;
    report.measured_total += report.layer_rows.back().measured;
  }
  for (const char* name : {"L_SS", "L_RK", "L_FFT", "C"}) report.backend_rows.push_back(row(name));
  return report;
}

// ---------------------------------------------------------------------------
// Complexity-scaling sweep (per sequence, not per token). Memory is reported
// as counted live values of each backend's working buffers: the recurrent
// scan holds only its state (independent of n), the FFT backend holds the
// output and kernel spectra (linear in n), full attention holds the n x n
// score matrix.
// ---------------------------------------------------------------------------

struct SweepPoint {
  std::string backend;
  std::int64_t n = 0;
  double flops = 0.0;
  double peak_live = 0.0;
};

struct ScalingReport {
  std::vector<SweepPoint> points;
  std::vector<std::pair<std::string, double>> compute_slopes;
};

template <typename T = double>
ScalingReport scaling_sweep(const std::vector<std::string>& backends,
                            const std::vector<std::int64_t>& ns, std::int64_t d, std::int64_t q) {
  ScalingReport report;
  std::mt19937_64 rng(7);
  for (const auto& backend : backends) {
    std::vector<std::pair<double, double>> pts;
    for (std::int64_t n : ns) {
      FlopScope scope;
      Tensor<T> x;
      double peak = 0.0;
      {
        FlopPause pause;
        x = Tensor<T>::randn(Shape{n, d}, rng, 0.05);
      }
      if (backend == "attention") {
        GlobalAttentionParams<T> params;
        {
          FlopPause pause;
          params = GlobalAttentionParams<T>::init(d, rng, 0.02);
        }
        global_causal_attention(x, params);
        peak = static_cast<double>(n) * static_cast<double>(n) + 5.0 * static_cast<double>(n * d);
      } else if (backend == "ss") {
        DiscreteSystem<T> sys;
        {
          FlopPause pause;
          sys = discretize_zoh(build_continuous<T>(LmuConfig::make(static_cast<double>(n), q)));
        }
        state_space_scan(sys, x, [](std::int64_t, const std::vector<T>&) {});
        peak = static_cast<double>(2 * q * d);  // state + update buffer
      } else if (backend == "fft") {
        ImpulseResponse<T> imp;
        {
          FlopPause pause;
          const auto sys = discretize_zoh(build_continuous<T>(LmuConfig::make(static_cast<double>(n), q)));
          imp = impulse_response(sys, n);
          imp.kernel();
        }
        run_fft_conv(imp, x);
        const double nfft = static_cast<double>(imp.kernel().fft_length());
        peak = static_cast<double>(n * q * d) + static_cast<double>(q + 1) * (nfft / 2 + 1) * 2.0 +
               3.0 * nfft;
      } else {
        throw DomainError("scaling_sweep: unknown backend '" + backend +
                          "' (expected attention, ss or fft)");
      }
      const double flops = static_cast<double>(scope.total());
      report.points.push_back({backend, n, flops, peak});
      pts.emplace_back(static_cast<double>(n), flops);
    }
    report.compute_slopes.emplace_back(backend, log_log_slope(pts));
  }
  return report;
}

}  // namespace lmu
