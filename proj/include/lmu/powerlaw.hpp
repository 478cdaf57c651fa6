#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "lmu/tensor.hpp"

namespace lmu {

// ---------------------------------------------------------------------------
// Power-law fitting: loss(N) = (N / N_c)^(-alpha), fitted by least squares in
// log-log space. residual is the RMS log-space error of the fit.
// ---------------------------------------------------------------------------

struct PowerLawFit {
  double n_c = 0.0;
  double alpha = 0.0;
  double residual = 0.0;

  double loss_at(double n) const { return std::pow(n / n_c, -alpha); }
};

inline PowerLawFit fit_power_law(const std::vector<std::pair<double, double>>& points) {
  if (points.size() < 3)
    throw DomainError("fit_power_law: at least 3 points required, got " +
                      std::to_string(points.size()));
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const auto& [n, loss] : points) {
    if (n <= 0.0 || loss <= 0.0)
      throw DomainError("fit_power_law: N and loss must be positive");
    const double x = std::log(n), y = std::log(loss);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double m = static_cast<double>(points.size());
  const double denom = m * sxx - sx * sx;
  if (denom == 0.0) throw DomainError("fit_power_law: degenerate abscissae");
  const double slope = (m * sxy - sx * sy) / denom;  // = -alpha
  const double intercept = (sy - slope * sx) / m;    // = alpha * log(N_c)
  PowerLawFit fit;
  fit.alpha = -slope;
  if (fit.alpha <= 0.0)
    throw DomainError("fit_power_law: fitted exponent is non-positive (loss must decay with N)");
  fit.n_c = std::exp(intercept / fit.alpha);
  double ss = 0.0;
  for (const auto& [n, loss] : points) {
    const double r = std::log(loss) - (intercept + slope * std::log(n));
    ss += r * r;
  }
  fit.residual = std::sqrt(ss / m);
  return fit;
}

// ---------------------------------------------------------------------------
// Reference scaling curves (constants as published). The transformer curve
// has an additional data term (S / S_min)^(-0.76) that is only evaluated when
// the caller supplies the ratio explicitly.
// ---------------------------------------------------------------------------

struct ReferenceCurve {
  const char* name;
  double n_c;
  double alpha;
};

inline constexpr ReferenceCurve kReferenceCurves[] = {
    {"transformer", 6.5e13, 0.077},
    {"lstm", 7.45e14, 0.071},
    {"lmu", 1.95e14, 0.072},
    {"lmu_g", 3.80e14, 0.069},
};

inline constexpr double kTransformerDataExponent = 0.76;

inline const ReferenceCurve& reference_curve(const std::string& name) {
  for (const auto& c : kReferenceCurves)
    if (name == c.name) return c;
  throw DomainError("unknown reference curve '" + name +
                    "' (expected transformer, lstm, lmu or lmu_g)");
}

// Loss in nats at non-embedding parameter count N. s_ratio, when positive,
// adds the transformer data term s_ratio^(-0.76); it is ignored for the
// other curves.
inline double reference_loss(const std::string& name, double n, double s_ratio = 0.0) {
  if (n <= 0.0) throw DomainError("reference_loss: N must be positive");
  const ReferenceCurve& c = reference_curve(name);
  double loss = std::pow(n / c.n_c, -c.alpha);
  if (name == "transformer" && s_ratio > 0.0) loss += std::pow(s_ratio, -kTransformerDataExponent);
  return loss;
}

// ---------------------------------------------------------------------------
// Ordinary least squares slope of log(y) against log(x); used for the
// complexity-scaling reports.
// ---------------------------------------------------------------------------

inline double log_log_slope(const std::vector<std::pair<double, double>>& points) {
  if (points.size() < 2) throw DomainError("log_log_slope: at least 2 points required");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const auto& [x, y] : points) {
    if (x <= 0.0 || y <= 0.0) throw DomainError("log_log_slope: positive values required");
    const double lx = std::log(x), ly = std::log(y);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  const double m = static_cast<double>(points.size());
  return (m * sxy - sx * sy) / (m * sxx - sx * sx);
}

}  // namespace lmu
