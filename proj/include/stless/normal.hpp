#pragma once

#include <cmath>
#include <limits>
#include <numbers>

namespace stless::normal {

inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;

inline double pdf(double x) { return std::exp(-0.5 * x * x - kLogSqrt2Pi); }
inline double log_pdf(double x) { return -0.5 * x * x - kLogSqrt2Pi; }

// erfc keeps full relative precision in both tails.
inline double cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }
inline double sf(double x) { return 0.5 * std::erfc(x / std::numbers::sqrt2); }

/// log(1 - Phi(x)), stable for large x via the Mills-ratio continued fraction.
inline double log_sf(double x) {
  if (x < 30.0) return std::log(sf(x));
  double frac = 0.0;
  for (int k = 60; k >= 1; --k) frac = k / (x + frac);
  return log_pdf(x) - std::log(x + frac);
}

inline double log_cdf(double x) { return log_sf(-x); }

/// Inverse of cdf. Acklam's rational approximation plus one Newton step.
inline double quantile(double p) {
  if (!(p > 0.0)) return p == 0.0 ? -std::numeric_limits<double>::infinity() : std::numeric_limits<double>::quiet_NaN();
  if (!(p < 1.0)) return p == 1.0 ? std::numeric_limits<double>::infinity() : std::numeric_limits<double>::quiet_NaN();

  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                 1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                 6.680131188771972e+01,  -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                 -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                 3.754408661907416e+00};
  constexpr double lo = 0.02425;

  double x;
  if (p < lo) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - lo) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  // Newton on the side whose tail probability is small, so the residual keeps precision.
  const double dens = pdf(x);
  if (dens > 0.0) x -= (p <= 0.5 ? cdf(x) - p : (1.0 - p) - sf(x)) / dens;
  return x;
}

/// Quantile of the upper tail: x with sf(x) = q. Precise for tiny q.
inline double isf(double q) { return -quantile(q); }

}  // namespace stless::normal
