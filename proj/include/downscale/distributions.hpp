#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace downscale {

/// Standard normal CDF.
inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

namespace detail {

// Lower-half standard normal quantile, p in (0, 0.5]. Acklam's rational
// approximation (rel. error ~1e-9) followed by one Halley step against erfc.
inline double normal_quantile_lower(double p) {
  constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                          1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                          6.680131188771972e+01,  -1.328068155288572e+01};
  constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                          -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                          3.754408661907416e+00};
  double x;
  if (p < 0.02425) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  }
  const double e = normal_cdf(x) - p;
  const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

}  // namespace detail

/// Standard normal quantile given both tail probabilities (lower = p,
/// upper = 1 - p); the smaller one is used so far-upper quantiles keep
/// full precision.
inline double normal_quantile(double lower, double upper) {
  if (lower <= 0.0) return -std::numeric_limits<double>::infinity();
  if (upper <= 0.0) return std::numeric_limits<double>::infinity();
  if (lower <= 0.5) return detail::normal_quantile_lower(lower);
  return -detail::normal_quantile_lower(upper);
}

inline double normal_quantile(double p) { return normal_quantile(p, 1.0 - p); }

struct BetaLaw {
  double alpha = 1.0;
  double beta = 1.0;
};

struct LogNormalLaw {
  double mu_log = 0.0;
  double sigma_log = 0.0;
};

namespace detail {

// Continued fraction for the incomplete beta function (modified Lentz).
inline double beta_continued_fraction(double a, double b, double x) {
  constexpr double tiny = 1e-300;
  constexpr double eps = 1e-16;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 20000; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < eps) break;
  }
  return h;
}

}  // namespace detail

/// Regularized incomplete beta function and its inverse for one (a, b).
///
/// The quantile is a bracketed, safeguarded Newton iteration on
/// log I_x(a,b) in log x, solved on the lower half (x <= 1/2) and mirrored
/// through I_x(a,b) = 1 - I_{1-x}(b,a) otherwise. Working in logs keeps the
/// near-degenerate laws (a, b << 1) produced by the variance ceiling
/// accurate: their quantiles reach far below the smallest normal double.
class BetaDistribution {
 public:
  BetaDistribution(double a, double b)
      : a_(a), b_(b), log_beta_(std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b)) {
    half_ = cdf(0.5);
  }
  explicit BetaDistribution(BetaLaw law) : BetaDistribution(law.alpha, law.beta) {}

  double alpha() const noexcept { return a_; }
  double beta() const noexcept { return b_; }

  double cdf(double x) const {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    if (x < (a_ + 1.0) / (a_ + b_ + 2.0)) return std::exp(log_lower(a_, b_, x, std::log(x)));
    return 1.0 - std::exp(log_lower(b_, a_, 1.0 - x, std::log1p(-x)));
  }

  /// Quantile for lower tail probability `lower` with complement `upper`.
  double quantile(double lower, double upper) const {
    if (lower <= 0.0) return 0.0;
    if (upper <= 0.0) return 1.0;
    if (lower <= half_) return solve_lower(a_, b_, lower);
    return 1.0 - solve_lower(b_, a_, upper);
  }
  double quantile(double p) const { return quantile(p, 1.0 - p); }

 private:
  // log I_x(a,b) via the continued fraction; valid for x < (a+1)/(a+b+2).
  double log_lower(double a, double b, double x, double log_x) const {
    return a * log_x + b * std::log1p(-x) - log_beta_ - std::log(a) +
           std::log(detail::beta_continued_fraction(a, b, x));
  }

  // log I_x(a,b) for x = exp(y) <= 1/2, valid for either parameter order.
  double log_cdf_at(double a, double b, double y) const {
    const double x = std::exp(y);
    if (x < (a + 1.0) / (a + b + 2.0)) return log_lower(a, b, x, y);
    return std::log1p(-std::exp(log_lower(b, a, 1.0 - x, std::log1p(-x))));
  }

  // Solves I_x(a,b) = v over x in (0, 1/2], assuming v <= I_{1/2}(a,b).
  double solve_lower(double a, double b, double v) const {
    constexpr double log_half = -std::numbers::ln2;
    const double log_v = std::log(v);
    double y;
    if (a + b > 4.0) {
      const double mean = a / (a + b);
      const double sd = std::sqrt(a * b / ((a + b) * (a + b) * (a + b + 1.0)));
      const double x0 = mean + sd * normal_quantile(v);
      y = x0 > 0.0 ? std::log(x0) : (log_v + std::log(a) + log_beta_) / a;
    } else {
      // Leading term of the lower tail: I_x ~ x^a / (a B(a,b)).
      y = (log_v + std::log(a) + log_beta_) / a;
    }
    y = std::min(y, log_half);
    // Far below the normal range the leading term is exact to double precision.
    if (y < -745.0) return 0.0;

    double lo = -std::numeric_limits<double>::infinity();
    double hi = log_half;
    for (int iter = 0; iter < 200; ++iter) {
      const double log_i = log_cdf_at(a, b, y);
      const double h = log_i - log_v;
      if (h == 0.0) break;
      if (h > 0.0)
        hi = std::min(hi, y);
      else
        lo = std::max(lo, y);
      // d log I / d log x = x f(x) / I(x)
      const double slope =
          std::exp(a * y + (b - 1.0) * std::log1p(-std::exp(y)) - log_beta_ - log_i);
      double next = y - h / slope;
      if (!std::isfinite(next) || next >= hi || next <= lo) {
        if (std::isfinite(lo))
          next = 0.5 * (lo + hi);
        else
          next = y - std::max(1.0, std::abs(y));
      }
      const double step = std::abs(next - y);
      y = next;
      if (step <= 1e-14 * std::max(1.0, std::abs(y))) break;
      if (std::isfinite(lo) && hi - lo <= 1e-15 * std::max(1.0, std::abs(y))) break;
    }
    return std::exp(y);
  }

  double a_, b_, log_beta_, half_ = 0.5;
};

inline double lognormal_quantile(const LogNormalLaw& law, double lower, double upper) {
  if (law.sigma_log == 0.0) return std::exp(law.mu_log);
  return std::exp(law.mu_log + law.sigma_log * normal_quantile(lower, upper));
}

inline double lognormal_cdf(const LogNormalLaw& law, double x) {
  if (x <= 0.0) return 0.0;
  if (law.sigma_log == 0.0) return x >= std::exp(law.mu_log) ? 1.0 : 0.0;
  return normal_cdf((std::log(x) - law.mu_log) / law.sigma_log);
}

}  // namespace downscale
