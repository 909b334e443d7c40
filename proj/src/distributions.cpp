#include "xsell/distributions.hpp"

#include <fmt/format.h>

#include <cmath>
#include <limits>

#include "xsell/error.hpp"

namespace xsell {

namespace {

constexpr int kMaxIterations = 1000;
constexpr double kEpsilon = 1e-15;
constexpr double kTiny = 1e-300;

// Modified Lentz evaluation of the incomplete beta continued fraction.
double beta_fraction(double a, double b, double x) {
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIterations; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEpsilon) return h;
  }
  throw NumericError(fmt::format("incomplete beta did not converge (a={}, b={}, x={})", a, b, x));
}

double gamma_series(double a, double x) {
  double ap = a;
  double sum = 1.0 / a;
  double del = sum;
  for (int n = 0; n < kMaxIterations; ++n) {
    ap += 1.0;
    del *= x / ap;
    sum += del;
    if (std::abs(del) < std::abs(sum) * kEpsilon) {
      return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
    }
  }
  throw NumericError(fmt::format("incomplete gamma series did not converge (a={}, x={})", a, x));
}

double gamma_fraction(double a, double x) {
  double b = x + 1.0 - a;
  double c = 1.0 / kTiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i <= kMaxIterations; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < kTiny) d = kTiny;
    c = b + an / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEpsilon) return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
  }
  throw NumericError(fmt::format("incomplete gamma fraction did not converge (a={}, x={})", a, x));
}

void check_df(double df) {
  if (!(df > 0.0) || !std::isfinite(df)) {
    throw NumericError(fmt::format("degrees of freedom must be positive, got {}", df));
  }
}

template <class Cdf>
double bisect_quantile(double p, double lo, double hi, Cdf cdf) {
  if (!(p > 0.0 && p < 1.0)) throw NumericError(fmt::format("quantile needs p in (0,1), got {}", p));
  while (cdf(hi) < p) {
    lo = hi;
    hi *= 2.0;
    if (hi > 1e300) throw NumericError("quantile search diverged");
  }
  while (cdf(lo) > p) {
    hi = lo;
    lo = lo < 0 ? lo * 2.0 : lo - 1.0;
    if (lo < -1e300) throw NumericError("quantile search diverged");
  }
  for (int i = 0; i < 200 && hi - lo > 1e-13 * std::max(1.0, std::abs(lo)); ++i) {
    const double mid = 0.5 * (lo + hi);
    (cdf(mid) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) throw NumericError("incomplete beta needs a, b > 0");
  if (std::isnan(x)) throw NumericError("incomplete beta of NaN");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double front =
      std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
               b * std::log1p(-x));
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_fraction(a, b, x) / a;
  return 1.0 - front * beta_fraction(b, a, 1.0 - x) / b;
}

double gamma_p(double a, double x) {
  if (!(a > 0.0)) throw NumericError("incomplete gamma needs a > 0");
  if (std::isnan(x)) throw NumericError("incomplete gamma of NaN");
  if (x <= 0.0) return 0.0;
  if (std::isinf(x)) return 1.0;
  return x < a + 1.0 ? gamma_series(a, x) : 1.0 - gamma_fraction(a, x);
}

double gamma_q(double a, double x) {
  if (!(a > 0.0)) throw NumericError("incomplete gamma needs a > 0");
  if (std::isnan(x)) throw NumericError("incomplete gamma of NaN");
  if (x <= 0.0) return 1.0;
  if (std::isinf(x)) return 0.0;
  return x < a + 1.0 ? 1.0 - gamma_series(a, x) : gamma_fraction(a, x);
}

double student_t_sf(double t, double df) {
  check_df(df);
  if (std::isnan(t)) throw NumericError("t statistic is NaN");
  if (std::isinf(t)) return t > 0 ? 0.0 : 1.0;
  const double tail = 0.5 * incomplete_beta(0.5 * df, 0.5, df / (df + t * t));
  return t >= 0 ? tail : 1.0 - tail;
}

double student_t_cdf(double t, double df) {
  check_df(df);
  if (std::isnan(t)) throw NumericError("t statistic is NaN");
  if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
  const double tail = 0.5 * incomplete_beta(0.5 * df, 0.5, df / (df + t * t));
  return t >= 0 ? 1.0 - tail : tail;
}

double student_t_quantile(double p, double df) {
  check_df(df);
  return bisect_quantile(p, -1.0, 1.0, [df](double t) { return student_t_cdf(t, df); });
}

double chi_squared_cdf(double x, double df) {
  check_df(df);
  return gamma_p(0.5 * df, 0.5 * x);
}

double chi_squared_sf(double x, double df) {
  check_df(df);
  return gamma_q(0.5 * df, 0.5 * x);
}

double chi_squared_quantile(double p, double df) {
  check_df(df);
  return bisect_quantile(p, 0.0, std::max(1.0, df),
                         [df](double x) { return chi_squared_cdf(x, df); });
}

}  // namespace xsell
