#pragma once

namespace xsell {

// Regularized incomplete beta I_x(a, b). Throws NumericError if the continued
// fraction fails to converge.
double incomplete_beta(double a, double b, double x);

// Regularized lower and upper incomplete gamma P(a, x), Q(a, x).
double gamma_p(double a, double x);
double gamma_q(double a, double x);

double student_t_cdf(double t, double df);
double student_t_sf(double t, double df);
double student_t_quantile(double p, double df);

double chi_squared_cdf(double x, double df);
double chi_squared_sf(double x, double df);
double chi_squared_quantile(double p, double df);

}  // namespace xsell
