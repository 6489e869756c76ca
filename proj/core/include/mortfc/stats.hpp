#pragma once

#include <span>
#include <vector>

namespace mortfc::stats {

/// Standard normal CDF.
double normal_cdf(double x);

/// Standard normal density.
double normal_pdf(double x);

/// Inverse standard normal CDF (Wichura's AS 241, double precision).
/// p must lie in (0, 1).
double normal_quantile(double p);

/// Regularized lower incomplete gamma P(a, x).
double gamma_p(double a, double x);

/// Chi-squared CDF with df degrees of freedom.
double chi_squared_cdf(double x, double df);

/// Chi-squared quantile; p in (0, 1), df > 0.
double chi_squared_quantile(double p, double df);

double mean(std::span<const double> xs);

/// Sample variance about the mean with the given divisor (defaults to n-1).
double variance(std::span<const double> xs, int divisor = -1);

/// Order-statistic quantile with linear interpolation (R type 7).
/// xs need not be sorted; p in [0, 1].
double empirical_quantile(std::span<const double> xs, double p);

double median(std::span<const double> xs);

/// OLS fit y = a + b*x; returns {a, b}.
std::pair<double, double> linear_fit(std::span<const double> x, std::span<const double> y);

}  // namespace mortfc::stats
