#pragma once

#include <cstddef>
#include <functional>
#include <vector>

namespace nabi::stats {

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

double norm_pdf(double x);
double norm_logpdf(double x, double mu, double sigma);

// Standard normal CDF, accurate to ~1e-16 via erfc.
double norm_cdf(double x);

// Inverse standard normal CDF; absolute error below 1e-12 on the range
// corresponding to x in [-8, 8].
double norm_quantile(double p);

// Type-7 sample quantile (linear interpolation of order statistics).
// Input need not be sorted; p in [0, 1].
double quantile_type7(std::vector<double> xs, double p);

double median(std::vector<double> xs);

// Adaptive Simpson quadrature on [a, b] with absolute tolerance.
double integrate(const std::function<double(double)>& f, double a, double b,
                 double abs_tol, int max_depth = 50);

// One-sample Kolmogorov-Smirnov statistic of draws against a CDF.
double ks_statistic(std::vector<double> draws,
                    const std::function<double(double)>& cdf);

}  // namespace nabi::stats
