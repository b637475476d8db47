#pragma once

#include <array>
#include <span>
#include <vector>

namespace nabi::eval {

// RMSPE = sqrt(median((est - truth)^2)), MAPE = median(|est - truth|).
// Medians, not means: the score distributions are heavily skewed.
struct PointScores {
  double rmspe = 0.0;
  double mape = 0.0;
};
PointScores point_scores(std::span<const double> estimates,
                         std::span<const double> truths);

// (1-alpha) interval score: width plus 2/alpha times the overshoot.
double interval_score(double y_l, double y_u, double y, double alpha);

// CRPS of the empirical CDF of `draws` against observation y, via
// (1/m) sum|x_i - y| - 1/(2 m^2) sum_ij |x_i - x_j|.
double crps_empirical(std::span<const double> draws, double y);

// Fraction of truths falling inside [lo, hi].
double coverage(std::span<const std::array<double, 2>> intervals,
                std::span<const double> truths);

}  // namespace nabi::eval
