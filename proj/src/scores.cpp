#include "nabi/scores.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "nabi/stats.hpp"

namespace nabi::eval {

PointScores point_scores(std::span<const double> estimates,
                         std::span<const double> truths) {
  if (estimates.size() != truths.size() || estimates.empty())
    throw std::invalid_argument("point_scores: need equal nonempty inputs");
  std::vector<double> sq(estimates.size()), ab(estimates.size());
  for (size_t i = 0; i < estimates.size(); ++i) {
    double e = estimates[i] - truths[i];
    sq[i] = e * e;
    ab[i] = std::abs(e);
  }
  return {std::sqrt(stats::median(std::move(sq))), stats::median(std::move(ab))};
}

double interval_score(double y_l, double y_u, double y, double alpha) {
  if (y_l > y_u) throw std::invalid_argument("interval_score: lower above upper");
  if (!(alpha > 0.0 && alpha < 1.0))
    throw std::invalid_argument("interval_score: alpha outside (0,1)");
  double s = y_u - y_l;
  if (y < y_l) s += 2.0 / alpha * (y_l - y);
  if (y > y_u) s += 2.0 / alpha * (y - y_u);
  return s;
}

double crps_empirical(std::span<const double> draws, double y) {
  size_t m = draws.size();
  if (m < 2) throw std::invalid_argument("crps_empirical: need at least 2 draws");
  // Sorting gives the pairwise term in O(m log m):
  // sum_ij |x_i - x_j| = 2 * sum_k (2k - m + 1) x_(k).
  std::vector<double> xs(draws.begin(), draws.end());
  std::sort(xs.begin(), xs.end());
  double term1 = 0.0, pair_sum = 0.0;
  for (size_t k = 0; k < m; ++k) {
    term1 += std::abs(xs[k] - y);
    pair_sum += (2.0 * static_cast<double>(k) - static_cast<double>(m) + 1.0) * xs[k];
  }
  double dm = static_cast<double>(m);
  return term1 / dm - pair_sum / (dm * dm);
}

double coverage(std::span<const std::array<double, 2>> intervals,
                std::span<const double> truths) {
  if (intervals.size() != truths.size() || intervals.empty())
    throw std::invalid_argument("coverage: need equal nonempty inputs");
  size_t hit = 0;
  for (size_t i = 0; i < truths.size(); ++i)
    if (truths[i] >= intervals[i][0] && truths[i] <= intervals[i][1]) ++hit;
  return static_cast<double>(hit) / static_cast<double>(truths.size());
}

}  // namespace nabi::eval
