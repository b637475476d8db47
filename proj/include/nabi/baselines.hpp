#pragma once

#include <functional>
#include <vector>

#include "nabi/models.hpp"
#include "nabi/rng.hpp"

namespace nabi::baselines {

using models::GenerativeModel;
using models::ParamTransform;
using ndiff::Tensor;

struct MhConfig {
  int64_t iterations = 24000;
  int64_t burn_in = 4000;
  int64_t retained = 1000;  // post-burn-in draws kept after thinning
  double proposal_std = 0.5;
  uint64_t seed = 0;
};

struct MhResult {
  std::vector<double> draws;  // on the constrained theta scale
  double acceptance_rate = 0.0;
  bool acceptance_warning = false;  // rate outside [0.05, 0.8]
};

// Metropolis acceptance for a symmetric proposal; u ~ Unif(0,1).
bool mh_accept(double log_target_current, double log_target_proposed, double u);

// Gaussian random walk on the logit-scale parameter with prior and Jacobian
// correction, initialised at the prior median.
MhResult metropolis_hastings(const GenerativeModel& model, const Tensor& z,
                             const MhConfig& cfg);

// Brute-force posterior on an even theta grid, trapezoid-normalised.
class GridPosterior {
 public:
  GridPosterior(const GenerativeModel& model, const Tensor& z, int grid_size = 2000);
  // Build from an arbitrary unnormalised log-density (used by ratio methods).
  GridPosterior(std::vector<double> grid, std::vector<double> log_density);

  double mean() const;
  double quantile(double p) const;
  double cdf(double theta) const;
  std::vector<double> sample(int n, Rng& rng) const;

  const std::vector<double>& grid() const { return grid_; }
  const std::vector<double>& density() const { return pdf_; }
  double log_normaliser() const { return log_norm_; }

 private:
  void normalise(std::vector<double> log_density);

  std::vector<double> grid_;
  std::vector<double> pdf_;
  std::vector<double> cdf_;  // cumulative trapezoid masses
  double log_norm_ = 0.0;
};

}  // namespace nabi::baselines
