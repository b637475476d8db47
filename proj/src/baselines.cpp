#include "nabi/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "nabi/stats.hpp"

namespace nabi::baselines {

bool mh_accept(double log_target_current, double log_target_proposed, double u) {
  if (log_target_proposed >= log_target_current) return true;
  return std::log(u) < log_target_proposed - log_target_current;
}

MhResult metropolis_hastings(const GenerativeModel& model, const Tensor& z,
                             const MhConfig& cfg) {
  if (!model.has_log_likelihood())
    throw std::invalid_argument("metropolis_hastings: model has no likelihood");
  if (cfg.iterations <= cfg.burn_in)
    throw std::invalid_argument("metropolis_hastings: iterations must exceed burn-in");
  if (cfg.retained < 1) throw std::invalid_argument("metropolis_hastings: retained < 1");

  ParamTransform tf = ParamTransform::logit_scale(model.theta_lo(), model.theta_hi());
  auto log_target = [&](double t) {
    double theta = tf.inverse(t);
    return model.log_likelihood(z, theta) + model.log_prior(theta) +
           tf.log_jacobian_inverse(t);
  };

  Rng rng(cfg.seed);
  double t_cur = tf.forward(0.5 * (model.theta_lo() + model.theta_hi()));
  double lp_cur = log_target(t_cur);

  int64_t kept_span = cfg.iterations - cfg.burn_in;
  int64_t thin = std::max<int64_t>(1, kept_span / cfg.retained);

  MhResult out;
  out.draws.reserve(static_cast<size_t>(cfg.retained));
  int64_t accepted = 0;
  for (int64_t it = 0; it < cfg.iterations; ++it) {
    double t_prop = t_cur + cfg.proposal_std * rng.normal();
    double lp_prop = log_target(t_prop);
    double u = rng.uniform01();
    if (mh_accept(lp_cur, lp_prop, u)) {
      t_cur = t_prop;
      lp_cur = lp_prop;
      ++accepted;
    }
    int64_t k = it - cfg.burn_in;
    if (k >= 0 && (k % thin) == thin - 1 &&
        static_cast<int64_t>(out.draws.size()) < cfg.retained)
      out.draws.push_back(tf.inverse(t_cur));
  }
  out.acceptance_rate = static_cast<double>(accepted) / static_cast<double>(cfg.iterations);
  out.acceptance_warning = out.acceptance_rate < 0.05 || out.acceptance_rate > 0.8;
  return out;
}

GridPosterior::GridPosterior(const GenerativeModel& model, const Tensor& z,
                             int grid_size) {
  if (!model.has_log_likelihood())
    throw std::invalid_argument("grid_posterior: model has no likelihood");
  if (grid_size < 2) throw std::invalid_argument("grid_posterior: grid size < 2");
  double lo = model.theta_lo(), hi = model.theta_hi();
  double eps = 1e-6 * (hi - lo);
  grid_.resize(static_cast<size_t>(grid_size));
  std::vector<double> logd(static_cast<size_t>(grid_size));
  for (int k = 0; k < grid_size; ++k) {
    double theta = lo + eps + (hi - lo - 2 * eps) * static_cast<double>(k) /
                                  static_cast<double>(grid_size - 1);
    grid_[static_cast<size_t>(k)] = theta;
    double v = model.log_likelihood(z, theta) + model.log_prior(theta);
    if (!std::isfinite(v))
      throw std::runtime_error("grid_posterior: non-finite log-likelihood at theta=" +
                               std::to_string(theta));
    logd[static_cast<size_t>(k)] = v;
  }
  normalise(std::move(logd));
}

GridPosterior::GridPosterior(std::vector<double> grid, std::vector<double> log_density) {
  if (grid.size() != log_density.size() || grid.size() < 2)
    throw std::invalid_argument("grid_posterior: inconsistent grid");
  grid_ = std::move(grid);
  normalise(std::move(log_density));
}

void GridPosterior::normalise(std::vector<double> log_density) {
  size_t n = grid_.size();
  double mx = *std::max_element(log_density.begin(), log_density.end());
  pdf_.resize(n);
  for (size_t i = 0; i < n; ++i) pdf_[i] = std::exp(log_density[i] - mx);
  double mass = 0.0;
  for (size_t i = 0; i + 1 < n; ++i)
    mass += 0.5 * (pdf_[i] + pdf_[i + 1]) * (grid_[i + 1] - grid_[i]);
  if (!(mass > 0.0))
    throw std::runtime_error("grid_posterior: density vanished on the whole grid");
  log_norm_ = std::log(mass) + mx;
  for (double& v : pdf_) v /= mass;
  cdf_.assign(n, 0.0);
  for (size_t i = 0; i + 1 < n; ++i)
    cdf_[i + 1] = cdf_[i] + 0.5 * (pdf_[i] + pdf_[i + 1]) * (grid_[i + 1] - grid_[i]);
}

double GridPosterior::mean() const {
  double m = 0.0;
  for (size_t i = 0; i + 1 < grid_.size(); ++i) {
    double f0 = grid_[i] * pdf_[i], f1 = grid_[i + 1] * pdf_[i + 1];
    m += 0.5 * (f0 + f1) * (grid_[i + 1] - grid_[i]);
  }
  return m;
}

double GridPosterior::cdf(double theta) const {
  if (theta <= grid_.front()) return 0.0;
  if (theta >= grid_.back()) return 1.0;
  auto it = std::upper_bound(grid_.begin(), grid_.end(), theta);
  size_t i = static_cast<size_t>(it - grid_.begin()) - 1;
  double h = theta - grid_[i];
  double w = grid_[i + 1] - grid_[i];
  double p1 = pdf_[i] + (pdf_[i + 1] - pdf_[i]) * h / w;
  return cdf_[i] + 0.5 * (pdf_[i] + p1) * h;
}

double GridPosterior::quantile(double p) const {
  if (!(p >= 0.0 && p <= 1.0)) throw std::domain_error("quantile: p outside [0,1]");
  double target = p * cdf_.back();
  auto it = std::lower_bound(cdf_.begin(), cdf_.end(), target);
  if (it == cdf_.begin()) return grid_.front();
  if (it == cdf_.end()) return grid_.back();
  size_t i = static_cast<size_t>(it - cdf_.begin());
  // Invert the quadratic trapezoid segment [i-1, i] by bisection.
  double lo = grid_[i - 1], hi = grid_[i];
  for (int k = 0; k < 60; ++k) {
    double mid = 0.5 * (lo + hi);
    if (cdf(mid) < target)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

std::vector<double> GridPosterior::sample(int n, Rng& rng) const {
  if (n < 1) throw std::invalid_argument("sample: n must be >= 1");
  std::vector<double> out(static_cast<size_t>(n));
  for (double& v : out) v = quantile(rng.uniform01());
  return out;
}

}  // namespace nabi::baselines
