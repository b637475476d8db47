#include "nabi/models.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

#include "nabi/linalg.hpp"
#include "nabi/stats.hpp"
#include "nabi/tape.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace nabi::models {

const char* transform_name(ParamTransform::Kind k) {
  switch (k) {
    case ParamTransform::Kind::kIdentity: return "identity";
    case ParamTransform::Kind::kProbit: return "probit";
    case ParamTransform::Kind::kLogit: return "logit";
  }
  return "?";
}

namespace {

void check_interior(const ParamTransform& t, double theta) {
  if (!(theta > t.lo && theta < t.hi))
    throw std::domain_error("transform: value " + std::to_string(theta) +
                            " outside open interval (" + std::to_string(t.lo) + ", " +
                            std::to_string(t.hi) + ")");
}

double stable_softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

}  // namespace

double ParamTransform::forward(double theta) const {
  switch (kind) {
    case Kind::kIdentity:
      return theta;
    case Kind::kProbit:
      check_interior(*this, theta);
      return stats::norm_quantile((theta - lo) / (hi - lo));
    case Kind::kLogit:
      check_interior(*this, theta);
      return std::log((theta - lo) / (hi - theta));
  }
  return theta;
}

double ParamTransform::inverse(double t) const {
  switch (kind) {
    case Kind::kIdentity:
      return t;
    case Kind::kProbit:
      return lo + (hi - lo) * stats::norm_cdf(t);
    case Kind::kLogit: {
      double s = t >= 0.0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
      return lo + (hi - lo) * s;
    }
  }
  return t;
}

double ParamTransform::log_jacobian_forward(double theta) const {
  switch (kind) {
    case Kind::kIdentity:
      return 0.0;
    case Kind::kProbit: {
      check_interior(*this, theta);
      double t = forward(theta);
      return -std::log(hi - lo) - std::log(stats::norm_pdf(t));
    }
    case Kind::kLogit:
      check_interior(*this, theta);
      return std::log(hi - lo) - std::log(theta - lo) - std::log(hi - theta);
  }
  return 0.0;
}

double ParamTransform::log_jacobian_inverse(double t) const {
  switch (kind) {
    case Kind::kIdentity:
      return 0.0;
    case Kind::kProbit:
      return std::log(hi - lo) + std::log(stats::norm_pdf(t));
    case Kind::kLogit:
      return std::log(hi - lo) - stable_softplus(t) - stable_softplus(-t);
  }
  return 0.0;
}

double GenerativeModel::log_likelihood(const Tensor&, double) const {
  throw std::logic_error("model '" + id() + "' has no tractable likelihood");
}

double GenerativeModel::log_likelihood_grad(const Tensor& z, double theta,
                                            double* dtheta) const {
  const double h = 1e-6;
  double lp = log_likelihood(z, theta + h);
  double lm = log_likelihood(z, theta - h);
  if (dtheta) *dtheta = (lp - lm) / (2.0 * h);
  return log_likelihood(z, theta);
}

GpExpModel::GpExpModel(int grid, double theta_hi)
    : id_("gp" + std::to_string(grid)), grid_(grid), n_(grid * grid), hi_(theta_hi) {
  if (grid < 1) throw std::invalid_argument("GpExpModel: grid must be >= 1");
  // Distances take few unique values on a lattice; tabulate them once so a
  // covariance build needs one exp() per unique value.
  std::map<int64_t, uint16_t> seen;  // dr^2*4096 + dc^2 -> index (dr,dc < 64)
  dist_idx_.assign(static_cast<size_t>(n_) * n_, 0);
  double h = 1.0 / static_cast<double>(grid);
  for (int i = 0; i < n_; ++i) {
    int ri = i / grid, ci = i % grid;
    for (int j = 0; j < n_; ++j) {
      int rj = j / grid, cj = j % grid;
      int64_t dr = std::abs(ri - rj), dc = std::abs(ci - cj);
      int64_t key = dr * dr * 4096 + dc * dc;
      auto it = seen.find(key);
      uint16_t idx;
      if (it == seen.end()) {
        idx = static_cast<uint16_t>(dist_.size());
        seen.emplace(key, idx);
        dist_.push_back(h * std::sqrt(static_cast<double>(dr * dr + dc * dc)));
      } else {
        idx = it->second;
      }
      dist_idx_[static_cast<size_t>(i) * n_ + j] = idx;
    }
  }
}

double GpExpModel::sample_prior(Rng& rng) const {
  double t = rng.uniform(0.0, hi_);
  return std::clamp(t, 1e-6, hi_ - 1e-6);
}

double GpExpModel::log_prior(double theta) const {
  if (theta <= 0.0 || theta >= hi_) return -std::numeric_limits<double>::infinity();
  return -std::log(hi_);
}

void GpExpModel::covariance(double theta, std::vector<double>& sigma) const {
  if (!(theta > 0.0)) throw std::domain_error("exp_covariance: theta must be > 0");
  std::vector<double> e(dist_.size());
  for (size_t u = 0; u < dist_.size(); ++u) e[u] = std::exp(-dist_[u] / theta);
  sigma.resize(static_cast<size_t>(n_) * n_);
  for (size_t k = 0; k < sigma.size(); ++k) sigma[k] = e[dist_idx_[k]];
}

void GpExpModel::chol_covariance(double theta, std::vector<double>& L) const {
  std::vector<double> base;
  covariance(theta, base);
  L = base;
  if (linalg::cholesky(L.data(), n_)) return;
  for (double jitter = 1e-10 * n_; jitter <= 1e-6 * 1.0000001; jitter *= 10.0) {
    L = base;
    for (int i = 0; i < n_; ++i) L[static_cast<size_t>(i) * n_ + i] += jitter;
    if (linalg::cholesky(L.data(), n_)) return;
  }
  throw std::runtime_error("GpExpModel: Cholesky failed even after jitter escalation");
}

Tensor GpExpModel::simulate(double theta, Rng& rng) const {
  if (!(theta > 0.0 && theta < hi_))
    throw std::domain_error("simulate_gp: theta outside (0, " + std::to_string(hi_) + ")");
  std::vector<double> L;
  chol_covariance(theta, L);
  std::vector<double> eps(static_cast<size_t>(n_));
  for (double& v : eps) v = rng.normal();
  Tensor z({grid_, grid_});
  for (int i = 0; i < n_; ++i) {
    const double* __restrict row = L.data() + static_cast<size_t>(i) * n_;
    double s = 0.0;
    for (int p = 0; p <= i; ++p) s += row[p] * eps[static_cast<size_t>(p)];
    z.values[static_cast<size_t>(i)] = s;
  }
  return z;
}

double GpExpModel::log_likelihood(const Tensor& z, double theta) const {
  if (!(theta > 0.0 && theta < hi_))
    throw std::domain_error("gp_log_likelihood: theta outside (0, " + std::to_string(hi_) + ")");
  if (z.numel() != n_)
    throw ndiff::ShapeError("gp_log_likelihood: field has " + std::to_string(z.numel()) +
                            " entries, expected " + std::to_string(n_));
  std::vector<double> L;
  chol_covariance(theta, L);
  std::vector<double> v = z.values;
  linalg::forward_sub(L.data(), n_, v.data());
  double quad = 0.0;
  for (double x : v) quad += x * x;
  return -0.5 * (n_ * stats::kLog2Pi + linalg::chol_logdet(L.data(), n_) + quad);
}

double GpExpModel::log_likelihood_grad(const Tensor& z, double theta, double* dtheta) const {
  if (!(theta > 0.0 && theta < hi_))
    throw std::domain_error("gp_log_likelihood: theta outside (0, " + std::to_string(hi_) + ")");
  std::vector<double> sigma;
  covariance(theta, sigma);
  std::vector<double> L;
  chol_covariance(theta, L);

  std::vector<double> a = z.values;  // a = Sigma^-1 z
  linalg::forward_sub(L.data(), n_, a.data());
  double quad = 0.0;
  for (double x : a) quad += x * x;
  double ll = -0.5 * (n_ * stats::kLog2Pi + linalg::chol_logdet(L.data(), n_) + quad);
  linalg::backward_sub_t(L.data(), n_, a.data());

  std::vector<double> sinv(static_cast<size_t>(n_) * n_);
  linalg::spd_inverse_from_chol(L.data(), n_, sinv.data());

  // dSigma/dtheta = (dist/theta^2) .* Sigma
  double inv_t2 = 1.0 / (theta * theta);
  double quad_term = 0.0, trace_term = 0.0;
  for (int i = 0; i < n_; ++i) {
    const double* __restrict srow = sigma.data() + static_cast<size_t>(i) * n_;
    const double* __restrict vrow = sinv.data() + static_cast<size_t>(i) * n_;
    const uint16_t* __restrict irow = dist_idx_.data() + static_cast<size_t>(i) * n_;
    double ai = a[static_cast<size_t>(i)];
    double qa = 0.0, tr = 0.0;
    for (int j = 0; j < n_; ++j) {
      double b = dist_[irow[j]] * inv_t2 * srow[j];
      qa += b * a[static_cast<size_t>(j)];
      tr += vrow[j] * b;
    }
    quad_term += ai * qa;
    trace_term += tr;
  }
  if (dtheta) *dtheta = 0.5 * quad_term - 0.5 * trace_term;
  return ll;
}

std::vector<double> exp_covariance(double theta,
                                   const std::vector<std::array<double, 2>>& sites) {
  if (!(theta > 0.0)) throw std::domain_error("exp_covariance: theta must be > 0");
  if (sites.empty()) throw std::invalid_argument("exp_covariance: no sites");
  size_t n = sites.size();
  std::vector<double> sigma(n * n);
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = 0; j <= i; ++j) {
      double dx = sites[i][0] - sites[j][0];
      double dy = sites[i][1] - sites[j][1];
      double v = std::exp(-std::sqrt(dx * dx + dy * dy) / theta);
      sigma[i * n + j] = v;
      sigma[j * n + i] = v;
    }
  }
  return sigma;
}

double ToyNormalModel::sample_prior(Rng& rng) const {
  return std::clamp(rng.uniform01(), 1e-6, 1.0 - 1e-6);
}

Tensor ToyNormalModel::simulate(double theta, Rng& rng) const {
  return Tensor({1}, {theta + theta * rng.normal()});
}

double ToyNormalModel::log_likelihood(const Tensor& z, double theta) const {
  if (!(theta > 0.0 && theta < 1.0))
    throw std::domain_error("toy model: theta outside (0, 1)");
  return stats::norm_logpdf(z.values[0], theta, theta);
}

double ToyNormalModel::log_prior(double theta) const {
  if (theta <= 0.0 || theta >= 1.0) return -std::numeric_limits<double>::infinity();
  return 0.0;
}

double ToyNormalModel::evidence(double z) const {
  auto f = [z](double t) {
    if (t <= 0.0) return 0.0;
    return std::exp(stats::norm_logpdf(z, t, t));
  };
  // The integrand can spike near theta ~ |z|; split the range so the
  // adaptive rule sees each regime.
  const double az = std::min(std::abs(z), 0.9);
  std::vector<double> knots = {0.0, 1e-5, 1e-3, 0.05 * az, 0.5 * az, az, 1.0};
  std::sort(knots.begin(), knots.end());
  knots.erase(std::unique(knots.begin(), knots.end()), knots.end());
  double total = 0.0;
  for (size_t k = 0; k + 1 < knots.size(); ++k) {
    if (knots[k + 1] <= knots[k]) continue;
    total += stats::integrate(f, knots[k], knots[k + 1], 1e-11);
  }
  return total;
}

double ToyNormalModel::bayes_classifier(double theta, double z) const {
  if (!(theta > 0.0 && theta < 1.0))
    throw std::domain_error("bayes_classifier: theta outside (0, 1)");
  double lik = std::exp(log_likelihood(Tensor({1}, {z}), theta));
  double ev = evidence(z);
  return lik / (lik + ev);
}

double ConjugateNormalModel::log_likelihood(const Tensor& z, double theta) const {
  return stats::norm_logpdf(z.values[0], theta, 1.0);
}

double ConjugateNormalModel::log_prior(double theta) const {
  return stats::norm_logpdf(theta, 0.0, 1.0);
}

std::unique_ptr<GenerativeModel> make_model(const std::string& id) {
  if (id == "gp16") return std::make_unique<GpExpModel>(16);
  if (id == "gp8") return std::make_unique<GpExpModel>(8);
  if (id == "gp4") return std::make_unique<GpExpModel>(4);
  if (id == "toy_normal") return std::make_unique<ToyNormalModel>();
  if (id == "conjugate_normal") return std::make_unique<ConjugateNormalModel>();
  throw std::invalid_argument("unknown model '" + id + "'");
}

double expert_summary(const Tensor& field) {
  if (field.rank() != 2 || field.shape[0] < 2 || field.shape[1] < 2)
    throw ndiff::ShapeError("expert_summary: need a grid of at least 2x2");
  int h = static_cast<int>(field.shape[0]);
  int w = static_cast<int>(field.shape[1]);
  const double* z = field.values.data();
  double s = 0.0;
  int64_t cnt = 0;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c + 1 < w; ++c) {
      double d = z[r * w + c] - z[r * w + c + 1];
      s += d * d;
      ++cnt;
    }
  for (int r = 0; r + 1 < h; ++r)
    for (int c = 0; c < w; ++c) {
      double d = z[r * w + c] - z[(r + 1) * w + c];
      s += d * d;
      ++cnt;
    }
  return s / static_cast<double>(cnt);
}

Dataset make_training_set(const GenerativeModel& model, int64_t n, uint64_t seed) {
  if (n < 1) throw std::invalid_argument("make_training_set: n must be >= 1");
  Dataset ds;
  ds.model_id = model.id();
  ds.data_shape = model.data_shape();
  ds.n = n;
  int64_t flen = ds.field_len();
  ds.theta.assign(static_cast<size_t>(n), 0.0);
  ds.fields.assign(static_cast<size_t>(n * flen), 0.0);
#pragma omp parallel for schedule(dynamic, 16)
  for (int64_t i = 0; i < n; ++i) {
    Rng rng(seed ^ static_cast<uint64_t>(i));
    double theta = model.sample_prior(rng);
    Tensor z = model.simulate(theta, rng);
    ds.theta[static_cast<size_t>(i)] = theta;
    std::copy(z.values.begin(), z.values.end(), ds.fields.begin() + i * flen);
  }
  return ds;
}

}  // namespace nabi::models
