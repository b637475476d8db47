#pragma once

#include <array>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "nabi/rng.hpp"
#include "nabi/tensor.hpp"

namespace nabi::models {

using ndiff::Tensor;

// Monotone map between a bounded parameter and an unconstrained working
// scale. forward: constrained -> unconstrained; inverse: back.
struct ParamTransform {
  enum class Kind { kIdentity, kProbit, kLogit };
  Kind kind = Kind::kIdentity;
  double lo = 0.0;
  double hi = 1.0;

  double forward(double theta) const;
  double inverse(double t) const;
  // log|d forward / d theta| at a constrained value.
  double log_jacobian_forward(double theta) const;
  // log|d inverse / d t| at an unconstrained value.
  double log_jacobian_inverse(double t) const;

  static ParamTransform identity() { return {Kind::kIdentity, 0.0, 1.0}; }
  static ParamTransform probit_scale(double lo, double hi) { return {Kind::kProbit, lo, hi}; }
  static ParamTransform logit_scale(double lo, double hi) { return {Kind::kLogit, lo, hi}; }
};

const char* transform_name(ParamTransform::Kind k);

// Prior sampler + simulator (+ exact likelihood where it exists). All models
// here have d = 1.
class GenerativeModel {
 public:
  virtual ~GenerativeModel() = default;
  virtual const std::string& id() const = 0;
  virtual int param_dim() const { return 1; }
  virtual std::vector<int64_t> data_shape() const = 0;
  virtual double theta_lo() const = 0;
  virtual double theta_hi() const = 0;
  virtual double sample_prior(Rng& rng) const = 0;
  virtual Tensor simulate(double theta, Rng& rng) const = 0;
  virtual bool has_log_likelihood() const { return false; }
  virtual double log_likelihood(const Tensor& z, double theta) const;
  // Value and d/dtheta of log p(z|theta); default central difference.
  virtual double log_likelihood_grad(const Tensor& z, double theta, double* dtheta) const;
  virtual double log_prior(double theta) const = 0;
};

// Zero-mean Gaussian process on a square gridding of the unit square with
// exponential covariance exp(-||s_i - s_j||/theta), unit variance, and
// length scale theta ~ Unif(0, 0.6). Sites are pixel centres (i+1/2)/n.
class GpExpModel : public GenerativeModel {
 public:
  explicit GpExpModel(int grid = 16, double theta_hi = 0.6);

  const std::string& id() const override { return id_; }
  std::vector<int64_t> data_shape() const override { return {grid_, grid_}; }
  double theta_lo() const override { return 0.0; }
  double theta_hi() const override { return hi_; }
  double sample_prior(Rng& rng) const override;
  Tensor simulate(double theta, Rng& rng) const override;
  bool has_log_likelihood() const override { return true; }
  double log_likelihood(const Tensor& z, double theta) const override;
  double log_prior(double theta) const override;

  // Analytic d log p(Z|theta) / d theta (for reparameterised variational
  // training): 1/2 a' dSigma a - 1/2 tr(Sigma^-1 dSigma), a = Sigma^-1 Z.
  double log_likelihood_grad(const Tensor& z, double theta,
                             double* dtheta) const override;

  // Covariance matrix entry-wise exp(-dist/theta); diagonal exactly 1.
  void covariance(double theta, std::vector<double>& sigma) const;
  int dim() const { return n_; }
  int grid() const { return static_cast<int>(grid_); }

  // Lower Cholesky factor of the (jittered when needed) covariance.
  void chol_covariance(double theta, std::vector<double>& L) const;

 private:
  std::string id_;
  int64_t grid_;
  int n_;
  double hi_;
  std::vector<double> dist_;        // unique distances
  std::vector<uint16_t> dist_idx_;  // n x n indices into dist_
};

// Covariance matrix for arbitrary 2-D sites (used directly in tests).
std::vector<double> exp_covariance(double theta,
                                   const std::vector<std::array<double, 2>>& sites);

// Z | theta ~ N(theta, theta^2), theta ~ Unif(0, 1). Scalar data; admits the
// exact evidence and Bayes classifier by quadrature.
class ToyNormalModel : public GenerativeModel {
 public:
  ToyNormalModel() : id_("toy_normal") {}
  const std::string& id() const override { return id_; }
  std::vector<int64_t> data_shape() const override { return {1}; }
  double theta_lo() const override { return 0.0; }
  double theta_hi() const override { return 1.0; }
  double sample_prior(Rng& rng) const override;
  Tensor simulate(double theta, Rng& rng) const override;
  bool has_log_likelihood() const override { return true; }
  double log_likelihood(const Tensor& z, double theta) const override;
  double log_prior(double theta) const override;

  // p(Z) by adaptive quadrature over theta in (0,1), abs tol 1e-10.
  double evidence(double z) const;
  // c*(theta, Z) = p(theta,Z) / (p(theta,Z) + p(theta) p(Z)).
  double bayes_classifier(double theta, double z) const;

 private:
  std::string id_;
};

// Z | theta ~ N(theta, 1), theta ~ N(0, 1); posterior is N(Z/2, 1/2).
class ConjugateNormalModel : public GenerativeModel {
 public:
  ConjugateNormalModel() : id_("conjugate_normal") {}
  const std::string& id() const override { return id_; }
  std::vector<int64_t> data_shape() const override { return {1}; }
  double theta_lo() const override { return -8.0; }
  double theta_hi() const override { return 8.0; }
  double sample_prior(Rng& rng) const override { return rng.normal(); }
  Tensor simulate(double theta, Rng& rng) const override {
    return Tensor({1}, {theta + rng.normal()});
  }
  bool has_log_likelihood() const override { return true; }
  double log_likelihood(const Tensor& z, double theta) const override;
  double log_prior(double theta) const override;

 private:
  std::string id_;
};

std::unique_ptr<GenerativeModel> make_model(const std::string& id);

// Mean squared difference over all horizontally and vertically adjacent
// pixel pairs.
double expert_summary(const Tensor& field);

// In-memory simulation draws; theta and fields are row-major (n x ...).
struct Dataset {
  std::string model_id;
  std::vector<int64_t> data_shape;
  int64_t n = 0;
  std::vector<double> theta;   // n
  std::vector<double> fields;  // n * field_len

  int64_t field_len() const { return Tensor::numel_of(data_shape); }
  std::span<const double> field(int64_t i) const {
    return {fields.data() + i * field_len(), static_cast<size_t>(field_len())};
  }
  Tensor field_tensor(int64_t i) const {
    return Tensor(data_shape,
                  std::vector<double>(fields.begin() + i * field_len(),
                                      fields.begin() + (i + 1) * field_len()));
  }
};

// i.i.d. (theta, Z) pairs; pair i uses the stream seed ^ i so generation is
// reproducible and order-independent under parallelism.
Dataset make_training_set(const GenerativeModel& model, int64_t n, uint64_t seed);

}  // namespace nabi::models
