#pragma once

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "nabi/adam.hpp"
#include "nabi/baselines.hpp"
#include "nabi/flows.hpp"
#include "nabi/models.hpp"
#include "nabi/nets.hpp"
#include "nabi/rng.hpp"

namespace nabi::amortisers {

using models::Dataset;
using models::GenerativeModel;
using models::ParamTransform;
using ndiff::ParamSet;
using ndiff::Tape;
using ndiff::Tensor;

struct TrainConfig {
  int batch = 128;
  double lr = 1e-3;
  int max_epochs = 50;
  int patience = 5;   // epochs without validation improvement before stopping
  int plateau = 2;    // epochs without improvement before halving the lr
  double val_frac = 0.1;
  uint64_t seed = 0;

  // Architecture knobs (defaults follow the reference study).
  std::string summary_kind = "auto";  // auto | cnn | mlp | identity
  int summary_width = 64;
  int head_width = 64;
  int flow_blocks = 4;
  int conditioner_width = 64;
  int critic_width = 64;
  int nre_head_layers = 3;

  // Reverse-KL Monte Carlo sizes: K fresh simulations per step, J draws each.
  int rkl_batch = 32;
  int rkl_draws = 8;
  int rkl_steps_per_epoch = 80;
  int rkl_val_size = 256;

  double nre_lambda = 0.0;
  std::string mine_objective = "donsker_varadhan";  // or "jensen_shannon"
  double synthetic_sigma_floor = 1e-4;
  bool verbose = false;
};

struct TrainMeta {
  int epochs = 0;
  double best_val = 0.0;
  double final_train = 0.0;
  double wallclock_s = 0.0;
  std::vector<double> val_history;
};

// Front half of every amortiser: compresses a dataset into summary
// statistics. Gridded data get the reference CNN, flat data an MLP, or the
// identity when the raw data are already low-dimensional.
struct SummaryNet {
  enum class Kind { kCnn, kMlp, kIdentity };
  Kind kind = Kind::kIdentity;
  nets::Cnn cnn;
  nets::Mlp mlp;
  std::vector<int64_t> data_shape;
  int out = 0;

  std::vector<double> forward(const Tensor& z) const;
  Tape::NodeId tape(Tape& t, const Tensor* input, bool trainable);
  // Input tensor expected by tape() for a raw data tensor.
  Tensor prepare(const Tensor& z) const;
  ParamSet params(const std::string& prefix);
  bool trainable() const { return kind != Kind::kIdentity; }
};

SummaryNet make_summary(const std::vector<int64_t>& data_shape,
                        const std::string& kind, int out_width, int head_width,
                        Rng& rng);

// ---------------------------------------------------------------------------

// Point estimator with quantile heads: (posterior mean, 5th, 95th percentile).
struct NbeEstimator {
  SummaryNet summary;
  nets::Mlp head;

  std::array<double, 3> estimate(const Tensor& z) const;
};

double quantile_loss(double theta, double estimate, double rho);

NbeEstimator train_nbe(const Dataset& data, const TrainConfig& cfg,
                       TrainMeta* meta = nullptr);

// ---------------------------------------------------------------------------

// Forward-KL posterior: conditional coupling flow over the transformed
// parameter, context given by the summary network.
struct FklPosterior {
  SummaryNet summary;
  flows::CouplingFlow flow;
  ParamTransform tf;

  std::vector<double> sample(const Tensor& z, int n, Rng& rng) const;
  // Density of the constrained parameter (transform Jacobian included).
  double log_density(const Tensor& z, double theta) const;
};

FklPosterior train_fkl(const Dataset& data, const ParamTransform& tf,
                       const TrainConfig& cfg, TrainMeta* meta = nullptr);

// ---------------------------------------------------------------------------

// Gaussian synthetic likelihood of a scalar summary; the binding network maps
// theta to (mu, log sigma).
struct SyntheticLikelihood {
  nets::Mlp binding;
  double sigma_floor = 1e-4;

  void predict(double theta, double* mu, double* sigma) const;
  double log_density(double s, double theta) const;
};

SyntheticLikelihood train_synthetic_likelihood(const std::vector<double>& thetas,
                                               const std::vector<double>& stats,
                                               const TrainConfig& cfg,
                                               TrainMeta* meta = nullptr);

// ---------------------------------------------------------------------------

enum class RklBackend { kExact, kSyntheticExpert, kSyntheticMi };
const char* rkl_backend_name(RklBackend b);

// Reverse-KL variational posterior: Gaussian over the transformed parameter,
// (mean, log-std) emitted by the inference network. The log-std is bounded to
// [-6, 2] through a tanh squashing so the entropy term cannot collapse.
struct RklPosterior {
  SummaryNet infnet;
  ParamTransform tf;
  RklBackend backend = RklBackend::kExact;

  std::array<double, 2> variational(const Tensor& z) const;  // (mean, std)
  std::vector<double> sample(const Tensor& z, int n, Rng& rng) const;
};

double bound_log_std(double raw);

// Scalar summary source for the synthetic backends.
using SummaryFn = std::function<double(const Tensor&)>;

RklPosterior train_rkl(const GenerativeModel& model, RklBackend backend,
                       const ParamTransform& tf,
                       const SyntheticLikelihood* synthetic,
                       const SummaryFn& summary_stat, const TrainConfig& cfg,
                       TrainMeta* meta = nullptr);

// ---------------------------------------------------------------------------

// Mutual-information-trained summary statistic with its critic.
struct MineSummary {
  SummaryNet summary;
  nets::Mlp critic;
  std::string objective;
  double mi_estimate = 0.0;

  double statistic(const Tensor& z) const;
};

MineSummary train_mine(const Dataset& data, const TrainConfig& cfg,
                       TrainMeta* meta = nullptr);

// ---------------------------------------------------------------------------

// Joint-vs-marginal classifier for the likelihood-to-evidence ratio.
struct NreClassifier {
  SummaryNet summary;
  nets::Mlp head;
  double lambda = 0.0;
  double theta_lo = 0.0, theta_hi = 1.0;  // uniform prior support

  double logit(double theta, const Tensor& z) const;
  double class_prob(double theta, const Tensor& z) const;
  double ratio(double theta, const Tensor& z) const;
  // Posterior density on an even grid, with inverse-CDF sampling.
  baselines::GridPosterior posterior_grid(const Tensor& z, int grid_size) const;
};

NreClassifier train_nre(const Dataset& data, double theta_lo, double theta_hi,
                        const TrainConfig& cfg, TrainMeta* meta = nullptr);

}  // namespace nabi::amortisers
