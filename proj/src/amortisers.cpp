#include "nabi/amortisers.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <limits>
#include <memory>
#include <stdexcept>

#include "nabi/stats.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace nabi::amortisers {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Gradients from per-sample tapes are reduced over a fixed number of blocks,
// in block order, so results do not depend on the worker count.
constexpr int kGradBlocks = 8;

std::vector<std::vector<double>> snapshot_params(const ParamSet& ps) {
  std::vector<std::vector<double>> out;
  out.reserve(ps.size());
  for (const auto& p : ps) out.push_back(p.t->values);
  return out;
}

void restore_params(ParamSet& ps, const std::vector<std::vector<double>>& snap) {
  for (size_t i = 0; i < ps.size(); ++i) ps[i].t->values = snap[i];
}

void shuffle_indices(std::vector<int64_t>& idx, Rng& rng) {
  for (size_t i = idx.size(); i > 1; --i) {
    size_t j = static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(i)));
    std::swap(idx[i - 1], idx[j]);
  }
}

Tape::NodeId as_scalar(Tape& t, Tape::NodeId v) {
  return t.val(v).is_scalar() ? v : t.reshape(v, {});
}

// ---------------------------------------------------------------------------
// Stage machinery: per-sample summary tapes (parallel), one coupled tape for
// the loss (single-threaded), then seeded summary backwards (parallel).

struct SummaryBatch {
  std::vector<Tensor> inputs;                // prepared net inputs
  std::vector<std::unique_ptr<Tape>> tapes;  // empty when eval-only/identity
  std::vector<Tape::NodeId> out_nodes;
  std::vector<Tensor> s;  // summary outputs; coupled tape binds these
};

void summary_forward_batch(SummaryNet& net, const std::vector<const Tensor*>& data,
                           bool with_grad, SummaryBatch& sb) {
  int64_t b = static_cast<int64_t>(data.size());
  sb.inputs.resize(static_cast<size_t>(b));
  sb.s.resize(static_cast<size_t>(b));
  sb.out_nodes.assign(static_cast<size_t>(b), -1);
  sb.tapes.clear();
  sb.tapes.resize(static_cast<size_t>(b));
  bool build_tapes = with_grad && net.trainable();
#pragma omp parallel for schedule(dynamic, 1)
  for (int blk = 0; blk < kGradBlocks; ++blk) {
    int64_t lo = b * blk / kGradBlocks;
    int64_t hi = b * (blk + 1) / kGradBlocks;
    for (int64_t i = lo; i < hi; ++i) {
      auto ui = static_cast<size_t>(i);
      if (build_tapes) {
        sb.inputs[ui] = net.prepare(*data[ui]);
        sb.tapes[ui] = std::make_unique<Tape>();
        sb.tapes[ui]->set_param_fold(false);
        Tape::NodeId out = net.tape(*sb.tapes[ui], &sb.inputs[ui], true);
        sb.out_nodes[ui] = out;
        sb.s[ui] = sb.tapes[ui]->val(out);
      } else {
        sb.s[ui] = Tensor::vec(net.forward(*data[ui]));
      }
    }
  }
}

void summary_backward_batch(SummaryNet& net, SummaryBatch& sb) {
  if (!net.trainable() || sb.tapes.empty()) return;
  ParamSet ps = net.params("s");
  int64_t b = static_cast<int64_t>(sb.s.size());
  std::vector<std::vector<std::vector<double>>> block_acc(
      kGradBlocks, std::vector<std::vector<double>>(ps.size()));
#pragma omp parallel for schedule(dynamic, 1)
  for (int blk = 0; blk < kGradBlocks; ++blk) {
    auto& acc = block_acc[static_cast<size_t>(blk)];
    for (size_t p = 0; p < ps.size(); ++p)
      acc[p].assign(ps[p].t->values.size(), 0.0);
    int64_t lo = b * blk / kGradBlocks;
    int64_t hi = b * (blk + 1) / kGradBlocks;
    for (int64_t i = lo; i < hi; ++i) {
      auto ui = static_cast<size_t>(i);
      if (!sb.tapes[ui] || !sb.s[ui].grad) continue;
      Tape& t = *sb.tapes[ui];
      t.backward_seeded(sb.out_nodes[ui], *sb.s[ui].grad);
      for (const auto& [tensor, node] : t.param_leaves()) {
        auto g = t.grad(node);
        if (g.empty()) continue;
        for (size_t p = 0; p < ps.size(); ++p) {
          if (ps[p].t == tensor) {
            for (size_t k = 0; k < g.size(); ++k) acc[p][k] += g[k];
            break;
          }
        }
      }
      sb.tapes[ui].reset();  // free activations as soon as possible
    }
  }
  for (size_t p = 0; p < ps.size(); ++p) {
    ps[p].t->ensure_grad();
    for (int blk = 0; blk < kGradBlocks; ++blk)
      for (size_t k = 0; k < ps[p].t->grad->size(); ++k)
        (*ps[p].t->grad)[k] += block_acc[static_cast<size_t>(blk)][p][k];
  }
}

// ---------------------------------------------------------------------------
// Shared epoch loop for training-set-driven methods.

struct FitHooks {
  // Mean loss over the batch; must leave parameter gradients accumulated.
  std::function<double(std::span<const int64_t>)> train_batch;
  // Mean loss over the given indices, no gradients.
  std::function<double(std::span<const int64_t>)> eval_loss;
};

TrainMeta fit_dataset(int64_t n, const TrainConfig& cfg, ndiff::Adam& adam,
                      ParamSet all_params, const FitHooks& hooks,
                      const std::string& tag) {
  auto t0 = Clock::now();
  Rng rng(cfg.seed ^ 0x5eedf17ULL);
  std::vector<int64_t> idx(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
  shuffle_indices(idx, rng);
  int64_t n_val = std::max<int64_t>(1, static_cast<int64_t>(std::llround(
                                          static_cast<double>(n) * cfg.val_frac)));
  if (n_val >= n) n_val = n / 2 > 0 ? n / 2 : 1;
  std::vector<int64_t> val_idx(idx.end() - n_val, idx.end());
  std::vector<int64_t> train_idx(idx.begin(), idx.end() - n_val);

  TrainMeta meta;
  double best = std::numeric_limits<double>::infinity();
  auto best_snap = snapshot_params(all_params);
  int since_best = 0;
  double train_loss = 0.0;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    shuffle_indices(train_idx, rng);
    int skipped = 0;
    double loss_sum = 0.0;
    int64_t batches = 0;
    for (size_t off = 0; off < train_idx.size(); off += static_cast<size_t>(cfg.batch)) {
      size_t end = std::min(train_idx.size(), off + static_cast<size_t>(cfg.batch));
      std::span<const int64_t> batch(train_idx.data() + off, end - off);
      ndiff::zero_grads(all_params);
      try {
        double l = hooks.train_batch(batch);
        adam.step();
        loss_sum += l;
        ++batches;
      } catch (const ndiff::NonFiniteError& e) {
        if (++skipped > 50)
          throw std::runtime_error(tag + ": training diverged (" + e.what() + ")");
        std::cerr << tag << ": step aborted: " << e.what() << "\n";
      } catch (const ndiff::Adam::NonFiniteGradient& e) {
        if (++skipped > 50)
          throw std::runtime_error(tag + ": training diverged (" + e.what() + ")");
        std::cerr << tag << ": step aborted: " << e.what() << "\n";
      }
    }
    train_loss = batches > 0 ? loss_sum / static_cast<double>(batches) : 0.0;
    double val = hooks.eval_loss(val_idx);
    if (!std::isfinite(val)) val = std::numeric_limits<double>::infinity();
    meta.val_history.push_back(val);
    ++meta.epochs;
    if (cfg.verbose)
      std::cerr << tag << ": epoch " << epoch << " train " << train_loss << " val "
                << val << " lr " << adam.lr() << "\n";
    if (val < best - 1e-12) {
      best = val;
      best_snap = snapshot_params(all_params);
      since_best = 0;
    } else {
      ++since_best;
      if (since_best >= cfg.patience) break;
      if (since_best % cfg.plateau == 0) adam.set_lr(std::max(adam.lr() * 0.5, 1e-6));
    }
  }
  restore_params(all_params, best_snap);
  meta.best_val = best;
  meta.final_train = train_loss;
  meta.wallclock_s = seconds_since(t0);
  return meta;
}

std::vector<const Tensor*> gather(const std::vector<Tensor>& pool,
                                  std::span<const int64_t> idx) {
  std::vector<const Tensor*> out(idx.size());
  for (size_t i = 0; i < idx.size(); ++i) out[i] = &pool[static_cast<size_t>(idx[i])];
  return out;
}

// Materialise per-sample field tensors once; training touches them millions
// of times.
std::vector<Tensor> dataset_tensors(const Dataset& data) {
  std::vector<Tensor> out;
  out.reserve(static_cast<size_t>(data.n));
  for (int64_t i = 0; i < data.n; ++i) out.push_back(data.field_tensor(i));
  return out;
}

double block_parallel_mean(int64_t n, const std::function<double(int64_t)>& f) {
  std::array<double, kGradBlocks> acc{};
#pragma omp parallel for schedule(dynamic, 1)
  for (int blk = 0; blk < kGradBlocks; ++blk) {
    int64_t lo = n * blk / kGradBlocks;
    int64_t hi = n * (blk + 1) / kGradBlocks;
    double s = 0.0;
    for (int64_t i = lo; i < hi; ++i) s += f(i);
    acc[static_cast<size_t>(blk)] = s;
  }
  double total = 0.0;
  for (double v : acc) total += v;
  return total / static_cast<double>(n);
}

}  // namespace

// ---------------------------------------------------------------------------
// SummaryNet

std::vector<double> SummaryNet::forward(const Tensor& z) const {
  switch (kind) {
    case Kind::kIdentity:
      return z.values;
    case Kind::kMlp:
      return nets::mlp_forward(mlp, z.values);
    case Kind::kCnn:
      return nets::cnn_forward(cnn, prepare(z));
  }
  return {};
}

Tensor SummaryNet::prepare(const Tensor& z) const {
  if (kind != Kind::kCnn) {
    Tensor t = z;
    t.shape = {t.numel()};
    return t;
  }
  if (z.rank() == 3) return z;
  Tensor t = z;
  t.shape = {1, z.shape[0], z.shape[1]};
  return t;
}

Tape::NodeId SummaryNet::tape(Tape& t, const Tensor* input, bool trainable) {
  switch (kind) {
    case Kind::kIdentity:
      return t.input(input);
    case Kind::kMlp:
      return nets::mlp_tape(t, mlp, t.input(input), trainable);
    case Kind::kCnn:
      return nets::cnn_tape(t, cnn, t.input(input), trainable);
  }
  throw std::logic_error("SummaryNet: bad kind");
}

ParamSet SummaryNet::params(const std::string& prefix) {
  switch (kind) {
    case Kind::kIdentity:
      return {};
    case Kind::kMlp:
      return mlp.params(prefix);
    case Kind::kCnn:
      return cnn.params(prefix);
  }
  return {};
}

SummaryNet make_summary(const std::vector<int64_t>& data_shape,
                        const std::string& kind, int out_width, int head_width,
                        Rng& rng) {
  SummaryNet s;
  s.data_shape = data_shape;
  std::string k = kind;
  if (k == "auto")
    k = (data_shape.size() == 2 && data_shape[0] >= 4 && data_shape[1] >= 4) ? "cnn"
                                                                             : "mlp";
  if (k == "identity") {
    s.kind = SummaryNet::Kind::kIdentity;
    s.out = static_cast<int>(Tensor::numel_of(data_shape));
  } else if (k == "mlp") {
    s.kind = SummaryNet::Kind::kMlp;
    int in = static_cast<int>(Tensor::numel_of(data_shape));
    s.mlp = nets::make_mlp({in, head_width, head_width, out_width}, nets::Act::kRelu,
                           nets::Act::kIdentity, rng);
    s.out = out_width;
  } else if (k == "cnn") {
    nets::CnnSpec spec;
    spec.in_c = 1;
    spec.in_h = static_cast<int>(data_shape[0]);
    spec.in_w = static_cast<int>(data_shape[1]);
    spec.out = out_width;
    s.kind = SummaryNet::Kind::kCnn;
    s.cnn = nets::make_cnn(spec, rng);
    s.out = out_width;
  } else {
    throw std::invalid_argument("make_summary: unknown kind '" + kind + "'");
  }
  return s;
}

// ---------------------------------------------------------------------------
// Neural Bayes estimator

double quantile_loss(double theta, double estimate, double rho) {
  double u = estimate - theta;
  return u * ((u > 0.0 ? 1.0 : 0.0) - rho);
}

std::array<double, 3> NbeEstimator::estimate(const Tensor& z) const {
  std::vector<double> s = summary.forward(z);
  std::vector<double> out = nets::mlp_forward(head, s);
  return {out[0], out[1], out[2]};
}

namespace {

// u = estimate - theta; L_rho = (1-rho) relu(u) + rho relu(-u).
Tape::NodeId tape_quantile_loss(Tape& t, Tape::NodeId est, Tape::NodeId tgt,
                                double rho) {
  Tape::NodeId u = t.sub(est, tgt);
  return t.add(t.mul_scalar(t.relu(u), 1.0 - rho),
               t.mul_scalar(t.relu(t.neg(u)), rho));
}

}  // namespace

NbeEstimator train_nbe(const Dataset& data, const TrainConfig& cfg, TrainMeta* meta) {
  Rng init(cfg.seed);
  NbeEstimator est;
  est.summary = make_summary(data.data_shape, cfg.summary_kind, cfg.summary_width,
                             cfg.head_width, init);
  est.head = nets::make_mlp({est.summary.out, cfg.head_width, 3}, nets::Act::kRelu,
                            nets::Act::kIdentity, init);

  ParamSet all = est.summary.params("summary");
  ParamSet head_ps = est.head.params("head");
  all.insert(all.end(), head_ps.begin(), head_ps.end());
  ndiff::Adam adam(all, {.lr = cfg.lr});

  std::vector<Tensor> fields = dataset_tensors(data);

  auto per_sample_loss = [&](int64_t i) {
    auto e = est.estimate(fields[static_cast<size_t>(i)]);
    double th = data.theta[static_cast<size_t>(i)];
    double d = e[0] - th;
    return d * d + quantile_loss(th, e[1], 0.05) + quantile_loss(th, e[2], 0.95);
  };

  FitHooks hooks;
  hooks.train_batch = [&](std::span<const int64_t> batch) {
    SummaryBatch sb;
    summary_forward_batch(est.summary, gather(fields, batch), true, sb);
    Tape ct;
    Tape::NodeId acc = -1;
    for (size_t i = 0; i < batch.size(); ++i) {
      Tape::NodeId s = ct.param(&sb.s[i]);
      Tape::NodeId out = nets::mlp_tape(ct, est.head, s, true);
      double th = data.theta[static_cast<size_t>(batch[i])];
      Tape::NodeId tgt = ct.constant(Tensor::vec({th}));
      Tape::NodeId dm = ct.sub(ct.slice(out, 0, 1), tgt);
      Tape::NodeId li = ct.mul(dm, dm);
      li = ct.add(li, tape_quantile_loss(ct, ct.slice(out, 1, 1), tgt, 0.05));
      li = ct.add(li, tape_quantile_loss(ct, ct.slice(out, 2, 1), tgt, 0.95));
      acc = acc < 0 ? li : ct.add(acc, li);
    }
    Tape::NodeId loss =
        as_scalar(ct, ct.mul_scalar(acc, 1.0 / static_cast<double>(batch.size())));
    ct.backward(loss);
    summary_backward_batch(est.summary, sb);
    return ct.val(loss).values[0];
  };
  hooks.eval_loss = [&](std::span<const int64_t> idxs) {
    std::vector<int64_t> ids(idxs.begin(), idxs.end());
    return block_parallel_mean(static_cast<int64_t>(ids.size()), [&](int64_t k) {
      return per_sample_loss(ids[static_cast<size_t>(k)]);
    });
  };

  TrainMeta m = fit_dataset(data.n, cfg, adam, all, hooks, "nbe");
  if (meta) *meta = m;
  return est;
}

// ---------------------------------------------------------------------------
// Forward-KL posterior

std::vector<double> FklPosterior::sample(const Tensor& z, int n, Rng& rng) const {
  std::vector<double> ctx = summary.forward(z);
  auto draws = flows::sample(flow, ctx, n, rng);
  std::vector<double> out(draws.size());
  for (size_t i = 0; i < draws.size(); ++i) out[i] = tf.inverse(draws[i][0]);
  return out;
}

double FklPosterior::log_density(const Tensor& z, double theta) const {
  std::vector<double> ctx = summary.forward(z);
  double t = tf.forward(theta);
  std::vector<double> tv = {t};
  return flows::log_density(flow, tv, ctx) + tf.log_jacobian_forward(theta);
}

FklPosterior train_fkl(const Dataset& data, const ParamTransform& tf,
                       const TrainConfig& cfg, TrainMeta* meta) {
  Rng init(cfg.seed);
  FklPosterior post;
  post.tf = tf;
  post.summary = make_summary(data.data_shape, cfg.summary_kind, cfg.summary_width,
                              cfg.head_width, init);
  post.flow = flows::make_coupling_flow(1, post.summary.out, cfg.flow_blocks, init,
                                        {cfg.conditioner_width});

  ParamSet all = post.summary.params("summary");
  ParamSet fps = post.flow.params("flow");
  all.insert(all.end(), fps.begin(), fps.end());
  ndiff::Adam adam(all, {.lr = cfg.lr});

  std::vector<Tensor> fields = dataset_tensors(data);
  std::vector<double> ttheta(static_cast<size_t>(data.n));
  for (int64_t i = 0; i < data.n; ++i)
    ttheta[static_cast<size_t>(i)] = tf.forward(data.theta[static_cast<size_t>(i)]);

  FitHooks hooks;
  hooks.train_batch = [&](std::span<const int64_t> batch) {
    SummaryBatch sb;
    summary_forward_batch(post.summary, gather(fields, batch), true, sb);
    Tape ct;
    Tape::NodeId acc = -1;
    for (size_t i = 0; i < batch.size(); ++i) {
      Tape::NodeId ctx = ct.param(&sb.s[i]);
      Tape::NodeId lq = flows::tape_log_density(
          ct, post.flow, {ttheta[static_cast<size_t>(batch[i])]}, ctx, true);
      acc = acc < 0 ? lq : ct.add(acc, lq);
    }
    Tape::NodeId loss = as_scalar(
        ct, ct.mul_scalar(acc, -1.0 / static_cast<double>(batch.size())));
    ct.backward(loss);
    summary_backward_batch(post.summary, sb);
    return ct.val(loss).values[0];
  };
  hooks.eval_loss = [&](std::span<const int64_t> idxs) {
    std::vector<int64_t> ids(idxs.begin(), idxs.end());
    return block_parallel_mean(
        static_cast<int64_t>(ids.size()), [&](int64_t k) {
          int64_t i = ids[static_cast<size_t>(k)];
          std::vector<double> ctx = post.summary.forward(fields[static_cast<size_t>(i)]);
          std::vector<double> tv = {ttheta[static_cast<size_t>(i)]};
          return -flows::log_density(post.flow, tv, ctx);
        });
  };

  TrainMeta m = fit_dataset(data.n, cfg, adam, all, hooks, "fkl");
  if (meta) *meta = m;
  return post;
}

// ---------------------------------------------------------------------------
// Synthetic likelihood

void SyntheticLikelihood::predict(double theta, double* mu, double* sigma) const {
  std::vector<double> in = {theta};
  std::vector<double> out = nets::mlp_forward(binding, in);
  if (mu) *mu = out[0];
  if (sigma) *sigma = sigma_floor + std::exp(out[1]);
}

double SyntheticLikelihood::log_density(double s, double theta) const {
  double mu, sigma;
  predict(theta, &mu, &sigma);
  return stats::norm_logpdf(s, mu, sigma);
}

SyntheticLikelihood train_synthetic_likelihood(const std::vector<double>& thetas,
                                               const std::vector<double>& statsv,
                                               const TrainConfig& cfg,
                                               TrainMeta* meta) {
  if (thetas.size() != statsv.size() || thetas.empty())
    throw std::invalid_argument("train_synthetic_likelihood: bad inputs");
  Rng init(cfg.seed);
  SyntheticLikelihood syn;
  syn.sigma_floor = cfg.synthetic_sigma_floor;
  syn.binding = nets::make_mlp({1, cfg.head_width, 2}, nets::Act::kRelu,
                               nets::Act::kIdentity, init);

  ParamSet all = syn.binding.params("binding");
  ndiff::Adam adam(all, {.lr = cfg.lr});

  FitHooks hooks;
  hooks.train_batch = [&](std::span<const int64_t> batch) {
    Tape ct;
    Tape::NodeId acc = -1;
    for (int64_t i : batch) {
      auto ui = static_cast<size_t>(i);
      Tape::NodeId in = ct.constant(Tensor::vec({thetas[ui]}));
      Tape::NodeId out = nets::mlp_tape(ct, syn.binding, in, true);
      Tape::NodeId mu = ct.slice(out, 0, 1);
      Tape::NodeId sigma = ct.add_scalar(ct.exp(ct.slice(out, 1, 1)), syn.sigma_floor);
      Tape::NodeId logsig = ct.log(sigma);
      Tape::NodeId u = ct.mul(ct.sub(ct.constant(Tensor::vec({statsv[ui]})), mu),
                              ct.exp(ct.neg(logsig)));
      Tape::NodeId nll = ct.add_scalar(
          ct.add(logsig, ct.mul_scalar(ct.mul(u, u), 0.5)), 0.5 * stats::kLog2Pi);
      acc = acc < 0 ? nll : ct.add(acc, nll);
    }
    Tape::NodeId loss =
        as_scalar(ct, ct.mul_scalar(acc, 1.0 / static_cast<double>(batch.size())));
    ct.backward(loss);
    return ct.val(loss).values[0];
  };
  hooks.eval_loss = [&](std::span<const int64_t> idxs) {
    std::vector<int64_t> ids(idxs.begin(), idxs.end());
    return block_parallel_mean(static_cast<int64_t>(ids.size()), [&](int64_t k) {
      auto ui = static_cast<size_t>(ids[static_cast<size_t>(k)]);
      return -syn.log_density(statsv[ui], thetas[ui]);
    });
  };

  TrainMeta m = fit_dataset(static_cast<int64_t>(thetas.size()), cfg, adam, all, hooks,
                            "synthetic");
  if (meta) *meta = m;
  return syn;
}

// ---------------------------------------------------------------------------
// Reverse-KL variational posterior

const char* rkl_backend_name(RklBackend b) {
  switch (b) {
    case RklBackend::kExact: return "exact";
    case RklBackend::kSyntheticExpert: return "synthetic_expert";
    case RklBackend::kSyntheticMi: return "synthetic_mi";
  }
  return "?";
}

double bound_log_std(double raw) { return -2.0 + 4.0 * std::tanh(0.25 * raw); }

std::array<double, 2> RklPosterior::variational(const Tensor& z) const {
  std::vector<double> out = infnet.forward(z);
  return {out[0], std::exp(bound_log_std(out[1]))};
}

std::vector<double> RklPosterior::sample(const Tensor& z, int n, Rng& rng) const {
  auto [m, s] = variational(z);
  std::vector<double> out(static_cast<size_t>(n));
  for (double& v : out) v = tf.inverse(m + s * rng.normal());
  return out;
}

namespace {

// theta node and log|d theta / d t| node from an unconstrained node.
struct TransformNodes {
  Tape::NodeId theta;
  Tape::NodeId log_jac;
};

TransformNodes tape_transform_inverse(Tape& t, const ParamTransform& tf,
                                      Tape::NodeId u) {
  switch (tf.kind) {
    case ParamTransform::Kind::kIdentity: {
      return {u, t.constant(Tensor::vec({0.0}))};
    }
    case ParamTransform::Kind::kLogit: {
      double range = tf.hi - tf.lo;
      Tape::NodeId theta = t.add_scalar(t.mul_scalar(t.sigmoid(u), range), tf.lo);
      Tape::NodeId jac = t.add_scalar(
          t.neg(t.add(t.softplus(u), t.softplus(t.neg(u)))), std::log(range));
      return {theta, jac};
    }
    case ParamTransform::Kind::kProbit:
      throw std::invalid_argument(
          "reverse-KL training supports identity and logit transforms only");
  }
  throw std::logic_error("tape_transform_inverse: bad kind");
}

}  // namespace

RklPosterior train_rkl(const GenerativeModel& model, RklBackend backend,
                       const ParamTransform& tf,
                       const SyntheticLikelihood* synthetic,
                       const SummaryFn& summary_stat, const TrainConfig& cfg,
                       TrainMeta* meta) {
  bool synth = backend != RklBackend::kExact;
  if (synth && (!synthetic || !summary_stat))
    throw std::invalid_argument("train_rkl: synthetic backend requires a trained "
                                "synthetic likelihood and a summary source");
  if (!synth && !model.has_log_likelihood())
    throw std::invalid_argument("train_rkl: exact backend requires a likelihood");

  auto t0 = Clock::now();
  Rng init(cfg.seed);
  RklPosterior post;
  post.tf = tf;
  post.backend = backend;
  post.infnet =
      make_summary(model.data_shape(), cfg.summary_kind, 2, cfg.head_width, init);
  ParamSet all = post.infnet.params("infnet");
  ndiff::Adam adam(all, {.lr = cfg.lr});

  int K = cfg.rkl_batch, J = cfg.rkl_draws;
  if (K < 1 || J < 1) throw std::invalid_argument("train_rkl: bad Monte Carlo sizes");

  Rng master(cfg.seed ^ 0x41b2c3d4ULL);

  // Fixed validation pool with fixed draws so epochs are comparable.
  int n_val = cfg.rkl_val_size;
  std::vector<Tensor> val_z(static_cast<size_t>(n_val));
  std::vector<double> val_s(static_cast<size_t>(n_val), 0.0);
#pragma omp parallel for schedule(dynamic, 8)
  for (int i = 0; i < n_val; ++i) {
    Rng r(cfg.seed ^ (0xabcd0000ULL + static_cast<uint64_t>(i)));
    double th = model.sample_prior(r);
    val_z[static_cast<size_t>(i)] = model.simulate(th, r);
    if (synth) val_s[static_cast<size_t>(i)] = summary_stat(val_z[static_cast<size_t>(i)]);
  }
  std::vector<double> val_eps(static_cast<size_t>(n_val) * J);
  {
    Rng r(cfg.seed ^ 0xe95ULL);
    for (double& v : val_eps) v = r.normal();
  }

  auto objective_term = [&](const Tensor& z, double s_of_z, double mean, double lstd,
                            double eps) {
    double std = std::exp(lstd);
    double u = mean + std * eps;
    double logq = -0.5 * stats::kLog2Pi - lstd - 0.5 * eps * eps;
    double theta = tf.inverse(u);
    double ll = synth ? synthetic->log_density(s_of_z, theta)
                      : model.log_likelihood(z, theta);
    double lp = model.log_prior(theta) + tf.log_jacobian_inverse(u);
    return logq - ll - lp;
  };

  auto val_objective = [&]() {
    return block_parallel_mean(n_val, [&](int64_t i) {
      auto ui = static_cast<size_t>(i);
      std::vector<double> out = post.infnet.forward(val_z[ui]);
      double m = out[0], lstd = bound_log_std(out[1]);
      double acc = 0.0;
      for (int j = 0; j < J; ++j)
        acc += objective_term(val_z[ui], val_s[ui], m, lstd,
                              val_eps[ui * static_cast<size_t>(J) + static_cast<size_t>(j)]);
      return acc / static_cast<double>(J);
    });
  };

  TrainMeta mta;
  double best = std::numeric_limits<double>::infinity();
  auto best_snap = snapshot_params(all);
  int since_best = 0;
  double train_loss = 0.0;

  std::vector<Tensor> zk(static_cast<size_t>(K));
  std::vector<double> sk(static_cast<size_t>(K), 0.0);
  std::vector<double> eps(static_cast<size_t>(K) * J);
  std::vector<uint64_t> seeds(static_cast<size_t>(K));

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    int skipped = 0;
    double loss_sum = 0.0;
    int steps_done = 0;
    for (int step = 0; step < cfg.rkl_steps_per_epoch; ++step) {
      for (int k = 0; k < K; ++k) seeds[static_cast<size_t>(k)] = master.next_u64();
      for (double& v : eps) v = master.normal();
#pragma omp parallel for schedule(dynamic, 4)
      for (int k = 0; k < K; ++k) {
        Rng r(seeds[static_cast<size_t>(k)]);
        double th = model.sample_prior(r);
        zk[static_cast<size_t>(k)] = model.simulate(th, r);
        if (synth) sk[static_cast<size_t>(k)] = summary_stat(zk[static_cast<size_t>(k)]);
      }
      ndiff::zero_grads(all);
      try {
        SummaryBatch sb;
        std::vector<const Tensor*> ptrs(static_cast<size_t>(K));
        for (int k = 0; k < K; ++k) ptrs[static_cast<size_t>(k)] = &zk[static_cast<size_t>(k)];
        summary_forward_batch(post.infnet, ptrs, true, sb);

        Tape ct;
        struct DrawNodes {
          Tape::NodeId logq, theta, log_jac, u;
        };
        std::vector<DrawNodes> draws(static_cast<size_t>(K) * J);
        for (int k = 0; k < K; ++k) {
          Tape::NodeId s = ct.param(&sb.s[static_cast<size_t>(k)]);
          Tape::NodeId m = ct.slice(s, 0, 1);
          Tape::NodeId lraw = ct.slice(s, 1, 1);
          // log-std bounded to [-6, 2]
          Tape::NodeId lstd =
              ct.add_scalar(ct.mul_scalar(ct.tanh(ct.mul_scalar(lraw, 0.25)), 4.0), -2.0);
          Tape::NodeId sd = ct.exp(lstd);
          for (int j = 0; j < J; ++j) {
            double e = eps[static_cast<size_t>(k) * J + static_cast<size_t>(j)];
            Tape::NodeId u = ct.add(m, ct.mul_scalar(sd, e));
            Tape::NodeId w = ct.mul(ct.sub(u, m), ct.exp(ct.neg(lstd)));
            Tape::NodeId logq = ct.add_scalar(
                ct.neg(ct.add(lstd, ct.mul_scalar(ct.mul(w, w), 0.5))),
                -0.5 * stats::kLog2Pi);
            auto tn = tape_transform_inverse(ct, tf, u);
            draws[static_cast<size_t>(k) * J + static_cast<size_t>(j)] =
                {logq, tn.theta, tn.log_jac, u};
          }
        }
        // Likelihood values and derivatives, computed outside the tape.
        std::vector<double> ll(draws.size()), dll(draws.size());
        if (synth) {
          // handled on-tape below
        } else {
          std::vector<double> theta_vals(draws.size());
          for (size_t q = 0; q < draws.size(); ++q)
            theta_vals[q] = ct.val(draws[q].theta).values[0];
#pragma omp parallel for schedule(dynamic, 4)
          for (int64_t q = 0; q < static_cast<int64_t>(draws.size()); ++q) {
            auto uq = static_cast<size_t>(q);
            const Tensor& z = zk[uq / static_cast<size_t>(J)];
            double d = 0.0;
            ll[uq] = model.log_likelihood_grad(z, theta_vals[uq], &d);
            dll[uq] = d;
          }
        }
        Tape::NodeId acc = -1;
        for (size_t q = 0; q < draws.size(); ++q) {
          int k = static_cast<int>(q) / J;
          Tape::NodeId ll_node;
          if (synth) {
            Tape::NodeId out =
                nets::mlp_tape(ct, const_cast<SyntheticLikelihood*>(synthetic)->binding,
                               draws[q].theta, false);
            Tape::NodeId mu = ct.slice(out, 0, 1);
            Tape::NodeId sg =
                ct.add_scalar(ct.exp(ct.slice(out, 1, 1)), synthetic->sigma_floor);
            Tape::NodeId logsig = ct.log(sg);
            Tape::NodeId sv = ct.constant(Tensor::vec({sk[static_cast<size_t>(k)]}));
            Tape::NodeId w = ct.mul(ct.sub(sv, mu), ct.exp(ct.neg(logsig)));
            ll_node = ct.neg(ct.add_scalar(
                ct.add(logsig, ct.mul_scalar(ct.mul(w, w), 0.5)), 0.5 * stats::kLog2Pi));
          } else {
            Tape::NodeId th_s = as_scalar(ct, draws[q].theta);
            ll_node = ct.reshape(ct.external(th_s, ll[q], dll[q]), {1});
          }
          // prior on the constrained scale
          Tape::NodeId lp;
          if (model.id() == "conjugate_normal") {
            Tape::NodeId t2 = ct.mul(draws[q].theta, draws[q].theta);
            lp = ct.add_scalar(ct.mul_scalar(t2, -0.5), -0.5 * stats::kLog2Pi);
          } else {
            double theta_val = ct.val(draws[q].theta).values[0];
            lp = ct.constant(Tensor::vec({model.log_prior(theta_val)}));
          }
          Tape::NodeId term =
              ct.sub(draws[q].logq, ct.add(ll_node, ct.add(lp, draws[q].log_jac)));
          acc = acc < 0 ? term : ct.add(acc, term);
        }
        Tape::NodeId loss = as_scalar(
            ct, ct.mul_scalar(acc, 1.0 / static_cast<double>(draws.size())));
        ct.backward(loss);
        summary_backward_batch(post.infnet, sb);
        adam.step();
        loss_sum += ct.val(loss).values[0];
        ++steps_done;
      } catch (const ndiff::NonFiniteError& e) {
        if (++skipped > 50) throw std::runtime_error(std::string("rkl: diverged: ") + e.what());
        std::cerr << "rkl: step aborted: " << e.what() << "\n";
      } catch (const ndiff::Adam::NonFiniteGradient& e) {
        if (++skipped > 50) throw std::runtime_error(std::string("rkl: diverged: ") + e.what());
        std::cerr << "rkl: step aborted: " << e.what() << "\n";
      }
    }
    train_loss = steps_done ? loss_sum / steps_done : 0.0;
    double val = val_objective();
    if (!std::isfinite(val)) val = std::numeric_limits<double>::infinity();
    mta.val_history.push_back(val);
    ++mta.epochs;
    if (cfg.verbose)
      std::cerr << "rkl[" << rkl_backend_name(backend) << "]: epoch " << epoch
                << " train " << train_loss << " val " << val << "\n";
    if (val < best - 1e-12) {
      best = val;
      best_snap = snapshot_params(all);
      since_best = 0;
    } else {
      ++since_best;
      if (since_best >= cfg.patience) break;
      if (since_best % cfg.plateau == 0) adam.set_lr(std::max(adam.lr() * 0.5, 1e-6));
    }
  }
  restore_params(all, best_snap);
  mta.best_val = best;
  mta.final_train = train_loss;
  mta.wallclock_s = seconds_since(t0);
  if (meta) *meta = mta;
  return post;
}

// ---------------------------------------------------------------------------
// MINE summary statistic

double MineSummary::statistic(const Tensor& z) const {
  return summary.forward(z)[0];
}

MineSummary train_mine(const Dataset& data, const TrainConfig& cfg, TrainMeta* meta) {
  Rng init(cfg.seed);
  MineSummary mine;
  mine.objective = cfg.mine_objective;
  bool js = cfg.mine_objective == "jensen_shannon";
  if (!js && cfg.mine_objective != "donsker_varadhan")
    throw std::invalid_argument("train_mine: unknown objective '" + cfg.mine_objective + "'");
  mine.summary =
      make_summary(data.data_shape, cfg.summary_kind, 1, cfg.head_width, init);
  mine.critic =
      nets::make_mlp({1 + mine.summary.out, cfg.critic_width, cfg.critic_width,
                      cfg.critic_width, 1},
                     nets::Act::kRelu, nets::Act::kIdentity, init);

  ParamSet all = mine.summary.params("summary");
  ParamSet cps = mine.critic.params("critic");
  all.insert(all.end(), cps.begin(), cps.end());
  ndiff::Adam adam(all, {.lr = cfg.lr});

  std::vector<Tensor> fields = dataset_tensors(data);
  Rng perm_rng(cfg.seed ^ 0x9e77ULL);

  auto critic_value = [&](double theta, std::span<const double> s) {
    std::vector<double> in;
    in.reserve(1 + s.size());
    in.push_back(theta);
    in.insert(in.end(), s.begin(), s.end());
    return nets::mlp_forward(mine.critic, in)[0];
  };

  // DV objective for a set of indices with a fixed pairing permutation.
  auto objective_plain = [&](std::span<const int64_t> idxs,
                             const std::vector<int>& pi) {
    int64_t n = static_cast<int64_t>(idxs.size());
    std::vector<std::vector<double>> s(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i)
      s[static_cast<size_t>(i)] =
          mine.summary.forward(fields[static_cast<size_t>(idxs[static_cast<size_t>(i)])]);
    double tj = 0.0;
    std::vector<double> ts(static_cast<size_t>(n));
    double tmax = -std::numeric_limits<double>::infinity();
    for (int64_t i = 0; i < n; ++i) {
      double th = data.theta[static_cast<size_t>(idxs[static_cast<size_t>(i)])];
      double tv = critic_value(th, s[static_cast<size_t>(i)]);
      double sv = critic_value(th, s[static_cast<size_t>(pi[static_cast<size_t>(i)])]);
      if (js) {
        tj += -(std::max(-tv, 0.0) + std::log1p(std::exp(-std::abs(tv))));
        ts[static_cast<size_t>(i)] = std::max(sv, 0.0) + std::log1p(std::exp(-std::abs(sv)));
      } else {
        tj += tv;
        ts[static_cast<size_t>(i)] = sv;
        tmax = std::max(tmax, sv);
      }
    }
    if (js) {
      double m2 = 0.0;
      for (double v : ts) m2 += v;
      return tj / static_cast<double>(n) - m2 / static_cast<double>(n);
    }
    double lse = 0.0;
    for (double v : ts) lse += std::exp(v - tmax);
    return tj / static_cast<double>(n) -
           (tmax + std::log(lse) - std::log(static_cast<double>(n)));
  };

  FitHooks hooks;
  hooks.train_batch = [&](std::span<const int64_t> batch) {
    int n = static_cast<int>(batch.size());
    std::vector<int> pi = perm_rng.permutation(n);
    SummaryBatch sb;
    summary_forward_batch(mine.summary, gather(fields, batch), true, sb);
    Tape ct;
    std::vector<Tape::NodeId> s_nodes(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) s_nodes[static_cast<size_t>(i)] = ct.param(&sb.s[static_cast<size_t>(i)]);
    Tape::NodeId tj_vec = -1, ts_vec = -1;
    for (int i = 0; i < n; ++i) {
      double th = data.theta[static_cast<size_t>(batch[static_cast<size_t>(i)])];
      Tape::NodeId thn = ct.constant(Tensor::vec({th}));
      Tape::NodeId tj = nets::mlp_tape(
          ct, mine.critic, ct.concat(thn, s_nodes[static_cast<size_t>(i)]), true);
      Tape::NodeId ts = nets::mlp_tape(
          ct, mine.critic,
          ct.concat(thn, s_nodes[static_cast<size_t>(pi[static_cast<size_t>(i)])]), true);
      tj_vec = tj_vec < 0 ? tj : ct.concat(tj_vec, tj);
      ts_vec = ts_vec < 0 ? ts : ct.concat(ts_vec, ts);
    }
    Tape::NodeId obj;
    if (js) {
      Tape::NodeId pos = ct.mean(ct.neg(ct.softplus(ct.neg(tj_vec))));
      Tape::NodeId negt = ct.mean(ct.softplus(ts_vec));
      obj = ct.sub(pos, negt);
    } else {
      Tape::NodeId pos = ct.mean(tj_vec);
      Tape::NodeId lse = ct.add_scalar(ct.logsumexp(ts_vec),
                                       -std::log(static_cast<double>(n)));
      obj = ct.sub(pos, lse);
    }
    Tape::NodeId loss = as_scalar(ct, ct.neg(obj));
    ct.backward(loss);
    summary_backward_batch(mine.summary, sb);
    return ct.val(loss).values[0];
  };
  hooks.eval_loss = [&](std::span<const int64_t> idxs) {
    // Fixed cyclic shift keeps validation comparable across epochs.
    std::vector<int> pi(idxs.size());
    for (size_t i = 0; i < idxs.size(); ++i)
      pi[i] = static_cast<int>((i + 1) % idxs.size());
    return -objective_plain(idxs, pi);
  };

  TrainMeta m = fit_dataset(data.n, cfg, adam, all, hooks, "mine");
  mine.mi_estimate = -m.best_val;
  if (meta) *meta = m;
  return mine;
}

// ---------------------------------------------------------------------------
// Likelihood-to-evidence ratio classifier

double NreClassifier::logit(double theta, const Tensor& z) const {
  std::vector<double> s = summary.forward(z);
  std::vector<double> in;
  in.reserve(1 + s.size());
  in.push_back(theta);
  in.insert(in.end(), s.begin(), s.end());
  return nets::mlp_forward(head, in)[0];
}

double NreClassifier::class_prob(double theta, const Tensor& z) const {
  double l = logit(theta, z);
  return l >= 0.0 ? 1.0 / (1.0 + std::exp(-l)) : std::exp(l) / (1.0 + std::exp(l));
}

double NreClassifier::ratio(double theta, const Tensor& z) const {
  return std::exp(logit(theta, z));
}

baselines::GridPosterior NreClassifier::posterior_grid(const Tensor& z,
                                                       int grid_size) const {
  if (grid_size < 2) throw std::invalid_argument("posterior_grid: grid size < 2");
  std::vector<double> s = summary.forward(z);
  std::vector<double> grid(static_cast<size_t>(grid_size));
  std::vector<double> logd(static_cast<size_t>(grid_size));
  double eps = 1e-6 * (theta_hi - theta_lo);
  std::vector<double> in(1 + s.size());
  std::copy(s.begin(), s.end(), in.begin() + 1);
  for (int k = 0; k < grid_size; ++k) {
    double th = theta_lo + eps + (theta_hi - theta_lo - 2 * eps) *
                                     static_cast<double>(k) /
                                     static_cast<double>(grid_size - 1);
    grid[static_cast<size_t>(k)] = th;
    in[0] = th;
    // uniform prior: posterior density on the grid is proportional to the ratio
    logd[static_cast<size_t>(k)] = nets::mlp_forward(head, in)[0];
  }
  return baselines::GridPosterior(std::move(grid), std::move(logd));
}

NreClassifier train_nre(const Dataset& data, double theta_lo, double theta_hi,
                        const TrainConfig& cfg, TrainMeta* meta) {
  Rng init(cfg.seed);
  NreClassifier clf;
  clf.lambda = cfg.nre_lambda;
  clf.theta_lo = theta_lo;
  clf.theta_hi = theta_hi;
  clf.summary =
      make_summary(data.data_shape, cfg.summary_kind, cfg.summary_width,
                   cfg.head_width, init);
  std::vector<int> widths;
  widths.push_back(1 + clf.summary.out);
  for (int l = 0; l < cfg.nre_head_layers - 1; ++l) widths.push_back(cfg.head_width);
  widths.push_back(1);
  clf.head = nets::make_mlp(widths, nets::Act::kRelu, nets::Act::kIdentity, init);

  ParamSet all = clf.summary.params("summary");
  ParamSet hps = clf.head.params("head");
  all.insert(all.end(), hps.begin(), hps.end());
  ndiff::Adam adam(all, {.lr = cfg.lr});

  std::vector<Tensor> fields = dataset_tensors(data);
  Rng perm_rng(cfg.seed ^ 0x7a3bULL);

  auto bce_plain = [&](std::span<const int64_t> idxs, const std::vector<int>& pi) {
    int64_t n = static_cast<int64_t>(idxs.size());
    std::vector<std::vector<double>> s(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i)
      s[static_cast<size_t>(i)] =
          clf.summary.forward(fields[static_cast<size_t>(idxs[static_cast<size_t>(i)])]);
    double acc = 0.0;
    double cj = 0.0, cs = 0.0;
    auto head_logit = [&](double th, const std::vector<double>& sv) {
      std::vector<double> in;
      in.reserve(1 + sv.size());
      in.push_back(th);
      in.insert(in.end(), sv.begin(), sv.end());
      return nets::mlp_forward(clf.head, in)[0];
    };
    auto sp = [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); };
    auto sig = [](double x) {
      return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    };
    for (int64_t i = 0; i < n; ++i) {
      double th = data.theta[static_cast<size_t>(idxs[static_cast<size_t>(i)])];
      double lj = head_logit(th, s[static_cast<size_t>(i)]);
      double ls = head_logit(th, s[static_cast<size_t>(pi[static_cast<size_t>(i)])]);
      acc += sp(-lj) + sp(ls);
      cj += sig(lj);
      cs += sig(ls);
    }
    double loss = acc / static_cast<double>(n);
    if (clf.lambda > 0.0) {
      double bal = cj / static_cast<double>(n) + cs / static_cast<double>(n) - 1.0;
      loss += clf.lambda * bal * bal;
    }
    return loss;
  };

  FitHooks hooks;
  hooks.train_batch = [&](std::span<const int64_t> batch) {
    int n = static_cast<int>(batch.size());
    std::vector<int> pi = perm_rng.permutation(n);
    SummaryBatch sb;
    summary_forward_batch(clf.summary, gather(fields, batch), true, sb);
    Tape ct;
    std::vector<Tape::NodeId> s_nodes(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i)
      s_nodes[static_cast<size_t>(i)] = ct.param(&sb.s[static_cast<size_t>(i)]);
    Tape::NodeId bce_acc = -1;
    Tape::NodeId cj_vec = -1, cs_vec = -1;
    for (int i = 0; i < n; ++i) {
      double th = data.theta[static_cast<size_t>(batch[static_cast<size_t>(i)])];
      Tape::NodeId thn = ct.constant(Tensor::vec({th}));
      Tape::NodeId lj = nets::mlp_tape(ct, clf.head,
                                       ct.concat(thn, s_nodes[static_cast<size_t>(i)]), true);
      Tape::NodeId ls = nets::mlp_tape(
          ct, clf.head,
          ct.concat(thn, s_nodes[static_cast<size_t>(pi[static_cast<size_t>(i)])]), true);
      Tape::NodeId bi = ct.add(ct.softplus(ct.neg(lj)), ct.softplus(ls));
      bce_acc = bce_acc < 0 ? bi : ct.add(bce_acc, bi);
      if (clf.lambda > 0.0) {
        Tape::NodeId cjn = ct.sigmoid(lj);
        Tape::NodeId csn = ct.sigmoid(ls);
        cj_vec = cj_vec < 0 ? cjn : ct.concat(cj_vec, cjn);
        cs_vec = cs_vec < 0 ? csn : ct.concat(cs_vec, csn);
      }
    }
    Tape::NodeId loss =
        as_scalar(ct, ct.mul_scalar(bce_acc, 1.0 / static_cast<double>(n)));
    if (clf.lambda > 0.0) {
      Tape::NodeId bal =
          ct.add_scalar(ct.add(ct.mean(cj_vec), ct.mean(cs_vec)), -1.0);
      loss = ct.add(loss, ct.mul_scalar(ct.mul(bal, bal), clf.lambda));
    }
    ct.backward(loss);
    summary_backward_batch(clf.summary, sb);
    return ct.val(loss).values[0];
  };
  hooks.eval_loss = [&](std::span<const int64_t> idxs) {
    std::vector<int> pi(idxs.size());
    for (size_t i = 0; i < idxs.size(); ++i)
      pi[i] = static_cast<int>((i + 1) % idxs.size());
    return bce_plain(idxs, pi);
  };

  TrainMeta m = fit_dataset(data.n, cfg, adam, all, hooks, "nre");
  if (meta) *meta = m;
  return clf;
}

}  // namespace nabi::amortisers
