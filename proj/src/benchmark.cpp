#include "nabi/benchmark.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "nabi/checkpoint.hpp"
#include "nabi/dataset_io.hpp"
#include "nabi/scores.hpp"
#include "nabi/stats.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace nabi::io {

namespace fs = std::filesystem;
using amortisers::TrainConfig;
using amortisers::TrainMeta;
using models::Dataset;
using models::GenerativeModel;
using models::ParamTransform;
using ndiff::Tensor;

namespace {

using Clock = std::chrono::steady_clock;

double elapsed(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

uint64_t method_seed(uint64_t master, const std::string& method, uint64_t salt) {
  uint64_t h = master;
  for (char c : method) h = Rng::mix(h ^ static_cast<uint64_t>(c));
  return Rng::mix(h ^ salt);
}

struct TestSet {
  std::vector<double> theta;
  std::vector<Tensor> fields;
};

// Per-dataset posterior summaries under one method.
struct MethodOutput {
  std::vector<DatasetScore> rows;
  double wallclock_s = 0;
  double mean_latency_s = 0;
  int64_t n = 0;
};

MethodOutput score_sampler(
    const std::string& method, const TestSet& test, int64_t n_use, int n_samples,
    uint64_t master_seed,
    const std::function<std::vector<double>(const Tensor&, Rng&)>& draw_fn) {
  MethodOutput out;
  out.n = n_use;
  out.rows.resize(static_cast<size_t>(n_use));
  std::vector<double> lat(static_cast<size_t>(n_use), 0.0);
  auto t0 = Clock::now();
#pragma omp parallel for schedule(dynamic, 1)
  for (int64_t i = 0; i < n_use; ++i) {
    auto ui = static_cast<size_t>(i);
    Rng rng(method_seed(master_seed, method, static_cast<uint64_t>(i)));
    auto ti = Clock::now();
    std::vector<double> draws = draw_fn(test.fields[ui], rng);
    lat[ui] = elapsed(ti);
    double mean = 0;
    for (double v : draws) mean += v;
    mean /= static_cast<double>(draws.size());
    double q05 = stats::quantile_type7(draws, 0.05);
    double q95 = stats::quantile_type7(draws, 0.95);
    double truth = test.theta[ui];
    DatasetScore& r = out.rows[ui];
    r.method = method;
    r.dataset_id = i;
    r.theta_true = truth;
    r.estimate = mean;
    r.q05 = q05;
    r.q95 = q95;
    r.abs_err = std::abs(mean - truth);
    r.sq_err = (mean - truth) * (mean - truth);
    r.is90 = eval::interval_score(q05, q95, truth, 0.1);
    r.crps = eval::crps_empirical(draws, truth);
    r.covered = truth >= q05 && truth <= q95;
    (void)n_samples;
  }
  out.wallclock_s = elapsed(t0);
  double s = 0;
  for (double v : lat) s += v;
  out.mean_latency_s = s / static_cast<double>(n_use);
  return out;
}

MethodScores aggregate(const std::string& method, const MethodOutput& mo,
                       bool with_crps) {
  std::vector<double> sq, ab, is, cr;
  std::vector<std::array<double, 2>> iv;
  std::vector<double> truths;
  for (const auto& r : mo.rows) {
    sq.push_back(r.sq_err);
    ab.push_back(r.abs_err);
    is.push_back(r.is90);
    if (r.crps) cr.push_back(*r.crps);
    iv.push_back({r.q05, r.q95});
    truths.push_back(r.theta_true);
  }
  MethodScores m;
  m.method = method;
  m.rmspe = std::sqrt(stats::median(sq));
  m.mape = stats::median(ab);
  m.mis90 = stats::median(is);
  m.cov90 = eval::coverage(iv, truths);
  if (with_crps && !cr.empty()) m.mcrps = stats::median(cr);
  m.wallclock_s = mo.wallclock_s;
  m.n_datasets = mo.n;
  return m;
}

}  // namespace

BenchmarkResult run_benchmark(const RunConfig& cfg) {
#ifdef _OPENMP
  if (cfg.workers > 0) omp_set_num_threads(cfg.workers);
#endif
  fs::create_directories(cfg.out_dir);
  auto out_path = [&](const std::string& name) {
    return (fs::path(cfg.out_dir) / name).string();
  };

  std::unique_ptr<GenerativeModel> model = models::make_model(cfg.model);

  // Shared training data (file-backed so reruns are cheap).
  std::string train_path =
      cfg.train_data.empty() ? out_path("train.nds") : cfg.train_data;
  Dataset train;
  if (fs::exists(train_path)) {
    train = load_dataset(train_path);
    std::cerr << "benchmark: loaded training data from " << train_path << " (n="
              << train.n << ")\n";
    if (train.model_id != model->id())
      throw std::runtime_error("training data simulated from '" + train.model_id +
                               "', config wants '" + model->id() + "'");
  } else {
    std::cerr << "benchmark: simulating " << cfg.train_n << " training draws\n";
    train = models::make_training_set(*model, cfg.train_n, cfg.seed);
    save_dataset(train_path, train);
  }

  // Shared test set (independent seed).
  TestSet test;
  test.theta.resize(static_cast<size_t>(cfg.test_n));
  test.fields.resize(static_cast<size_t>(cfg.test_n));
  uint64_t test_seed = Rng::mix(cfg.seed ^ 0x7e57da7aULL);
  {
    Dataset tds;
    std::string test_path = cfg.test_data.empty() ? out_path("test.nds") : cfg.test_data;
    if (fs::exists(test_path)) {
      tds = load_dataset(test_path);
      if (tds.n < cfg.test_n)
        throw std::runtime_error("test dataset smaller than configured test_n");
    } else {
      tds = models::make_training_set(*model, cfg.test_n, test_seed);
      save_dataset(test_path, tds);
    }
    for (int64_t i = 0; i < cfg.test_n; ++i) {
      test.theta[static_cast<size_t>(i)] = tds.theta[static_cast<size_t>(i)];
      test.fields[static_cast<size_t>(i)] = tds.field_tensor(i);
    }
  }

  BenchmarkResult result;
  double lo = model->theta_lo(), hi = model->theta_hi();

  // MI summary checkpoint shared between "mine" training and rkl3.
  auto get_mine = [&]() -> AmortiserBundle {
    std::string path = out_path("mine.ckpt");
    if (fs::exists(path)) {
      std::cerr << "benchmark: loading " << path << "\n";
      return load_bundle(path);
    }
    TrainConfig tc = cfg.train;
    tc.seed = method_seed(cfg.seed, "mine", 0);
    AmortiserBundle b;
    b.method = "mine";
    b.model_id = model->id();
    b.cfg = tc;
    b.data_shape = train.data_shape;
    std::cerr << "benchmark: training mine summary\n";
    b.mine = amortisers::train_mine(train, tc, &b.meta);
    std::cerr << "benchmark: mine MI estimate " << b.mine->mi_estimate << " ("
              << b.meta.wallclock_s << " s)\n";
    save_bundle(path, b);
    return b;
  };

  auto run_method = [&](const std::string& method) {
    TrainConfig tc = cfg.train;
    tc.seed = method_seed(cfg.seed, method, 0);
    std::string ckpt = out_path(method + ".ckpt");

    if (method == "mcmc") {
      int64_t n_use = std::min<int64_t>(cfg.mcmc_test_n, cfg.test_n);
      MethodOutput mo = score_sampler(
          "mcmc", test, n_use, cfg.n_samples, cfg.seed,
          [&](const Tensor& z, Rng& rng) {
            baselines::MhConfig mc = cfg.mcmc;
            mc.seed = rng.next_u64();
            auto res = baselines::metropolis_hastings(*model, z, mc);
            if (res.acceptance_warning)
              std::cerr << "mcmc: acceptance rate " << res.acceptance_rate
                        << " outside [0.05, 0.8]\n";
            return res.draws;
          });
      result.report.push_back(aggregate("mcmc", mo, true));
      result.latency.emplace_back("mcmc", mo.mean_latency_s);
      result.dump.insert(result.dump.end(), mo.rows.begin(), mo.rows.end());
      return;
    }

    if (method == "nbe") {
      AmortiserBundle b;
      if (fs::exists(ckpt)) {
        std::cerr << "benchmark: loading " << ckpt << "\n";
        b = load_bundle(ckpt);
      } else {
        b.method = "nbe";
        b.model_id = model->id();
        b.cfg = tc;
        b.data_shape = train.data_shape;
        std::cerr << "benchmark: training nbe\n";
        b.nbe = amortisers::train_nbe(train, tc, &b.meta);
        std::cerr << "benchmark: nbe trained in " << b.meta.wallclock_s << " s ("
                  << b.meta.epochs << " epochs)\n";
        save_bundle(ckpt, b);
      }
      const auto& est = *b.nbe;
      MethodOutput mo;
      mo.n = cfg.test_n;
      mo.rows.resize(static_cast<size_t>(cfg.test_n));
      std::vector<double> lat(static_cast<size_t>(cfg.test_n));
      auto t0 = Clock::now();
#pragma omp parallel for schedule(dynamic, 8)
      for (int64_t i = 0; i < cfg.test_n; ++i) {
        auto ui = static_cast<size_t>(i);
        auto ti = Clock::now();
        auto e = est.estimate(test.fields[ui]);
        lat[ui] = elapsed(ti);
        double truth = test.theta[ui];
        double q05 = std::min(e[1], e[2]), q95 = std::max(e[1], e[2]);
        DatasetScore& r = mo.rows[ui];
        r.method = "nbe";
        r.dataset_id = i;
        r.theta_true = truth;
        r.estimate = e[0];
        r.q05 = q05;
        r.q95 = q95;
        r.abs_err = std::abs(e[0] - truth);
        r.sq_err = (e[0] - truth) * (e[0] - truth);
        r.is90 = eval::interval_score(q05, q95, truth, 0.1);
        r.covered = truth >= q05 && truth <= q95;
      }
      mo.wallclock_s = elapsed(t0);
      double s = 0;
      for (double v : lat) s += v;
      mo.mean_latency_s = s / static_cast<double>(cfg.test_n);
      result.report.push_back(aggregate("nbe", mo, false));
      result.latency.emplace_back("nbe", mo.mean_latency_s);
      result.dump.insert(result.dump.end(), mo.rows.begin(), mo.rows.end());
      return;
    }

    if (method == "fkl") {
      AmortiserBundle b;
      if (fs::exists(ckpt)) {
        std::cerr << "benchmark: loading " << ckpt << "\n";
        b = load_bundle(ckpt);
      } else {
        b.method = "fkl";
        b.model_id = model->id();
        b.cfg = tc;
        b.data_shape = train.data_shape;
        std::cerr << "benchmark: training fkl\n";
        b.fkl = amortisers::train_fkl(train, ParamTransform::probit_scale(lo, hi), tc,
                                      &b.meta);
        std::cerr << "benchmark: fkl trained in " << b.meta.wallclock_s << " s ("
                  << b.meta.epochs << " epochs)\n";
        save_bundle(ckpt, b);
      }
      const auto& post = *b.fkl;
      MethodOutput mo = score_sampler(
          "fkl", test, cfg.test_n, cfg.n_samples, cfg.seed,
          [&](const Tensor& z, Rng& rng) { return post.sample(z, cfg.n_samples, rng); });
      result.report.push_back(aggregate("fkl", mo, true));
      result.latency.emplace_back("fkl", mo.mean_latency_s);
      result.dump.insert(result.dump.end(), mo.rows.begin(), mo.rows.end());
      return;
    }

    if (method == "rkl1" || method == "rkl2" || method == "rkl3") {
      AmortiserBundle b;
      if (fs::exists(ckpt)) {
        std::cerr << "benchmark: loading " << ckpt << "\n";
        b = load_bundle(ckpt);
      } else {
        b.method = method;
        b.model_id = model->id();
        b.cfg = tc;
        b.data_shape = train.data_shape;
        ParamTransform tf = ParamTransform::logit_scale(lo, hi);
        if (method == "rkl1") {
          std::cerr << "benchmark: training rkl1 (exact likelihood)\n";
          b.rkl = amortisers::train_rkl(*model, amortisers::RklBackend::kExact, tf,
                                        nullptr, nullptr, tc, &b.meta);
        } else {
          amortisers::SummaryFn stat;
          std::string stat_name;
          AmortiserBundle mine_b;
          if (method == "rkl2") {
            stat = [](const Tensor& z) { return models::expert_summary(z); };
            stat_name = "expert";
          } else {
            mine_b = get_mine();
            const auto* mine_ptr = &*mine_b.mine;
            stat = [mine_ptr](const Tensor& z) { return mine_ptr->statistic(z); };
            stat_name = "mi";
          }
          std::cerr << "benchmark: fitting synthetic likelihood (" << stat_name
                    << " statistic)\n";
          std::vector<double> svals(static_cast<size_t>(train.n));
#pragma omp parallel for schedule(dynamic, 64)
          for (int64_t i = 0; i < train.n; ++i)
            svals[static_cast<size_t>(i)] = stat(train.field_tensor(i));
          TrainConfig sc = tc;
          sc.seed = method_seed(cfg.seed, method + "_synth", 0);
          amortisers::SyntheticLikelihood syn =
              amortisers::train_synthetic_likelihood(train.theta, svals, sc, nullptr);
          std::cerr << "benchmark: training " << method << " (synthetic likelihood)\n";
          b.rkl = amortisers::train_rkl(
              *model,
              method == "rkl2" ? amortisers::RklBackend::kSyntheticExpert
                               : amortisers::RklBackend::kSyntheticMi,
              tf, &syn, stat, tc, &b.meta);
        }
        std::cerr << "benchmark: " << method << " trained in " << b.meta.wallclock_s
                  << " s (" << b.meta.epochs << " epochs)\n";
        save_bundle(ckpt, b);
      }
      const auto& post = *b.rkl;
      MethodOutput mo = score_sampler(
          method, test, cfg.test_n, cfg.n_samples, cfg.seed,
          [&](const Tensor& z, Rng& rng) { return post.sample(z, cfg.n_samples, rng); });
      result.report.push_back(aggregate(method, mo, true));
      result.latency.emplace_back(method, mo.mean_latency_s);
      result.dump.insert(result.dump.end(), mo.rows.begin(), mo.rows.end());
      return;
    }

    if (method == "nre") {
      AmortiserBundle b;
      if (fs::exists(ckpt)) {
        std::cerr << "benchmark: loading " << ckpt << "\n";
        b = load_bundle(ckpt);
      } else {
        b.method = "nre";
        b.model_id = model->id();
        b.cfg = tc;
        b.data_shape = train.data_shape;
        std::cerr << "benchmark: training nre\n";
        b.nre = amortisers::train_nre(train, lo, hi, tc, &b.meta);
        std::cerr << "benchmark: nre trained in " << b.meta.wallclock_s << " s ("
                  << b.meta.epochs << " epochs)\n";
        save_bundle(ckpt, b);
      }
      const auto& clf = *b.nre;
      MethodOutput mo = score_sampler(
          "nre", test, cfg.test_n, cfg.n_samples, cfg.seed,
          [&](const Tensor& z, Rng& rng) {
            auto grid = clf.posterior_grid(z, cfg.nre_grid);
            return grid.sample(cfg.n_samples, rng);
          });
      result.report.push_back(aggregate("nre", mo, true));
      result.latency.emplace_back("nre", mo.mean_latency_s);
      result.dump.insert(result.dump.end(), mo.rows.begin(), mo.rows.end());
      return;
    }

    throw std::invalid_argument("unknown benchmark method '" + method +
                                "' (mine is a training artifact, not a posterior method)");
  };

  for (const std::string& method : cfg.methods) {
    try {
      run_method(method);
    } catch (const std::exception& e) {
      std::cerr << "benchmark: method '" << method << "' failed: " << e.what() << "\n";
      result.failures.push_back({method, e.what()});
    }
  }

  write_report_csv(out_path("report.csv"), result.report);
  write_dump_csv(out_path("dump.csv"), result.dump);
  write_estimates_csv(out_path("estimates.csv"), result.dump);
  if (!result.dump.empty()) {
    write_scatter_svg(out_path("scatter.svg"), result.dump);
    write_box_svg(out_path("boxplot.svg"), result.dump);
  }
  if (!result.failures.empty()) {
    std::ofstream fl(out_path("failures.txt"), std::ios::trunc);
    for (const auto& f : result.failures) fl << f.method << ": " << f.what << "\n";
  }
  return result;
}

}  // namespace nabi::io
