#include <chrono>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "nabi/benchmark.hpp"
#include "nabi/checkpoint.hpp"
#include "nabi/config.hpp"
#include "nabi/dataset_io.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace {

using namespace nabi;

void set_workers(int workers) {
#ifdef _OPENMP
  if (workers > 0) omp_set_num_threads(workers);
#else
  (void)workers;
#endif
}

double now_s() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

io::RunConfig config_or_default(const std::string& path) {
  return path.empty() ? io::RunConfig{} : io::load_run_config(path);
}

int cmd_simulate(const std::string& model_id, int64_t n, uint64_t seed,
                 const std::string& out, int workers) {
  set_workers(workers);
  auto model = models::make_model(model_id);
  auto t0 = now_s();
  models::Dataset ds = models::make_training_set(*model, n, seed);
  io::save_dataset(out, ds);
  std::cout << "simulate: model=" << model_id << " n=" << n << " seed=" << seed
            << " checksum=" << std::hex << io::dataset_checksum(ds) << std::dec
            << " wallclock_s=" << now_s() - t0 << " -> " << out << "\n";
  return 0;
}

int cmd_train(const std::string& method, const std::string& data_path,
              const std::string& config_path, uint64_t seed, const std::string& out,
              const std::string& mine_ckpt, int workers) {
  set_workers(workers);
  io::RunConfig rc = config_or_default(config_path);
  amortisers::TrainConfig tc = rc.train;
  tc.seed = seed;

  models::Dataset data = io::load_dataset(data_path);
  auto model = models::make_model(data.model_id);
  double lo = model->theta_lo(), hi = model->theta_hi();

  io::AmortiserBundle b;
  b.method = method;
  b.model_id = data.model_id;
  b.cfg = tc;
  b.data_shape = data.data_shape;

  if (method == "nbe") {
    b.nbe = amortisers::train_nbe(data, tc, &b.meta);
  } else if (method == "fkl") {
    b.fkl = amortisers::train_fkl(data, models::ParamTransform::probit_scale(lo, hi),
                                  tc, &b.meta);
  } else if (method == "mine") {
    b.mine = amortisers::train_mine(data, tc, &b.meta);
  } else if (method == "nre") {
    b.nre = amortisers::train_nre(data, lo, hi, tc, &b.meta);
  } else if (method == "rkl1") {
    b.rkl = amortisers::train_rkl(*model, amortisers::RklBackend::kExact,
                                  models::ParamTransform::logit_scale(lo, hi), nullptr,
                                  nullptr, tc, &b.meta);
  } else if (method == "rkl2" || method == "rkl3") {
    amortisers::SummaryFn stat;
    io::AmortiserBundle mine_b;
    if (method == "rkl2") {
      stat = [](const ndiff::Tensor& z) { return models::expert_summary(z); };
    } else {
      if (mine_ckpt.empty())
        throw std::runtime_error(
            "rkl3 requires --mine-checkpoint (train the mine summary first)");
      mine_b = io::load_bundle(mine_ckpt);
      if (!mine_b.mine)
        throw std::runtime_error("'" + mine_ckpt + "' is not a mine checkpoint");
      const auto* mp = &*mine_b.mine;
      stat = [mp](const ndiff::Tensor& z) { return mp->statistic(z); };
    }
    std::vector<double> svals(static_cast<size_t>(data.n));
    for (int64_t i = 0; i < data.n; ++i)
      svals[static_cast<size_t>(i)] = stat(data.field_tensor(i));
    amortisers::TrainConfig sc = tc;
    sc.seed = Rng::mix(seed ^ 0x5u);
    auto syn = amortisers::train_synthetic_likelihood(data.theta, svals, sc, nullptr);
    b.rkl = amortisers::train_rkl(*model,
                                  method == "rkl2"
                                      ? amortisers::RklBackend::kSyntheticExpert
                                      : amortisers::RklBackend::kSyntheticMi,
                                  models::ParamTransform::logit_scale(lo, hi), &syn,
                                  stat, tc, &b.meta);
  } else {
    throw std::runtime_error("unknown method '" + method +
                             "' (expected nbe|fkl|rkl1|rkl2|rkl3|mine|nre)");
  }
  io::save_bundle(out, b);
  std::cout << "train: method=" << method << " epochs=" << b.meta.epochs
            << " best_val=" << b.meta.best_val << " wallclock_s=" << b.meta.wallclock_s
            << " -> " << out << "\n";
  return 0;
}

int cmd_infer(const std::string& ckpt_path, const std::string& data_path,
              int n_samples, uint64_t seed, const std::string& out, int workers) {
  set_workers(workers);
  io::AmortiserBundle b = io::load_bundle(ckpt_path);
  models::Dataset data = io::load_dataset(data_path);
  if (data.data_shape != b.data_shape)
    throw std::runtime_error("checkpoint expects data shape different from file");

  io::SamplesFile sf;
  sf.method = b.method;
  sf.records.resize(static_cast<size_t>(data.n));
  double total = 0;
  for (int64_t i = 0; i < data.n; ++i) {
    ndiff::Tensor z = data.field_tensor(i);
    Rng rng(Rng::mix(seed ^ static_cast<uint64_t>(i)));
    auto t0 = now_s();
    io::SampleRecord rec;
    rec.dataset_id = static_cast<uint64_t>(i);
    if (b.nbe) {
      auto e = b.nbe->estimate(z);
      rec.is_triple = true;
      rec.values = {e[0], e[1], e[2]};
    } else if (b.fkl) {
      rec.values = b.fkl->sample(z, n_samples, rng);
    } else if (b.rkl) {
      rec.values = b.rkl->sample(z, n_samples, rng);
    } else if (b.nre) {
      rec.values = b.nre->posterior_grid(z, 2000).sample(n_samples, rng);
    } else {
      throw std::runtime_error("checkpoint method '" + b.method +
                               "' does not produce posterior output");
    }
    total += now_s() - t0;
    sf.records[static_cast<size_t>(i)] = std::move(rec);
  }
  io::save_samples(out, sf);
  std::cout << "infer: method=" << b.method << " datasets=" << data.n
            << " mean_latency_s=" << total / static_cast<double>(data.n) << " -> "
            << out << "\n";
  return 0;
}

int cmd_benchmark(const std::string& config_path, const std::string& out_dir,
                  uint64_t seed, bool seed_set, int workers) {
  io::RunConfig rc = config_or_default(config_path);
  if (!out_dir.empty()) rc.out_dir = out_dir;
  if (seed_set) {
    rc.seed = seed;
    rc.train.seed = seed;
  }
  if (workers > 0) rc.workers = workers;
  io::BenchmarkResult res = io::run_benchmark(rc);
  std::cout << "benchmark: " << res.report.size() << " methods scored, "
            << res.failures.size() << " failed -> " << rc.out_dir << "/report.csv\n";
  for (const auto& m : res.report)
    std::cout << "  " << m.method << ": rmspe=" << m.rmspe << " cov90=" << m.cov90
              << " wallclock_s=" << m.wallclock_s << "\n";
  return res.failures.empty() ? 0 : 1;
}

int cmd_report(const std::string& dump_path, const std::string& estimates_path,
               const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  auto dump = io::read_dump_csv(dump_path);
  io::write_box_svg((std::filesystem::path(out_dir) / "boxplot.svg").string(), dump);
  if (!estimates_path.empty()) {
    auto est = io::read_estimates_csv(estimates_path);
    io::write_scatter_svg((std::filesystem::path(out_dir) / "scatter.svg").string(),
                          est);
  }
  std::cout << "report: plots written to " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nabi: amortised neural parameter inference"};
  app.require_subcommand(1);

  std::string model = "gp16", config, out, data, method, ckpt, mine_ckpt;
  std::string dump_csv, estimates_csv;
  int64_t n = 1000;
  uint64_t seed = 1;
  int workers = 0, n_samples = 1000;

  auto* sim = app.add_subcommand("simulate", "draw (theta, Z) pairs from a model");
  sim->add_option("--model", model, "model id (gp16, toy_normal, ...)");
  sim->add_option("--n", n, "number of draws");
  sim->add_option("--seed", seed, "master seed");
  sim->add_option("--out", out, "output dataset file")->required();
  sim->add_option("--workers", workers, "worker threads (0 = all)");

  auto* tr = app.add_subcommand("train", "train an amortised method");
  tr->add_option("--method", method, "nbe|fkl|rkl1|rkl2|rkl3|mine|nre")->required();
  tr->add_option("--data", data, "training dataset file")->required();
  tr->add_option("--config", config, "run-config JSON (optim/arch overrides)");
  tr->add_option("--seed", seed, "training seed");
  tr->add_option("--out", out, "output checkpoint")->required();
  tr->add_option("--mine-checkpoint", mine_ckpt, "mine checkpoint (rkl3)");
  tr->add_option("--workers", workers, "worker threads (0 = all)");

  auto* inf = app.add_subcommand("infer", "amortised inference on a dataset file");
  inf->add_option("--checkpoint", ckpt, "trained checkpoint")->required();
  inf->add_option("--data", data, "dataset file")->required();
  inf->add_option("--samples", n_samples, "posterior draws per dataset");
  inf->add_option("--seed", seed, "sampling seed");
  inf->add_option("--out", out, "output samples file")->required();
  inf->add_option("--workers", workers, "worker threads (0 = all)");

  auto* bm = app.add_subcommand("benchmark", "train, infer and score all methods");
  bm->add_option("--config", config, "run-config JSON");
  bm->add_option("--out", out, "output directory (overrides config)");
  auto* seed_opt = bm->add_option("--seed", seed, "master seed (overrides config)");
  bm->add_option("--workers", workers, "worker threads (0 = all)");

  auto* rp = app.add_subcommand("report", "re-render plots from benchmark CSVs");
  rp->add_option("--dump", dump_csv, "per-dataset dump CSV")->required();
  rp->add_option("--estimates", estimates_csv, "estimates CSV (for the scatter)");
  rp->add_option("--out", out, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) return cmd_simulate(model, n, seed, out, workers);
    if (tr->parsed())
      return cmd_train(method, data, config, seed, out, mine_ckpt, workers);
    if (inf->parsed()) return cmd_infer(ckpt, data, n_samples, seed, out, workers);
    if (bm->parsed())
      return cmd_benchmark(config, out, seed, seed_opt->count() > 0, workers);
    if (rp->parsed()) return cmd_report(dump_csv, estimates_csv, out);
  } catch (const std::exception& e) {
    std::cerr << "nabi: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
