#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "nabi/amortisers.hpp"
#include "nabi/baselines.hpp"

namespace nabi::io {

// Pipeline configuration. Defaults mirror the reference study: 160,000
// training draws, 1,000 test datasets (100 for MCMC), 1,000 posterior draws.
struct RunConfig {
  std::string model = "gp16";
  std::vector<std::string> methods = {"mcmc", "nbe", "fkl", "rkl1",
                                      "rkl2", "rkl3", "nre"};
  uint64_t seed = 1;
  int64_t train_n = 160000;
  int64_t test_n = 1000;
  int64_t mcmc_test_n = 100;
  int n_samples = 1000;
  int workers = 0;  // 0 = all hardware threads
  int nre_grid = 2000;
  std::string out_dir = "bench_out";
  std::string train_data;  // optional pre-simulated dataset file
  std::string test_data;

  amortisers::TrainConfig train;
  baselines::MhConfig mcmc;
};

// Strict parse: any unknown key, at any level, is an error.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);
nlohmann::json run_config_json(const RunConfig& cfg);

}  // namespace nabi::io
