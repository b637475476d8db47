#include "nabi/config.hpp"

#include <fstream>
#include <set>

namespace nabi::io {

namespace {

void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                const std::string& where) {
  if (!j.is_object()) throw std::runtime_error("config: '" + where + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key()))
      throw std::runtime_error("config: unknown key '" + it.key() + "' in " + where);
  }
}

template <typename T>
void get_if(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

RunConfig parse_run_config(const nlohmann::json& j) {
  RunConfig cfg;
  check_keys(j, {"model", "methods", "seed", "train_n", "test_n", "mcmc_test_n",
                 "n_samples", "workers", "nre_grid", "out_dir", "train_data",
                 "test_data", "optim", "arch", "rkl", "mcmc"},
             "top level");
  get_if(j, "model", cfg.model);
  get_if(j, "methods", cfg.methods);
  get_if(j, "seed", cfg.seed);
  get_if(j, "train_n", cfg.train_n);
  get_if(j, "test_n", cfg.test_n);
  get_if(j, "mcmc_test_n", cfg.mcmc_test_n);
  get_if(j, "n_samples", cfg.n_samples);
  get_if(j, "workers", cfg.workers);
  get_if(j, "nre_grid", cfg.nre_grid);
  get_if(j, "out_dir", cfg.out_dir);
  get_if(j, "train_data", cfg.train_data);
  get_if(j, "test_data", cfg.test_data);

  if (j.contains("optim")) {
    const auto& o = j.at("optim");
    check_keys(o, {"batch", "lr", "max_epochs", "patience", "plateau", "val_frac"},
               "optim");
    get_if(o, "batch", cfg.train.batch);
    get_if(o, "lr", cfg.train.lr);
    get_if(o, "max_epochs", cfg.train.max_epochs);
    get_if(o, "patience", cfg.train.patience);
    get_if(o, "plateau", cfg.train.plateau);
    get_if(o, "val_frac", cfg.train.val_frac);
  }
  if (j.contains("arch")) {
    const auto& a = j.at("arch");
    check_keys(a,
               {"summary_kind", "summary_width", "head_width", "flow_blocks",
                "conditioner_width", "critic_width", "nre_head_layers", "nre_lambda",
                "mine_objective"},
               "arch");
    get_if(a, "summary_kind", cfg.train.summary_kind);
    get_if(a, "summary_width", cfg.train.summary_width);
    get_if(a, "head_width", cfg.train.head_width);
    get_if(a, "flow_blocks", cfg.train.flow_blocks);
    get_if(a, "conditioner_width", cfg.train.conditioner_width);
    get_if(a, "critic_width", cfg.train.critic_width);
    get_if(a, "nre_head_layers", cfg.train.nre_head_layers);
    get_if(a, "nre_lambda", cfg.train.nre_lambda);
    get_if(a, "mine_objective", cfg.train.mine_objective);
  }
  if (j.contains("rkl")) {
    const auto& r = j.at("rkl");
    check_keys(r, {"batch", "draws", "steps_per_epoch", "val_size"}, "rkl");
    get_if(r, "batch", cfg.train.rkl_batch);
    get_if(r, "draws", cfg.train.rkl_draws);
    get_if(r, "steps_per_epoch", cfg.train.rkl_steps_per_epoch);
    get_if(r, "val_size", cfg.train.rkl_val_size);
  }
  if (j.contains("mcmc")) {
    const auto& m = j.at("mcmc");
    check_keys(m, {"iterations", "burn_in", "retained", "proposal_std"}, "mcmc");
    get_if(m, "iterations", cfg.mcmc.iterations);
    get_if(m, "burn_in", cfg.mcmc.burn_in);
    get_if(m, "retained", cfg.mcmc.retained);
    get_if(m, "proposal_std", cfg.mcmc.proposal_std);
  }
  cfg.train.seed = cfg.seed;
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("config parse error in '" + path + "': " + e.what());
  }
  return parse_run_config(j);
}

nlohmann::json run_config_json(const RunConfig& cfg) {
  return {
      {"model", cfg.model},
      {"methods", cfg.methods},
      {"seed", cfg.seed},
      {"train_n", cfg.train_n},
      {"test_n", cfg.test_n},
      {"mcmc_test_n", cfg.mcmc_test_n},
      {"n_samples", cfg.n_samples},
      {"workers", cfg.workers},
      {"nre_grid", cfg.nre_grid},
      {"out_dir", cfg.out_dir},
      {"train_data", cfg.train_data},
      {"test_data", cfg.test_data},
      {"optim",
       {{"batch", cfg.train.batch},
        {"lr", cfg.train.lr},
        {"max_epochs", cfg.train.max_epochs},
        {"patience", cfg.train.patience},
        {"plateau", cfg.train.plateau},
        {"val_frac", cfg.train.val_frac}}},
      {"arch",
       {{"summary_kind", cfg.train.summary_kind},
        {"summary_width", cfg.train.summary_width},
        {"head_width", cfg.train.head_width},
        {"flow_blocks", cfg.train.flow_blocks},
        {"conditioner_width", cfg.train.conditioner_width},
        {"critic_width", cfg.train.critic_width},
        {"nre_head_layers", cfg.train.nre_head_layers},
        {"nre_lambda", cfg.train.nre_lambda},
        {"mine_objective", cfg.train.mine_objective}}},
      {"rkl",
       {{"batch", cfg.train.rkl_batch},
        {"draws", cfg.train.rkl_draws},
        {"steps_per_epoch", cfg.train.rkl_steps_per_epoch},
        {"val_size", cfg.train.rkl_val_size}}},
      {"mcmc",
       {{"iterations", cfg.mcmc.iterations},
        {"burn_in", cfg.mcmc.burn_in},
        {"retained", cfg.mcmc.retained},
        {"proposal_std", cfg.mcmc.proposal_std}}},
  };
}

}  // namespace nabi::io
