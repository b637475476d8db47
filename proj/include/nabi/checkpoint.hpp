#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "nabi/amortisers.hpp"

namespace nabi::io {

// Checkpoint file: magic "NABICKPT", u32 version, JSON metadata (method,
// model, architecture, training record), then named little-endian f64 arrays.
// save -> load -> save round-trips byte-exactly; version mismatch is fatal.
struct Checkpoint {
  nlohmann::json meta;
  std::vector<std::pair<std::string, ndiff::Tensor>> arrays;
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

// Any trained amortiser, tagged by method name.
struct AmortiserBundle {
  std::string method;   // nbe | fkl | rkl1 | rkl2 | rkl3 | mine | nre
  std::string model_id;
  amortisers::TrainConfig cfg;  // architecture knobs used at build time
  amortisers::TrainMeta meta;
  std::vector<int64_t> data_shape;

  std::optional<amortisers::NbeEstimator> nbe;
  std::optional<amortisers::FklPosterior> fkl;
  std::optional<amortisers::RklPosterior> rkl;
  std::optional<amortisers::MineSummary> mine;
  std::optional<amortisers::NreClassifier> nre;
};

Checkpoint to_checkpoint(AmortiserBundle& bundle);
AmortiserBundle from_checkpoint(const Checkpoint& ck);

void save_bundle(const std::string& path, AmortiserBundle& bundle);
AmortiserBundle load_bundle(const std::string& path);

}  // namespace nabi::io
