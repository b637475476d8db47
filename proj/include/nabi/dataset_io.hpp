#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nabi/models.hpp"

namespace nabi::io {

// Dataset file: magic "NABIDSET", u32 version, model id, count, parameter
// dimension, data shape, then records of (theta, Z) as little-endian f64.
void save_dataset(const std::string& path, const models::Dataset& ds);
models::Dataset load_dataset(const std::string& path);

// FNV-1a over the record bytes; printed by the simulate command.
uint64_t dataset_checksum(const models::Dataset& ds);

// Per-dataset posterior output: either draws or an NBE (mean, q05, q95)
// triple.
struct SampleRecord {
  uint64_t dataset_id = 0;
  bool is_triple = false;
  std::vector<double> values;
};

struct SamplesFile {
  std::string method;
  std::vector<SampleRecord> records;
};

void save_samples(const std::string& path, const SamplesFile& sf);
SamplesFile load_samples(const std::string& path);

}  // namespace nabi::io
