#pragma once

#include <string>
#include <vector>

#include "nabi/config.hpp"
#include "nabi/report.hpp"

namespace nabi::io {

struct MethodFailure {
  std::string method;
  std::string what;
};

struct BenchmarkResult {
  std::vector<MethodScores> report;
  std::vector<DatasetScore> dump;
  std::vector<MethodFailure> failures;
  // mean per-dataset inference seconds, measured per dataset
  std::vector<std::pair<std::string, double>> latency;
};

// Simulates (or loads) the shared train/test data, trains (or loads) every
// requested method, scores each on the test set, and writes report.csv,
// dump.csv, estimates.csv and the two SVG plots under cfg.out_dir.
// A method failure is logged and the remaining methods still complete.
BenchmarkResult run_benchmark(const RunConfig& cfg);

}  // namespace nabi::io
