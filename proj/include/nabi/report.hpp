#pragma once

#include <optional>
#include <string>
#include <vector>

namespace nabi::io {

struct MethodScores {
  std::string method;
  double rmspe = 0, mape = 0, mis90 = 0, cov90 = 0;
  std::optional<double> mcrps;  // absent for NBE
  double wallclock_s = 0;
  int64_t n_datasets = 0;
};

struct DatasetScore {
  std::string method;
  int64_t dataset_id = 0;
  double abs_err = 0, sq_err = 0, is90 = 0;
  std::optional<double> crps;
  bool covered = false;
  // extra columns for the estimate-vs-truth scatter
  double theta_true = 0, estimate = 0, q05 = 0, q95 = 0;
};

// header: method,rmspe,mape,mis90,cov90,mcrps,wallclock_s
void write_report_csv(const std::string& path, const std::vector<MethodScores>& rows);
std::vector<MethodScores> read_report_csv(const std::string& path);

// header: method,dataset_id,abs_err,sq_err,is90,crps,covered
void write_dump_csv(const std::string& path, const std::vector<DatasetScore>& rows);
std::vector<DatasetScore> read_dump_csv(const std::string& path);

// header: method,dataset_id,theta_true,estimate,q05,q95
void write_estimates_csv(const std::string& path, const std::vector<DatasetScore>& rows);
std::vector<DatasetScore> read_estimates_csv(const std::string& path);

// Static plots (no interactivity): estimate-vs-truth scatter and per-score
// boxplots across methods.
void write_scatter_svg(const std::string& path, const std::vector<DatasetScore>& rows);
void write_box_svg(const std::string& path, const std::vector<DatasetScore>& rows);

}  // namespace nabi::io
