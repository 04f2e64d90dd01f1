#pragma once

#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "vqa/types.hpp"

// Result bookkeeping for the repeated-split protocol: per-run test metrics,
// mean +- std aggregates, JSON serialization and a table-style CSV.

namespace vqa {

struct RunMetrics {
  int run_index = 0;
  double srocc = 0, krocc = 0, plcc = 0, rmse = 0;
  int best_epoch = -1;
  double val_srocc = 0;
  bool complete = false;
  std::string error;  ///< failure note when the run did not finish
};

struct MetricAggregate {
  double mean = std::numeric_limits<double>::quiet_NaN();
  double stddev = std::numeric_limits<double>::quiet_NaN();
};

struct EvalReport {
  std::string dataset;
  std::string model;
  bool mapped_plcc = true;  ///< logistic mapping applied before PLCC / RMSE
  std::vector<RunMetrics> runs;
  MetricAggregate srocc, krocc, plcc, rmse;
  bool complete = false;  ///< every run finished

  Index complete_runs() const;
};

/// Aggregates over the complete runs: mean and population standard deviation
/// (a single run reports std 0). No complete runs leave the aggregates NaN.
EvalReport aggregate_runs(std::string dataset, std::string model,
                          std::vector<RunMetrics> runs, bool mapped_plcc = true);

void write_report_json(const std::filesystem::path& path, const EvalReport& report);
EvalReport read_report_json(const std::filesystem::path& path);

/// One table row per report: dataset, model, run counts, then mean/std per
/// metric in SROCC, KROCC, PLCC, RMSE order.
void write_report_csv(const std::filesystem::path& path,
                      const std::vector<EvalReport>& reports);

}  // namespace vqa
