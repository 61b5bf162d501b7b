#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "fedreg/config.hpp"
#include "fedreg/data.hpp"
#include "fedreg/report.hpp"

namespace fedreg {

struct SweepPoint {
  ExperimentConfig config;  // scalars resolved, sweep lists cleared
  std::string name;         // directory name under output_dir
};

/// Cartesian product mu x beta x E x N; a missing list contributes the scalar value.
std::vector<SweepPoint> expand_sweep(const ExperimentConfig& config);

struct DataSplit {
  Dataset train;
  Dataset test;
};

/// Synthetic data is generated from the experiment seed and split head/tail into train/test.
DataSplit load_datasets(const ExperimentConfig& config);

ArchitecturePtr architecture_for(const ExperimentConfig& config, const Dataset& train);

Partition partition_for(const ExperimentConfig& point, const Dataset& train);

struct PointResult {
  SweepPoint point;
  RunReport report;
};

/// Trains every sweep point on already-loaded data. Does not touch the filesystem.
PointResult run_point(const SweepPoint& point, const DataSplit& data, const RoundObserver& observer = {});

/// Full run: loads data, trains all points, writes per-point reports and summary.csv under
/// config.output_dir. Progress goes to `log`.
std::vector<PointResult> run_experiment(const ExperimentConfig& config, std::ostream& log);

/// algorithm,mu,beta,E,N,headline_accuracy
std::string summary_csv(const std::vector<PointResult>& results);

/// Human-readable resolved config and per-point round plan, for --dry-run.
std::string describe_plan(const ExperimentConfig& config);

/// Heatmap CSV (client,class,count) of the training partition for `config`'s scalar beta/clients.
std::string partition_stats_csv(const ExperimentConfig& config);

}  // namespace fedreg
