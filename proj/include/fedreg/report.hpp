#pragma once

#include <json.hpp>
#include <string>
#include <vector>

#include "fedreg/metrics.hpp"

namespace fedreg {

/// Result of one training run. `config` is the resolved configuration echo.
struct RunReport {
  nlohmann::json config = nlohmann::json::object();
  RoundHistory rounds;
  double headline_accuracy = 0.0;
  /// counts[client][class] of the training partition.
  std::vector<std::vector<std::size_t>> partition_counts;

  /// median_last_k over `rounds`, 0 when there are none.
  static double headline_from(const RoundHistory& rounds);
};

struct ReportPaths {
  std::string rounds_csv;     // round,accuracy,mean_local_loss,participants
  std::string report_json;    // RunReport
  std::string partition_csv;  // client,class,count
  static ReportPaths in_directory(const std::string& dir);
};

std::string rounds_csv(const RoundHistory& rounds);
std::string partition_csv(const std::vector<std::vector<std::size_t>>& counts);
nlohmann::json report_to_json(const RunReport& report);
RunReport report_from_json(const nlohmann::json& j);

/// Writes all three files; IO failures name the offending path.
void emit_report(const RunReport& report, const ReportPaths& paths);
RunReport load_report(const std::string& report_json_path);

void write_text_file(const std::string& path, const std::string& content);

}  // namespace fedreg
