#include "fedreg/report.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "fedreg/errors.hpp"

namespace fedreg {

namespace {

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

double RunReport::headline_from(const RoundHistory& rounds) {
  return rounds.empty() ? 0.0 : median_last_k(rounds, 10);
}

ReportPaths ReportPaths::in_directory(const std::string& dir) {
  return {dir + "/rounds.csv", dir + "/report.json", dir + "/partition.csv"};
}

std::string rounds_csv(const RoundHistory& rounds) {
  std::ostringstream out;
  out << "round,accuracy,mean_local_loss,participants\n";
  for (const auto& r : rounds) {
    out << r.round << ',' << fixed6(r.accuracy) << ',' << fixed6(r.mean_local_loss) << ',';
    for (std::size_t i = 0; i < r.participants.size(); ++i) out << (i ? ";" : "") << r.participants[i];
    out << '\n';
  }
  return out.str();
}

std::string partition_csv(const std::vector<std::vector<std::size_t>>& counts) {
  std::ostringstream out;
  out << "client,class,count\n";
  for (std::size_t c = 0; c < counts.size(); ++c)
    for (std::size_t k = 0; k < counts[c].size(); ++k) out << c << ',' << k << ',' << counts[c][k] << '\n';
  return out.str();
}

nlohmann::json report_to_json(const RunReport& report) {
  nlohmann::json rounds = nlohmann::json::array();
  for (const auto& r : report.rounds) {
    rounds.push_back({{"round", r.round},
                      {"accuracy", r.accuracy},
                      {"mean_local_loss", r.mean_local_loss},
                      {"participants", r.participants},
                      {"wall_seconds", r.wall_seconds},
                      {"alpha_mean", r.alpha_mean}});
  }
  return {{"config", report.config},
          {"headline_accuracy", report.headline_accuracy},
          {"headline_rule", "median of the last 10 round accuracies"},
          {"rounds", rounds},
          {"partition_counts", report.partition_counts}};
}

RunReport report_from_json(const nlohmann::json& j) {
  RunReport r;
  r.config = j.at("config");
  r.headline_accuracy = j.at("headline_accuracy").get<double>();
  for (const auto& jr : j.at("rounds")) {
    RoundRecord rec;
    rec.round = jr.at("round").get<std::size_t>();
    rec.accuracy = jr.at("accuracy").get<double>();
    rec.mean_local_loss = jr.at("mean_local_loss").get<double>();
    rec.participants = jr.at("participants").get<std::vector<std::size_t>>();
    rec.wall_seconds = jr.at("wall_seconds").get<double>();
    rec.alpha_mean = jr.at("alpha_mean").get<std::vector<double>>();
    r.rounds.push_back(std::move(rec));
  }
  r.partition_counts = j.at("partition_counts").get<std::vector<std::vector<std::size_t>>>();
  return r;
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f << content;
  if (!f) throw std::runtime_error("write failed: " + path);
}

void emit_report(const RunReport& report, const ReportPaths& paths) {
  write_text_file(paths.rounds_csv, rounds_csv(report.rounds));
  write_text_file(paths.report_json, report_to_json(report).dump(2) + "\n");
  write_text_file(paths.partition_csv, partition_csv(report.partition_counts));
}

RunReport load_report(const std::string& report_json_path) {
  std::ifstream f(report_json_path);
  if (!f) throw std::runtime_error("cannot open " + report_json_path);
  try {
    return report_from_json(nlohmann::json::parse(f));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(report_json_path + ": " + e.what());
  }
}

}  // namespace fedreg
