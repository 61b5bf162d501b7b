#include "fedreg/experiment.hpp"

#include <cstdio>
#include <filesystem>
#include <numeric>
#include <sstream>

#include "fedreg/federation.hpp"

namespace fedreg {

namespace fs = std::filesystem;

namespace {

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

}  // namespace

std::vector<SweepPoint> expand_sweep(const ExperimentConfig& config) {
  const auto mus = config.mu_values.empty() ? std::vector<double>{config.fl.reg.mu} : config.mu_values;
  const auto betas = config.beta_values.empty() ? std::vector<double>{config.fl.beta} : config.beta_values;
  const auto epochs =
      config.epoch_values.empty() ? std::vector<std::size_t>{config.fl.local_epochs} : config.epoch_values;
  const auto ns = config.client_values.empty() ? std::vector<std::size_t>{config.fl.n_clients} : config.client_values;
  std::vector<SweepPoint> points;
  for (double mu : mus)
    for (double beta : betas)
      for (auto e : epochs)
        for (auto n : ns) {
          SweepPoint p;
          p.config = config;
          p.config.mu_values.clear();
          p.config.beta_values.clear();
          p.config.epoch_values.clear();
          p.config.client_values.clear();
          p.config.fl.reg.mu = mu;
          p.config.fl.beta = beta;
          p.config.fl.local_epochs = e;
          p.config.fl.n_clients = n;
          p.name = config.algorithm + "_mu" + num(mu) + "_beta" + num(beta) + "_E" + std::to_string(e) + "_N" +
                   std::to_string(n);
          points.push_back(std::move(p));
        }
  return points;
}

DataSplit load_datasets(const ExperimentConfig& config) {
  const auto& d = config.dataset;
  DataSplit split;
  if (d.kind == "synth") {
    Dataset all = synth_dataset(d.samples, d.classes, config.fl.seed, d.noise);
    const auto n_test = std::max<std::size_t>(
        1, static_cast<std::size_t>(static_cast<double>(d.samples) * d.test_fraction + 0.5));
    std::vector<std::size_t> idx(all.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    const std::size_t n_train = all.size() - n_test;
    split.train = all.subset(std::span(idx).first(n_train));
    split.test = all.subset(std::span(idx).subspan(n_train));
  } else if (d.kind == "idx") {
    split.train = load_idx(d.train_images, d.train_labels);
    split.test = load_idx(d.test_images, d.test_labels);
  } else {
    split.train = load_cifar_binary(d.train_files);
    split.test = load_cifar_binary(d.test_files);
  }
  const std::size_t classes = std::max(split.train.class_count, split.test.class_count);
  split.train.class_count = split.test.class_count = classes;
  if (split.train.sample_size() != split.test.sample_size())
    throw ConfigError("train and test images have different shapes");
  return split;
}

ArchitecturePtr architecture_for(const ExperimentConfig& config, const Dataset& train) {
  return make_architecture(config.model.to_spec({train.channels, train.height, train.width}, train.class_count));
}

Partition partition_for(const ExperimentConfig& point, const Dataset& train) {
  return dirichlet_partition(train.labels, point.fl.n_clients, point.fl.beta, point.fl.min_client_size,
                             point.fl.seed);
}

PointResult run_point(const SweepPoint& point, const DataSplit& data, const RoundObserver& observer) {
  const auto& cfg = point.config;
  cfg.fl.validate();
  Partition partition = partition_for(cfg, data.train);
  auto arch = architecture_for(cfg, data.train);
  TrainingResult tr = run_training(cfg.fl, arch, data.train, data.test, partition, observer);
  PointResult out;
  out.point = point;
  out.report.config = config_to_json(cfg);
  out.report.rounds = std::move(tr.history);
  out.report.headline_accuracy = RunReport::headline_from(out.report.rounds);
  out.report.partition_counts = partition_counts(partition, data.train.labels, data.train.class_count);
  return out;
}

std::vector<PointResult> run_experiment(const ExperimentConfig& config, std::ostream& log) {
  const DataSplit data = load_datasets(config);
  const auto points = expand_sweep(config);
  fs::create_directories(config.output_dir);
  std::vector<PointResult> results;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& p = points[i];
    const std::string dir = (fs::path(config.output_dir) / p.name).string();
    fs::create_directories(dir);
    log << "[" << (i + 1) << "/" << points.size() << "] " << p.name << "\n";
    RoundObserver observer = [&](const RoundRecord& r, const ModelState& global) {
      log << "  round " << r.round << " acc " << r.accuracy << " loss " << r.mean_local_loss << "\n";
      if (config.save_rounds) {
        char name[32];
        std::snprintf(name, sizeof name, "round_%04zu.bin", r.round);
        save_state(global, (fs::path(dir) / name).string());
      }
    };
    PointResult res = run_point(p, data, observer);
    emit_report(res.report, ReportPaths::in_directory(dir));
    log << "  headline (median of last 10) " << res.report.headline_accuracy << "\n";
    results.push_back(std::move(res));
  }
  write_text_file((fs::path(config.output_dir) / "summary.csv").string(), summary_csv(results));
  return results;
}

std::string summary_csv(const std::vector<PointResult>& results) {
  std::ostringstream out;
  out << "algorithm,mu,beta,E,N,headline_accuracy\n";
  for (const auto& r : results) {
    const auto& c = r.point.config;
    char acc[32];
    std::snprintf(acc, sizeof acc, "%.6f", r.report.headline_accuracy);
    out << c.algorithm << ',' << num(c.fl.reg.mu) << ',' << num(c.fl.beta) << ',' << c.fl.local_epochs << ','
        << c.fl.n_clients << ',' << acc << '\n';
  }
  return out.str();
}

std::string describe_plan(const ExperimentConfig& config) {
  std::ostringstream out;
  out << config_to_json(config).dump(2) << "\n";
  const auto points = expand_sweep(config);
  out << points.size() << " sweep point(s)\n";
  for (const auto& p : points) {
    const auto& fl = p.config.fl;
    const auto per_round = sample_clients(fl.n_clients, fl.participation, 0, fl.seed).size();
    out << "  " << p.name << ": " << fl.rounds << " rounds x " << fl.local_epochs << " local epochs, "
        << per_round << " of " << fl.n_clients << " clients per round, batch " << fl.batch_size << "\n";
  }
  return out.str();
}

std::string partition_stats_csv(const ExperimentConfig& config) {
  const DataSplit data = load_datasets(config);
  Partition p = partition_for(config, data.train);
  return partition_csv(partition_counts(p, data.train.labels, data.train.class_count));
}

}  // namespace fedreg
