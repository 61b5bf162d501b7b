#pragma once

#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "fedreg/errors.hpp"
#include "fedreg/federation.hpp"
#include "fedreg/model.hpp"

namespace fedreg {

/// Thrown for schema violations (unknown key, wrong type) and out-of-range values.
class ConfigParseError : public ConfigError {
 public:
  ConfigParseError(std::string key, const std::string& what)
      : ConfigError("config key '" + key + "': " + what), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

struct DatasetConfig {
  std::string kind = "synth";  // synth | idx | cifar10
  // synth
  std::size_t samples = 5000;
  std::size_t classes = 4;
  double test_fraction = 0.2;
  double noise = kSynthNoise;
  // idx
  std::string train_images, train_labels, test_images, test_labels;
  // cifar10
  std::vector<std::string> train_files, test_files;

  friend bool operator==(const DatasetConfig&, const DatasetConfig&) = default;
};

struct ModelConfig {
  std::vector<std::size_t> conv_channels{8, 16, 32};
  std::vector<std::size_t> dense_widths{128, 96};
  /// Defaults to every hidden layer.
  std::optional<std::vector<std::size_t>> extraction_points;
  std::size_t head_output_dim = 256;

  ModelSpec to_spec(std::array<std::size_t, 3> input_shape, std::size_t classes) const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct ExperimentConfig {
  DatasetConfig dataset;
  /// fedavg | fedprox | moon | fedintr | avg_ablation
  std::string algorithm = "fedavg";
  FLConfig fl;
  ModelConfig model;
  std::vector<double> mu_values;
  std::vector<double> beta_values;
  std::vector<std::size_t> epoch_values;
  std::vector<std::size_t> client_values;
  std::string output_dir = "out";
  bool save_rounds = false;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

Variant algorithm_variant(const std::string& algorithm);

/// Strict parse; unknown keys are rejected. Relative dataset paths resolve against `base_dir`.
ExperimentConfig parse_config(const nlohmann::json& j, const std::string& base_dir = "");
ExperimentConfig parse_config_file(const std::string& path);

/// Fully resolved echo; parse_config(config_to_json(c)) == c.
nlohmann::json config_to_json(const ExperimentConfig& c);

}  // namespace fedreg
