#include "fedreg/config.hpp"

#include <filesystem>
#include <fstream>
#include <set>

namespace fedreg {

namespace fs = std::filesystem;
using nlohmann::json;

ModelSpec ModelConfig::to_spec(std::array<std::size_t, 3> input_shape, std::size_t classes) const {
  ModelSpec spec = ModelSpec::cnn(input_shape, conv_channels, dense_widths, classes);
  if (extraction_points) spec.extraction_points = *extraction_points;
  spec.head_output_dim = head_output_dim;
  return spec;
}

Variant algorithm_variant(const std::string& algorithm) {
  if (algorithm == "fedavg") return Variant::kNone;
  if (algorithm == "fedprox") return Variant::kFedProx;
  if (algorithm == "moon") return Variant::kMoon;
  if (algorithm == "fedintr") return Variant::kFedIntR;
  if (algorithm == "avg_ablation") return Variant::kAvgAblation;
  throw ConfigParseError("algorithm", "expected one of fedavg, fedprox, moon, fedintr, avg_ablation; got '" +
                                          algorithm + "'");
}

namespace {

// Strict reader over one JSON object: every key must be consumed.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigParseError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  template <class T>
  void read(const std::string& key, T& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    out = convert<T>(j_.at(key), name(key));
  }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigParseError(name(k), "unknown key");
  }

  template <class T>
  static T convert(const json& v, const std::string& key) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigParseError(key, "expected boolean");
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigParseError(key, "expected string");
      return v.get<std::string>();
    } else if constexpr (std::is_same_v<T, double>) {
      if (!v.is_number()) throw ConfigParseError(key, "expected number");
      return v.get<double>();
    } else if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
      if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0))
        throw ConfigParseError(key, "expected non-negative integer");
      return v.get<T>();
    } else {
      using E = typename T::value_type;
      if (!v.is_array()) throw ConfigParseError(key, "expected array");
      T out;
      for (std::size_t i = 0; i < v.size(); ++i) out.push_back(convert<E>(v[i], key + "[" + std::to_string(i) + "]"));
      return out;
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::string resolve(const std::string& p, const std::string& base) {
  if (p.empty() || base.empty() || fs::path(p).is_absolute()) return p;
  return (fs::path(base) / p).lexically_normal().string();
}

void require_file(const std::string& key, const std::string& path) {
  if (path.empty()) throw ConfigParseError(key, "path is required");
  if (!fs::exists(path)) throw ConfigParseError(key, "file does not exist: " + path);
}

DatasetConfig parse_dataset(const json& j, const std::string& base) {
  DatasetConfig d;
  if (j.is_string()) {
    d.kind = j.get<std::string>();
    if (d.kind != "synth") throw ConfigParseError("dataset", "only 'synth' may be given as a bare string");
    return d;
  }
  ObjectReader r(j, "dataset");
  r.read("kind", d.kind);
  if (d.kind == "synth") {
    r.read("samples", d.samples);
    r.read("classes", d.classes);
    r.read("test_fraction", d.test_fraction);
    r.read("noise", d.noise);
    if (!(d.noise >= 0.0)) throw ConfigParseError("dataset.noise", "must be >= 0");
    if (d.classes < 2) throw ConfigParseError("dataset.classes", "must be >= 2");
    if (!(d.test_fraction > 0.0 && d.test_fraction < 1.0))
      throw ConfigParseError("dataset.test_fraction", "must be in (0, 1)");
    if (d.samples < 2 * d.classes) throw ConfigParseError("dataset.samples", "too few samples for the class count");
  } else if (d.kind == "idx") {
    r.read("train_images", d.train_images);
    r.read("train_labels", d.train_labels);
    r.read("test_images", d.test_images);
    r.read("test_labels", d.test_labels);
    for (auto* p : {&d.train_images, &d.train_labels, &d.test_images, &d.test_labels}) *p = resolve(*p, base);
    require_file("dataset.train_images", d.train_images);
    require_file("dataset.train_labels", d.train_labels);
    require_file("dataset.test_images", d.test_images);
    require_file("dataset.test_labels", d.test_labels);
  } else if (d.kind == "cifar10") {
    r.read("train_files", d.train_files);
    r.read("test_files", d.test_files);
    if (d.train_files.empty()) throw ConfigParseError("dataset.train_files", "must be non-empty");
    if (d.test_files.empty()) throw ConfigParseError("dataset.test_files", "must be non-empty");
    for (auto& p : d.train_files) require_file("dataset.train_files", p = resolve(p, base));
    for (auto& p : d.test_files) require_file("dataset.test_files", p = resolve(p, base));
  } else {
    throw ConfigParseError("dataset.kind", "expected synth, idx or cifar10; got '" + d.kind + "'");
  }
  r.finish();
  return d;
}

ModelConfig parse_model(const json& j) {
  ModelConfig m;
  ObjectReader r(j, "model");
  r.read("conv_channels", m.conv_channels);
  r.read("dense_widths", m.dense_widths);
  if (r.has("extraction_points")) {
    std::vector<std::size_t> pts;
    r.read("extraction_points", pts);
    m.extraction_points = pts;
  }
  r.read("head_output_dim", m.head_output_dim);
  r.finish();
  return m;
}

template <class T>
void read_sweep(ObjectReader& r, const std::string& key, std::vector<T>& out) {
  if (!r.has(key)) return;
  r.read(key, out);
  if (out.empty()) throw ConfigParseError(key, "sweep list must be non-empty");
}

}  // namespace

ExperimentConfig parse_config(const json& j, const std::string& base_dir) {
  ExperimentConfig c;
  ObjectReader r(j, "");
  if (!r.has("dataset")) throw ConfigParseError("dataset", "is required");
  c.dataset = parse_dataset(r.raw("dataset"), base_dir);
  r.read("algorithm", c.algorithm);
  c.fl.reg.variant = algorithm_variant(c.algorithm);

  r.read("seed", c.fl.seed);
  r.read("rounds", c.fl.rounds);
  r.read("local_epochs", c.fl.local_epochs);
  r.read("clients", c.fl.n_clients);
  r.read("participation", c.fl.participation);
  r.read("batch_size", c.fl.batch_size);
  r.read("lr", c.fl.sgd.lr);
  r.read("momentum", c.fl.sgd.momentum);
  r.read("weight_decay", c.fl.sgd.weight_decay);
  r.read("mu", c.fl.reg.mu);
  r.read("tau", c.fl.reg.tau);
  r.read("differentiable_alpha", c.fl.reg.differentiable_alpha);
  r.read("beta", c.fl.beta);
  r.read("min_client_size", c.fl.min_client_size);
  r.read("augment", c.fl.augment);
  r.read("parallel_clients", c.fl.parallel_clients);
  if (r.has("model")) c.model = parse_model(r.raw("model"));
  read_sweep(r, "mu_values", c.mu_values);
  read_sweep(r, "beta_values", c.beta_values);
  read_sweep(r, "epoch_values", c.epoch_values);
  read_sweep(r, "client_values", c.client_values);
  r.read("output_dir", c.output_dir);
  r.read("save_rounds", c.save_rounds);
  r.finish();

  if (!(c.fl.beta > 0.0)) throw ConfigParseError("beta", "must be > 0");
  if (!(c.fl.reg.tau > 0.0)) throw ConfigParseError("tau", "must be > 0");
  if (!(c.fl.reg.mu >= 0.0)) throw ConfigParseError("mu", "must be >= 0");
  for (double b : c.beta_values)
    if (!(b > 0.0)) throw ConfigParseError("beta_values", "every beta must be > 0");
  for (double m : c.mu_values)
    if (!(m >= 0.0)) throw ConfigParseError("mu_values", "every mu must be >= 0");
  for (auto e : c.epoch_values)
    if (e < 1) throw ConfigParseError("epoch_values", "every entry must be >= 1");
  for (auto n : c.client_values)
    if (n < 1) throw ConfigParseError("client_values", "every entry must be >= 1");
  if (c.fl.rounds < 1) throw ConfigParseError("rounds", "must be >= 1");
  if (c.fl.local_epochs < 1) throw ConfigParseError("local_epochs", "must be >= 1");
  if (c.fl.n_clients < 1) throw ConfigParseError("clients", "must be >= 1");
  if (!(c.fl.participation > 0.0 && c.fl.participation <= 1.0))
    throw ConfigParseError("participation", "must be in (0, 1]");
  if (c.fl.batch_size < 1) throw ConfigParseError("batch_size", "must be >= 1");
  if (!(c.fl.sgd.lr > 0.0)) throw ConfigParseError("lr", "must be > 0");
  if (c.fl.sgd.momentum < 0.0) throw ConfigParseError("momentum", "must be >= 0");
  if (c.fl.sgd.weight_decay < 0.0) throw ConfigParseError("weight_decay", "must be >= 0");
  if (c.fl.parallel_clients < 1) throw ConfigParseError("parallel_clients", "must be >= 1");
  if (c.model.head_output_dim < 1) throw ConfigParseError("model.head_output_dim", "must be >= 1");
  return c;
}

ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file " + path);
  json j;
  try {
    j = json::parse(f);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": invalid JSON: " + e.what());
  }
  return parse_config(j, fs::path(path).parent_path().string());
}

json config_to_json(const ExperimentConfig& c) {
  json ds;
  ds["kind"] = c.dataset.kind;
  if (c.dataset.kind == "synth") {
    ds["samples"] = c.dataset.samples;
    ds["classes"] = c.dataset.classes;
    ds["test_fraction"] = c.dataset.test_fraction;
    ds["noise"] = c.dataset.noise;
  } else if (c.dataset.kind == "idx") {
    ds["train_images"] = c.dataset.train_images;
    ds["train_labels"] = c.dataset.train_labels;
    ds["test_images"] = c.dataset.test_images;
    ds["test_labels"] = c.dataset.test_labels;
  } else {
    ds["train_files"] = c.dataset.train_files;
    ds["test_files"] = c.dataset.test_files;
  }
  json model{{"conv_channels", c.model.conv_channels},
             {"dense_widths", c.model.dense_widths},
             {"head_output_dim", c.model.head_output_dim}};
  if (c.model.extraction_points) model["extraction_points"] = *c.model.extraction_points;

  json j{{"dataset", ds},
         {"algorithm", c.algorithm},
         {"seed", c.fl.seed},
         {"rounds", c.fl.rounds},
         {"local_epochs", c.fl.local_epochs},
         {"clients", c.fl.n_clients},
         {"participation", c.fl.participation},
         {"batch_size", c.fl.batch_size},
         {"lr", c.fl.sgd.lr},
         {"momentum", c.fl.sgd.momentum},
         {"weight_decay", c.fl.sgd.weight_decay},
         {"mu", c.fl.reg.mu},
         {"tau", c.fl.reg.tau},
         {"differentiable_alpha", c.fl.reg.differentiable_alpha},
         {"beta", c.fl.beta},
         {"min_client_size", c.fl.min_client_size},
         {"augment", c.fl.augment},
         {"parallel_clients", c.fl.parallel_clients},
         {"model", model},
         {"output_dir", c.output_dir},
         {"save_rounds", c.save_rounds}};
  if (!c.mu_values.empty()) j["mu_values"] = c.mu_values;
  if (!c.beta_values.empty()) j["beta_values"] = c.beta_values;
  if (!c.epoch_values.empty()) j["epoch_values"] = c.epoch_values;
  if (!c.client_values.empty()) j["client_values"] = c.client_values;
  return j;
}

}  // namespace fedreg
