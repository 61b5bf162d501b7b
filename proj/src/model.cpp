#include "fedreg/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "fedreg/errors.hpp"
#include "fedreg/tensor.hpp"

namespace fedreg {

ModelSpec ModelSpec::default_cnn(std::array<std::size_t, 3> input_shape, std::size_t classes) {
  const std::array<std::size_t, 3> conv{8, 16, 32};
  const std::array<std::size_t, 2> dense{128, 96};
  return cnn(input_shape, conv, dense, classes);
}

ModelSpec ModelSpec::cnn(std::array<std::size_t, 3> input_shape, std::span<const std::size_t> conv_channels,
                         std::span<const std::size_t> dense_widths, std::size_t classes) {
  ModelSpec spec;
  spec.input_shape = input_shape;
  for (auto c : conv_channels) spec.layers.push_back({LayerKind::kConv, c});
  for (auto w : dense_widths) spec.layers.push_back({LayerKind::kDense, w});
  spec.layers.push_back({LayerKind::kOutput, classes});
  for (std::size_t i = 0; i + 1 < spec.layers.size(); ++i) spec.extraction_points.push_back(i);
  return spec;
}

std::size_t ModelSpec::num_classes() const {
  if (layers.empty() || layers.back().kind != LayerKind::kOutput)
    throw ConfigError("model spec must end with an output layer");
  return layers.back().units;
}

std::size_t ParamSlot::size() const { return Tensor::volume(shape); }

Architecture::Architecture(ModelSpec spec) : spec_(std::move(spec)) {
  if (spec_.layers.empty()) throw ConfigError("model spec has no layers");
  if (spec_.input_shape[0] == 0 || spec_.input_shape[1] == 0 || spec_.input_shape[2] == 0)
    throw ConfigError("model input shape has a zero dimension");
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    const auto& l = spec_.layers[i];
    if (l.units == 0) throw ConfigError("layer " + std::to_string(i) + " has zero units");
    if ((l.kind == LayerKind::kOutput) != (i + 1 == spec_.layers.size()))
      throw ConfigError("exactly the last layer must be the output layer");
  }
  if (spec_.extraction_points.empty()) throw ConfigError("at least one extraction point is required");
  for (std::size_t k = 0; k < spec_.extraction_points.size(); ++k) {
    if (spec_.extraction_points[k] >= spec_.layers.size())
      throw ConfigError("extraction point " + std::to_string(spec_.extraction_points[k]) + " out of range");
    if (k > 0 && spec_.extraction_points[k] <= spec_.extraction_points[k - 1])
      throw ConfigError("extraction points must be strictly increasing");
  }
  if (spec_.head_output_dim == 0 || spec_.head_hidden_cap == 0) throw ConfigError("head dims must be positive");

  auto add_slot = [&](std::string name, std::vector<std::size_t> shape, std::size_t fan_in) {
    ParamSlot s{std::move(name), param_count_, std::move(shape), fan_in};
    param_count_ += s.size();
    slots_.push_back(std::move(s));
  };

  std::array<std::size_t, 3> cur = spec_.input_shape;
  bool flattened = false;
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    const auto& l = spec_.layers[i];
    LayerGeometry g;
    g.in = cur;
    const std::string prefix = "layer" + std::to_string(i);
    layer_slot_.push_back(slots_.size());
    if (l.kind == LayerKind::kConv) {
      if (flattened) throw ConfigError("conv layer " + std::to_string(i) + " follows a dense layer");
      if (cur[1] < 2 || cur[2] < 2) throw ConfigError("conv layer " + std::to_string(i) + " input too small to pool");
      const std::size_t fan_in = cur[0] * 9;
      add_slot(prefix + ".weight", {l.units, cur[0], 3, 3}, fan_in);
      add_slot(prefix + ".bias", {l.units}, fan_in);
      g.out = {l.units, cur[1] / 2, cur[2] / 2};
    } else {
      const std::size_t fan_in = g.in_features();
      add_slot(prefix + ".weight", {l.units, fan_in}, fan_in);
      add_slot(prefix + ".bias", {l.units}, fan_in);
      g.out = {l.units, 1, 1};
      flattened = true;
    }
    cur = g.out;
    geometry_.push_back(g);
  }
  backbone_count_ = param_count_;

  for (std::size_t k = 0; k < spec_.extraction_points.size(); ++k) {
    HeadGeometry h;
    h.layer = spec_.extraction_points[k];
    h.input_dim = geometry_[h.layer].out_features();
    h.hidden_dim = std::min(h.input_dim, spec_.head_hidden_cap);
    h.output_dim = spec_.head_output_dim;
    const std::string prefix = "head" + std::to_string(k);
    head_slot_.push_back(slots_.size());
    add_slot(prefix + ".w1", {h.hidden_dim, h.input_dim}, h.input_dim);
    add_slot(prefix + ".b1", {h.hidden_dim}, h.input_dim);
    add_slot(prefix + ".w2", {h.output_dim, h.hidden_dim}, h.hidden_dim);
    add_slot(prefix + ".b2", {h.output_dim}, h.hidden_dim);
    heads_.push_back(h);
  }
}

ArchitecturePtr make_architecture(ModelSpec spec) {
  return std::make_shared<const Architecture>(std::move(spec));
}

ModelState ModelState::zeros(ArchitecturePtr arch) {
  if (!arch) throw ConfigError("null architecture");
  ModelState s;
  s.params.assign(arch->parameter_count(), 0.0);
  s.arch = std::move(arch);
  return s;
}

namespace {

void fill_he_uniform(std::span<double> w, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : w) v = dist(rng);
}

}  // namespace

ModelState ModelState::initialize(ArchitecturePtr arch, std::uint64_t seed) {
  ModelState s = zeros(std::move(arch));
  const Architecture& a = *s.arch;
  Rng backbone = make_rng(seed, Stream::kInit);
  for (std::size_t i = 0; i < a.num_layers(); ++i) {
    const auto& w = a.layer_weight(i);
    fill_he_uniform(s.slot(w), w.fan_in, backbone);
  }
  for (std::size_t k = 0; k < a.num_heads(); ++k) {
    Rng head = make_rng(seed, Stream::kHeadInit, a.head(k).layer);
    const auto& w1 = a.head_param(k, 0);
    const auto& w2 = a.head_param(k, 2);
    fill_he_uniform(s.slot(w1), w1.fan_in, head);
    fill_he_uniform(s.slot(w2), w2.fan_in, head);
  }
  return s;
}

bool ModelState::compatible_with(const ModelState& other) const {
  if (!arch || !other.arch) return false;
  if (params.size() != other.params.size()) return false;
  return arch == other.arch || arch->spec() == other.arch->spec();
}

void ModelState::require_compatible(const ModelState& other, const char* context) const {
  if (!compatible_with(other)) throw ConfigError(std::string(context) + ": model states have different specs");
}

std::vector<std::uint8_t> serialize(const ModelState& state) {
  std::vector<std::uint8_t> out(state.params.size() * 8);
  for (std::size_t i = 0; i < state.params.size(); ++i) {
    auto bits = std::bit_cast<std::uint64_t>(state.params[i]);
    for (int b = 0; b < 8; ++b) out[i * 8 + b] = static_cast<std::uint8_t>(bits >> (8 * b));
  }
  return out;
}

ModelState deserialize(ArchitecturePtr arch, std::span<const std::uint8_t> blob) {
  ModelState s = ModelState::zeros(std::move(arch));
  if (blob.size() != s.params.size() * 8)
    throw FormatError("model blob has " + std::to_string(blob.size()) + " bytes, expected " +
                          std::to_string(s.params.size() * 8),
                      blob.size());
  for (std::size_t i = 0; i < s.params.size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(blob[i * 8 + b]) << (8 * b);
    s.params[i] = std::bit_cast<double>(bits);
  }
  return s;
}

void save_state(const ModelState& state, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  auto blob = serialize(state);
  f.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
  if (!f) throw std::runtime_error("write failed: " + path);
}

ModelState load_state(ArchitecturePtr arch, const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::vector<std::uint8_t> blob((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize(std::move(arch), blob);
}

}  // namespace fedreg
