#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fedreg/rng.hpp"
#include "fedreg/tensor.hpp"

namespace fedreg {

enum class LayerKind {
  kConv,    // 3x3 same-padding conv, stride 1, ReLU, 2x2 max pool
  kDense,   // fully connected + ReLU
  kOutput,  // fully connected, no activation
};

struct LayerSpec {
  LayerKind kind = LayerKind::kDense;
  std::size_t units = 0;  // channels for conv, width otherwise

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Backbone description plus the layers whose outputs feed projection heads.
struct ModelSpec {
  std::array<std::size_t, 3> input_shape{1, 8, 8};  // C, H, W
  std::vector<LayerSpec> layers;
  std::vector<std::size_t> extraction_points;  // indices into `layers`
  std::size_t head_output_dim = 256;
  std::size_t head_hidden_cap = 256;

  /// conv 8/16/32, dense 128/96, output `classes`; extraction at all five hidden layers.
  static ModelSpec default_cnn(std::array<std::size_t, 3> input_shape, std::size_t classes);
  /// Same layout with custom widths. Extraction defaults to every hidden layer.
  static ModelSpec cnn(std::array<std::size_t, 3> input_shape, std::span<const std::size_t> conv_channels,
                       std::span<const std::size_t> dense_widths, std::size_t classes);

  std::size_t num_classes() const;
  std::size_t num_extraction_points() const { return extraction_points.size(); }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// One named parameter tensor inside the flat store.
struct ParamSlot {
  std::string name;
  std::size_t offset = 0;
  std::vector<std::size_t> shape;
  std::size_t fan_in = 0;
  std::size_t size() const;
};

struct LayerGeometry {
  std::array<std::size_t, 3> in{};   // C,H,W (H=W=1 for dense inputs)
  std::array<std::size_t, 3> out{};  // after activation and pooling
  std::size_t in_features() const { return in[0] * in[1] * in[2]; }
  std::size_t out_features() const { return out[0] * out[1] * out[2]; }
};

struct HeadGeometry {
  std::size_t layer = 0;  // extraction layer index
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  std::size_t output_dim = 0;
};

/// Validated spec with resolved shapes and parameter offsets. Immutable; shared by states.
class Architecture {
 public:
  explicit Architecture(ModelSpec spec);

  const ModelSpec& spec() const noexcept { return spec_; }
  std::size_t num_layers() const noexcept { return geometry_.size(); }
  std::size_t num_heads() const noexcept { return heads_.size(); }
  const LayerGeometry& layer(std::size_t i) const { return geometry_.at(i); }
  const HeadGeometry& head(std::size_t k) const { return heads_.at(k); }
  std::size_t extraction_dim(std::size_t k) const { return heads_.at(k).input_dim; }

  const std::vector<ParamSlot>& slots() const noexcept { return slots_; }
  const ParamSlot& layer_weight(std::size_t i) const { return slots_.at(layer_slot_.at(i)); }
  const ParamSlot& layer_bias(std::size_t i) const { return slots_.at(layer_slot_.at(i) + 1); }
  /// j in 0..3: W1, b1, W2, b2.
  const ParamSlot& head_param(std::size_t k, std::size_t j) const { return slots_.at(head_slot_.at(k) + j); }

  std::size_t parameter_count() const noexcept { return param_count_; }
  std::size_t backbone_parameter_count() const noexcept { return backbone_count_; }

 private:
  ModelSpec spec_;
  std::vector<LayerGeometry> geometry_;
  std::vector<HeadGeometry> heads_;
  std::vector<ParamSlot> slots_;
  std::vector<std::size_t> layer_slot_;
  std::vector<std::size_t> head_slot_;
  std::size_t param_count_ = 0;
  std::size_t backbone_count_ = 0;
};

using ArchitecturePtr = std::shared_ptr<const Architecture>;

ArchitecturePtr make_architecture(ModelSpec spec);

/// Flat, layer-ordered parameter store (backbone first, then projection heads).
/// Also used for gradients of the same architecture.
struct ModelState {
  ArchitecturePtr arch;
  Buffer params;

  static ModelState zeros(ArchitecturePtr arch);
  /// He-uniform weights scaled by fan-in, zero biases. Backbone and heads draw from separate
  /// streams, and each head from its own sub-stream keyed by its extraction layer index.
  static ModelState initialize(ArchitecturePtr arch, std::uint64_t seed);

  std::span<double> slot(const ParamSlot& s) { return std::span(params).subspan(s.offset, s.size()); }
  std::span<const double> slot(const ParamSlot& s) const {
    return std::span(params).subspan(s.offset, s.size());
  }

  bool compatible_with(const ModelState& other) const;
  /// Throws ConfigError when the two states do not share a spec.
  void require_compatible(const ModelState& other, const char* context) const;
};

/// Little-endian float64 values in slot order, preceded by nothing. Length = parameter_count()*8.
std::vector<std::uint8_t> serialize(const ModelState& state);
ModelState deserialize(ArchitecturePtr arch, std::span<const std::uint8_t> blob);
void save_state(const ModelState& state, const std::string& path);
ModelState load_state(ArchitecturePtr arch, const std::string& path);

}  // namespace fedreg
