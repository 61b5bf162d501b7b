#pragma once

#include <vector>

#include "fedreg/model.hpp"

namespace fedreg {

struct SgdConfig {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-5;

  friend bool operator==(const SgdConfig&, const SgdConfig&) = default;
};

/// Classic momentum SGD with weight decay folded into the gradient:
///   g' = g + wd*w;  buf = momentum*buf + g';  w -= lr*buf
/// Buffers start at zero, so the first step uses buf = g'.
class SgdOptimizer {
 public:
  explicit SgdOptimizer(SgdConfig config) : config_(config) {}

  void step(ModelState& state, const ModelState& grads);
  void reset() { buffer_.clear(); }

  const Buffer& buffer() const noexcept { return buffer_; }
  const SgdConfig& config() const noexcept { return config_; }

 private:
  SgdConfig config_;
  Buffer buffer_;
};

}  // namespace fedreg
