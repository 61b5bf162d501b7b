#include "fedreg/optimizer.hpp"

#include "fedreg/errors.hpp"

namespace fedreg {

void SgdOptimizer::step(ModelState& state, const ModelState& grads) {
  state.require_compatible(grads, "sgd_step");
  if (buffer_.empty()) buffer_.assign(state.params.size(), 0.0);
  if (buffer_.size() != state.params.size()) throw ConfigError("sgd_step: optimizer bound to a different model");
  auto& w = state.params;
  const auto& g = grads.params;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double gi = g[i] + config_.weight_decay * w[i];
    buffer_[i] = config_.momentum * buffer_[i] + gi;
    w[i] -= config_.lr * buffer_[i];
  }
}

}  // namespace fedreg
