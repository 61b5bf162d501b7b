#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fedreg/model.hpp"
#include "fedreg/tensor.hpp"

namespace fedreg {

/// Everything backward() needs from a forward pass.
struct ForwardTrace {
  ArchitecturePtr arch;
  std::size_t batch = 0;
  Tensor input;
  std::vector<Tensor> outputs;                       // per layer, after activation and pooling
  std::vector<std::vector<double>> pre_pool;         // conv layers: ReLU output before pooling
  std::vector<std::vector<std::uint32_t>> argmax;    // conv layers: pool winners
};

struct ForwardResult {
  Tensor logits;                   // B x classes
  std::vector<Tensor> extraction;  // K tensors, B x flattened dim
  ForwardTrace trace;
};

/// Deterministic forward pass. Batch is B x C x H x W matching the spec's input shape.
ForwardResult forward(const ModelState& state, const Tensor& batch);

struct CrossEntropy {
  double loss = 0.0;
  Tensor grad;  // d loss / d logits, B x C
};

/// Mean over the batch of -log softmax(logits)[label].
CrossEntropy cross_entropy(const Tensor& logits, std::span<const std::uint32_t> labels);

/// Reverse pass. `d_extraction` is either empty or holds K tensors shaped like the forward
/// extraction outputs (an empty tensor in a slot means no gradient for it).
/// Backbone gradients are added into `grads`; head slots are left untouched.
void backward_accumulate(const ModelState& state, const ForwardTrace& trace, const Tensor& d_logits,
                         std::span<const Tensor> d_extraction, ModelState& grads);

/// backward_accumulate into a fresh zero gradient.
ModelState backward(const ModelState& state, const ForwardTrace& trace, const Tensor& d_logits,
                    std::span<const Tensor> d_extraction = {});

/// Index of the largest logit per row; ties resolve to the lowest index.
std::vector<std::uint32_t> argmax_rows(const Tensor& logits);

}  // namespace fedreg
